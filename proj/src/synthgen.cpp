#include "acuity/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "acuity/csv.hpp"
#include "acuity/etl.hpp"
#include "acuity/phenotype.hpp"
#include "acuity/timeutil.hpp"
#include "acuity/util.hpp"

namespace acuity::synth {

namespace fs = std::filesystem;
using phenotype::AcuityLabel;

namespace {

// planned per-shift state before the phenotype engine confirms it
enum State { kNormal = 0, kDelirium = 1, kComa = 2, kDeadNext = 3 };

struct VarSpec {
    const char* name;
    const char* unit;
    double mean, sd;
};

constexpr VarSpec kVitals[] = {
    {"heart_rate", "bpm", 84.0, 9.0},       {"sbp", "mmhg", 122.0, 12.0},
    {"dbp", "mmhg", 72.0, 8.0},             {"respiratory_rate", "breaths_min", 17.0, 3.0},
    {"spo2", "pct", 97.0, 1.5},             {"temperature", "celsius", 37.0, 0.4},
};

constexpr VarSpec kLabs[] = {
    {"lactate", "mmol_l", 1.4, 0.5},    {"wbc", "10e9_l", 9.0, 2.5},
    {"sodium", "mmol_l", 139.0, 3.0},   {"creatinine", "mg_dl", 1.0, 0.3},
    {"glucose", "mg_dl", 120.0, 25.0},  {"crp", "mg_l", 20.0, 10.0},
    {"hemoglobin", "g_dl", 11.5, 1.5},  {"platelets", "10e9_l", 220.0, 60.0},
};

constexpr VarSpec kMeds[] = {
    {"propofol", "mg", 50.0, 15.0},        {"fentanyl", "mcg", 50.0, 20.0},
    {"norepinephrine", "mcg", 8.0, 3.0},   {"haloperidol", "mg", 2.0, 0.8},
    {"insulin", "units", 4.0, 2.0},        {"midazolam", "mg", 2.0, 0.8},
};

struct PlannedStay {
    std::string patient_id;
    std::string stay_id;  // first encounter id after merging
    double admit = 0.0;
    double discharge = 0.0;  // updated to death time for dying stays
    std::optional<double> death;
    std::vector<phenotype::ShiftSpan> spans;
    std::vector<int> states;         // per span
    std::vector<bool> missing;       // spans without assessments
    int death_span = -1;
    bool death_eligible = false;
    double death_draw = 1.0;
    // two-encounter emission with an in-stay gap
    bool split = false;
    double split_cut = 0.0, split_resume = 0.0;
    bool rare_assay = false;
};

int vital_count(const SynthConfig& cfg) { return cfg.include_temperature ? 6 : 5; }

}  // namespace

SynthConfig SynthConfig::from_config(const KeyedConfig& cfg) {
    static constexpr const char* kKeys[] = {
        "patients",          "seed",          "preset",
        "prev_delirium",     "prev_coma",     "prev_mortality",
        "signal_strength",   "events_per_hour", "lab_count",
        "med_count",         "include_temperature", "median_los_days",
        "los_log_sigma",     "p_missing_assessment", "p_short_stay",
        "p_split_encounter", "p_repeat_stay", "base_year"};
    cfg.require_known(kKeys);
    SynthConfig sc;
    sc.preset = cfg.get("preset", "brain_acuity");
    if (sc.preset != "brain_acuity" && sc.preset != "delirium")
        throw ConfigError("preset must be 'brain_acuity' or 'delirium'");
    if (sc.preset == "delirium") sc.prev_delirium = 0.08;
    sc.patients = int(cfg.get_int("patients", sc.patients));
    sc.seed = uint64_t(cfg.get_int("seed", int64_t(sc.seed)));
    sc.prev_delirium = cfg.get_double("prev_delirium", sc.prev_delirium);
    sc.prev_coma = cfg.get_double("prev_coma", sc.prev_coma);
    sc.prev_mortality = cfg.get_double("prev_mortality", sc.prev_mortality);
    sc.signal = cfg.get_double("signal_strength", sc.signal);
    sc.events_per_hour = cfg.get_double("events_per_hour", sc.events_per_hour);
    sc.lab_count = int(cfg.get_int("lab_count", sc.lab_count));
    sc.med_count = int(cfg.get_int("med_count", sc.med_count));
    sc.include_temperature = cfg.get_bool("include_temperature", sc.include_temperature);
    sc.median_los_days = cfg.get_double("median_los_days", sc.median_los_days);
    sc.los_log_sigma = cfg.get_double("los_log_sigma", sc.los_log_sigma);
    sc.p_missing_assessment = cfg.get_double("p_missing_assessment", sc.p_missing_assessment);
    sc.p_short_stay = cfg.get_double("p_short_stay", sc.p_short_stay);
    sc.p_split_encounter = cfg.get_double("p_split_encounter", sc.p_split_encounter);
    sc.p_repeat_stay = cfg.get_double("p_repeat_stay", sc.p_repeat_stay);
    sc.base_year = int(cfg.get_int("base_year", sc.base_year));
    sc.validate();
    return sc;
}

KeyedConfig SynthConfig::to_config() const {
    KeyedConfig cfg;
    cfg.set("patients", std::to_string(patients));
    cfg.set("seed", std::to_string(seed));
    cfg.set("preset", preset);
    cfg.set("prev_delirium", fmt_double(prev_delirium));
    cfg.set("prev_coma", fmt_double(prev_coma));
    cfg.set("prev_mortality", fmt_double(prev_mortality));
    cfg.set("signal_strength", fmt_double(signal));
    cfg.set("events_per_hour", fmt_double(events_per_hour));
    cfg.set("lab_count", std::to_string(lab_count));
    cfg.set("med_count", std::to_string(med_count));
    cfg.set("include_temperature", include_temperature ? "true" : "false");
    cfg.set("median_los_days", fmt_double(median_los_days));
    cfg.set("los_log_sigma", fmt_double(los_log_sigma));
    cfg.set("p_missing_assessment", fmt_double(p_missing_assessment));
    cfg.set("p_short_stay", fmt_double(p_short_stay));
    cfg.set("p_split_encounter", fmt_double(p_split_encounter));
    cfg.set("p_repeat_stay", fmt_double(p_repeat_stay));
    cfg.set("base_year", std::to_string(base_year));
    return cfg;
}

void SynthConfig::validate() const {
    if (patients < 1) throw ConfigError("patients must be >= 1");
    if (prev_delirium < 0 || prev_coma < 0 || prev_mortality < 0)
        throw ConfigError("prevalences must be non-negative");
    if (prev_delirium + prev_coma + prev_mortality >= 0.9)
        throw ConfigError("infeasible prevalence combination: delirium + coma + mortality >= 0.9");
    if (signal < 0.0 || signal > 1.0) throw ConfigError("signal_strength must be in [0, 1]");
    if (events_per_hour <= 0.0 || events_per_hour > 40.0)
        throw ConfigError("events_per_hour must be in (0, 40]");
    if (lab_count < 1 || lab_count > int(std::size(kLabs)))
        throw ConfigError("lab_count must be in [1, " + std::to_string(std::size(kLabs)) + "]");
    if (med_count < 1 || med_count > int(std::size(kMeds)))
        throw ConfigError("med_count must be in [1, " + std::to_string(std::size(kMeds)) + "]");
    if (median_los_days <= 0.5) throw ConfigError("median_los_days must exceed 0.5");
    if (los_log_sigma <= 0.0 || los_log_sigma > 2.0)
        throw ConfigError("los_log_sigma must be in (0, 2]");
    for (double p : {p_missing_assessment, p_short_stay, p_split_encounter, p_repeat_stay})
        if (p < 0.0 || p > 0.5) throw ConfigError("structural probabilities must be in [0, 0.5]");
}

namespace {

std::vector<etl::VariableDecl> declared_variables(const SynthConfig& cfg) {
    std::vector<etl::VariableDecl> vars;
    for (int i = 0; i < vital_count(cfg); ++i)
        vars.push_back({kVitals[i].name, etl::VarKind::Vital, kVitals[i].unit});
    vars.push_back({"rass", etl::VarKind::Score, "score"});
    vars.push_back({"cam", etl::VarKind::Score, "flag"});
    vars.push_back({"gcs", etl::VarKind::Score, "score"});
    vars.push_back({"pain_score", etl::VarKind::Score, "score"});
    for (int i = 0; i < cfg.lab_count; ++i)
        vars.push_back({kLabs[i].name, etl::VarKind::Lab, kLabs[i].unit});
    vars.push_back({"rare_assay", etl::VarKind::Lab, "u_l"});
    for (int i = 0; i < cfg.med_count; ++i)
        vars.push_back({kMeds[i].name, etl::VarKind::Medication, kMeds[i].unit});
    return vars;
}

std::string patient_name(int p) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "P%05d", p);
    return std::string(buf);
}

// last retained shift index for the prevalence bookkeeping
int64_t retained_shifts(const PlannedStay& stay, bool dying) {
    if (stay.discharge - stay.admit < 720.0) return 0;
    int last = dying ? stay.death_span : int(stay.spans.size()) - 1;
    int64_t kept = 0;
    for (int k = 1; k <= last; ++k) {
        bool dead_span = dying && k == stay.death_span;
        if (dead_span || !stay.missing[size_t(k)]) ++kept;
    }
    return kept;
}

struct EventRow {
    std::string encounter_id;
    double time = 0.0;
    std::string name;
    double value = 0.0;
    std::string unit;
};

}  // namespace

CohortSummary generate(const SynthConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir);
    double base_min = double(days_from_civil(cfg.base_year, 1, 1) * 1440);
    double median_los_min = cfg.median_los_days * 1440.0;
    double rate_scale = cfg.events_per_hour / 2.0;

    // phase A: stay structure
    std::vector<PlannedStay> stays;
    for (int p = 0; p < cfg.patients; ++p) {
        Rng rng = Rng::derived(cfg.seed, {0x57A1, uint64_t(p)});
        int n_stays = rng.bernoulli(cfg.p_repeat_stay) ? 2 : 1;
        double next_admit_floor = base_min + double(rng.uniform_int(0, 364)) * 1440.0 +
                                  double(rng.uniform_int(0, 1439));
        for (int s = 0; s < n_stays; ++s) {
            PlannedStay ps;
            ps.patient_id = patient_name(p);
            ps.stay_id = ps.patient_id + "E" + std::to_string(s * 2);
            ps.admit = next_admit_floor;
            double los;
            if (rng.bernoulli(cfg.p_short_stay)) {
                los = double(rng.uniform_int(60, 719));
            } else {
                los = median_los_min * std::exp(cfg.los_log_sigma * rng.normal());
                los = std::clamp(los, 60.0, 45.0 * 1440.0);
            }
            ps.discharge = ps.admit + std::round(los);
            ps.spans = phenotype::make_shift_spans(ps.admit, ps.discharge, std::nullopt);
            int n_spans = int(ps.spans.size());
            ps.states.assign(size_t(n_spans), kNormal);
            ps.missing.assign(size_t(n_spans), false);
            for (int k = 0; k < n_spans; ++k)
                ps.missing[size_t(k)] = rng.bernoulli(cfg.p_missing_assessment);

            // death must land in the patient's final stay, close to its end
            ps.death_eligible = (s == n_stays - 1) && n_spans >= 3;
            ps.death_draw = rng.uniform();
            if (ps.death_eligible) {
                int back = int(rng.uniform_int(0, std::min<int64_t>(2, n_spans - 2)));
                ps.death_span = n_spans - 1 - back;
            }

            if (n_spans >= 4 && rng.bernoulli(cfg.p_split_encounter)) {
                int max_hole = ps.death_eligible ? ps.death_span - 1 : n_spans - 2;
                if (max_hole >= 1) {
                    int hole = int(rng.uniform_int(1, max_hole));
                    ps.split = true;
                    ps.split_cut = ps.spans[size_t(hole)].start_min + 120.0;
                    ps.split_resume = ps.split_cut + double(rng.uniform_int(120, 480));
                    ps.missing[size_t(hole)] = true;  // out of the unit, no assessments
                }
            }
            ps.rare_assay = rng.bernoulli(0.03);
            stays.push_back(std::move(ps));
            // at least a day out of the unit before any readmission
            next_admit_floor = stays.back().discharge + 1440.0 +
                               double(rng.uniform_int(60, 20000));
        }
    }

    // phase B: pick the death probability hitting the mortality prevalence
    int64_t eligible = 0;
    for (const auto& ps : stays) eligible += ps.death_eligible ? 1 : 0;
    if (cfg.prev_mortality > 0.0 && eligible == 0)
        throw ConfigError("infeasible prevalence combination: no stay can carry a death");
    auto dead_share = [&](double q) {
        int64_t deaths = 0, retained = 0;
        for (const auto& ps : stays) {
            bool dying = ps.death_eligible && ps.death_draw < q;
            deaths += dying ? 1 : 0;
            retained += retained_shifts(ps, dying);
        }
        return retained > 0 ? double(deaths) / double(retained) : 0.0;
    };
    double q_lo = 0.0, q_hi = 1.0;
    for (int it = 0; it < 50; ++it) {
        double mid = (q_lo + q_hi) / 2.0;
        if (dead_share(mid) < cfg.prev_mortality) q_lo = mid;
        else q_hi = mid;
    }
    double q_death = (q_lo + q_hi) / 2.0;
    if (cfg.prev_mortality > 0.0 && dead_share(1.0) < cfg.prev_mortality)
        throw ConfigError("infeasible prevalence combination: mortality target unreachable");

    int64_t total_retained = 0, total_deaths = 0;
    for (auto& ps : stays) {
        bool dying = ps.death_eligible && ps.death_draw < q_death;
        if (dying) {
            Rng rng = Rng::derived(cfg.seed, {0xDEA2, fnv1a64(ps.stay_id)});
            const auto& span = ps.spans[size_t(ps.death_span)];
            ps.death = span.start_min + double(rng.uniform_int(200, 700));
            ps.discharge = *ps.death;
            ps.spans.resize(size_t(ps.death_span) + 1);
            ps.states.resize(ps.spans.size());
            ps.missing.resize(ps.spans.size());
            ++total_deaths;
        } else {
            ps.death_span = -1;
        }
        total_retained += retained_shifts(ps, dying);
    }

    // phase C: i.i.d. states for the non-death shifts, scaled so the retained
    // prevalences land on target
    double nondead = double(total_retained - total_deaths);
    if (nondead <= 0.0) throw ConfigError("infeasible prevalence combination: no shifts left");
    double p_del = cfg.prev_delirium * double(total_retained) / nondead;
    double p_coma = cfg.prev_coma * double(total_retained) / nondead;
    if (p_del + p_coma > 0.98)
        throw ConfigError("infeasible prevalence combination: delirium + coma too high");
    for (auto& ps : stays) {
        Rng rng = Rng::derived(cfg.seed, {0x57A7, fnv1a64(ps.stay_id)});
        for (size_t k = 0; k < ps.states.size(); ++k) {
            double u = rng.uniform();
            ps.states[k] = u < p_del ? kDelirium : (u < p_del + p_coma ? kComa : kNormal);
        }
    }

    // phase D: emit scores, events, statics, labels
    std::vector<etl::VariableDecl> vars = declared_variables(cfg);
    CsvWriter enc_csv((fs::path(out_dir) / "encounters.csv").string(),
                      {"patient_id", "encounter_id", "admit_iso8601", "discharge_iso8601",
                       "death_iso8601"});
    CsvWriter static_csv((fs::path(out_dir) / "static.csv").string(),
                         {"patient_id", "encounter_id", "name", "value"});
    CsvWriter events_csv((fs::path(out_dir) / "events.csv").string(),
                         {"patient_id", "encounter_id", "time_iso8601", "name", "value",
                          "unit"});
    CsvWriter labels_csv((fs::path(out_dir) / "labels.csv").string(),
                         {"stay_id", "shift_index", "label"});

    CohortSummary summary;
    summary.patients = cfg.patients;
    std::set<std::string> patients_seen;
    std::map<std::string, std::set<std::string>> stay_vars;
    std::vector<double> los_list;
    int64_t total_events = 0;

    // per-patient static features; frailty mildly tracks planned death
    std::map<std::string, bool> patient_dies;
    for (const auto& ps : stays)
        if (ps.death) patient_dies[ps.patient_id] = true;

    for (auto& ps : stays) {
        patients_seen.insert(ps.patient_id);
        los_list.push_back(ps.discharge - ps.admit);
        bool dying = ps.death.has_value();
        int n_spans = int(ps.spans.size());

        // encounter rows (possibly split in two around an in-stay gap)
        std::string death_str = dying ? format_iso8601_min(int64_t(*ps.death)) : "";
        std::string enc2_id = ps.patient_id + "E" +
                              std::to_string((ps.stay_id.back() - '0') + 1);
        if (ps.split && ps.split_resume < ps.discharge - 60.0) {
            enc_csv.row({ps.patient_id, ps.stay_id, format_iso8601_min(int64_t(ps.admit)),
                         format_iso8601_min(int64_t(ps.split_cut)), ""});
            enc_csv.row({ps.patient_id, enc2_id, format_iso8601_min(int64_t(ps.split_resume)),
                         format_iso8601_min(int64_t(ps.discharge)), death_str});
        } else {
            ps.split = false;
            enc_csv.row({ps.patient_id, ps.stay_id, format_iso8601_min(int64_t(ps.admit)),
                         format_iso8601_min(int64_t(ps.discharge)), death_str});
        }
        auto enc_of = [&](double t) {
            return ps.split && t > ps.split_cut ? enc2_id : ps.stay_id;
        };
        auto in_hole = [&](double t) {
            return ps.split && t > ps.split_cut && t < ps.split_resume;
        };

        // statics (identical values on both encounter rows of a stay)
        {
            Rng rng = Rng::derived(cfg.seed, {0x57A6, fnv1a64(ps.patient_id)});
            double age = std::clamp(rng.normal(62.0, 14.0), 18.0, 95.0);
            double frailty = rng.normal(50.0, 10.0) +
                             cfg.signal * 12.0 * (patient_dies.count(ps.patient_id) ? 1.0 : 0.0);
            const char* sex = rng.bernoulli(0.5) ? "female" : "male";
            double at = rng.uniform();
            const char* admission = at < 0.6 ? "medical" : (at < 0.9 ? "surgical" : "trauma");
            double ins = rng.uniform();
            const char* insurance = ins < 0.45 ? "private" : (ins < 0.8 ? "medicare" : "medicaid");
            int comorbidities = rng.poisson(2.0);
            std::vector<std::pair<std::string, std::string>> rows = {
                {"age", std::to_string(int(std::round(age)))},
                {"sex", sex},
                {"admission_type", admission},
                {"insurance", insurance},
                {"comorbidity_count", std::to_string(comorbidities)},
                {"frailty_score", fmt_double(std::round(frailty * 10.0) / 10.0)},
            };
            for (const auto& [name, value] : rows) {
                static_csv.row({ps.patient_id, ps.stay_id, name, value});
                if (ps.split) static_csv.row({ps.patient_id, enc2_id, name, value});
            }
        }

        std::vector<phenotype::TimedScore> score_stream;
        auto emit_event = [&](double t, const std::string& name, double value,
                              const std::string& unit) {
            events_csv.row({ps.patient_id, enc_of(t), format_iso8601_min(int64_t(t)), name,
                            fmt_double(value), unit});
            ++total_events;
            stay_vars[ps.stay_id].insert(name);
        };

        // per-span assessments (these decide the labels)
        Rng srng = Rng::derived(cfg.seed, {0x5C02, fnv1a64(ps.stay_id)});
        for (int k = 0; k < n_spans; ++k) {
            bool dead_span = dying && k == ps.death_span;
            if (ps.missing[size_t(k)] && !dead_span) continue;
            const auto& span = ps.spans[size_t(k)];
            // assessments must both fall inside the span and precede
            // discharge/death, or the shift has no scores at all
            double limit = std::min(span.end_min, ps.discharge) - 20.0;
            if (dead_span) limit = *ps.death - 20.0;
            if (limit - span.start_min < 80.0) {
                ps.missing[size_t(k)] = true;
                continue;
            }
            int assessments = srng.bernoulli(0.3) ? 2 : 1;
            double t = span.start_min +
                       double(srng.uniform_int(60, std::min<int64_t>(
                                                       600, int64_t(limit - span.start_min) - 1)));
            for (int a = 0; a < assessments; ++a) {
                if (t >= limit) break;
                int rass, gcs;
                std::optional<int> cam;
                if (dead_span) {
                    rass = -5;
                    gcs = 3;
                } else {
                    switch (ps.states[size_t(k)]) {
                        case kDelirium:
                            rass = int(srng.uniform_int(-1, 2));
                            gcs = int(srng.uniform_int(9, 14));
                            cam = 1;
                            break;
                        case kComa:
                            rass = int(srng.uniform_int(-5, -4));
                            gcs = int(srng.uniform_int(3, 8));
                            break;
                        default:
                            rass = int(srng.uniform_int(-1, 1));
                            gcs = int(srng.uniform_int(13, 15));
                            cam = 0;
                            break;
                    }
                }
                if (!in_hole(t)) {
                    emit_event(t, "rass", double(rass), "score");
                    emit_event(t, "gcs", double(gcs), "score");
                    if (cam) emit_event(t, "cam", double(*cam), "flag");
                    emit_event(t, "pain_score", double(srng.uniform_int(0, 10)), "score");
                    score_stream.push_back({t, phenotype::ScoreKind::Rass, double(rass)});
                    score_stream.push_back({t, phenotype::ScoreKind::Gcs, double(gcs)});
                    if (cam)
                        score_stream.push_back({t, phenotype::ScoreKind::Cam, double(*cam)});
                }
                t += double(srng.uniform_int(60, 300));
            }
        }

        // temporal feature events; the state of span k+1 shapes span k
        Rng erng = Rng::derived(cfg.seed, {0x5E03, fnv1a64(ps.stay_id)});
        double s = cfg.signal;
        for (int k = -1; k < n_spans; ++k) {
            double seg_start = k < 0 ? ps.admit : ps.spans[size_t(k)].start_min;
            double seg_end = k < 0 ? (n_spans ? ps.spans[0].start_min : ps.discharge)
                                   : std::min(ps.spans[size_t(k)].end_min, ps.discharge);
            if (seg_end - seg_start < 4.0) continue;
            int next_state = kNormal;
            if (k + 1 < n_spans) {
                next_state = (dying && k + 1 == ps.death_span) ? kDeadNext
                                                               : ps.states[size_t(k + 1)];
            }

            auto draw_time = [&]() {
                return seg_start + 1.0 +
                       double(erng.uniform_int(0, int64_t(seg_end - seg_start) - 2));
            };
            auto ramp = [&](double t) { return (t - seg_start) / 720.0; };

            for (int v = 0; v < vital_count(cfg); ++v) {
                int count = erng.poisson(2.2 * rate_scale);
                for (int e = 0; e < count; ++e) {
                    double t = draw_time();
                    double mean = kVitals[v].mean, sd = kVitals[v].sd;
                    std::string name = kVitals[v].name;
                    if (name == "heart_rate") {
                        if (next_state == kDelirium) {
                            mean += s * 10.0;
                            sd *= 1.0 + 2.0 * s;
                        }
                        if (next_state == kDeadNext) mean += s * 25.0 * ramp(t);
                    } else if (name == "sbp") {
                        if (next_state == kComa) mean -= s * 12.0;
                        if (next_state == kDeadNext) mean -= s * 35.0 * ramp(t);
                    } else if (name == "spo2") {
                        if (next_state == kComa) mean -= s * 2.0;
                    }
                    emit_event(t, name, std::round(erng.normal(mean, sd) * 10.0) / 10.0,
                               kVitals[v].unit);
                }
            }
            for (int v = 0; v < cfg.lab_count; ++v) {
                int count = erng.poisson(0.35 * rate_scale);
                for (int e = 0; e < count; ++e) {
                    double t = draw_time();
                    double mean = kLabs[v].mean, sd = kLabs[v].sd;
                    std::string name = kLabs[v].name;
                    if (name == "crp" && next_state == kDelirium) mean += s * 30.0;
                    if (name == "lactate") {
                        if (next_state == kComa) mean += s * 1.2;
                        if (next_state == kDeadNext) mean += s * 4.0 * ramp(t);
                    }
                    double value = std::max(0.01, erng.normal(mean, sd));
                    emit_event(t, name, std::round(value * 100.0) / 100.0, kLabs[v].unit);
                }
            }
            for (int v = 0; v < cfg.med_count; ++v) {
                std::string name = kMeds[v].name;
                double presence = 0.18;
                double dose_shift = 0.0;
                if (name == "propofol" && next_state == kComa) {
                    presence += s * 0.55;
                    dose_shift = s * 40.0;
                } else if (name == "haloperidol" && next_state == kDelirium) {
                    presence += s * 0.45;
                } else if (name == "norepinephrine" && next_state == kDeadNext) {
                    presence += s * 0.6;
                    dose_shift = s * 10.0;
                }
                if (!erng.bernoulli(std::min(presence, 1.0))) continue;
                int count = 1 + erng.poisson(0.4 * rate_scale);
                for (int e = 0; e < count; ++e) {
                    double t = draw_time();
                    double value = std::max(0.1, erng.normal(kMeds[v].mean + dose_shift,
                                                             kMeds[v].sd));
                    emit_event(t, name, std::round(value * 10.0) / 10.0, kMeds[v].unit);
                }
            }
            if (ps.rare_assay && erng.bernoulli(0.25)) {
                double t = draw_time();
                emit_event(t, "rare_assay", std::round(erng.normal(40.0, 12.0) * 10.0) / 10.0,
                           "u_l");
            }
        }

        // labels come from the engine, never from the plan directly
        std::stable_sort(score_stream.begin(), score_stream.end(),
                         [](const phenotype::TimedScore& a, const phenotype::TimedScore& b) {
                             return a.time_min < b.time_min;
                         });
        // hole events were suppressed; drop hole scores likewise (already
        // skipped at emission, the stream matches what etl will parse)
        auto labels = phenotype::label_stay(score_stream, ps.spans, ps.death);
        if (labels.size() != ps.spans.size())
            throw DataError("synthgen: engine label count mismatch for stay " + ps.stay_id);
        for (const auto& sl : labels) {
            AcuityLabel expected;
            if (dying && sl.shift_index == ps.death_span) expected = AcuityLabel::Dead;
            else if (ps.missing[size_t(sl.shift_index)]) expected = AcuityLabel::Excluded;
            else if (ps.states[size_t(sl.shift_index)] == kDelirium)
                expected = AcuityLabel::Delirium;
            else if (ps.states[size_t(sl.shift_index)] == kComa) expected = AcuityLabel::Coma;
            else expected = AcuityLabel::Normal;
            if (sl.label != expected)
                throw DataError("synthgen: phenotype engine disagrees with planned state for " +
                                ps.stay_id + " shift " + std::to_string(sl.shift_index));
            labels_csv.row({ps.stay_id, std::to_string(sl.shift_index),
                            phenotype::label_name(sl.label)});
            ++summary.label_counts[phenotype::label_name(sl.label)];
            ++summary.shifts;
        }
    }

    enc_csv.close();
    static_csv.close();
    events_csv.close();
    labels_csv.close();

    // ready-to-use prepare config with the variable table
    {
        KeyedConfig pc;
        pc.set("prevalence_threshold", "0.05");
        pc.set("max_sequence_length", "12000");
        pc.set("test_fraction", "0.2");
        pc.set("folds", "5");
        pc.set("seed", std::to_string(cfg.seed));
        pc.set("tabular", "false");
        for (const auto& v : vars)
            pc.entries.emplace_back("variable",
                                    v.name + "," + etl::kind_name(v.kind) + "," + v.unit);
        std::ofstream out(fs::path(out_dir) / "prepare.conf");
        if (!out) throw DataError("cannot write prepare.conf");
        out << "# default prepare configuration for this cohort\n" << pc.canonical_text();
    }

    summary.stays = int64_t(stays.size());
    std::sort(los_list.begin(), los_list.end());
    if (!los_list.empty()) {
        size_t n = los_list.size();
        summary.median_los_min =
            n % 2 ? los_list[n / 2] : (los_list[n / 2 - 1] + los_list[n / 2]) / 2.0;
    }
    summary.mean_events_per_stay =
        stays.empty() ? 0.0 : double(total_events) / double(stays.size());
    for (const auto& v : vars) {
        int64_t with = 0;
        for (const auto& [stay, names] : stay_vars) with += names.count(v.name) ? 1 : 0;
        summary.variable_stay_prevalence[v.name] =
            stays.empty() ? 0.0 : double(with) / double(stays.size());
    }
    return summary;
}

CohortSummary describe(const std::string& dir) {
    CohortSummary summary;
    CsvTable labels = read_csv((fs::path(dir) / "labels.csv").string());
    int l_label = labels.require_col("label", "labels.csv");
    for (const auto& row : labels.rows) {
        ++summary.label_counts[row[size_t(l_label)]];
        ++summary.shifts;
    }

    CsvTable encs = read_csv((fs::path(dir) / "encounters.csv").string());
    int c_pat = encs.require_col("patient_id", "encounters.csv");
    int c_admit = encs.require_col("admit_iso8601", "encounters.csv");
    int c_disch = encs.require_col("discharge_iso8601", "encounters.csv");
    std::map<std::string, std::vector<std::pair<double, double>>> by_patient;
    for (const auto& row : encs.rows) {
        by_patient[row[size_t(c_pat)]].push_back(
            {double(parse_iso8601_min(row[size_t(c_admit)])),
             double(parse_iso8601_min(row[size_t(c_disch)]))});
    }
    summary.patients = int64_t(by_patient.size());
    std::vector<double> los_list;
    for (auto& [pid, spans] : by_patient) {
        std::sort(spans.begin(), spans.end());
        size_t i = 0;
        while (i < spans.size()) {
            double admit = spans[i].first, discharge = spans[i].second;
            size_t j = i + 1;
            while (j < spans.size() && spans[j].first - discharge < 1440.0) {
                discharge = spans[j].second;
                ++j;
            }
            los_list.push_back(discharge - admit);
            ++summary.stays;
            i = j;
        }
    }
    std::sort(los_list.begin(), los_list.end());
    if (!los_list.empty()) {
        size_t n = los_list.size();
        summary.median_los_min =
            n % 2 ? los_list[n / 2] : (los_list[n / 2 - 1] + los_list[n / 2]) / 2.0;
    }

    CsvTable events = read_csv((fs::path(dir) / "events.csv").string());
    summary.mean_events_per_stay =
        summary.stays ? double(events.rows.size()) / double(summary.stays) : 0.0;
    int e_name = events.require_col("name", "events.csv");
    int e_pat = events.require_col("patient_id", "events.csv");
    std::map<std::string, std::set<std::string>> var_patients;
    for (const auto& row : events.rows)
        var_patients[row[size_t(e_name)]].insert(row[size_t(e_pat)]);
    for (const auto& [name, pats] : var_patients)
        summary.variable_stay_prevalence[name] =
            summary.stays ? double(pats.size()) / double(summary.stays) : 0.0;
    return summary;
}

}  // namespace acuity::synth
