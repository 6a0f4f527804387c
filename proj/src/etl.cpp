#include "acuity/etl.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "acuity/csv.hpp"
#include "acuity/timeutil.hpp"

namespace acuity::etl {

namespace fs = std::filesystem;

std::string kind_name(VarKind kind) {
    switch (kind) {
        case VarKind::Vital: return "vital";
        case VarKind::Lab: return "lab";
        case VarKind::Medication: return "medication";
        case VarKind::Score: return "score";
    }
    throw DataError("invalid variable kind");
}

VarKind kind_from_name(const std::string& name) {
    if (name == "vital") return VarKind::Vital;
    if (name == "lab") return VarKind::Lab;
    if (name == "medication") return VarKind::Medication;
    if (name == "score") return VarKind::Score;
    throw ConfigError("unknown variable kind '" + name + "'");
}

static std::string to_lower(std::string s) {
    for (char& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

VariableDecl parse_variable_decl(const std::string& spec) {
    auto fields = split_csv_line(spec);
    if (fields.size() != 3)
        throw ConfigError("variable declaration must be 'name,kind,unit', got '" + spec + "'");
    VariableDecl decl;
    decl.name = to_lower(fields[0]);
    decl.kind = kind_from_name(fields[1]);
    decl.unit = fields[2];
    if (decl.name.empty()) throw ConfigError("variable declaration has empty name");
    return decl;
}

PrepareConfig PrepareConfig::from_config(const KeyedConfig& cfg) {
    static constexpr const char* kKeys[] = {"prevalence_threshold", "max_sequence_length",
                                            "test_fraction", "folds", "seed", "tabular",
                                            "variable"};
    cfg.require_known(kKeys);
    PrepareConfig pc;
    pc.prevalence_threshold = cfg.get_double("prevalence_threshold", 0.05);
    pc.max_sequence_length = int(cfg.get_int("max_sequence_length", 12000));
    pc.test_fraction = cfg.get_double("test_fraction", 0.2);
    pc.fold_count = int(cfg.get_int("folds", 5));
    pc.seed = uint64_t(cfg.get_int("seed", 1));
    pc.tabular = cfg.get_bool("tabular", false);
    for (const auto& spec : cfg.all("variable"))
        pc.variables.push_back(parse_variable_decl(spec));
    pc.validate();
    return pc;
}

KeyedConfig PrepareConfig::to_config() const {
    KeyedConfig cfg;
    cfg.set("prevalence_threshold", fmt_double(prevalence_threshold));
    cfg.set("max_sequence_length", std::to_string(max_sequence_length));
    cfg.set("test_fraction", fmt_double(test_fraction));
    cfg.set("folds", std::to_string(fold_count));
    cfg.set("seed", std::to_string(seed));
    cfg.set("tabular", tabular ? "true" : "false");
    for (const auto& v : variables)
        cfg.entries.emplace_back("variable", v.name + "," + kind_name(v.kind) + "," + v.unit);
    return cfg;
}

void PrepareConfig::validate() const {
    if (variables.empty()) throw ConfigError("no temporal variables declared");
    if (prevalence_threshold <= 0.0 || prevalence_threshold >= 1.0)
        throw ConfigError("prevalence_threshold must be in (0, 1)");
    if (max_sequence_length < 1) throw ConfigError("max_sequence_length must be >= 1");
    if (test_fraction < 0.0 || test_fraction >= 1.0)
        throw ConfigError("test_fraction must be in [0, 1)");
    if (fold_count < 2) throw ConfigError("folds must be >= 2");
    std::set<std::string> names;
    for (const auto& v : variables)
        if (!names.insert(v.name).second)
            throw ConfigError("variable '" + v.name + "' declared twice");
}

RawCohort load_raw(const std::string& dir, const PrepareConfig& cfg) {
    for (const char* name : {"encounters.csv", "static.csv", "events.csv"}) {
        if (!fs::exists(fs::path(dir) / name))
            throw ConfigError("missing input file: " + (fs::path(dir) / name).string());
    }

    std::map<std::string, int> var_index;
    for (size_t i = 0; i < cfg.variables.size(); ++i)
        var_index[cfg.variables[i].name] = int(i);

    RawCohort cohort;
    std::map<std::pair<std::string, std::string>, size_t> enc_index;

    CsvTable encs = read_csv((fs::path(dir) / "encounters.csv").string());
    int c_pat = encs.require_col("patient_id", "encounters.csv");
    int c_enc = encs.require_col("encounter_id", "encounters.csv");
    int c_admit = encs.require_col("admit_iso8601", "encounters.csv");
    int c_disch = encs.require_col("discharge_iso8601", "encounters.csv");
    int c_death = encs.col("death_iso8601");
    for (const auto& row : encs.rows) {
        RawEncounter e;
        e.patient_id = row[size_t(c_pat)];
        e.encounter_id = row[size_t(c_enc)];
        e.admit_min = double(parse_iso8601_min(row[size_t(c_admit)]));
        e.discharge_min = double(parse_iso8601_min(row[size_t(c_disch)]));
        if (e.admit_min >= e.discharge_min)
            throw DataError("encounters.csv: encounter " + e.encounter_id +
                            " has admit >= discharge");
        if (c_death >= 0 && !row[size_t(c_death)].empty())
            e.death_min = double(parse_iso8601_min(row[size_t(c_death)]));
        auto key = std::make_pair(e.patient_id, e.encounter_id);
        if (enc_index.count(key))
            throw DataError("encounters.csv: duplicate encounter " + e.encounter_id);
        enc_index[key] = cohort.encounters.size();
        cohort.encounters.push_back(std::move(e));
    }

    CsvTable statics = read_csv((fs::path(dir) / "static.csv").string());
    int s_pat = statics.require_col("patient_id", "static.csv");
    int s_enc = statics.require_col("encounter_id", "static.csv");
    int s_name = statics.require_col("name", "static.csv");
    int s_value = statics.require_col("value", "static.csv");
    for (const auto& row : statics.rows) {
        auto key = std::make_pair(row[size_t(s_pat)], row[size_t(s_enc)]);
        auto it = enc_index.find(key);
        if (it == enc_index.end())
            throw DataError("static.csv: unknown encounter " + row[size_t(s_enc)]);
        cohort.encounters[it->second].statics.emplace_back(to_lower(row[size_t(s_name)]),
                                                           row[size_t(s_value)]);
    }

    CsvTable events = read_csv((fs::path(dir) / "events.csv").string());
    int e_pat = events.require_col("patient_id", "events.csv");
    int e_enc = events.require_col("encounter_id", "events.csv");
    int e_time = events.require_col("time_iso8601", "events.csv");
    int e_name = events.require_col("name", "events.csv");
    int e_value = events.require_col("value", "events.csv");
    int e_unit = events.require_col("unit", "events.csv");
    for (const auto& row : events.rows) {
        ++cohort.events_total;
        auto key = std::make_pair(row[size_t(e_pat)], row[size_t(e_enc)]);
        auto it = enc_index.find(key);
        if (it == enc_index.end())
            throw DataError("events.csv: unknown encounter " + row[size_t(e_enc)]);
        std::string name = to_lower(row[size_t(e_name)]);
        auto vit = var_index.find(name);
        if (vit == var_index.end()) {
            ++cohort.events_rejected_unknown;
            continue;
        }
        const VariableDecl& decl = cfg.variables[size_t(vit->second)];
        if (row[size_t(e_unit)] != decl.unit) {
            ++cohort.events_rejected_unit;
            continue;
        }
        RawEncounter& enc = cohort.encounters[it->second];
        RawEvent ev;
        ev.time_min = double(parse_iso8601_min(row[size_t(e_time)]));
        ev.var = vit->second;
        ev.value = parse_double(row[size_t(e_value)], "events.csv value for " + name);
        // tolerate up to 12 h of pre-admission history; reject anything else
        if (ev.time_min < enc.admit_min - 720.0 || ev.time_min > enc.discharge_min) {
            ++cohort.events_rejected_range;
            continue;
        }
        if (decl.kind == VarKind::Score &&
            (name == "rass" || name == "cam" || name == "gcs")) {
            phenotype::TimedScore ts;
            ts.time_min = ev.time_min;
            ts.kind = name == "rass" ? phenotype::ScoreKind::Rass
                      : name == "cam" ? phenotype::ScoreKind::Cam
                                      : phenotype::ScoreKind::Gcs;
            ts.value = ev.value;
            try {
                phenotype::validate_score(ts);
            } catch (const DataError&) {
                ++cohort.events_rejected_range;
                continue;
            }
            enc.scores.push_back(ts);
        }
        enc.events.push_back(ev);
    }

    for (auto& enc : cohort.encounters) {
        std::stable_sort(enc.events.begin(), enc.events.end(),
                         [](const RawEvent& a, const RawEvent& b) {
                             return a.time_min < b.time_min;
                         });
        std::stable_sort(enc.scores.begin(), enc.scores.end(),
                         [](const phenotype::TimedScore& a, const phenotype::TimedScore& b) {
                             return a.time_min < b.time_min;
                         });
    }
    std::stable_sort(cohort.encounters.begin(), cohort.encounters.end(),
                     [](const RawEncounter& a, const RawEncounter& b) {
                         if (a.patient_id != b.patient_id) return a.patient_id < b.patient_id;
                         if (a.admit_min != b.admit_min) return a.admit_min < b.admit_min;
                         return a.encounter_id < b.encounter_id;
                     });
    return cohort;
}

std::vector<RawEncounter> merge_encounters(std::vector<RawEncounter> encounters) {
    std::vector<RawEncounter> out;
    for (auto& enc : encounters) {
        if (!out.empty() && enc.patient_id == out.back().patient_id) {
            RawEncounter& prev = out.back();
            if (enc.admit_min < prev.admit_min)
                throw DataError("merge_encounters: encounters not sorted by admit time");
            if (enc.admit_min < prev.discharge_min)
                throw DataError("merge_encounters: encounters " + prev.encounter_id + " and " +
                                enc.encounter_id + " overlap");
            if (enc.admit_min - prev.discharge_min < 1440.0) {
                prev.discharge_min = enc.discharge_min;
                if (enc.death_min) prev.death_min = enc.death_min;
                prev.statics.insert(prev.statics.end(), enc.statics.begin(), enc.statics.end());
                prev.events.insert(prev.events.end(), enc.events.begin(), enc.events.end());
                prev.scores.insert(prev.scores.end(), enc.scores.begin(), enc.scores.end());
                continue;
            }
        }
        out.push_back(std::move(enc));
    }
    for (auto& stay : out) {
        std::stable_sort(stay.events.begin(), stay.events.end(),
                         [](const RawEvent& a, const RawEvent& b) {
                             return a.time_min < b.time_min;
                         });
        std::stable_sort(stay.scores.begin(), stay.scores.end(),
                         [](const phenotype::TimedScore& a, const phenotype::TimedScore& b) {
                             return a.time_min < b.time_min;
                         });
    }
    return out;
}

StayShifts label_shifts(const RawEncounter& stay) {
    StayShifts shifts;
    shifts.spans = phenotype::make_shift_spans(stay.admit_min, stay.discharge_min, stay.death_min);
    auto labels = phenotype::label_stay(stay.scores, shifts.spans, stay.death_min);
    shifts.spans.resize(labels.size());
    for (const auto& sl : labels) {
        shifts.labels.push_back(sl.label);
        auto cam = phenotype::carry_forward(stay.scores, phenotype::ScoreKind::Cam,
                                            shifts.spans[size_t(sl.shift_index)].end_min);
        if (cam) shifts.cam_positive.push_back(*cam != 0.0);
        else shifts.cam_positive.push_back(std::nullopt);
    }
    return shifts;
}

const VocabEntry* FeatureVocabulary::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

const VocabEntry& FeatureVocabulary::by_code(int code) const {
    for (const auto& e : entries)
        if (e.code == code) return e;
    throw DataError("no vocabulary entry with code " + std::to_string(code));
}

std::string FeatureVocabulary::hash_hex() const {
    std::string blob;
    for (const auto& e : entries) {
        blob += e.name + "|" + std::to_string(e.code) + "|" + kind_name(e.kind) + "|" + e.unit +
                "|" + (e.retain ? "1" : "0") + "|" + fmt_double(e.stats.p1) + "|" +
                fmt_double(e.stats.p99) + "|" + fmt_double(e.stats.mean) + "|" +
                fmt_double(e.stats.std_dev) + ";";
    }
    return to_hex(fnv1a64(blob));
}

FeatureVocabulary fit_vocabulary(std::span<const RawEncounter> train_stays,
                                 std::span<const VariableDecl> variables,
                                 double prevalence_threshold) {
    if (train_stays.empty()) throw DataError("fit_vocabulary: empty training set");
    if (prevalence_threshold <= 0.0 || prevalence_threshold >= 1.0)
        throw ConfigError("prevalence_threshold must be in (0, 1)");

    std::vector<int64_t> stays_with(variables.size(), 0);
    for (const auto& stay : train_stays) {
        std::set<int> seen;
        for (const auto& ev : stay.events) seen.insert(ev.var);
        for (int v : seen) ++stays_with[size_t(v)];
    }

    FeatureVocabulary vocab;
    for (size_t i = 0; i < variables.size(); ++i) {
        VocabEntry e;
        e.name = variables[i].name;
        e.kind = variables[i].kind;
        e.unit = variables[i].unit;
        e.stats.prevalence = double(stays_with[i]) / double(train_stays.size());
        bool filterable = e.kind == VarKind::Lab || e.kind == VarKind::Medication;
        e.retain = !filterable || e.stats.prevalence >= prevalence_threshold;
        vocab.entries.push_back(std::move(e));
    }
    std::sort(vocab.entries.begin(), vocab.entries.end(),
              [](const VocabEntry& a, const VocabEntry& b) {
                  if (a.kind != b.kind) return int(a.kind) < int(b.kind);
                  return a.name < b.name;
              });
    int code = 0;
    for (auto& e : vocab.entries)
        if (e.retain) e.code = code++;
    vocab.retained_count = code;
    return vocab;
}

std::pair<double, double> percentile_bounds(std::vector<double> values, double lo_q,
                                            double hi_q) {
    if (values.empty()) return {0.0, 0.0};
    std::sort(values.begin(), values.end());
    if (values.size() < 2) return {values.front(), values.back()};
    auto nearest_rank = [&](double q) {
        auto idx = int64_t(std::ceil(q * double(values.size()))) - 1;
        idx = std::clamp<int64_t>(idx, 0, int64_t(values.size()) - 1);
        return values[size_t(idx)];
    };
    return {nearest_rank(lo_q), nearest_rank(hi_q)};
}

double clip_outlier(const VocabStats& stats, double value) {
    return std::clamp(value, stats.p1, stats.p99);
}

std::vector<encoding::ObservationTriplet> clip_sequence(
    std::vector<encoding::ObservationTriplet> window, int max_len) {
    if (max_len < 1) throw ConfigError("clip_sequence: max_len must be >= 1");
    if (int(window.size()) <= max_len) return window;
    window.erase(window.begin(), window.end() - max_len);
    return window;
}

std::vector<std::optional<double>> aggregate_window(
    std::span<const std::pair<int, double>> code_values, int n_codes) {
    std::vector<double> sums(size_t(n_codes), 0.0);
    std::vector<int64_t> counts(size_t(n_codes), 0);
    for (const auto& [code, value] : code_values) {
        if (code < 0 || code >= n_codes)
            throw DataError("aggregate_window: code " + std::to_string(code) +
                            " outside vocabulary of size " + std::to_string(n_codes));
        sums[size_t(code)] += value;
        ++counts[size_t(code)];
    }
    std::vector<std::optional<double>> out(size_t(n_codes), std::nullopt);
    for (int c = 0; c < n_codes; ++c)
        if (counts[size_t(c)] > 0) out[size_t(c)] = sums[size_t(c)] / double(counts[size_t(c)]);
    return out;
}

std::pair<double, double> population_moments(std::span<const double> values) {
    if (values.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= double(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / double(values.size()))};
}

std::vector<double> impute_series(const std::vector<std::optional<double>>& series,
                                  bool is_medication, std::optional<double> train_mean) {
    size_t n = series.size();
    std::vector<double> out(n, 0.0);
    std::vector<size_t> present;
    for (size_t i = 0; i < n; ++i)
        if (series[i]) present.push_back(i);

    if (present.empty()) {
        double fill = is_medication ? 0.0 : train_mean.value_or(0.0);
        std::fill(out.begin(), out.end(), fill);
        return out;
    }
    for (size_t i = 0; i < n; ++i) {
        if (series[i]) {
            out[i] = *series[i];
            continue;
        }
        auto next = std::lower_bound(present.begin(), present.end(), i);
        if (next == present.begin()) {
            out[i] = *series[present.front()];  // backward fill
        } else if (next == present.end()) {
            out[i] = *series[present.back()];  // forward fill
        } else {
            size_t hi = *next;
            size_t lo = *(next - 1);
            double frac = double(i - lo) / double(hi - lo);
            out[i] = *series[lo] + frac * (*series[hi] - *series[lo]);
        }
    }
    return out;
}

double scale_minmax(double value, double train_min, double train_max) {
    if (train_max <= train_min) return 0.0;
    double scaled = (value - train_min) / (train_max - train_min);
    return std::clamp(scaled, 0.0, 1.0);
}

int StaticLayout::dim() const {
    int d = int(numerics.size());
    for (const auto& c : categoricals) d += int(c.categories.size());
    return d;
}

std::vector<std::string> StaticLayout::column_names() const {
    std::vector<std::string> names;
    for (const auto& v : numerics) names.push_back(v.name);
    for (const auto& c : categoricals)
        for (const auto& cat : c.categories) names.push_back(c.name + "=" + cat);
    return names;
}

std::vector<double> StaticLayout::transform(
    const std::vector<std::pair<std::string, std::string>>& statics) const {
    std::map<std::string, std::string> lookup(statics.begin(), statics.end());
    std::vector<double> out;
    out.reserve(size_t(dim()));
    for (const auto& v : numerics) {
        double raw = v.median;
        auto it = lookup.find(v.name);
        if (it != lookup.end()) {
            try {
                raw = parse_double(it->second, "static variable " + v.name);
            } catch (const DataError&) {
                raw = v.median;
            }
        }
        out.push_back(v.std_dev > 0.0 ? (raw - v.mean) / v.std_dev : 0.0);
    }
    for (const auto& c : categoricals) {
        std::string value = c.mode;
        auto it = lookup.find(c.name);
        if (it != lookup.end()) value = it->second;
        for (const auto& cat : c.categories) out.push_back(cat == value ? 1.0 : 0.0);
    }
    return out;
}

StaticLayout fit_statics(std::span<const RawEncounter> train_stays) {
    // collect values per name; a variable is numeric iff every observed
    // training value parses as a number
    std::map<std::string, std::vector<std::string>> values;
    for (const auto& stay : train_stays)
        for (const auto& [name, value] : stay.statics) values[name].push_back(value);

    StaticLayout layout;
    for (auto& [name, vals] : values) {
        bool numeric = true;
        std::vector<double> nums;
        nums.reserve(vals.size());
        for (const auto& v : vals) {
            try {
                nums.push_back(parse_double(v, name));
            } catch (const DataError&) {
                numeric = false;
                break;
            }
        }
        if (numeric && !nums.empty()) {
            StaticNumeric sn;
            sn.name = name;
            std::sort(nums.begin(), nums.end());
            size_t n = nums.size();
            sn.median = n % 2 ? nums[n / 2] : (nums[n / 2 - 1] + nums[n / 2]) / 2.0;
            double mean = std::accumulate(nums.begin(), nums.end(), 0.0) / double(n);
            double var = 0.0;
            for (double x : nums) var += (x - mean) * (x - mean);
            sn.mean = mean;
            sn.std_dev = std::sqrt(var / double(n));
            layout.numerics.push_back(std::move(sn));
        } else {
            StaticCategorical sc;
            sc.name = name;
            std::map<std::string, int64_t> counts;
            for (const auto& v : vals) ++counts[v];
            int64_t best = -1;
            for (const auto& [cat, cnt] : counts) {
                sc.categories.push_back(cat);
                if (cnt > best) {
                    best = cnt;
                    sc.mode = cat;
                }
            }
            layout.categoricals.push_back(std::move(sc));
        }
    }
    return layout;
}

std::map<std::string, int> split_dataset(std::vector<std::string> patient_ids, uint64_t seed,
                                         int fold_count, double test_fraction) {
    if (fold_count < 2) throw ConfigError("split_dataset: fold_count must be >= 2");
    std::sort(patient_ids.begin(), patient_ids.end());
    patient_ids.erase(std::unique(patient_ids.begin(), patient_ids.end()), patient_ids.end());

    Rng rng = Rng::derived(seed, {0x5B11});
    rng.shuffle(patient_ids);

    size_t n_test = size_t(std::ceil(test_fraction * double(patient_ids.size())));
    if (patient_ids.size() - n_test < size_t(fold_count))
        throw DataError("split_dataset: fewer patients (" +
                        std::to_string(patient_ids.size() - n_test) + ") than folds (" +
                        std::to_string(fold_count) + ")");

    std::map<std::string, int> fold_of;
    for (size_t i = 0; i < patient_ids.size(); ++i) {
        if (i < n_test) fold_of[patient_ids[i]] = -1;
        else fold_of[patient_ids[i]] = int((i - n_test) % size_t(fold_count));
    }
    return fold_of;
}

std::vector<std::pair<std::string, int64_t>> Funnel::rows() const {
    return {
        {"patients_in", patients_in},
        {"encounters_in", encounters_in},
        {"events_in", events_in},
        {"events_rejected_unknown_variable", events_rejected_unknown},
        {"events_rejected_unit_mismatch", events_rejected_unit},
        {"events_rejected_out_of_range", events_rejected_range},
        {"stays_after_merge", stays_after_merge},
        {"stays_dropped_short", stays_dropped_short},
        {"shifts_enumerated", shifts_enumerated},
        {"shifts_dropped_short_stay", shifts_dropped_short_stay},
        {"shifts_dropped_early_start", shifts_dropped_early},
        {"shifts_dropped_excluded_label", shifts_dropped_excluded},
        {"shifts_retained", shifts_retained},
    };
}

namespace {

struct PendingShift {
    const RawEncounter* stay = nullptr;
    int shift_index = 0;
    double window_start = 0.0, window_end = 0.0;  // (start, end]
    phenotype::AcuityLabel label;
    std::optional<bool> cam_positive;
    std::vector<const RawEvent*> raw_window;  // sorted by time
};

}  // namespace

PreparedDataset prepare(const std::string& raw_dir, const PrepareConfig& cfg) {
    cfg.validate();
    PreparedDataset ds;
    ds.config = cfg;
    Funnel& funnel = ds.funnel;

    RawCohort cohort = load_raw(raw_dir, cfg);
    funnel.encounters_in = int64_t(cohort.encounters.size());
    funnel.events_in = cohort.events_total;
    funnel.events_rejected_unknown = cohort.events_rejected_unknown;
    funnel.events_rejected_unit = cohort.events_rejected_unit;
    funnel.events_rejected_range = cohort.events_rejected_range;
    {
        std::set<std::string> patients;
        for (const auto& e : cohort.encounters) patients.insert(e.patient_id);
        funnel.patients_in = int64_t(patients.size());
    }

    std::vector<RawEncounter> stays = merge_encounters(std::move(cohort.encounters));
    funnel.stays_after_merge = int64_t(stays.size());

    // enumerate and label shifts, then apply the stay/shift filters
    std::vector<PendingShift> pending;
    for (const auto& stay : stays) {
        StayShifts shifts = label_shifts(stay);
        funnel.shifts_enumerated += int64_t(shifts.spans.size());
        if (stay.discharge_min - stay.admit_min < 720.0) {
            funnel.shifts_dropped_short_stay += int64_t(shifts.spans.size());
            ++funnel.stays_dropped_short;
            continue;
        }
        for (size_t i = 0; i < shifts.spans.size(); ++i) {
            const auto& span = shifts.spans[i];
            if (span.start_min - stay.admit_min < 720.0) {
                ++funnel.shifts_dropped_early;
                continue;
            }
            if (shifts.labels[i] == phenotype::AcuityLabel::Excluded) {
                ++funnel.shifts_dropped_excluded;
                continue;
            }
            PendingShift ps;
            ps.stay = &stay;
            ps.shift_index = int(i);
            ps.window_start = span.start_min - 720.0;
            ps.window_end = span.start_min;
            ps.label = shifts.labels[i];
            ps.cam_positive = shifts.cam_positive[i];
            pending.push_back(std::move(ps));
            ++funnel.shifts_retained;
        }
    }

    // patient-disjoint split over patients with retained shifts
    std::vector<std::string> patients;
    for (const auto& ps : pending) patients.push_back(ps.stay->patient_id);
    auto fold_of = split_dataset(patients, cfg.seed, cfg.fold_count, cfg.test_fraction);

    // training stays (folds >= 1) drive every fitted statistic; fold 0 is the
    // primary validation fold and -1 the held-out test set
    auto is_train_patient = [&](const std::string& pid) {
        auto it = fold_of.find(pid);
        return it != fold_of.end() && it->second >= 1;
    };
    std::vector<RawEncounter> train_stay_copies;
    for (const auto& stay : stays)
        if (is_train_patient(stay.patient_id)) train_stay_copies.push_back(stay);
    if (train_stay_copies.empty()) throw DataError("prepare: no training stays after split");

    ds.vocab = fit_vocabulary(train_stay_copies, cfg.variables, cfg.prevalence_threshold);
    ds.statics = fit_statics(train_stay_copies);

    std::map<std::string, int> var_to_decl;
    for (size_t i = 0; i < cfg.variables.size(); ++i) var_to_decl[cfg.variables[i].name] = int(i);
    std::vector<const VocabEntry*> decl_to_entry(cfg.variables.size(), nullptr);
    std::vector<VocabEntry*> decl_to_entry_mut(cfg.variables.size(), nullptr);
    for (auto& e : ds.vocab.entries) {
        decl_to_entry[size_t(var_to_decl.at(e.name))] = &e;
        decl_to_entry_mut[size_t(var_to_decl.at(e.name))] = &e;
    }

    // raw windows per retained shift: retained variables only, then the most
    // recent max_sequence_length events
    for (auto& ps : pending) {
        for (const auto& ev : ps.stay->events) {
            if (ev.time_min <= ps.window_start || ev.time_min > ps.window_end) continue;
            const VocabEntry* entry = decl_to_entry[size_t(ev.var)];
            if (!entry || !entry->retain) continue;
            ps.raw_window.push_back(&ev);
        }
        if (int(ps.raw_window.size()) > cfg.max_sequence_length) {
            ps.raw_window.erase(ps.raw_window.begin(),
                                ps.raw_window.end() - cfg.max_sequence_length);
        }
    }

    std::vector<std::vector<double>> train_values(cfg.variables.size());
    for (const auto& ps : pending) {
        if (fold_of.at(ps.stay->patient_id) < 1) continue;
        for (const RawEvent* ev : ps.raw_window) {
            const VocabEntry* entry = decl_to_entry[size_t(ev->var)];
            if (entry && entry->retain) train_values[size_t(ev->var)].push_back(ev->value);
        }
    }
    for (size_t v = 0; v < cfg.variables.size(); ++v) {
        VocabEntry* entry = decl_to_entry_mut[v];
        if (!entry || !entry->retain) continue;
        auto& vals = train_values[v];
        entry->stats.train_values = int64_t(vals.size());
        auto [p1, p99] = percentile_bounds(vals, 0.01, 0.99);
        entry->stats.p1 = p1;
        entry->stats.p99 = p99;
        if (vals.empty()) continue;
        for (double& x : vals) x = std::clamp(x, p1, p99);
        auto [mean, std_dev] = population_moments(vals);
        entry->stats.mean = mean;
        entry->stats.std_dev = std_dev;
    }
    ds.vocab_hash = ds.vocab.hash_hex();

    // materialize model-ready shift records
    for (const auto& ps : pending) {
        ShiftRecord rec;
        rec.patient_id = ps.stay->patient_id;
        rec.stay_id = ps.stay->encounter_id;
        rec.shift_index = ps.shift_index;
        rec.label = ps.label;
        rec.binary_delirium = ps.cam_positive;
        rec.fold = fold_of.at(ps.stay->patient_id);
        rec.static_vector = ds.statics.transform(ps.stay->statics);
        for (const RawEvent* ev : ps.raw_window) {
            const VocabEntry* entry = decl_to_entry[size_t(ev->var)];
            if (!entry || !entry->retain) continue;
            encoding::ObservationTriplet trip;
            trip.t = (ev->time_min - ps.window_start) / 720.0;
            trip.code = entry->code;
            double clipped = clip_outlier(entry->stats, ev->value);
            trip.value = entry->stats.std_dev > 0.0
                             ? (clipped - entry->stats.mean) / entry->stats.std_dev
                             : 0.0;
            rec.window.push_back(trip);
        }
        ds.shifts.push_back(std::move(rec));
    }
    std::sort(ds.shifts.begin(), ds.shifts.end(), [](const ShiftRecord& a, const ShiftRecord& b) {
        if (a.patient_id != b.patient_id) return a.patient_id < b.patient_id;
        if (a.stay_id != b.stay_id) return a.stay_id < b.stay_id;
        return a.shift_index < b.shift_index;
    });

    if (cfg.tabular) {
        // shift-aggregated per-variable means, imputed per stay then min-max
        // scaled with training bounds
        int k = ds.vocab.retained_count;
        ds.tabular.var_codes.resize(size_t(k));
        std::iota(ds.tabular.var_codes.begin(), ds.tabular.var_codes.end(), 0);

        // recompute aggregated cells in the sorted shift order
        std::map<std::pair<std::string, int>, const PendingShift*> by_key;
        for (const auto& ps : pending)
            by_key[{ps.stay->encounter_id, ps.shift_index}] = &ps;

        int n = int(ds.shifts.size());
        std::vector<std::vector<std::optional<double>>> cells(
            static_cast<size_t>(n),
            std::vector<std::optional<double>>(static_cast<size_t>(k), std::nullopt));
        for (int i = 0; i < n; ++i) {
            const auto& rec = ds.shifts[size_t(i)];
            const PendingShift* ps = by_key.at({rec.stay_id, rec.shift_index});
            std::vector<std::pair<int, double>> code_values;
            code_values.reserve(ps->raw_window.size());
            for (const RawEvent* ev : ps->raw_window) {
                const VocabEntry* entry = decl_to_entry[size_t(ev->var)];
                if (!entry || !entry->retain) continue;
                code_values.emplace_back(entry->code, clip_outlier(entry->stats, ev->value));
            }
            cells[size_t(i)] = aggregate_window(code_values, k);
        }

        // training column means for cells still missing after interpolation
        std::vector<double> col_mean(size_t(k), 0.0);
        std::vector<int64_t> col_n(size_t(k), 0);
        for (int i = 0; i < n; ++i) {
            if (ds.shifts[size_t(i)].fold < 1) continue;
            for (int c = 0; c < k; ++c) {
                if (cells[size_t(i)][size_t(c)]) {
                    col_mean[size_t(c)] += *cells[size_t(i)][size_t(c)];
                    ++col_n[size_t(c)];
                }
            }
        }
        for (int c = 0; c < k; ++c)
            if (col_n[size_t(c)] > 0) col_mean[size_t(c)] /= double(col_n[size_t(c)]);

        ds.tabular.features = Matrix(n, k);
        int row = 0;
        while (row < n) {
            int end = row;
            while (end < n && ds.shifts[size_t(end)].stay_id == ds.shifts[size_t(row)].stay_id)
                ++end;
            for (int c = 0; c < k; ++c) {
                const VocabEntry& entry = ds.vocab.by_code(c);
                std::vector<std::optional<double>> series;
                for (int i = row; i < end; ++i) series.push_back(cells[size_t(i)][size_t(c)]);
                std::optional<double> fallback;
                if (col_n[size_t(c)] > 0) fallback = col_mean[size_t(c)];
                auto filled = impute_series(series, entry.kind == VarKind::Medication, fallback);
                for (int i = row; i < end; ++i)
                    ds.tabular.features(i, c) = filled[size_t(i - row)];
            }
            row = end;
        }

        ds.tabular.col_min.assign(size_t(k), 0.0);
        ds.tabular.col_max.assign(size_t(k), 0.0);
        std::vector<bool> seen(size_t(k), false);
        for (int i = 0; i < n; ++i) {
            if (ds.shifts[size_t(i)].fold < 1) continue;
            for (int c = 0; c < k; ++c) {
                double v = ds.tabular.features(i, c);
                if (!seen[size_t(c)]) {
                    ds.tabular.col_min[size_t(c)] = v;
                    ds.tabular.col_max[size_t(c)] = v;
                    seen[size_t(c)] = true;
                } else {
                    ds.tabular.col_min[size_t(c)] = std::min(ds.tabular.col_min[size_t(c)], v);
                    ds.tabular.col_max[size_t(c)] = std::max(ds.tabular.col_max[size_t(c)], v);
                }
            }
        }
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < k; ++c)
                ds.tabular.features(i, c) =
                    scale_minmax(ds.tabular.features(i, c), ds.tabular.col_min[size_t(c)],
                                 ds.tabular.col_max[size_t(c)]);
    }

    return ds;
}

}  // namespace acuity::etl
