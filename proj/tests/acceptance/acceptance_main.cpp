// Acceptance suite: every criterion below runs at its stated tolerance and
// prints one PASS/FAIL line. The heavy end-to-end criteria drive the real CLI
// binary on synthetic cohorts.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "acuity/etl.hpp"
#include "acuity/evaluation.hpp"
#include "acuity/metrics.hpp"
#include "acuity/model.hpp"
#include "acuity/phenotype.hpp"
#include "acuity/util.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace acuity;
using nlohmann::json;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw Failure(what);
}

fs::path work_root() {
    static fs::path root = [] {
        fs::path p(ACUITY_TEST_TMP);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

void run_cli(const std::string& args) {
    std::string cmd = std::string(ACUITY_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    int code = WEXITSTATUS(status);
    if (code != 0)
        throw Failure("CLI command failed with exit " + std::to_string(code) + ": " + args);
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure("cannot read " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

json load_json(const fs::path& path) { return json::parse(slurp(path)); }

// shared artifacts produced by the end-to-end criterion
struct Shared {
    fs::path raw_s1, bundle_s1;
    fs::path transformer_report, logistic_report;
    bool pipeline_ready = false;
};

constexpr const char* kTrainSchedule =
    "max_epochs = 10\n"
    "max_batches_per_epoch = 150\n"
    "patience = 3\n";

// ---- criterion 1 ----------------------------------------------------------

void criterion_phenotype_exhaustive(Shared&) {
    int checked = 0;
    for (int rass = -6; rass <= 4; ++rass) {
        for (int cam = -1; cam <= 1; ++cam) {
            for (int gcs = 2; gcs <= 15; ++gcs) {
                for (int died = 0; died <= 1; ++died) {
                    phenotype::ScoreSnapshot snap;
                    if (rass != -6) snap.rass = rass;
                    if (cam != -1)
                        snap.cam = cam ? phenotype::Cam::Positive : phenotype::Cam::Negative;
                    if (gcs != 2) snap.gcs = gcs;
                    snap.died_in_shift = died != 0;
                    auto got = phenotype::label_shift(snap);
                    auto want = oracles::fig1(
                        rass == -6 ? std::nullopt : std::optional<int>(rass),
                        cam == -1 ? std::nullopt : std::optional<int>(cam),
                        gcs == 2 ? std::nullopt : std::optional<int>(gcs), died != 0);
                    require(got == want,
                            "label mismatch at rass=" + std::to_string(rass) +
                                " cam=" + std::to_string(cam) + " gcs=" + std::to_string(gcs) +
                                " died=" + std::to_string(died));
                    ++checked;
                }
            }
        }
    }
    require(checked == 924, "expected 924 combinations, saw " + std::to_string(checked));
}

// ---- criterion 2 ----------------------------------------------------------

void criterion_metric_oracles(Shared&) {
    Rng rng(90210);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = 2 + int(rng.uniform_int(0, 48));
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) {
            scores.push_back(double(rng.uniform_int(0, 14)) / 14.0);
            labels.push_back(int(rng.uniform_int(0, 1)));
        }
        bool pos = false, neg = false;
        for (int l : labels) (l ? pos : neg) = true;
        if (!pos || !neg) {
            labels[0] = 1;
            labels[size_t(n - 1)] = 0;
        }
        double auc = eval::roc_auc(scores, labels);
        double auc_oracle = oracles::pairwise_auc(scores, labels);
        require(auc == auc_oracle, "roc_auc deviates from pairwise counting on trial " +
                                       std::to_string(trial));
        double ap = eval::pr_auc(scores, labels);
        double ap_oracle = oracles::stepwise_average_precision(scores, labels);
        require(std::abs(ap - ap_oracle) <= 1e-12,
                "pr_auc deviates from the stepwise oracle by " +
                    std::to_string(std::abs(ap - ap_oracle)));
    }
}

// ---- criterion 3 ----------------------------------------------------------

model::ModelConfig default_model(int vocab, int statics) {
    model::ModelConfig cfg;  // d=32, M=2, heads=4, ffn 64, E_S 32 defaults
    cfg.vocab_size = vocab;
    cfg.static_dim = statics;
    return cfg;
}

void criterion_gradient_check(Shared&) {
    const double eps = 1e-5;
    double worst = 0.0;
    std::string worst_at;
    for (uint64_t batch_seed = 1; batch_seed <= 5; ++batch_seed) {
        model::ModelConfig cfg = default_model(10, 6);
        cfg.seed = 5000 + batch_seed;
        Rng rng(batch_seed * 7919);

        std::vector<std::vector<model::ObservationTriplet>> windows;
        std::vector<std::vector<double>> statics;
        std::vector<int> labels;
        for (int s = 0; s < 3; ++s) {
            int n = (batch_seed == 1 && s == 0) ? 0 : 1 + int(rng.uniform_int(0, 7));
            std::vector<model::ObservationTriplet> w;
            for (int i = 0; i < n; ++i)
                w.push_back({rng.uniform(), int(rng.uniform_int(0, 9)), rng.normal()});
            windows.push_back(std::move(w));
            std::vector<double> st;
            for (int i = 0; i < 6; ++i) st.push_back(rng.normal());
            statics.push_back(std::move(st));
            labels.push_back(int(rng.uniform_int(0, 3)));
        }
        std::vector<double> weights = {1.0, 1.5, 2.0, 0.5};

        model::ModelParams params = model::init_params(cfg);
        auto batch_loss = [&]() {
            std::vector<model::PredictionOutput> outs;
            for (size_t i = 0; i < windows.size(); ++i)
                outs.push_back(model::forward(windows[i], statics[i], params, cfg));
            return model::loss(outs, labels, weights, cfg.head);
        };

        model::ModelParams grads = params.zeros_like();
        for (size_t i = 0; i < windows.size(); ++i) {
            model::ForwardCache cache;
            model::forward(windows[i], statics[i], params, cfg, &cache);
            model::backward(cache, params, cfg, labels[i], weights[size_t(labels[i])],
                            1.0 / 3.0, grads);
        }

        std::vector<Matrix*> ptensors, gtensors;
        std::vector<std::string> names;
        params.for_each_tensor([&](const std::string& name, Matrix& m) {
            ptensors.push_back(&m);
            names.push_back(name);
        });
        grads.for_each_tensor([&](const std::string&, Matrix& m) { gtensors.push_back(&m); });
        for (size_t t = 0; t < ptensors.size(); ++t) {
            for (size_t i = 0; i < ptensors[t]->a.size(); ++i) {
                double saved = ptensors[t]->a[i];
                ptensors[t]->a[i] = saved + eps;
                double up = batch_loss();
                ptensors[t]->a[i] = saved - eps;
                double down = batch_loss();
                ptensors[t]->a[i] = saved;
                double fd = (up - down) / (2.0 * eps);
                double analytic = gtensors[t]->a[i];
                double rel = std::abs(analytic - fd) /
                             std::max({1e-5, std::abs(analytic), std::abs(fd)});
                if (rel > worst) {
                    worst = rel;
                    worst_at = names[t] + "[" + std::to_string(i) + "] batch " +
                               std::to_string(batch_seed);
                }
            }
        }
    }
    require(worst < 1e-4,
            "max relative gradient error " + std::to_string(worst) + " at " + worst_at);
}

// ---- criterion 4 ----------------------------------------------------------

void criterion_attention_equivalence(Shared&) {
    model::ModelConfig cfg_full = default_model(12, 5);
    cfg_full.seed = 4242;
    model::ModelParams params = model::init_params(cfg_full);
    Rng rng(777);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 2 + int(rng.uniform_int(0, 22));
        std::vector<model::ObservationTriplet> window;
        for (int i = 0; i < n; ++i)
            window.push_back({rng.uniform(), int(rng.uniform_int(0, 11)), rng.normal()});
        std::vector<double> statics;
        for (int i = 0; i < 5; ++i) statics.push_back(rng.normal());

        model::ModelConfig cfg_masked = cfg_full;
        cfg_masked.attention = model::AttentionVariant::SlidingWindowGlobal;
        cfg_masked.attn_window = n - 1 + int(rng.uniform_int(0, 3));
        cfg_masked.attn_global = int(rng.uniform_int(0, 2));

        auto full = model::forward(window, statics, params, cfg_full);
        auto masked = model::forward(window, statics, params, cfg_masked);
        for (int c = 0; c < 4; ++c)
            require(std::abs(full.probabilities[size_t(c)] -
                             masked.probabilities[size_t(c)]) <= 1e-10,
                    "full vs covering sliding window differ on trial " + std::to_string(trial));

        // a genuinely restrictive mask must zero the disallowed weights
        model::ModelConfig cfg_tight = cfg_full;
        cfg_tight.attention = model::AttentionVariant::SlidingWindowGlobal;
        cfg_tight.attn_window = 1;
        cfg_tight.attn_global = 1;
        model::ForwardCache cache;
        model::forward(window, statics, params, cfg_tight, &cache);
        for (const auto& layer : cache.layers) {
            for (const auto& head : layer.attn) {
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) {
                        bool allowed = std::abs(i - j) <= 1 || i < 1 || j < 1;
                        if (!allowed)
                            require(head(i, j) == 0.0,
                                    "masked position carries nonzero attention weight");
                    }
            }
        }
    }
}

// ---- criterion 5 ----------------------------------------------------------

void criterion_permutation_invariance(Shared&) {
    model::ModelConfig cfg = default_model(12, 5);
    cfg.seed = 515;
    model::ModelParams params = model::init_params(cfg);
    Rng rng(515151);
    for (int input = 0; input < 5; ++input) {
        int n = 3 + int(rng.uniform_int(0, 20));
        std::vector<model::ObservationTriplet> window;
        for (int i = 0; i < n; ++i)
            window.push_back({rng.uniform(), int(rng.uniform_int(0, 11)), rng.normal()});
        std::vector<double> statics;
        for (int i = 0; i < 5; ++i) statics.push_back(rng.normal());
        auto base = model::forward(window, statics, params, cfg);
        for (int trial = 0; trial < 20; ++trial) {
            auto shuffled = window;
            rng.shuffle(shuffled);
            auto out = model::forward(shuffled, statics, params, cfg);
            for (int c = 0; c < 4; ++c)
                require(std::abs(out.probabilities[size_t(c)] -
                                 base.probabilities[size_t(c)]) <= 1e-10,
                        "permutation changed the probabilities on input " +
                            std::to_string(input));
        }
    }
}

// ---- criterion 6 ----------------------------------------------------------

double report_mean_auroc(const fs::path& report) {
    json j = load_json(report);
    return j.at("metrics").at("mean").at("auroc").at("point").get<double>();
}

void criterion_end_to_end_learning(Shared& shared) {
    fs::path root = work_root() / "e2e";
    fs::remove_all(root);
    fs::create_directories(root);

    write_file(root / "synth_s1.conf",
               "patients = 2000\nseed = 1301\nsignal_strength = 1.0\n");
    write_file(root / "synth_s0.conf", "patients = 2000\nseed = 1302\nsignal_strength = 0\n");
    write_file(root / "train.conf", kTrainSchedule);

    shared.raw_s1 = root / "raw_s1";
    shared.bundle_s1 = root / "bundle_s1";
    shared.transformer_report = root / "report_tf.json";
    shared.logistic_report = root / "report_logistic.json";

    run_cli("synth --config " + (root / "synth_s1.conf").string() + " --out " +
            shared.raw_s1.string());
    run_cli("prepare --raw " + shared.raw_s1.string() + " --out " + shared.bundle_s1.string() +
            " --tabular --threads 2");
    run_cli("evaluate --bundle " + shared.bundle_s1.string() + " --out " +
            shared.transformer_report.string() + " --config " + (root / "train.conf").string() +
            " --folds 5 --bootstrap 10 --seed 1400 --threads 2");
    run_cli("evaluate --bundle " + shared.bundle_s1.string() + " --out " +
            shared.logistic_report.string() +
            " --baseline logistic --folds 5 --bootstrap 10 --seed 1400 --threads 2");
    shared.pipeline_ready = true;

    double tf = report_mean_auroc(shared.transformer_report);
    double lg = report_mean_auroc(shared.logistic_report);

    // the no-signal null: the same protocol on an s=0 cohort stays at chance
    run_cli("synth --config " + (root / "synth_s0.conf").string() + " --out " +
            (root / "raw_s0").string());
    run_cli("prepare --raw " + (root / "raw_s0").string() + " --out " +
            (root / "bundle_s0").string() + " --threads 2");
    run_cli("evaluate --bundle " + (root / "bundle_s0").string() + " --out " +
            (root / "report_s0.json").string() + " --config " + (root / "train.conf").string() +
            " --folds 5 --bootstrap 10 --seed 1400 --threads 2");
    double tf0 = report_mean_auroc(root / "report_s0.json");

    std::printf("       transformer %.4f, logistic %.4f, no-signal %.4f\n", tf, lg, tf0);
    require(tf >= 0.95, "transformer mean AUROC " + std::to_string(tf) + " below 0.95");
    require(lg >= 0.80, "logistic mean AUROC " + std::to_string(lg) + " below 0.80");
    require(lg < tf, "logistic (" + std::to_string(lg) + ") not below transformer (" +
                         std::to_string(tf) + ")");
    require(tf0 >= 0.45 && tf0 <= 0.55,
            "no-signal transformer AUROC " + std::to_string(tf0) + " outside [0.45, 0.55]");
}

// ---- criterion 7 ----------------------------------------------------------

void criterion_pipeline_invariants(Shared& shared) {
    require(shared.pipeline_ready, "end-to-end pipeline artifacts unavailable");
    etl::PreparedDataset ds = etl::load_bundle(shared.bundle_s1.string());

    // retained shifts start at least 12 hours after admission
    etl::RawCohort cohort = etl::load_raw(shared.raw_s1.string(), ds.config);
    auto stays = etl::merge_encounters(std::move(cohort.encounters));
    std::map<std::string, const etl::RawEncounter*> stay_of;
    for (const auto& s : stays) stay_of[s.encounter_id] = &s;
    for (const auto& rec : ds.shifts) {
        const etl::RawEncounter* stay = stay_of.at(rec.stay_id);
        auto spans = phenotype::make_shift_spans(stay->admit_min, stay->discharge_min,
                                                 stay->death_min);
        require(rec.shift_index < int(spans.size()), "shift index outside the stay grid");
        double lead = spans[size_t(rec.shift_index)].start_min - stay->admit_min;
        require(lead >= 720.0,
                "retained shift starts " + std::to_string(lead) + " minutes after admission");
        require(stay->discharge_min - stay->admit_min >= 720.0,
                "retained shift belongs to a stay shorter than 12 hours");
    }

    // training min-max-scaled tabular values live in [0, 1]
    require(ds.tabular.features.rows == int(ds.shifts.size()), "tabular matrix misaligned");
    for (size_t i = 0; i < ds.shifts.size(); ++i) {
        if (ds.shifts[i].fold < 1) continue;
        for (int c = 0; c < ds.tabular.features.cols; ++c) {
            double v = ds.tabular.features(int(i), c);
            require(v >= 0.0 && v <= 1.0, "training tabular value outside [0, 1]");
        }
    }

    // standardized training variables have mean 0, std 1
    std::map<int, std::vector<double>> per_var;
    for (const auto& rec : ds.shifts) {
        if (rec.fold < 1) continue;
        for (const auto& t : rec.window) per_var[t.code].push_back(t.value);
    }
    int verified = 0;
    for (const auto& [code, values] : per_var) {
        if (values.size() < 2) continue;
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= double(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= double(values.size());
        if (var < 1e-18) continue;  // constant variable, mapped to zero
        require(std::abs(mean) <= 1e-6, "variable code " + std::to_string(code) +
                                            " training mean " + std::to_string(mean));
        require(std::abs(std::sqrt(var) - 1.0) <= 1e-6,
                "variable code " + std::to_string(code) + " training std " +
                    std::to_string(std::sqrt(var)));
        ++verified;
    }
    require(verified > 0, "no standardized variables to verify");

    // fold and test patient sets pairwise disjoint
    std::map<int, std::set<std::string>> patients_by_fold;
    for (const auto& rec : ds.shifts) patients_by_fold[rec.fold].insert(rec.patient_id);
    for (auto a = patients_by_fold.begin(); a != patients_by_fold.end(); ++a) {
        for (auto b = std::next(a); b != patients_by_fold.end(); ++b) {
            for (const auto& pid : a->second)
                require(!b->second.count(pid), "patient " + pid + " appears in folds " +
                                                   std::to_string(a->first) + " and " +
                                                   std::to_string(b->first));
        }
    }

    // manifest funnel counts sum correctly
    json manifest = load_json(shared.bundle_s1 / "manifest.json");
    auto counts = manifest.at("counts");
    int64_t enumerated = counts.at("shifts_enumerated").get<int64_t>();
    int64_t sum = counts.at("shifts_dropped_short_stay").get<int64_t>() +
                  counts.at("shifts_dropped_early_start").get<int64_t>() +
                  counts.at("shifts_dropped_excluded_label").get<int64_t>() +
                  counts.at("shifts_retained").get<int64_t>();
    require(enumerated == sum, "funnel counts do not sum: enumerated " +
                                   std::to_string(enumerated) + " vs parts " +
                                   std::to_string(sum));
    require(counts.at("shifts_retained").get<int64_t>() == int64_t(ds.shifts.size()),
            "manifest retained count does not match the bundle");
}

// ---- criterion 8 ----------------------------------------------------------

void criterion_protocol_shape(Shared& shared) {
    require(shared.pipeline_ready, "end-to-end pipeline artifacts unavailable");
    for (const fs::path& report_path : {shared.transformer_report, shared.logistic_report}) {
        json report = load_json(report_path);
        require(report.at("folds").size() == 5, "expected 5 folds in the report");
        for (const auto& [cls, metrics] : report.at("metrics").items()) {
            for (const auto& [name, summary] : metrics.items()) {
                require(summary.at("values").size() == 50,
                        cls + "/" + name + " has " +
                            std::to_string(summary.at("values").size()) +
                            " repetition values, expected 50");
                if (!summary.at("defined").get<bool>()) continue;
                double point = summary.at("point").get<double>();
                double low = summary.at("ci_low").get<double>();
                double high = summary.at("ci_high").get<double>();
                require(low <= point && point <= high,
                        cls + "/" + name + " CI does not bracket the point estimate");
            }
        }
    }
}

// ---- criterion 9 ----------------------------------------------------------

void criterion_determinism(Shared&) {
    fs::path root = work_root() / "determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    write_file(root / "synth.conf", "patients = 200\nseed = 900\nsignal_strength = 1.0\n");
    write_file(root / "train.conf",
               "max_epochs = 4\nmax_batches_per_epoch = 40\npatience = 2\n");

    auto run_chain = [&](const std::string& tag, int threads) {
        fs::path dir = root / tag;
        fs::create_directories(dir);
        std::string t = std::to_string(threads);
        run_cli("synth --config " + (root / "synth.conf").string() + " --out " +
                (dir / "raw").string());
        run_cli("prepare --raw " + (dir / "raw").string() + " --out " +
                (dir / "bundle").string() + " --tabular --threads " + t);
        run_cli("train --bundle " + (dir / "bundle").string() + " --out " +
                (dir / "ck.json").string() + " --config " + (root / "train.conf").string() +
                " --seed 901 --threads " + t);
        run_cli("evaluate --bundle " + (dir / "bundle").string() + " --checkpoint " +
                (dir / "ck.json").string() + " --out " + (dir / "report.json").string() +
                " --folds 5 --bootstrap 10 --seed 902 --threads " + t);
        return slurp(dir / "report.json");
    };

    std::string first = run_chain("run1_t1", 1);
    std::string second = run_chain("run2_t1", 1);
    std::string third = run_chain("run3_t8", 8);
    require(first == second, "reports differ between identical single-thread runs");
    require(first == third, "reports differ between 1-thread and 8-thread runs");

    // the intermediate artifacts agree too
    for (const char* f : {"ck.json", "bundle/shifts.csv", "bundle/windows.csv"}) {
        require(slurp(root / "run1_t1" / f) == slurp(root / "run3_t8" / f),
                std::string(f) + " differs across thread counts");
    }
}

struct Criterion {
    int id;
    const char* name;
    std::function<void(Shared&)> fn;
};

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    std::vector<Criterion> criteria = {
        {1, "phenotype-exhaustive-truth-table", criterion_phenotype_exhaustive},
        {2, "metric-oracle-equivalence", criterion_metric_oracles},
        {3, "gradient-finite-difference-check", criterion_gradient_check},
        {4, "attention-mask-equivalence", criterion_attention_equivalence},
        {5, "permutation-invariance", criterion_permutation_invariance},
        {6, "end-to-end-learning", criterion_end_to_end_learning},
        {7, "pipeline-invariants", criterion_pipeline_invariants},
        {8, "protocol-shape-5x10-bootstrap", criterion_protocol_shape},
        {9, "determinism-across-threads", criterion_determinism},
    };

    Shared shared;
    int failures = 0;
    for (auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            c.fn(shared);
        } catch (const std::exception& e) {
            error = e.what();
        }
        double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (error.empty()) {
            std::printf("PASS  [%d] %-36s (%.1fs)\n", c.id, c.name, secs);
        } else {
            std::printf("FAIL  [%d] %-36s (%.1fs): %s\n", c.id, c.name, secs, error.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures ? 1 : 0;
}
