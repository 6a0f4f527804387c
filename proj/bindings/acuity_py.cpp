#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "acuity/etl.hpp"
#include "acuity/evaluation.hpp"
#include "acuity/metrics.hpp"
#include "acuity/model.hpp"
#include "acuity/phenotype.hpp"
#include "acuity/pipeline.hpp"
#include "acuity/synthgen.hpp"

namespace py = pybind11;
using namespace acuity;

namespace {

std::string py_label_shift(std::optional<int> rass, std::optional<std::string> cam,
                           std::optional<int> gcs, bool died) {
    phenotype::ScoreSnapshot snap;
    snap.rass = rass;
    snap.gcs = gcs;
    snap.died_in_shift = died;
    if (cam) {
        if (*cam == "positive") snap.cam = phenotype::Cam::Positive;
        else if (*cam == "negative") snap.cam = phenotype::Cam::Negative;
        else throw std::invalid_argument("cam must be 'positive', 'negative', or None");
    }
    return phenotype::label_name(phenotype::label_shift(snap));
}

std::optional<double> py_carry_forward(
    const std::vector<std::tuple<double, std::string, double>>& scores,
    const std::string& kind, double query_time) {
    std::vector<phenotype::TimedScore> stream;
    for (const auto& [t, k, v] : scores) {
        phenotype::TimedScore ts;
        ts.time_min = t;
        ts.value = v;
        if (k == "rass") ts.kind = phenotype::ScoreKind::Rass;
        else if (k == "cam") ts.kind = phenotype::ScoreKind::Cam;
        else if (k == "gcs") ts.kind = phenotype::ScoreKind::Gcs;
        else throw std::invalid_argument("score kind must be rass/cam/gcs");
        stream.push_back(ts);
    }
    phenotype::ScoreKind want = kind == "rass"   ? phenotype::ScoreKind::Rass
                                : kind == "cam"  ? phenotype::ScoreKind::Cam
                                : kind == "gcs" ? phenotype::ScoreKind::Gcs
                                                 : throw std::invalid_argument(
                                                       "kind must be rass/cam/gcs");
    return phenotype::carry_forward(stream, want, query_time);
}

std::vector<std::vector<bool>> py_build_mask(int n, const std::string& variant, int window,
                                             int global_count) {
    model::AttentionVariant v;
    if (variant == "full") v = model::AttentionVariant::Full;
    else if (variant == "sliding_window_global")
        v = model::AttentionVariant::SlidingWindowGlobal;
    else throw std::invalid_argument("variant must be 'full' or 'sliding_window_global'");
    auto mask = model::build_mask(n, v, window, global_count);
    std::vector<std::vector<bool>> out(static_cast<size_t>(n),
                                       std::vector<bool>(static_cast<size_t>(n), false));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) out[size_t(i)][size_t(j)] = mask[size_t(i) * n + j] != 0;
    return out;
}

std::vector<double> py_forward_probs(
    const std::vector<std::tuple<double, int, double>>& window,
    const std::vector<double>& statics, int vocab_size, uint64_t seed,
    const std::string& attention, int attn_window, int attn_global) {
    model::ModelConfig cfg;
    cfg.vocab_size = vocab_size;
    cfg.static_dim = int(statics.size());
    cfg.seed = seed;
    if (attention == "sliding_window_global") {
        cfg.attention = model::AttentionVariant::SlidingWindowGlobal;
        cfg.attn_window = attn_window;
        cfg.attn_global = attn_global;
        cfg.order_positions = true;
    }
    std::vector<encoding::ObservationTriplet> trips;
    for (const auto& [t, code, value] : window) trips.push_back({t, code, value});
    auto params = model::init_params(cfg);
    Matrix positions;
    const Matrix* pos = nullptr;
    if (cfg.order_positions) {
        positions = encoding::sinusoid_positions(std::max<int>(1, int(trips.size())),
                                                 cfg.embed_dim);
        pos = &positions;
    }
    return model::forward(trips, statics, params, cfg, nullptr, pos).probabilities;
}

std::tuple<double, double, double> py_bootstrap_auroc(const std::vector<double>& scores,
                                                      const std::vector<int>& labels,
                                                      int iterations, double level,
                                                      uint64_t seed) {
    std::vector<eval::ScoredExample> examples;
    for (size_t i = 0; i < scores.size(); ++i) {
        eval::ScoredExample e;
        e.probabilities = {1.0 - scores[i], scores[i]};
        e.label = labels[i];
        examples.push_back(std::move(e));
    }
    Rng rng(seed);
    auto metric = [](std::span<const eval::ScoredExample> ex) {
        std::vector<double> s;
        std::vector<int> l;
        for (const auto& e : ex) {
            s.push_back(e.probabilities[1]);
            l.push_back(e.label);
        }
        return eval::roc_auc(s, l);
    };
    auto r = eval::bootstrap_ci(metric, examples, iterations, level, rng);
    return {r.point, r.low, r.high};
}

void py_synth(const std::map<std::string, std::string>& overrides, const std::string& out_dir) {
    KeyedConfig cfg;
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    synth::generate(synth::SynthConfig::from_config(cfg), out_dir);
}

void py_prepare(const std::string& raw_dir, const std::string& out_dir, bool tabular,
                std::optional<uint64_t> seed) {
    cli::PrepareOptions opt;
    opt.raw_dir = raw_dir;
    opt.out_dir = out_dir;
    opt.tabular = tabular;
    opt.seed = seed;
    cli::cmd_prepare(opt);
}

void py_evaluate(const std::string& bundle_dir, const std::string& out_path,
                 const std::string& mode, int folds, int bootstrap,
                 std::optional<uint64_t> seed) {
    cli::EvaluateOptions opt;
    opt.bundle_dir = bundle_dir;
    opt.out_path = out_path;
    opt.folds = folds;
    opt.bootstrap = bootstrap;
    opt.seed = seed;
    if (mode == "logistic") opt.baseline_logistic = true;
    else if (mode != "transformer") throw std::invalid_argument("mode must be 'transformer' or 'logistic'");
    cli::cmd_evaluate(opt);
}

}  // namespace

PYBIND11_MODULE(_acuity, m) {
    m.doc() = "ICU brain-acuity prediction toolkit (C++ core bindings)";
    m.attr("__version__") = kToolVersion;

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<DataError>(m, "DataError");

    m.def("label_shift", &py_label_shift, py::arg("rass") = std::nullopt,
          py::arg("cam") = std::nullopt, py::arg("gcs") = std::nullopt,
          py::arg("died") = false,
          "Brain-acuity label for one 12-hour shift snapshot.");
    m.def("carry_forward", &py_carry_forward, py::arg("scores"), py::arg("kind"),
          py::arg("query_time_min"),
          "Most recent score of a kind within the 12-hour carry-forward horizon.");
    m.def("build_mask", &py_build_mask, py::arg("n"), py::arg("variant") = "full",
          py::arg("window") = 1, py::arg("global_count") = 0,
          "Self-attention allow-matrix for the given variant.");
    m.def("forward_probs", &py_forward_probs, py::arg("window"), py::arg("statics"),
          py::arg("vocab_size"), py::arg("seed") = 1, py::arg("attention") = "full",
          py::arg("attn_window") = 4, py::arg("attn_global") = 1,
          "Class probabilities from a freshly initialized model (deterministic per seed).");
    m.def("roc_auc", [](const std::vector<double>& s, const std::vector<int>& l) {
        return eval::roc_auc(s, l);
    });
    m.def("pr_auc", [](const std::vector<double>& s, const std::vector<int>& l) {
        return eval::pr_auc(s, l);
    });
    m.def("threshold_metrics",
          [](const std::vector<double>& s, const std::vector<int>& l, double thr) {
              auto t = eval::threshold_metrics(s, l, thr);
              py::dict d;
              d["sensitivity"] = t.sensitivity ? py::cast(*t.sensitivity) : py::none();
              d["specificity"] = t.specificity ? py::cast(*t.specificity) : py::none();
              d["ppv"] = t.ppv ? py::cast(*t.ppv) : py::none();
              d["npv"] = t.npv ? py::cast(*t.npv) : py::none();
              return d;
          });
    m.def("select_threshold", [](const std::vector<double>& s, const std::vector<int>& l) {
        return eval::select_threshold(s, l);
    });
    m.def("bootstrap_auroc", &py_bootstrap_auroc, py::arg("scores"), py::arg("labels"),
          py::arg("iterations") = 10, py::arg("level") = 0.95, py::arg("seed") = 1);
    m.def("synth", &py_synth, py::arg("config"), py::arg("out_dir"),
          "Generate a synthetic cohort into out_dir.");
    m.def("prepare", &py_prepare, py::arg("raw_dir"), py::arg("out_dir"),
          py::arg("tabular") = false, py::arg("seed") = std::nullopt,
          "Build a model-ready bundle from a raw cohort directory.");
    m.def("evaluate", &py_evaluate, py::arg("bundle_dir"), py::arg("out_path"),
          py::arg("mode") = "logistic", py::arg("folds") = 5, py::arg("bootstrap") = 10,
          py::arg("seed") = std::nullopt,
          "Cross-validated evaluation writing a report JSON.");
}
