#pragma once

#include <map>
#include <string>
#include <vector>

#include "acuity/etl.hpp"
#include "acuity/metrics.hpp"
#include "acuity/model.hpp"

namespace acuity::eval {

struct EvalConfig {
    int folds = 5;
    int bootstrap_iterations = 10;
    double ci_level = 0.95;
    uint64_t seed = 1;
    bool patient_bootstrap = false;
    bool include_normal_in_mean = false;
    int threads = 1;
};

enum class EvalModelKind { Transformer, Logistic, FixedCheckpoint };

struct MetricSummary {
    double point = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::vector<double> values;  // one per fold x bootstrap repetition
    bool defined = true;
};

struct FoldInfo {
    int fold = 0;
    int n_train = 0, n_val = 0, n_test = 0;
    int epochs_trained = 0;
    double val_metric = 0.0;
    std::map<std::string, double> thresholds;  // class name -> operating point
};

struct MetricsReport {
    std::string task;         // "brain_acuity" or "delirium_binary"
    std::string config_hash;
    std::vector<FoldInfo> folds;
    // class name ("coma", "delirium", "dead", "mean", optionally "normal")
    // -> metric name -> summary
    std::map<std::string, std::map<std::string, MetricSummary>> metrics;
    std::vector<std::vector<double>> confusion;  // row-normalized; NaN for empty rows

    std::string to_json_text() const;  // deterministic byte layout
    static MetricsReport from_json_text(const std::string& text);
};

struct CurvePoint {
    std::string cls;
    int fold = 0;
    std::string kind;  // "roc" or "pr"
    double x = 0.0, y = 0.0, threshold = 0.0;
};

struct CvResult {
    MetricsReport report;
    std::vector<CurvePoint> curves;
};

// The cross-validation protocol: per fold, train on the remaining folds (or
// reuse the fixed checkpoint), pick thresholds on the validation fold, score
// the held-out test set, and bootstrap the test scores. Pooled repetitions
// give the point estimates and CIs.
CvResult run_cv(const etl::PreparedDataset& ds, EvalModelKind kind,
                const model::ModelConfig& mc, const model::TrainConfig& tc,
                const EvalConfig& ec, const model::Checkpoint* fixed,
                const std::string& config_hash);

}  // namespace acuity::eval
