#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acuity/util.hpp"

namespace acuity::eval {

// Mann-Whitney AUROC: probability a random positive outranks a random
// negative, ties credited 0.5. Throws DataError when only one class is
// present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

// Average precision: step-wise integral of precision over recall at the
// distinct score thresholds (no trapezoid interpolation). Throws DataError
// when no positives are present.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

struct BinaryMetrics {
    std::optional<double> sensitivity, specificity, ppv, npv;  // nullopt = 0/0
};

// Counts with predicted-positive iff score >= threshold.
BinaryMetrics threshold_metrics(std::span<const double> scores, std::span<const int> labels,
                                double threshold);

// Youden's J maximizer; equal J resolves to the lower threshold; the chosen
// threshold is the midpoint of the optimal score interval.
double select_threshold(std::span<const double> scores, std::span<const int> labels);

struct ScoredExample {
    std::vector<double> probabilities;
    int label = 0;
    std::string patient_id;
    int predicted = 0;
};

struct OneVsRestResult {
    struct ClassView {
        int cls = 0;
        std::vector<double> scores;
        std::vector<int> labels;
        std::optional<double> auroc;  // nullopt when the class is absent
    };
    std::vector<ClassView> views;
    std::optional<double> mean_auroc;
    bool any_undefined = false;
};

// Per-class binary views over the abnormal classes plus their unweighted mean
// AUROC; classes with an undefined metric are excluded from the mean and
// flagged.
OneVsRestResult one_vs_rest(std::span<const ScoredExample> examples,
                            std::span<const int> classes);

// Row-normalized confusion matrix from argmax predictions; rows of an absent
// true class hold NaN.
std::vector<std::vector<double>> recall_confusion(std::span<const ScoredExample> examples,
                                                  int n_classes);

struct BootstrapResult {
    double point = 0.0;
    double low = 0.0;
    double high = 0.0;
    std::vector<double> values;  // one per repetition
};

// Resamples examples with replacement (same size); point estimate is the mean
// over repetitions, CI the empirical percentiles. A resample on which the
// metric is undefined is redrawn, up to 100 times.
BootstrapResult bootstrap_ci(
    const std::function<double(std::span<const ScoredExample>)>& metric,
    std::span<const ScoredExample> examples, int iterations, double level, Rng& rng,
    bool patient_level = false);

double percentile(std::vector<double> values, double q);  // linear interpolation

}  // namespace acuity::eval
