#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "acuity/linalg.hpp"

namespace acuity::baseline {

// Multinomial (or binary) logistic regression over the tabular feature path.
struct LogisticConfig {
    double learning_rate = 0.05;
    double l2 = 1e-4;
    int batch_size = 256;
    int max_epochs = 200;
    int patience = 10;
    double class_weight_cap = 10.0;
    uint64_t seed = 1;
    int threads = 1;
};

struct LogisticModel {
    Matrix w;  // C×F (1×F for the binary head)
    Matrix b;  // 1×C
    int classes = 0;
};

// rows of X are feature vectors; binary when n_classes == 2 (single logit)
LogisticModel train_logistic(const Matrix& x_train, std::span<const int> y_train,
                             const Matrix& x_val, std::span<const int> y_val, int n_classes,
                             const LogisticConfig& cfg);

// per-row class probabilities (size n_classes; binary gives {1-p, p})
std::vector<std::vector<double>> predict_logistic(const LogisticModel& model, const Matrix& x);

}  // namespace acuity::baseline
