#include "acuity/baseline.hpp"

#include <algorithm>
#include <cmath>

#include "acuity/metrics.hpp"
#include "acuity/model.hpp"

namespace acuity::baseline {

namespace {

std::vector<double> row_probs(const LogisticModel& m, const double* x, int f) {
    if (m.classes == 2) {
        double z = m.b(0, 0) + dot(m.w.row(0), x, f);
        double p = 1.0 / (1.0 + std::exp(-z));
        return {1.0 - p, p};
    }
    int c = m.classes;
    std::vector<double> logits(size_t(c), 0.0);
    for (int j = 0; j < c; ++j) logits[size_t(j)] = m.b(0, j) + dot(m.w.row(j), x, f);
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double& l : logits) {
        l = std::exp(l - mx);
        sum += l;
    }
    for (double& l : logits) l /= sum;
    return logits;
}

double val_metric(const LogisticModel& m, const Matrix& x, std::span<const int> y) {
    double total = 0.0;
    int used = 0;
    int last_cls = m.classes == 2 ? 1 : m.classes - 1;
    for (int cls = 1; cls <= last_cls; ++cls) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < x.rows; ++i) {
            auto p = row_probs(m, x.row(i), x.cols);
            scores.push_back(p[size_t(cls)]);
            labels.push_back(y[size_t(i)] == cls ? 1 : 0);
        }
        try {
            total += eval::roc_auc(scores, labels);
            ++used;
        } catch (const DataError&) {
        }
    }
    return used ? total / used : 0.5;
}

}  // namespace

LogisticModel train_logistic(const Matrix& x_train, std::span<const int> y_train,
                             const Matrix& x_val, std::span<const int> y_val, int n_classes,
                             const LogisticConfig& cfg) {
    if (x_train.rows == 0 || x_val.rows == 0)
        throw DataError("train_logistic: empty training or validation set");
    if (int(y_train.size()) != x_train.rows || int(y_val.size()) != x_val.rows)
        throw DataError("train_logistic: labels do not match feature rows");
    if (n_classes < 2) throw ConfigError("train_logistic: need at least two classes");

    int f = x_train.cols;
    int heads = n_classes == 2 ? 1 : n_classes;
    LogisticModel model;
    model.classes = n_classes;
    model.w = Matrix(heads, f);
    model.b = Matrix(1, heads);

    std::vector<double> weights =
        model::class_weights_from_labels(y_train, n_classes, cfg.class_weight_cap);

    Matrix mw(heads, f), vw(heads, f), mb(1, heads), vb(1, heads);
    int64_t t = 0;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    LogisticModel best = model;
    double best_metric = -1.0;
    int bad = 0;

    std::vector<int> order(size_t(x_train.rows));
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng rng = Rng::derived(cfg.seed, {0xB45E, uint64_t(epoch)});
        rng.shuffle(order);
        for (int begin = 0; begin < x_train.rows; begin += cfg.batch_size) {
            int end = std::min(begin + cfg.batch_size, x_train.rows);
            Matrix gw(heads, f), gb(1, heads);
            double inv = 1.0 / double(end - begin);
            for (int idx = begin; idx < end; ++idx) {
                int i = order[size_t(idx)];
                const double* xi = x_train.row(i);
                int y = y_train[size_t(i)];
                double wgt = weights[size_t(y)] * inv;
                auto p = row_probs(model, xi, f);
                if (heads == 1) {
                    double g = wgt * (p[1] - double(y));
                    axpy(g, xi, gw.row(0), f);
                    gb(0, 0) += g;
                } else {
                    for (int j = 0; j < heads; ++j) {
                        double g = wgt * (p[size_t(j)] - (j == y ? 1.0 : 0.0));
                        axpy(g, xi, gw.row(j), f);
                        gb(0, j) += g;
                    }
                }
            }
            if (cfg.l2 > 0.0)
                for (size_t i = 0; i < gw.a.size(); ++i) gw.a[i] += cfg.l2 * model.w.a[i];
            ++t;
            double c1 = 1.0 - std::pow(b1, double(t));
            double c2 = 1.0 - std::pow(b2, double(t));
            for (size_t i = 0; i < gw.a.size(); ++i) {
                mw.a[i] = b1 * mw.a[i] + (1 - b1) * gw.a[i];
                vw.a[i] = b2 * vw.a[i] + (1 - b2) * gw.a[i] * gw.a[i];
                model.w.a[i] -= cfg.learning_rate * (mw.a[i] / c1) / (std::sqrt(vw.a[i] / c2) + eps);
            }
            for (size_t i = 0; i < gb.a.size(); ++i) {
                mb.a[i] = b1 * mb.a[i] + (1 - b1) * gb.a[i];
                vb.a[i] = b2 * vb.a[i] + (1 - b2) * gb.a[i] * gb.a[i];
                model.b.a[i] -= cfg.learning_rate * (mb.a[i] / c1) / (std::sqrt(vb.a[i] / c2) + eps);
            }
        }
        double metric = val_metric(model, x_val, y_val);
        if (metric > best_metric) {
            best_metric = metric;
            best = model;
            bad = 0;
        } else if (++bad >= cfg.patience) {
            break;
        }
    }
    return best;
}

std::vector<std::vector<double>> predict_logistic(const LogisticModel& model, const Matrix& x) {
    std::vector<std::vector<double>> out;
    out.reserve(size_t(x.rows));
    for (int i = 0; i < x.rows; ++i) out.push_back(row_probs(model, x.row(i), x.cols));
    return out;
}

}  // namespace acuity::baseline
