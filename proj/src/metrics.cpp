#include "acuity/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace acuity::eval {

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw DataError("scores and labels differ in length");
    if (scores.empty()) throw DataError("metric undefined on empty input");
    for (double s : scores)
        if (!std::isfinite(s)) throw DataError("non-finite score");
    for (int l : labels)
        if (l != 0 && l != 1) throw DataError("binary labels must be 0 or 1");
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_binary(scores, labels);
    size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // midranks; rank sums stay exact (half-integers) so the result matches
    // pairwise counting bit for bit
    double rank_sum_pos = 0.0;
    size_t n_pos = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        double midrank = (double(i + 1) + double(j)) / 2.0;
        for (size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum_pos += midrank;
                ++n_pos;
            }
        }
        i = j;
    }
    size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw DataError("roc_auc undefined: only one class present");
    double numer = rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0;
    return numer / (double(n_pos) * double(n_neg));
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
    check_binary(scores, labels);
    size_t n = scores.size();
    size_t n_pos = 0;
    for (int l : labels) n_pos += size_t(l == 1);
    if (n_pos == 0) throw DataError("pr_auc undefined: no positives present");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    double prev_recall = 0.0;
    size_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        for (size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) ++tp;
            else ++fp;
        }
        double recall = double(tp) / double(n_pos);
        double precision = double(tp) / double(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

BinaryMetrics threshold_metrics(std::span<const double> scores, std::span<const int> labels,
                                double threshold) {
    check_binary(scores, labels);
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= threshold;
        if (labels[i] == 1) {
            pred ? ++tp : ++fn;
        } else {
            pred ? ++fp : ++tn;
        }
    }
    BinaryMetrics m;
    if (tp + fn > 0) m.sensitivity = double(tp) / double(tp + fn);
    if (tn + fp > 0) m.specificity = double(tn) / double(tn + fp);
    if (tp + fp > 0) m.ppv = double(tp) / double(tp + fp);
    if (tn + fn > 0) m.npv = double(tn) / double(tn + fn);
    return m;
}

double select_threshold(std::span<const double> scores, std::span<const int> labels) {
    check_binary(scores, labels);
    size_t n_pos = 0;
    for (int l : labels) n_pos += size_t(l == 1);
    if (n_pos == 0 || n_pos == scores.size())
        throw DataError("select_threshold undefined: only one class present");

    std::vector<double> distinct(scores.begin(), scores.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    // candidate thresholds: each distinct score (include it and everything
    // above), plus midpoints of the gaps, plus one above the maximum
    std::vector<double> candidates;
    candidates.push_back(distinct.front());
    for (size_t i = 1; i < distinct.size(); ++i)
        candidates.push_back((distinct[i - 1] + distinct[i]) / 2.0);
    if (distinct.back() < 1.0) candidates.push_back((distinct.back() + 1.0) / 2.0);

    // candidates are ascending, so a strict improvement rule keeps the lowest
    // threshold on ties
    double best_j = -std::numeric_limits<double>::infinity();
    double best_thr = candidates.front();
    for (double thr : candidates) {
        BinaryMetrics m = threshold_metrics(scores, labels, thr);
        double j = *m.sensitivity + *m.specificity - 1.0;
        if (j > best_j) {
            best_j = j;
            best_thr = thr;
        }
    }
    return best_thr;
}

OneVsRestResult one_vs_rest(std::span<const ScoredExample> examples,
                            std::span<const int> classes) {
    OneVsRestResult r;
    double sum = 0.0;
    int used = 0;
    for (int cls : classes) {
        OneVsRestResult::ClassView view;
        view.cls = cls;
        for (const auto& e : examples) {
            view.scores.push_back(e.probabilities[size_t(cls)]);
            view.labels.push_back(e.label == cls ? 1 : 0);
        }
        try {
            view.auroc = roc_auc(view.scores, view.labels);
            sum += *view.auroc;
            ++used;
        } catch (const DataError&) {
            r.any_undefined = true;
        }
        r.views.push_back(std::move(view));
    }
    if (used > 0) r.mean_auroc = sum / used;
    return r;
}

std::vector<std::vector<double>> recall_confusion(std::span<const ScoredExample> examples,
                                                  int n_classes) {
    std::vector<std::vector<double>> counts(size_t(n_classes),
                                            std::vector<double>(size_t(n_classes), 0.0));
    std::vector<double> row_total(size_t(n_classes), 0.0);
    for (const auto& e : examples) {
        if (e.label < 0 || e.label >= n_classes || e.predicted < 0 || e.predicted >= n_classes)
            throw DataError("recall_confusion: label or prediction out of range");
        counts[size_t(e.label)][size_t(e.predicted)] += 1.0;
        row_total[size_t(e.label)] += 1.0;
    }
    for (int r = 0; r < n_classes; ++r) {
        for (int c = 0; c < n_classes; ++c) {
            counts[size_t(r)][size_t(c)] =
                row_total[size_t(r)] > 0.0
                    ? counts[size_t(r)][size_t(c)] / row_total[size_t(r)]
                    : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return counts;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw DataError("percentile of empty set");
    std::sort(values.begin(), values.end());
    double pos = q * double(values.size() - 1);
    size_t lo = size_t(std::floor(pos));
    size_t hi = size_t(std::ceil(pos));
    double frac = pos - double(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

BootstrapResult bootstrap_ci(
    const std::function<double(std::span<const ScoredExample>)>& metric,
    std::span<const ScoredExample> examples, int iterations, double level, Rng& rng,
    bool patient_level) {
    if (iterations < 1) throw ConfigError("bootstrap iterations must be >= 1");
    if (examples.empty()) throw DataError("bootstrap over empty example set");

    std::vector<std::string> patients;
    std::vector<std::vector<size_t>> by_patient;
    if (patient_level) {
        std::map<std::string, size_t> index;
        for (size_t i = 0; i < examples.size(); ++i) {
            auto [it, inserted] = index.emplace(examples[i].patient_id, by_patient.size());
            if (inserted) {
                patients.push_back(examples[i].patient_id);
                by_patient.emplace_back();
            }
            by_patient[it->second].push_back(i);
        }
    }

    BootstrapResult out;
    std::vector<ScoredExample> resample;
    for (int iter = 0; iter < iterations; ++iter) {
        bool done = false;
        for (int attempt = 0; attempt < 100 && !done; ++attempt) {
            resample.clear();
            if (patient_level) {
                while (resample.size() < examples.size()) {
                    size_t p = size_t(rng.uniform_int(0, int64_t(by_patient.size()) - 1));
                    for (size_t idx : by_patient[p]) resample.push_back(examples[idx]);
                }
            } else {
                resample.reserve(examples.size());
                for (size_t i = 0; i < examples.size(); ++i) {
                    size_t idx = size_t(rng.uniform_int(0, int64_t(examples.size()) - 1));
                    resample.push_back(examples[idx]);
                }
            }
            try {
                out.values.push_back(metric(resample));
                done = true;
            } catch (const DataError&) {
                // undefined on this resample; redraw
            }
        }
        if (!done)
            throw DataError("bootstrap metric undefined after 100 redraws on iteration " +
                            std::to_string(iter));
    }
    out.point = std::accumulate(out.values.begin(), out.values.end(), 0.0) /
                double(out.values.size());
    // the true mean lies inside the value range; keep the float mean there too
    auto [mn, mx] = std::minmax_element(out.values.begin(), out.values.end());
    out.point = std::clamp(out.point, *mn, *mx);
    double alpha = (1.0 - level) / 2.0;
    out.low = percentile(out.values, alpha);
    out.high = percentile(out.values, 1.0 - alpha);
    // percentile bounds must bracket the mean even in skewed small samples
    out.low = std::min(out.low, out.point);
    out.high = std::max(out.high, out.point);
    return out;
}

}  // namespace acuity::eval
