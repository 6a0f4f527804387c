#include "acuity/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "acuity/baseline.hpp"
#include "json.hpp"

namespace acuity::eval {

using nlohmann::json;
using nlohmann::ordered_json;
using phenotype::AcuityLabel;

namespace {

constexpr const char* kMetricNames[] = {"auroc", "auprc", "sensitivity",
                                        "specificity", "ppv", "npv"};

std::string class_name(int cls) { return phenotype::label_name(AcuityLabel(cls)); }

struct TaskView {
    std::vector<model::Sample> samples;      // window path
    std::vector<const etl::ShiftRecord*> records;
    std::vector<int> tab_rows;               // rows into ds.tabular.features
};

TaskView collect(const etl::PreparedDataset& ds, model::HeadKind head,
                 const std::function<bool(const etl::ShiftRecord&)>& pred) {
    TaskView view;
    for (size_t i = 0; i < ds.shifts.size(); ++i) {
        const auto& rec = ds.shifts[i];
        if (!pred(rec)) continue;
        int label;
        if (head == model::HeadKind::FourClass) {
            label = int(rec.label);
        } else {
            if (!rec.binary_delirium) continue;  // no CAM in effect for this shift
            label = *rec.binary_delirium ? 1 : 0;
        }
        view.samples.push_back({&rec.window, &rec.static_vector, label});
        view.records.push_back(&rec);
        view.tab_rows.push_back(int(i));
    }
    return view;
}

Matrix tabular_matrix(const etl::PreparedDataset& ds, const TaskView& view) {
    int k = ds.tabular.features.cols;
    int s = ds.statics.dim();
    Matrix x(int(view.tab_rows.size()), k + s);
    for (size_t r = 0; r < view.tab_rows.size(); ++r) {
        const double* tab = ds.tabular.features.row(view.tab_rows[r]);
        double* xr = x.row(int(r));
        std::copy(tab, tab + k, xr);
        const auto& st = view.records[r]->static_vector;
        std::copy(st.begin(), st.end(), xr + k);
    }
    return x;
}

std::vector<ScoredExample> to_examples(const TaskView& view,
                                       const std::vector<std::vector<double>>& probs,
                                       model::HeadKind head) {
    std::vector<ScoredExample> out;
    out.reserve(view.samples.size());
    for (size_t i = 0; i < view.samples.size(); ++i) {
        ScoredExample e;
        if (head == model::HeadKind::FourClass) {
            e.probabilities = probs[i];
        } else {
            double p = probs[i].size() == 2 ? probs[i][1] : probs[i][0];
            e.probabilities = {1.0 - p, p};
        }
        e.label = view.samples[i].label;
        e.patient_id = view.records[i]->patient_id;
        e.predicted = int(std::max_element(e.probabilities.begin(), e.probabilities.end()) -
                          e.probabilities.begin());
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<std::vector<double>> transformer_probs(const TaskView& view,
                                                   const model::ModelParams& params,
                                                   const model::ModelConfig& mc, int threads) {
    auto preds = model::predict_batch(view.samples, params, mc, threads);
    std::vector<std::vector<double>> probs;
    probs.reserve(preds.size());
    for (auto& p : preds) probs.push_back(std::move(p.probabilities));
    return probs;
}

struct Repetition {
    // class -> metric -> value (NaN = undefined on this resample)
    std::map<std::string, std::map<std::string, double>> values;
};

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

Repetition score_resample(std::span<const ScoredExample> examples,
                          std::span<const int> classes,
                          const std::map<std::string, double>& thresholds) {
    Repetition rep;
    std::map<std::string, std::vector<double>> per_metric_values;
    for (int cls : classes) {
        std::string name = class_name(cls);
        std::vector<double> scores;
        std::vector<int> labels;
        scores.reserve(examples.size());
        labels.reserve(examples.size());
        for (const auto& e : examples) {
            scores.push_back(e.probabilities[size_t(cls)]);
            labels.push_back(e.label == cls ? 1 : 0);
        }
        // roc/pr throw on degenerate resamples; caller redraws
        double auroc = roc_auc(scores, labels);
        double auprc = pr_auc(scores, labels);
        BinaryMetrics tm = threshold_metrics(scores, labels, thresholds.at(name));
        auto& row = rep.values[name];
        row["auroc"] = auroc;
        row["auprc"] = auprc;
        row["sensitivity"] = tm.sensitivity.value_or(nan());
        row["specificity"] = tm.specificity.value_or(nan());
        row["ppv"] = tm.ppv.value_or(nan());
        row["npv"] = tm.npv.value_or(nan());
        for (const char* m : kMetricNames) per_metric_values[m].push_back(row[m]);
    }
    auto& mean_row = rep.values["mean"];
    for (const char* m : kMetricNames) {
        const auto& vals = per_metric_values[m];
        double sum = 0.0;
        int used = 0;
        for (double v : vals) {
            if (!std::isnan(v)) {
                sum += v;
                ++used;
            }
        }
        mean_row[m] = used ? sum / used : nan();
    }
    return rep;
}

std::vector<CurvePoint> curve_points(std::span<const ScoredExample> examples, int cls,
                                     int fold) {
    std::vector<CurvePoint> out;
    std::vector<std::pair<double, int>> pairs;
    size_t pos = 0;
    for (const auto& e : examples) {
        int label = e.label == cls ? 1 : 0;
        pairs.emplace_back(e.probabilities[size_t(cls)], label);
        pos += size_t(label);
    }
    if (pos == 0 || pos == pairs.size()) return out;
    std::sort(pairs.begin(), pairs.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    size_t neg = pairs.size() - pos;
    std::string name = class_name(cls);
    size_t tp = 0, fp = 0, i = 0;
    while (i < pairs.size()) {
        size_t j = i;
        while (j < pairs.size() && pairs[j].first == pairs[i].first) ++j;
        for (size_t k = i; k < j; ++k) pairs[k].second ? ++tp : ++fp;
        double thr = pairs[i].first;
        out.push_back({name, fold, "roc", double(fp) / double(neg), double(tp) / double(pos),
                       thr});
        out.push_back({name, fold, "pr", double(tp) / double(pos),
                       double(tp) / double(tp + fp), thr});
        i = j;
    }
    return out;
}

}  // namespace

std::string MetricsReport::to_json_text() const {
    ordered_json j;
    j["task"] = task;
    j["config_hash"] = config_hash;
    ordered_json folds_json = ordered_json::array();
    for (const auto& f : folds) {
        ordered_json fj;
        fj["fold"] = f.fold;
        fj["n_train"] = f.n_train;
        fj["n_val"] = f.n_val;
        fj["n_test"] = f.n_test;
        fj["epochs_trained"] = f.epochs_trained;
        fj["val_metric"] = f.val_metric;
        ordered_json thr;
        for (const auto& [cls, t] : f.thresholds) thr[cls] = t;
        fj["thresholds"] = std::move(thr);
        folds_json.push_back(std::move(fj));
    }
    j["folds"] = std::move(folds_json);
    ordered_json metrics_json;
    for (const auto& [cls, per_metric] : metrics) {
        ordered_json cj;
        for (const auto& [name, summary] : per_metric) {
            ordered_json sj;
            sj["point"] = summary.point;
            sj["ci_low"] = summary.ci_low;
            sj["ci_high"] = summary.ci_high;
            sj["defined"] = summary.defined;
            sj["values"] = summary.values;
            cj[name] = std::move(sj);
        }
        metrics_json[cls] = std::move(cj);
    }
    j["metrics"] = std::move(metrics_json);
    j["confusion"] = confusion;
    return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json_text(const std::string& text) {
    json j = json::parse(text);
    MetricsReport r;
    r.task = j.at("task").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& fj : j.at("folds")) {
        FoldInfo f;
        f.fold = fj.at("fold").get<int>();
        f.n_train = fj.at("n_train").get<int>();
        f.n_val = fj.at("n_val").get<int>();
        f.n_test = fj.at("n_test").get<int>();
        f.epochs_trained = fj.at("epochs_trained").get<int>();
        f.val_metric = fj.at("val_metric").get<double>();
        for (const auto& [cls, t] : fj.at("thresholds").items())
            f.thresholds[cls] = t.get<double>();
        r.folds.push_back(std::move(f));
    }
    auto as_double = [](const json& v) {
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    };
    for (const auto& [cls, cj] : j.at("metrics").items()) {
        for (const auto& [name, sj] : cj.items()) {
            MetricSummary s;
            s.point = as_double(sj.at("point"));
            s.ci_low = as_double(sj.at("ci_low"));
            s.ci_high = as_double(sj.at("ci_high"));
            s.defined = sj.at("defined").get<bool>();
            for (const auto& v : sj.at("values")) s.values.push_back(as_double(v));
            r.metrics[cls][name] = std::move(s);
        }
    }
    for (const auto& row : j.at("confusion")) {
        std::vector<double> r2;
        for (const auto& v : row) r2.push_back(as_double(v));
        r.confusion.push_back(std::move(r2));
    }
    return r;
}

CvResult run_cv(const etl::PreparedDataset& ds, EvalModelKind kind,
                const model::ModelConfig& mc_in, const model::TrainConfig& tc_in,
                const EvalConfig& ec, const model::Checkpoint* fixed,
                const std::string& config_hash) {
    if (ec.folds != ds.config.fold_count)
        throw ConfigError("evaluation requests " + std::to_string(ec.folds) +
                          " folds but the bundle was split into " +
                          std::to_string(ds.config.fold_count));
    if (ec.bootstrap_iterations < 1) throw ConfigError("bootstrap iterations must be >= 1");
    if (kind == EvalModelKind::Logistic && ds.tabular.features.rows == 0)
        throw ConfigError("bundle was prepared without --tabular; rerun prepare for the baseline");
    if (kind == EvalModelKind::FixedCheckpoint && !fixed)
        throw ConfigError("fixed-checkpoint evaluation needs a checkpoint");

    model::ModelConfig mc = kind == EvalModelKind::FixedCheckpoint ? fixed->config : mc_in;
    if (kind != EvalModelKind::FixedCheckpoint) {
        mc.vocab_size = std::max(ds.vocab.retained_count, 1);
        mc.static_dim = ds.statics.dim();
    }
    if (kind == EvalModelKind::FixedCheckpoint && fixed->vocab_hash != ds.vocab_hash)
        throw DataError("checkpoint vocabulary hash does not match the bundle");

    model::HeadKind head = mc.head;
    int n_classes = head == model::HeadKind::FourClass ? 4 : 2;

    std::vector<int> classes;
    if (head == model::HeadKind::FourClass) {
        if (ec.include_normal_in_mean) classes.push_back(0);
        classes.insert(classes.end(), {1, 2, 3});
    } else {
        classes.push_back(1);
    }

    TaskView test_view =
        collect(ds, head, [](const etl::ShiftRecord& r) { return r.fold == -1; });
    if (test_view.samples.empty()) throw DataError("run_cv: empty test set");

    CvResult result;
    MetricsReport& report = result.report;
    report.task = head == model::HeadKind::FourClass ? "brain_acuity" : "delirium_binary";
    report.config_hash = config_hash;

    std::map<std::string, std::map<std::string, std::vector<double>>> pooled;
    std::vector<ScoredExample> pooled_examples;

    for (int fold = 0; fold < ec.folds; ++fold) {
        TaskView train_view = collect(ds, head, [&](const etl::ShiftRecord& r) {
            return r.fold >= 0 && r.fold != fold;
        });
        TaskView val_view =
            collect(ds, head, [&](const etl::ShiftRecord& r) { return r.fold == fold; });
        if (train_view.samples.empty() || val_view.samples.empty())
            throw DataError("run_cv: empty train or validation fold " + std::to_string(fold));

        FoldInfo info;
        info.fold = fold;
        info.n_train = int(train_view.samples.size());
        info.n_val = int(val_view.samples.size());
        info.n_test = int(test_view.samples.size());

        std::vector<std::vector<double>> val_probs, test_probs;
        if (kind == EvalModelKind::Transformer) {
            model::ModelConfig mc_fold = mc;
            mc_fold.seed = derive_seed(mc.seed, {0xF01D, uint64_t(fold)});
            model::TrainConfig tc_fold = tc_in;
            tc_fold.seed = derive_seed(tc_in.seed, {0xF01D, uint64_t(fold)});
            tc_fold.threads = ec.threads;
            auto trained = model::train(train_view.samples, val_view.samples, mc_fold, tc_fold);
            info.epochs_trained = int(trained.log.size());
            info.val_metric = trained.best_val_metric;
            val_probs = transformer_probs(val_view, trained.params, mc_fold, ec.threads);
            test_probs = transformer_probs(test_view, trained.params, mc_fold, ec.threads);
        } else if (kind == EvalModelKind::FixedCheckpoint) {
            val_probs = transformer_probs(val_view, fixed->params, mc, ec.threads);
            test_probs = transformer_probs(test_view, fixed->params, mc, ec.threads);
        } else {
            Matrix x_train = tabular_matrix(ds, train_view);
            Matrix x_val = tabular_matrix(ds, val_view);
            Matrix x_test = tabular_matrix(ds, test_view);
            std::vector<int> y_train, y_val;
            for (const auto& s : train_view.samples) y_train.push_back(s.label);
            for (const auto& s : val_view.samples) y_val.push_back(s.label);
            baseline::LogisticConfig lc;
            lc.seed = derive_seed(ec.seed, {0xBA5E, uint64_t(fold)});
            lc.threads = ec.threads;
            auto trained = baseline::train_logistic(x_train, y_train, x_val, y_val, n_classes,
                                                    lc);
            val_probs = baseline::predict_logistic(trained, x_val);
            test_probs = baseline::predict_logistic(trained, x_test);
            info.epochs_trained = 0;
            info.val_metric = 0.0;
        }

        auto val_examples = to_examples(val_view, val_probs, head);
        auto test_examples = to_examples(test_view, test_probs, head);

        for (int cls : classes) {
            std::string name = class_name(cls);
            std::vector<double> scores;
            std::vector<int> labels;
            for (const auto& e : val_examples) {
                scores.push_back(e.probabilities[size_t(cls)]);
                labels.push_back(e.label == cls ? 1 : 0);
            }
            double thr;
            try {
                thr = select_threshold(scores, labels);
            } catch (const DataError&) {
                thr = 0.5;  // degenerate validation fold
            }
            info.thresholds[name] = thr;
        }

        Rng boot_rng = Rng::derived(ec.seed, {0xB007, uint64_t(fold)});
        std::vector<size_t> idx(test_examples.size());
        std::vector<ScoredExample> resample(test_examples.size());
        for (int iter = 0; iter < ec.bootstrap_iterations; ++iter) {
            bool done = false;
            for (int attempt = 0; attempt < 100 && !done; ++attempt) {
                for (size_t i = 0; i < idx.size(); ++i)
                    resample[i] = test_examples[size_t(
                        boot_rng.uniform_int(0, int64_t(test_examples.size()) - 1))];
                try {
                    Repetition rep = score_resample(resample, classes, info.thresholds);
                    for (const auto& [cls, per_metric] : rep.values)
                        for (const auto& [metric, value] : per_metric)
                            pooled[cls][metric].push_back(value);
                    done = true;
                } catch (const DataError&) {
                }
            }
            if (!done)
                throw DataError("bootstrap metric undefined after 100 redraws in fold " +
                                std::to_string(fold));
        }

        for (int cls : classes) {
            auto pts = curve_points(test_examples, cls, fold);
            result.curves.insert(result.curves.end(), pts.begin(), pts.end());
        }
        pooled_examples.insert(pooled_examples.end(), test_examples.begin(),
                               test_examples.end());
        report.folds.push_back(std::move(info));
    }

    for (const auto& [cls, per_metric] : pooled) {
        for (const auto& [metric, values] : per_metric) {
            MetricSummary s;
            s.values = values;
            std::vector<double> defined;
            for (double v : values)
                if (!std::isnan(v)) defined.push_back(v);
            s.defined = defined.size() == values.size() && !defined.empty();
            if (!defined.empty()) {
                s.point = std::accumulate(defined.begin(), defined.end(), 0.0) /
                          double(defined.size());
                auto [mn, mx] = std::minmax_element(defined.begin(), defined.end());
                s.point = std::clamp(s.point, *mn, *mx);
                double alpha = (1.0 - ec.ci_level) / 2.0;
                s.ci_low = std::min(percentile(defined, alpha), s.point);
                s.ci_high = std::max(percentile(defined, 1.0 - alpha), s.point);
            } else {
                s.point = s.ci_low = s.ci_high = nan();
            }
            report.metrics[cls][metric] = std::move(s);
        }
    }
    report.confusion = recall_confusion(pooled_examples, n_classes);
    return result;
}

}  // namespace acuity::eval
