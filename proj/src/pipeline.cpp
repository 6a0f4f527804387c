#include "acuity/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "acuity/csv.hpp"
#include "acuity/etl.hpp"
#include "acuity/evaluation.hpp"
#include "acuity/synthgen.hpp"
#include "json.hpp"

namespace acuity::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                         start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

void add_file(std::vector<std::pair<std::string, std::string>>& list, const fs::path& path) {
    list.emplace_back(path.filename().string(), to_hex(file_digest(path.string())));
}

// verify raw inputs against the producing command's manifest when present
void verify_against_manifest(const std::string& dir,
                             const std::vector<std::string>& files) {
    fs::path manifest_path = fs::path(dir) / "manifest.json";
    if (!fs::exists(manifest_path)) return;
    std::ifstream in(manifest_path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (!j.contains("outputs")) return;
    for (const auto& file : files) {
        if (!j["outputs"].contains(file)) continue;
        // a missing file is reported by the loader with its name
        if (!fs::exists(fs::path(dir) / file)) continue;
        std::string expected = j["outputs"][file].get<std::string>();
        std::string actual = to_hex(file_digest((fs::path(dir) / file).string()));
        if (expected != actual)
            throw DataError(file + " does not match the digest recorded in " +
                            manifest_path.string());
    }
}

}  // namespace

void RunManifest::write(const std::string& dir) const {
    ordered_json j;
    j["command"] = command;
    j["tool_version"] = kToolVersion;
    j["seed"] = seed;
    j["threads"] = threads;
    j["config_hash"] = config_hash;
    ordered_json in_json, out_json, counts_json;
    for (const auto& [name, digest] : inputs) in_json[name] = digest;
    for (const auto& [name, digest] : outputs) out_json[name] = digest;
    for (const auto& [name, count] : counts) counts_json[name] = count;
    j["inputs"] = std::move(in_json);
    j["outputs"] = std::move(out_json);
    j["counts"] = std::move(counts_json);
    j["elapsed_ms"] = elapsed_ms;
    fs::path tmp = fs::path(dir) / "manifest.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot write manifest: " + tmp.string());
        out << j.dump(2) << '\n';
    }
    fs::rename(tmp, fs::path(dir) / "manifest.json");
}

ParsedModelSetup parse_model_setup(const std::string& config_path) {
    KeyedConfig cfg;
    if (!config_path.empty()) cfg = KeyedConfig::parse_file(config_path);
    static constexpr const char* kKeys[] = {
        "embed_dim",   "layers",     "heads",          "ffn_hidden",
        "static_embed", "attention", "attn_window",    "attn_global",
        "order_positions", "dropout", "max_seq",       "learning_rate",
        "batch_size",  "max_epochs", "patience",       "max_batches_per_epoch",
        "grad_clip",   "class_weight_cap"};
    cfg.require_known(kKeys);

    ParsedModelSetup p;
    p.mc.embed_dim = int(cfg.get_int("embed_dim", 32));
    p.mc.layers = int(cfg.get_int("layers", 2));
    p.mc.heads = int(cfg.get_int("heads", 4));
    p.mc.ffn_hidden = int(cfg.get_int("ffn_hidden", 64));
    p.mc.static_embed = int(cfg.get_int("static_embed", 32));
    std::string attn = cfg.get("attention", "full");
    if (attn == "full") {
        p.mc.attention = model::AttentionVariant::Full;
    } else if (attn == "sliding_window_global") {
        p.mc.attention = model::AttentionVariant::SlidingWindowGlobal;
    } else {
        throw ConfigError("attention must be 'full' or 'sliding_window_global'");
    }
    p.mc.attn_window = int(cfg.get_int("attn_window", 16));
    p.mc.attn_global = int(cfg.get_int("attn_global", 1));
    p.mc.order_positions = cfg.get_bool(
        "order_positions", p.mc.attention == model::AttentionVariant::SlidingWindowGlobal);
    p.mc.dropout = cfg.get_double("dropout", 0.0);
    p.mc.max_seq = int(cfg.get_int("max_seq", 12000));

    p.tc.learning_rate = cfg.get_double("learning_rate", 1e-3);
    p.tc.batch_size = int(cfg.get_int("batch_size", 64));
    p.tc.max_epochs = int(cfg.get_int("max_epochs", 30));
    p.tc.patience = int(cfg.get_int("patience", 5));
    p.tc.max_batches_per_epoch = int(cfg.get_int("max_batches_per_epoch", 0));
    p.tc.grad_clip = cfg.get_double("grad_clip", 10.0);
    p.tc.class_weight_cap = cfg.get_double("class_weight_cap", 10.0);
    return p;
}

void cmd_synth(const std::string& config_path, const std::string& out_dir,
               std::optional<uint64_t> seed_override) {
    Stopwatch watch;
    KeyedConfig raw;
    if (!config_path.empty()) raw = KeyedConfig::parse_file(config_path);
    if (seed_override) raw.set("seed", std::to_string(*seed_override));
    synth::SynthConfig cfg = synth::SynthConfig::from_config(raw);

    synth::CohortSummary summary = synth::generate(cfg, out_dir);

    // summary table for quick inspection
    {
        ordered_json j;
        j["patients"] = summary.patients;
        j["stays"] = summary.stays;
        j["shifts"] = summary.shifts;
        ordered_json labels;
        for (const auto& [name, count] : summary.label_counts) labels[name] = count;
        j["label_counts"] = std::move(labels);
        j["median_los_days"] = summary.median_los_min / 1440.0;
        j["mean_events_per_stay"] = summary.mean_events_per_stay;
        ordered_json prev;
        for (const auto& [name, p] : summary.variable_stay_prevalence) prev[name] = p;
        j["variable_stay_prevalence"] = std::move(prev);
        std::ofstream out(fs::path(out_dir) / "describe.json");
        out << j.dump(2) << '\n';
    }

    RunManifest manifest;
    manifest.command = "synth";
    manifest.seed = cfg.seed;
    manifest.config_hash = to_hex(cfg.to_config().hash());
    for (const char* f :
         {"encounters.csv", "static.csv", "events.csv", "labels.csv", "prepare.conf",
          "describe.json"})
        add_file(manifest.outputs, fs::path(out_dir) / f);
    manifest.counts.emplace_back("patients", summary.patients);
    manifest.counts.emplace_back("stays", summary.stays);
    manifest.counts.emplace_back("shifts", summary.shifts);
    for (const auto& [name, count] : summary.label_counts)
        manifest.counts.emplace_back("label_" + name, count);
    manifest.elapsed_ms = watch.ms();
    manifest.write(out_dir);
}

void cmd_prepare(const PrepareOptions& opt) {
    Stopwatch watch;
    std::string config_path = opt.config_path;
    if (config_path.empty()) {
        fs::path fallback = fs::path(opt.raw_dir) / "prepare.conf";
        if (!fs::exists(fallback))
            throw ConfigError("no --config given and " + fallback.string() + " not found");
        config_path = fallback.string();
    }
    KeyedConfig raw = KeyedConfig::parse_file(config_path);
    if (opt.seed) raw.set("seed", std::to_string(*opt.seed));
    if (opt.folds) raw.set("folds", std::to_string(*opt.folds));
    if (opt.test_fraction) raw.set("test_fraction", fmt_double(*opt.test_fraction));
    if (opt.prevalence_threshold)
        raw.set("prevalence_threshold", fmt_double(*opt.prevalence_threshold));
    if (opt.max_sequence_length)
        raw.set("max_sequence_length", std::to_string(*opt.max_sequence_length));
    if (opt.tabular) raw.set("tabular", "true");
    etl::PrepareConfig cfg = etl::PrepareConfig::from_config(raw);

    verify_against_manifest(opt.raw_dir,
                            {"encounters.csv", "static.csv", "events.csv", "labels.csv"});

    etl::PreparedDataset ds = etl::prepare(opt.raw_dir, cfg);
    std::string config_hash = to_hex(cfg.to_config().hash());
    etl::write_bundle(ds, opt.out_dir, config_hash);

    RunManifest manifest;
    manifest.command = "prepare";
    manifest.seed = cfg.seed;
    manifest.threads = opt.threads;
    manifest.config_hash = config_hash;
    for (const char* f : {"encounters.csv", "static.csv", "events.csv"})
        add_file(manifest.inputs, fs::path(opt.raw_dir) / f);
    add_file(manifest.outputs, fs::path(opt.out_dir) / "bundle.json");
    add_file(manifest.outputs, fs::path(opt.out_dir) / "shifts.csv");
    add_file(manifest.outputs, fs::path(opt.out_dir) / "windows.csv");
    add_file(manifest.outputs, fs::path(opt.out_dir) / "statics.csv");
    if (cfg.tabular) add_file(manifest.outputs, fs::path(opt.out_dir) / "tabular.csv");
    for (const auto& [name, count] : ds.funnel.rows()) manifest.counts.emplace_back(name, count);
    manifest.elapsed_ms = watch.ms();
    manifest.write(opt.out_dir);
}

namespace {

model::HeadKind head_from_string(const std::string& head) {
    if (head == "four") return model::HeadKind::FourClass;
    if (head == "binary") return model::HeadKind::BinaryDelirium;
    throw ConfigError("--head must be 'four' or 'binary'");
}

struct TaskSamples {
    std::vector<model::Sample> train, val;
};

TaskSamples collect_train_val(const etl::PreparedDataset& ds, model::HeadKind head,
                              int val_fold) {
    if (val_fold < 0 || val_fold >= ds.config.fold_count)
        throw ConfigError("validation fold out of range");
    TaskSamples out;
    for (const auto& rec : ds.shifts) {
        if (rec.fold < 0) continue;
        int label;
        if (head == model::HeadKind::FourClass) {
            label = int(rec.label);
        } else {
            if (!rec.binary_delirium) continue;
            label = *rec.binary_delirium ? 1 : 0;
        }
        model::Sample s{&rec.window, &rec.static_vector, label};
        if (rec.fold == val_fold) out.val.push_back(s);
        else out.train.push_back(s);
    }
    return out;
}

}  // namespace

void cmd_train(const TrainOptions& opt) {
    Stopwatch watch;
    ParsedModelSetup setup = parse_model_setup(opt.config_path);
    setup.mc.head = head_from_string(opt.head);
    if (opt.seed) {
        setup.mc.seed = *opt.seed;
        setup.tc.seed = *opt.seed;
    }
    setup.tc.threads = opt.threads;

    etl::PreparedDataset ds = etl::load_bundle(opt.bundle_dir);
    setup.mc.vocab_size = std::max(ds.vocab.retained_count, 1);
    setup.mc.static_dim = ds.statics.dim();

    TaskSamples samples = collect_train_val(ds, setup.mc.head, opt.val_fold);
    model::TrainResult result = model::train(samples.train, samples.val, setup.mc, setup.tc);

    model::Checkpoint ck;
    ck.config = setup.mc;
    ck.params = std::move(result.params);
    ck.seed = setup.tc.seed;
    ck.vocab_hash = ds.vocab_hash;
    model::save_checkpoint(opt.out_path, ck);

    // training log beside the checkpoint
    fs::path log_path = fs::path(opt.out_path).parent_path() /
                        (fs::path(opt.out_path).stem().string() + "_train_log.csv");
    {
        CsvWriter log(log_path.string(), {"epoch", "train_loss", "val_metric"});
        for (const auto& e : result.log)
            log.row({std::to_string(e.epoch), fmt_double(e.train_loss),
                     fmt_double(e.val_metric)});
        log.close();
    }

    std::string out_dir = fs::path(opt.out_path).parent_path().string();
    if (out_dir.empty()) out_dir = ".";
    RunManifest manifest;
    manifest.command = "train";
    manifest.seed = setup.tc.seed;
    manifest.threads = opt.threads;
    manifest.config_hash = to_hex(fnv1a64(opt.config_path.empty()
                                              ? std::string("defaults")
                                              : KeyedConfig::parse_file(opt.config_path)
                                                    .canonical_text()));
    add_file(manifest.inputs, fs::path(opt.bundle_dir) / "bundle.json");
    add_file(manifest.outputs, opt.out_path);
    add_file(manifest.outputs, log_path);
    manifest.counts.emplace_back("train_samples", int64_t(samples.train.size()));
    manifest.counts.emplace_back("val_samples", int64_t(samples.val.size()));
    manifest.counts.emplace_back("epochs", int64_t(result.log.size()));
    manifest.counts.emplace_back("best_epoch", result.best_epoch);
    manifest.elapsed_ms = watch.ms();
    manifest.write(out_dir);
}

void cmd_evaluate(const EvaluateOptions& opt) {
    Stopwatch watch;
    int modes = int(!opt.checkpoint_path.empty()) + int(opt.baseline_logistic);
    if (modes > 1)
        throw ConfigError("--checkpoint and --baseline are mutually exclusive");

    etl::PreparedDataset ds = etl::load_bundle(opt.bundle_dir);

    eval::EvalConfig ec;
    ec.folds = opt.folds;
    ec.bootstrap_iterations = opt.bootstrap;
    ec.seed = opt.seed.value_or(1);
    ec.threads = opt.threads;
    ec.patient_bootstrap = opt.patient_bootstrap;
    ec.include_normal_in_mean = opt.include_normal;

    ParsedModelSetup setup = parse_model_setup(opt.config_path);
    setup.mc.head = head_from_string(opt.head);
    if (opt.seed) {
        setup.mc.seed = *opt.seed;
        setup.tc.seed = *opt.seed;
    }
    setup.tc.threads = opt.threads;

    eval::EvalModelKind kind = eval::EvalModelKind::Transformer;
    model::Checkpoint ck;
    const model::Checkpoint* fixed = nullptr;
    if (!opt.checkpoint_path.empty()) {
        kind = eval::EvalModelKind::FixedCheckpoint;
        ck = model::load_checkpoint(opt.checkpoint_path, ds.vocab_hash);
        fixed = &ck;
    } else if (opt.baseline_logistic) {
        kind = eval::EvalModelKind::Logistic;
    }

    std::string config_source = "head=" + opt.head + ";folds=" + std::to_string(opt.folds) +
                                ";bootstrap=" + std::to_string(opt.bootstrap) +
                                ";seed=" + std::to_string(ec.seed) + ";mode=" +
                                (fixed ? "checkpoint" : opt.baseline_logistic ? "logistic"
                                                                              : "transformer");
    if (!opt.config_path.empty())
        config_source += ";" + KeyedConfig::parse_file(opt.config_path).canonical_text();
    std::string config_hash = to_hex(fnv1a64(config_source));

    eval::CvResult cv = eval::run_cv(ds, kind, setup.mc, setup.tc, ec, fixed, config_hash);

    {
        std::ofstream out(opt.out_path);
        if (!out) throw DataError("cannot write report: " + opt.out_path);
        out << cv.report.to_json_text();
    }
    if (!opt.curves_path.empty()) {
        CsvWriter w(opt.curves_path, {"class", "fold", "kind", "x", "y", "threshold"});
        for (const auto& p : cv.curves)
            w.row({p.cls, std::to_string(p.fold), p.kind, fmt_double(p.x), fmt_double(p.y),
                   fmt_double(p.threshold)});
        w.close();
    }

    std::string out_dir = fs::path(opt.out_path).parent_path().string();
    if (out_dir.empty()) out_dir = ".";
    RunManifest manifest;
    manifest.command = "evaluate";
    manifest.seed = ec.seed;
    manifest.threads = opt.threads;
    manifest.config_hash = config_hash;
    add_file(manifest.inputs, fs::path(opt.bundle_dir) / "bundle.json");
    if (!opt.checkpoint_path.empty()) add_file(manifest.inputs, opt.checkpoint_path);
    add_file(manifest.outputs, opt.out_path);
    if (!opt.curves_path.empty()) add_file(manifest.outputs, opt.curves_path);
    manifest.counts.emplace_back("folds", opt.folds);
    manifest.counts.emplace_back("bootstrap_iterations", opt.bootstrap);
    manifest.counts.emplace_back(
        "repetitions",
        cv.report.metrics.empty()
            ? 0
            : int64_t(cv.report.metrics.begin()->second.begin()->second.values.size()));
    manifest.elapsed_ms = watch.ms();
    manifest.write(out_dir);
}

void cmd_report(const std::string& report_path, const std::string& csv_path) {
    std::ifstream in(report_path);
    if (!in) throw DataError("cannot open report: " + report_path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    eval::MetricsReport report = eval::MetricsReport::from_json_text(text);

    std::printf("task: %s\nconfig: %s\nfolds: %zu\n\n", report.task.c_str(),
                report.config_hash.c_str(), report.folds.size());
    std::printf("%-10s %-12s %10s %10s %10s\n", "class", "metric", "point", "ci_low",
                "ci_high");
    for (const auto& [cls, per_metric] : report.metrics) {
        for (const auto& [name, s] : per_metric) {
            std::printf("%-10s %-12s %10.4f %10.4f %10.4f%s\n", cls.c_str(), name.c_str(),
                        s.point, s.ci_low, s.ci_high, s.defined ? "" : "  (partial)");
        }
    }
    std::printf("\nrecall confusion (rows = true class):\n");
    for (const auto& row : report.confusion) {
        for (double v : row) std::printf(" %8.4f", v);
        std::printf("\n");
    }

    if (!csv_path.empty()) {
        CsvWriter w(csv_path, {"class", "metric", "point", "ci_low", "ci_high", "defined",
                               "n_values"});
        for (const auto& [cls, per_metric] : report.metrics)
            for (const auto& [name, s] : per_metric)
                w.row({cls, name, fmt_double(s.point), fmt_double(s.ci_low),
                       fmt_double(s.ci_high), s.defined ? "1" : "0",
                       std::to_string(s.values.size())});
        w.close();
    }
}

void cmd_phenotype(const std::string& scores_csv, const std::string& out_csv) {
    CsvTable table = read_csv(scores_csv);
    table.require_col("patient_id", scores_csv);
    int c_stay = table.require_col("stay_id", scores_csv);
    int c_time = table.require_col("time_min", scores_csv);
    int c_kind = table.require_col("kind", scores_csv);
    int c_value = table.require_col("value", scores_csv);

    struct StayScores {
        std::vector<phenotype::TimedScore> scores;
        std::optional<double> death;
        double max_time = 0.0;
    };
    std::map<std::string, StayScores> stays;
    for (const auto& row : table.rows) {
        StayScores& st = stays[row[size_t(c_stay)]];
        double t = parse_double(row[size_t(c_time)], "time_min");
        std::string kind = row[size_t(c_kind)];
        std::string value = row[size_t(c_value)];
        st.max_time = std::max(st.max_time, t);
        if (kind == "death") {
            st.death = t;
            continue;
        }
        phenotype::TimedScore ts;
        ts.time_min = t;
        if (kind == "rass") {
            ts.kind = phenotype::ScoreKind::Rass;
            ts.value = parse_double(value, "rass value");
        } else if (kind == "gcs") {
            ts.kind = phenotype::ScoreKind::Gcs;
            ts.value = parse_double(value, "gcs value");
        } else if (kind == "cam") {
            ts.kind = phenotype::ScoreKind::Cam;
            if (value == "positive" || value == "Positive") ts.value = 1.0;
            else if (value == "negative" || value == "Negative") ts.value = 0.0;
            else ts.value = parse_double(value, "cam value");
        } else {
            throw DataError(scores_csv + ": unknown score kind '" + kind + "'");
        }
        phenotype::validate_score(ts);
        st.scores.push_back(ts);
    }

    CsvWriter w(out_csv, {"stay_id", "shift_index", "label"});
    for (auto& [stay_id, st] : stays) {
        std::stable_sort(st.scores.begin(), st.scores.end(),
                         [](const phenotype::TimedScore& a, const phenotype::TimedScore& b) {
                             return a.time_min < b.time_min;
                         });
        // times are minutes since admission; the shift grid starts at zero
        double end = std::max(st.max_time + 1.0, 720.0);
        double discharge = std::ceil(end / 720.0) * 720.0;
        if (st.death) discharge = std::max(discharge, *st.death + 1.0);
        auto spans = phenotype::make_shift_spans(0.0, discharge, st.death, 0.0);
        auto labels = phenotype::label_stay(st.scores, spans, st.death);
        for (const auto& sl : labels)
            w.row({stay_id, std::to_string(sl.shift_index), phenotype::label_name(sl.label)});
    }
    w.close();
}

}  // namespace acuity::cli
