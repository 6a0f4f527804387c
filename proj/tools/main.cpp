#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "acuity/pipeline.hpp"
#include "acuity/util.hpp"

using namespace acuity;

int main(int argc, char** argv) {
    CLI::App app{"ICU brain-acuity prediction toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::optional<uint64_t> seed;
    int threads = 1;
    std::string config_path;
    app.add_option("--seed", seed, "override the configured random seed");
    app.add_option("--threads", threads, "worker threads for internal parallelism");
    app.add_option("--config", config_path, "configuration file (keyed text)");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic EHR cohort");
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();

    // prepare
    auto* prepare = app.add_subcommand("prepare", "build a model-ready dataset bundle");
    cli::PrepareOptions popt;
    prepare->add_option("--raw", popt.raw_dir, "directory with the raw cohort CSVs")
        ->required();
    prepare->add_option("--out", popt.out_dir, "output bundle directory")->required();
    std::optional<int> p_folds, p_max_seq;
    std::optional<double> p_test_fraction, p_threshold;
    prepare->add_option("--folds", p_folds, "cross-validation fold count");
    prepare->add_option("--test-fraction", p_test_fraction, "held-out test patient fraction");
    prepare->add_option("--prevalence-threshold", p_threshold,
                        "drop medications/labs below this stay prevalence");
    prepare->add_option("--max-seq", p_max_seq, "window sequence length cap");
    prepare->add_flag("--tabular", popt.tabular,
                      "also emit the aggregated feature matrix for the baseline");

    // train
    auto* train = app.add_subcommand("train", "train a model on a prepared bundle");
    cli::TrainOptions topt;
    train->add_option("--bundle", topt.bundle_dir, "prepared bundle directory")->required();
    train->add_option("--out", topt.out_path, "checkpoint output path")->required();
    train->add_option("--head", topt.head, "'four' (brain acuity) or 'binary' (delirium)");
    train->add_option("--val-fold", topt.val_fold, "fold used for early stopping");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "cross-validated evaluation with bootstrap");
    cli::EvaluateOptions eopt;
    evaluate->add_option("--bundle", eopt.bundle_dir, "prepared bundle directory")->required();
    evaluate->add_option("--out", eopt.out_path, "report JSON output path")->required();
    evaluate->add_option("--checkpoint", eopt.checkpoint_path,
                         "evaluate a fixed trained checkpoint");
    std::string baseline_name;
    evaluate->add_option("--baseline", baseline_name, "baseline model name ('logistic')");
    evaluate->add_option("--head", eopt.head, "'four' or 'binary'");
    evaluate->add_option("--folds", eopt.folds, "cross-validation fold count");
    evaluate->add_option("--bootstrap", eopt.bootstrap, "bootstrap iterations per fold");
    evaluate->add_option("--curves", eopt.curves_path, "write ROC/PR curve points CSV");
    evaluate->add_flag("--patient-bootstrap", eopt.patient_bootstrap,
                       "resample patients instead of shifts");
    evaluate->add_flag("--include-normal", eopt.include_normal,
                       "include the normal class in the mean row");

    // report
    auto* report = app.add_subcommand("report", "render a report JSON as a table");
    std::string report_in, report_csv;
    report->add_option("--in", report_in, "report JSON path")->required();
    report->add_option("--csv", report_csv, "also write a flattened CSV");

    // phenotype
    auto* phenotype = app.add_subcommand("phenotype", "label 12-hour shifts from score streams");
    std::string ph_scores, ph_out;
    phenotype->add_option("--scores", ph_scores,
                          "CSV of (patient_id, stay_id, time_min, kind, value)")
        ->required();
    phenotype->add_option("--out", ph_out, "output labels CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) {
            cli::cmd_synth(config_path, synth_out, seed);
        } else if (prepare->parsed()) {
            popt.config_path = config_path;
            popt.seed = seed;
            popt.threads = threads;
            popt.folds = p_folds;
            popt.test_fraction = p_test_fraction;
            popt.prevalence_threshold = p_threshold;
            popt.max_sequence_length = p_max_seq;
            cli::cmd_prepare(popt);
        } else if (train->parsed()) {
            topt.config_path = config_path;
            topt.seed = seed;
            topt.threads = threads;
            cli::cmd_train(topt);
        } else if (evaluate->parsed()) {
            if (!baseline_name.empty() && baseline_name != "logistic")
                throw ConfigError("unknown baseline '" + baseline_name + "'");
            eopt.baseline_logistic = baseline_name == "logistic";
            eopt.config_path = config_path;
            eopt.seed = seed;
            eopt.threads = threads;
            cli::cmd_evaluate(eopt);
        } else if (report->parsed()) {
            cli::cmd_report(report_in, report_csv);
        } else if (phenotype->parsed()) {
            cli::cmd_phenotype(ph_scores, ph_out);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
