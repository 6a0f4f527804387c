#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "acuity/config.hpp"
#include "acuity/model.hpp"

namespace acuity::cli {

// Written atomically at the end of every command; timings live here and stay
// out of the comparable report/data files.
struct RunManifest {
    std::string command;
    uint64_t seed = 0;
    int threads = 1;
    std::string config_hash;
    std::vector<std::pair<std::string, std::string>> inputs;   // name -> digest
    std::vector<std::pair<std::string, std::string>> outputs;  // name -> digest
    std::vector<std::pair<std::string, int64_t>> counts;
    double elapsed_ms = 0.0;

    void write(const std::string& dir) const;
};

struct ParsedModelSetup {
    model::ModelConfig mc;
    model::TrainConfig tc;
};

// model + optimizer keys from a keyed config file (empty path = defaults)
ParsedModelSetup parse_model_setup(const std::string& config_path);

void cmd_synth(const std::string& config_path, const std::string& out_dir,
               std::optional<uint64_t> seed_override);

struct PrepareOptions {
    std::string raw_dir;
    std::string out_dir;
    std::string config_path;  // empty = raw_dir/prepare.conf
    std::optional<uint64_t> seed;
    std::optional<int> folds;
    std::optional<double> test_fraction;
    std::optional<double> prevalence_threshold;
    std::optional<int> max_sequence_length;
    bool tabular = false;
    int threads = 1;
};
void cmd_prepare(const PrepareOptions& opt);

struct TrainOptions {
    std::string bundle_dir;
    std::string out_path;     // checkpoint file
    std::string config_path;  // model/optimizer config
    std::string head = "four";  // "four" or "binary"
    std::optional<uint64_t> seed;
    int val_fold = 0;
    int threads = 1;
};
void cmd_train(const TrainOptions& opt);

struct EvaluateOptions {
    std::string bundle_dir;
    std::string out_path;  // report JSON
    std::string checkpoint_path;        // fixed-model mode
    bool baseline_logistic = false;     // logistic over the tabular path
    std::string config_path;            // transformer mode settings
    std::string head = "four";
    int folds = 5;
    int bootstrap = 10;
    std::optional<uint64_t> seed;
    int threads = 1;
    std::string curves_path;  // optional ROC/PR point export
    bool patient_bootstrap = false;
    bool include_normal = false;
};
void cmd_evaluate(const EvaluateOptions& opt);

void cmd_report(const std::string& report_path, const std::string& csv_path);

// Desk tool for the shift-labeling logic over relative-time score streams.
void cmd_phenotype(const std::string& scores_csv, const std::string& out_csv);

}  // namespace acuity::cli
