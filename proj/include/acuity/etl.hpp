#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acuity/config.hpp"
#include "acuity/encoding.hpp"
#include "acuity/linalg.hpp"
#include "acuity/phenotype.hpp"

namespace acuity::etl {

enum class VarKind { Vital = 0, Lab = 1, Medication = 2, Score = 3 };

std::string kind_name(VarKind kind);
VarKind kind_from_name(const std::string& name);

// Declared temporal variable: canonical lower-case name plus the unit every
// event row must carry.
struct VariableDecl {
    std::string name;
    VarKind kind = VarKind::Vital;
    std::string unit;
};

VariableDecl parse_variable_decl(const std::string& spec);  // "name,kind,unit"

struct RawEvent {
    double time_min = 0.0;
    int var = 0;  // index into the declaration table
    double value = 0.0;
};

struct RawEncounter {
    std::string patient_id;
    std::string encounter_id;
    double admit_min = 0.0;
    double discharge_min = 0.0;
    std::optional<double> death_min;
    std::vector<std::pair<std::string, std::string>> statics;  // name, value
    std::vector<RawEvent> events;                              // sorted by time
    std::vector<phenotype::TimedScore> scores;                 // rass/cam/gcs stream
};

struct PrepareConfig {
    std::vector<VariableDecl> variables;
    double prevalence_threshold = 0.05;
    int max_sequence_length = 12000;
    double test_fraction = 0.2;
    int fold_count = 5;
    uint64_t seed = 1;
    bool tabular = false;

    static PrepareConfig from_config(const KeyedConfig& cfg);
    KeyedConfig to_config() const;
    void validate() const;
};

// Consecutive encounters of one patient separated by less than 24 hours
// become one stay; events and statics are concatenated and the stay keeps the
// first encounter's id. Overlapping encounters are rejected.
std::vector<RawEncounter> merge_encounters(std::vector<RawEncounter> encounters);

struct StayShifts {
    std::vector<phenotype::ShiftSpan> spans;
    std::vector<phenotype::AcuityLabel> labels;
    std::vector<std::optional<bool>> cam_positive;  // CAM in effect at shift end
};

StayShifts label_shifts(const RawEncounter& stay);

struct VocabStats {
    double p1 = 0.0, p99 = 0.0;   // nearest-rank winsorization bounds
    double mean = 0.0, std_dev = 0.0;  // of winsorized training values
    double prevalence = 0.0;      // fraction of training stays with the variable
    int64_t train_values = 0;
};

struct VocabEntry {
    std::string name;
    int code = -1;  // dense over retained variables, -1 when dropped
    VarKind kind = VarKind::Vital;
    std::string unit;
    bool retain = true;
    VocabStats stats;
};

struct FeatureVocabulary {
    std::vector<VocabEntry> entries;  // sorted by (kind, name)
    int retained_count = 0;

    const VocabEntry* find(const std::string& name) const;
    const VocabEntry& by_code(int code) const;
    std::string hash_hex() const;
};

// Retain flags and dense codes from training-stay prevalence; medications and
// labs below the threshold are dropped, vitals and scores always kept.
FeatureVocabulary fit_vocabulary(std::span<const RawEncounter> train_stays,
                                 std::span<const VariableDecl> variables,
                                 double prevalence_threshold);

// Nearest-rank percentile bounds: index ceil(q*N)-1 of the sorted sample.
std::pair<double, double> percentile_bounds(std::vector<double> values, double lo_q,
                                            double hi_q);

double clip_outlier(const VocabStats& stats, double value);  // winsorize to [p1, p99]

// Keeps the `max_len` most recent triplets, order preserved.
std::vector<encoding::ObservationTriplet> clip_sequence(
    std::vector<encoding::ObservationTriplet> window, int max_len);

// Per-variable means over a window of (code, value) pairs; codes absent from
// the window stay missing for the imputation step.
std::vector<std::optional<double>> aggregate_window(
    std::span<const std::pair<int, double>> code_values, int n_codes);

// Population mean and standard deviation, the moments standardization uses.
std::pair<double, double> population_moments(std::span<const double> values);

// Linear interpolation across interior gaps of a per-stay series, edge fill
// outward, then the training fallback (zero for medications, training mean
// otherwise).
std::vector<double> impute_series(const std::vector<std::optional<double>>& series,
                                  bool is_medication, std::optional<double> train_mean);

double scale_minmax(double value, double train_min, double train_max);  // clamped [0,1]

struct StaticNumeric {
    std::string name;
    double median = 0.0, mean = 0.0, std_dev = 0.0;
};

struct StaticCategorical {
    std::string name;
    std::vector<std::string> categories;  // sorted, from training stays
    std::string mode;
};

struct StaticLayout {
    std::vector<StaticNumeric> numerics;          // sorted by name
    std::vector<StaticCategorical> categoricals;  // sorted by name

    int dim() const;
    std::vector<std::string> column_names() const;
    // median/mode imputation, z-scoring, one-hot encoding
    std::vector<double> transform(
        const std::vector<std::pair<std::string, std::string>>& statics) const;
};

StaticLayout fit_statics(std::span<const RawEncounter> train_stays);

struct ShiftRecord {
    std::string patient_id;
    std::string stay_id;
    int shift_index = 0;
    std::vector<encoding::ObservationTriplet> window;
    std::vector<double> static_vector;
    phenotype::AcuityLabel label = phenotype::AcuityLabel::Excluded;
    std::optional<bool> binary_delirium;
    int fold = 0;  // -1 = held-out test
};

// Deterministic patient-level assignment: test fraction held out first, the
// rest dealt round-robin into folds. Throws when fewer patients than folds
// remain.
std::map<std::string, int> split_dataset(std::vector<std::string> patient_ids, uint64_t seed,
                                         int fold_count, double test_fraction);

struct Funnel {
    int64_t patients_in = 0, encounters_in = 0, events_in = 0;
    int64_t events_rejected_unknown = 0, events_rejected_unit = 0, events_rejected_range = 0;
    int64_t stays_after_merge = 0, stays_dropped_short = 0;
    int64_t shifts_enumerated = 0;
    int64_t shifts_dropped_short_stay = 0, shifts_dropped_early = 0,
            shifts_dropped_excluded = 0, shifts_retained = 0;

    std::vector<std::pair<std::string, int64_t>> rows() const;
};

struct TabularData {
    std::vector<int> var_codes;  // column -> retained variable code
    Matrix features;             // rows align with the shift list
    std::vector<double> col_min, col_max;  // training bounds
};

struct PreparedDataset {
    PrepareConfig config;
    FeatureVocabulary vocab;
    StaticLayout statics;
    std::vector<ShiftRecord> shifts;  // sorted by (patient, stay, shift)
    TabularData tabular;              // empty when config.tabular is off
    Funnel funnel;
    std::string vocab_hash;
};

struct RawCohort {
    std::vector<RawEncounter> encounters;
    int64_t events_total = 0;
    int64_t events_rejected_unknown = 0, events_rejected_unit = 0, events_rejected_range = 0;
};

RawCohort load_raw(const std::string& dir, const PrepareConfig& cfg);

PreparedDataset prepare(const std::string& raw_dir, const PrepareConfig& cfg);

void write_bundle(const PreparedDataset& ds, const std::string& out_dir,
                  const std::string& config_hash);
PreparedDataset load_bundle(const std::string& dir);  // verifies file digests

}  // namespace acuity::etl
