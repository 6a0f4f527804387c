#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "acuity/config.hpp"

namespace acuity::synth {

struct SynthConfig {
    int patients = 200;
    uint64_t seed = 1;
    std::string preset = "brain_acuity";  // or "delirium" (8% delirium incidence)
    double prev_delirium = 0.06;
    double prev_coma = 0.09;
    double prev_mortality = 0.03;
    double signal = 1.0;              // 0 = label-independent features
    double events_per_hour = 2.0;
    int lab_count = 8;
    int med_count = 6;
    bool include_temperature = true;  // sixth vital
    double median_los_days = 8.0;
    double los_log_sigma = 0.8;
    double p_missing_assessment = 0.01;  // shifts left without scores
    double p_short_stay = 0.04;          // stays forced under 12 h
    double p_split_encounter = 0.05;     // stays emitted as two mergeable encounters
    double p_repeat_stay = 0.08;         // patients with a second, separate stay
    int base_year = 2024;

    static SynthConfig from_config(const KeyedConfig& cfg);
    KeyedConfig to_config() const;
    void validate() const;
};

struct CohortSummary {
    int64_t patients = 0;
    int64_t stays = 0;
    int64_t shifts = 0;  // all enumerated shifts, including excluded
    std::map<std::string, int64_t> label_counts;
    double median_los_min = 0.0;
    double mean_events_per_stay = 0.0;
    std::map<std::string, double> variable_stay_prevalence;
};

// Writes encounters.csv / static.csv / events.csv / labels.csv plus a ready
// prepare.conf into out_dir. Labels come from running the phenotype engine on
// the generated score streams, never asserted independently. Deterministic
// for a given seed.
CohortSummary generate(const SynthConfig& cfg, const std::string& out_dir);

// Summary statistics recomputed from the cohort files on disk.
CohortSummary describe(const std::string& dir);

}  // namespace acuity::synth
