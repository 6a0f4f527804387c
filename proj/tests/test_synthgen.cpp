#include "acuity/synthgen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "acuity/baseline.hpp"
#include "acuity/csv.hpp"
#include "acuity/etl.hpp"
#include "acuity/evaluation.hpp"
#include "acuity/util.hpp"
#include "doctest.h"

using namespace acuity;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
    fs::path dir = fs::path(ACUITY_TEST_TMP) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("generation is byte-identical for a fixed seed") {
    synth::SynthConfig cfg;
    cfg.patients = 30;
    cfg.seed = 42;
    auto dir_a = tmp_dir("synth_det_a");
    auto dir_b = tmp_dir("synth_det_b");
    synth::generate(cfg, dir_a.string());
    synth::generate(cfg, dir_b.string());
    for (const char* f : {"encounters.csv", "static.csv", "events.csv", "labels.csv"})
        CHECK(slurp(dir_a / f) == slurp(dir_b / f));

    synth::SynthConfig other = cfg;
    other.seed = 43;
    auto dir_c = tmp_dir("synth_det_c");
    synth::generate(other, dir_c.string());
    CHECK(slurp(dir_a / "events.csv") != slurp(dir_c / "events.csv"));
}

TEST_CASE("the phenotype engine reproduces every generated label through etl") {
    synth::SynthConfig cfg;
    cfg.patients = 50;
    cfg.seed = 9;
    auto dir = tmp_dir("synth_roundtrip");
    synth::generate(cfg, dir.string());

    // etl's shift enumeration + labeling over the emitted CSVs must agree
    // with labels.csv row for row
    KeyedConfig prep = KeyedConfig::parse_file((dir / "prepare.conf").string());
    etl::PrepareConfig pc = etl::PrepareConfig::from_config(prep);
    etl::RawCohort cohort = etl::load_raw(dir.string(), pc);
    auto stays = etl::merge_encounters(std::move(cohort.encounters));

    std::map<std::pair<std::string, int>, std::string> truth;
    CsvTable labels = read_csv((dir / "labels.csv").string());
    for (const auto& row : labels.rows)
        truth[{row[0], int(parse_int(row[1], "shift"))}] = row[2];

    int64_t checked = 0;
    for (const auto& stay : stays) {
        auto shifts = etl::label_shifts(stay);
        for (size_t i = 0; i < shifts.labels.size(); ++i) {
            auto it = truth.find({stay.encounter_id, int(i)});
            REQUIRE(it != truth.end());
            CHECK(phenotype::label_name(shifts.labels[i]) == it->second);
            ++checked;
        }
    }
    CHECK(checked == int64_t(truth.size()));
}

TEST_CASE("describe recomputes the cohort bookkeeping from disk") {
    synth::SynthConfig cfg;
    cfg.patients = 40;
    cfg.seed = 4;
    auto dir = tmp_dir("synth_describe");
    auto gen_summary = synth::generate(cfg, dir.string());
    auto described = synth::describe(dir.string());

    CHECK(described.shifts == gen_summary.shifts);
    CHECK(described.label_counts == gen_summary.label_counts);
    CHECK(described.stays == gen_summary.stays);
    CHECK(described.patients == cfg.patients);
    CHECK(described.median_los_min == doctest::Approx(gen_summary.median_los_min));
}

TEST_CASE("retained-shift prevalences land within two points of the targets") {
    synth::SynthConfig cfg;
    cfg.patients = 2000;
    cfg.seed = 5151;
    auto dir = tmp_dir("synth_prevalence");
    synth::generate(cfg, dir.string());

    KeyedConfig prep = KeyedConfig::parse_file((dir / "prepare.conf").string());
    etl::PrepareConfig pc = etl::PrepareConfig::from_config(prep);
    etl::PreparedDataset ds = etl::prepare(dir.string(), pc);
    std::map<phenotype::AcuityLabel, int64_t> counts;
    for (const auto& rec : ds.shifts) ++counts[rec.label];
    double total = double(ds.shifts.size());
    CHECK(std::abs(counts[phenotype::AcuityLabel::Delirium] / total - 0.06) < 0.02);
    CHECK(std::abs(counts[phenotype::AcuityLabel::Coma] / total - 0.09) < 0.02);
    CHECK(std::abs(counts[phenotype::AcuityLabel::Dead] / total - 0.03) < 0.02);
}

TEST_CASE("median stay length tracks the configured median") {
    synth::SynthConfig cfg;
    cfg.patients = 400;
    cfg.seed = 12;
    auto dir = tmp_dir("synth_los");
    auto summary = synth::generate(cfg, dir.string());
    double median_days = summary.median_los_min / 1440.0;
    CHECK(median_days > cfg.median_los_days - 1.0);
    CHECK(median_days < cfg.median_los_days + 1.0);
}

TEST_CASE("empty-ish cohorts still describe cleanly") {
    synth::SynthConfig cfg;
    cfg.patients = 1;
    cfg.seed = 3;
    cfg.prev_mortality = 0.0;  // a single short stay may not support a death
    auto dir = tmp_dir("synth_single");
    auto summary = synth::generate(cfg, dir.string());
    CHECK(summary.patients == 1);
    CHECK(summary.shifts >= 0);
}

TEST_CASE("infeasible prevalence combinations are rejected") {
    synth::SynthConfig cfg;
    cfg.prev_delirium = 0.5;
    cfg.prev_coma = 0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    KeyedConfig k;
    k.set("preset", "nonsense");
    CHECK_THROWS_AS(synth::SynthConfig::from_config(k), ConfigError);
}

TEST_CASE("the delirium preset raises the delirium incidence default") {
    KeyedConfig k;
    k.set("preset", "delirium");
    auto cfg = synth::SynthConfig::from_config(k);
    CHECK(cfg.prev_delirium == 0.08);
    KeyedConfig base;
    auto brain = synth::SynthConfig::from_config(base);
    CHECK(brain.prev_delirium == 0.06);
}

namespace {

// held-out mean one-vs-rest AUROC of the logistic baseline on a fresh cohort
double logistic_auroc_at_signal(double signal, uint64_t seed) {
    synth::SynthConfig cfg;
    cfg.patients = 150;
    cfg.seed = seed;
    cfg.signal = signal;
    auto dir = tmp_dir("synth_signal_" + std::to_string(seed) + "_" +
                       std::to_string(int(signal * 10)));
    synth::generate(cfg, dir.string());

    KeyedConfig prep = KeyedConfig::parse_file((dir / "prepare.conf").string());
    etl::PrepareConfig pc = etl::PrepareConfig::from_config(prep);
    pc.tabular = true;
    pc.fold_count = 2;
    etl::PreparedDataset ds = etl::prepare(dir.string(), pc);

    eval::EvalConfig ec;
    ec.folds = 2;
    ec.bootstrap_iterations = 1;
    ec.seed = seed;
    model::ModelConfig mc;
    model::TrainConfig tc;
    auto cv = eval::run_cv(ds, eval::EvalModelKind::Logistic, mc, tc, ec, nullptr, "h");
    return cv.report.metrics.at("mean").at("auroc").point;
}

}  // namespace

TEST_CASE("held-out accuracy grows with the planted signal strength") {
    // three seeds averaged at s = 0, 0.5, 1.0
    double s0 = 0.0, s5 = 0.0, s10 = 0.0;
    for (uint64_t seed : {101, 102, 103}) {
        s0 += logistic_auroc_at_signal(0.0, seed);
        s5 += logistic_auroc_at_signal(0.5, seed);
        s10 += logistic_auroc_at_signal(1.0, seed);
    }
    s0 /= 3.0;
    s5 /= 3.0;
    s10 /= 3.0;
    CAPTURE(s0);
    CAPTURE(s5);
    CAPTURE(s10);
    CHECK(s0 <= s5);
    CHECK(s5 <= s10);
    CHECK(s0 < 0.6);   // no signal stays near chance
    CHECK(s10 > 0.8);  // full signal is clearly learnable
}
