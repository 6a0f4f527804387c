#include <filesystem>
#include <fstream>

#include "acuity/csv.hpp"
#include "acuity/etl.hpp"
#include "acuity/timeutil.hpp"
#include "json.hpp"

namespace acuity::etl {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kShiftsFile = "shifts.csv";
constexpr const char* kWindowsFile = "windows.csv";
constexpr const char* kStaticsFile = "statics.csv";
constexpr const char* kTabularFile = "tabular.csv";
constexpr const char* kBundleFile = "bundle.json";

std::string opt_bool_str(const std::optional<bool>& v) {
    if (!v) return "";
    return *v ? "1" : "0";
}

}  // namespace

void write_bundle(const PreparedDataset& ds, const std::string& out_dir,
                  const std::string& config_hash) {
    fs::create_directories(out_dir);
    fs::path dir(out_dir);

    {
        CsvWriter w((dir / kShiftsFile).string(),
                    {"patient_id", "stay_id", "shift_index", "label", "binary_delirium", "fold",
                     "n_obs"});
        for (const auto& s : ds.shifts) {
            w.row({s.patient_id, s.stay_id, std::to_string(s.shift_index),
                   phenotype::label_name(s.label), opt_bool_str(s.binary_delirium),
                   std::to_string(s.fold), std::to_string(s.window.size())});
        }
        w.close();
    }
    {
        CsvWriter w((dir / kWindowsFile).string(),
                    {"stay_id", "shift_index", "t", "code", "value"});
        for (const auto& s : ds.shifts) {
            for (const auto& trip : s.window) {
                w.row({s.stay_id, std::to_string(s.shift_index), fmt_double(trip.t),
                       std::to_string(trip.code), fmt_double(trip.value)});
            }
        }
        w.close();
    }
    {
        std::vector<std::string> header = {"stay_id", "shift_index"};
        for (const auto& name : ds.statics.column_names()) header.push_back(name);
        CsvWriter w((dir / kStaticsFile).string(), header);
        for (const auto& s : ds.shifts) {
            std::vector<std::string> row = {s.stay_id, std::to_string(s.shift_index)};
            for (double v : s.static_vector) row.push_back(fmt_double(v));
            w.row(row);
        }
        w.close();
    }
    if (ds.config.tabular) {
        std::vector<std::string> header = {"stay_id", "shift_index"};
        for (int code : ds.tabular.var_codes) header.push_back(ds.vocab.by_code(code).name);
        CsvWriter w((dir / kTabularFile).string(), header);
        for (size_t i = 0; i < ds.shifts.size(); ++i) {
            std::vector<std::string> row = {ds.shifts[i].stay_id,
                                            std::to_string(ds.shifts[i].shift_index)};
            for (int c = 0; c < ds.tabular.features.cols; ++c)
                row.push_back(fmt_double(ds.tabular.features(int(i), c)));
            w.row(row);
        }
        w.close();
    }

    ordered_json j;
    j["format_version"] = 1;
    j["tool_version"] = kToolVersion;
    j["config_hash"] = config_hash;
    j["seed"] = ds.config.seed;
    j["fold_count"] = ds.config.fold_count;
    j["vocab_hash"] = ds.vocab_hash;
    j["prepare_config"] = ds.config.to_config().canonical_text();

    ordered_json funnel;
    for (const auto& [name, count] : ds.funnel.rows()) funnel[name] = count;
    j["funnel"] = std::move(funnel);

    ordered_json vocab = ordered_json::array();
    for (const auto& e : ds.vocab.entries) {
        ordered_json v;
        v["name"] = e.name;
        v["code"] = e.code;
        v["kind"] = kind_name(e.kind);
        v["unit"] = e.unit;
        v["retain"] = e.retain;
        v["prevalence"] = e.stats.prevalence;
        v["p1"] = e.stats.p1;
        v["p99"] = e.stats.p99;
        v["mean"] = e.stats.mean;
        v["std"] = e.stats.std_dev;
        v["train_values"] = e.stats.train_values;
        vocab.push_back(std::move(v));
    }
    j["vocabulary"] = std::move(vocab);

    ordered_json numerics = ordered_json::array();
    for (const auto& v : ds.statics.numerics) {
        ordered_json s;
        s["name"] = v.name;
        s["median"] = v.median;
        s["mean"] = v.mean;
        s["std"] = v.std_dev;
        numerics.push_back(std::move(s));
    }
    ordered_json categoricals = ordered_json::array();
    for (const auto& v : ds.statics.categoricals) {
        ordered_json s;
        s["name"] = v.name;
        s["categories"] = v.categories;
        s["mode"] = v.mode;
        categoricals.push_back(std::move(s));
    }
    j["statics"] = {{"numerics", std::move(numerics)},
                    {"categoricals", std::move(categoricals)}};

    if (ds.config.tabular) {
        j["tabular"] = {{"col_min", ds.tabular.col_min}, {"col_max", ds.tabular.col_max}};
    }

    ordered_json digests;
    digests[kShiftsFile] = to_hex(file_digest((dir / kShiftsFile).string()));
    digests[kWindowsFile] = to_hex(file_digest((dir / kWindowsFile).string()));
    digests[kStaticsFile] = to_hex(file_digest((dir / kStaticsFile).string()));
    if (ds.config.tabular)
        digests[kTabularFile] = to_hex(file_digest((dir / kTabularFile).string()));
    j["digests"] = std::move(digests);

    std::string tmp = (dir / (std::string(kBundleFile) + ".tmp")).string();
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot write bundle descriptor: " + tmp);
        out << j.dump(2) << '\n';
    }
    fs::rename(tmp, dir / kBundleFile);
}

PreparedDataset load_bundle(const std::string& dir_in) {
    fs::path dir(dir_in);
    std::ifstream in(dir / kBundleFile);
    if (!in) throw DataError("cannot open bundle descriptor: " + (dir / kBundleFile).string());
    json j = json::parse(in);
    if (j.at("format_version").get<int>() != 1)
        throw DataError("unsupported bundle format version");

    PreparedDataset ds;
    ds.config = PrepareConfig::from_config(
        KeyedConfig::parse_text(j.at("prepare_config").get<std::string>(), "bundle config"));
    ds.vocab_hash = j.at("vocab_hash").get<std::string>();

    for (const auto& [file, digest] : j.at("digests").items()) {
        std::string actual = to_hex(file_digest((dir / file).string()));
        if (actual != digest.get<std::string>())
            throw DataError("bundle file " + file + " digest mismatch (expected " +
                            digest.get<std::string>() + ", got " + actual + ")");
    }

    for (const auto& v : j.at("vocabulary")) {
        VocabEntry e;
        e.name = v.at("name").get<std::string>();
        e.code = v.at("code").get<int>();
        e.kind = kind_from_name(v.at("kind").get<std::string>());
        e.unit = v.at("unit").get<std::string>();
        e.retain = v.at("retain").get<bool>();
        e.stats.prevalence = v.at("prevalence").get<double>();
        e.stats.p1 = v.at("p1").get<double>();
        e.stats.p99 = v.at("p99").get<double>();
        e.stats.mean = v.at("mean").get<double>();
        e.stats.std_dev = v.at("std").get<double>();
        e.stats.train_values = v.at("train_values").get<int64_t>();
        if (e.retain) ++ds.vocab.retained_count;
        ds.vocab.entries.push_back(std::move(e));
    }
    if (ds.vocab.hash_hex() != ds.vocab_hash)
        throw DataError("bundle vocabulary does not match its recorded hash");

    for (const auto& v : j.at("statics").at("numerics")) {
        StaticNumeric s;
        s.name = v.at("name").get<std::string>();
        s.median = v.at("median").get<double>();
        s.mean = v.at("mean").get<double>();
        s.std_dev = v.at("std").get<double>();
        ds.statics.numerics.push_back(std::move(s));
    }
    for (const auto& v : j.at("statics").at("categoricals")) {
        StaticCategorical s;
        s.name = v.at("name").get<std::string>();
        s.categories = v.at("categories").get<std::vector<std::string>>();
        s.mode = v.at("mode").get<std::string>();
        ds.statics.categoricals.push_back(std::move(s));
    }

    for (const auto& [name, count] : j.at("funnel").items()) {
        auto set = [&](const char* key, int64_t& field) {
            if (name == key) field = count.get<int64_t>();
        };
        set("patients_in", ds.funnel.patients_in);
        set("encounters_in", ds.funnel.encounters_in);
        set("events_in", ds.funnel.events_in);
        set("events_rejected_unknown_variable", ds.funnel.events_rejected_unknown);
        set("events_rejected_unit_mismatch", ds.funnel.events_rejected_unit);
        set("events_rejected_out_of_range", ds.funnel.events_rejected_range);
        set("stays_after_merge", ds.funnel.stays_after_merge);
        set("stays_dropped_short", ds.funnel.stays_dropped_short);
        set("shifts_enumerated", ds.funnel.shifts_enumerated);
        set("shifts_dropped_short_stay", ds.funnel.shifts_dropped_short_stay);
        set("shifts_dropped_early_start", ds.funnel.shifts_dropped_early);
        set("shifts_dropped_excluded_label", ds.funnel.shifts_dropped_excluded);
        set("shifts_retained", ds.funnel.shifts_retained);
    }

    CsvTable shifts = read_csv((dir / kShiftsFile).string());
    int c_pat = shifts.require_col("patient_id", kShiftsFile);
    int c_stay = shifts.require_col("stay_id", kShiftsFile);
    int c_idx = shifts.require_col("shift_index", kShiftsFile);
    int c_label = shifts.require_col("label", kShiftsFile);
    int c_bin = shifts.require_col("binary_delirium", kShiftsFile);
    int c_fold = shifts.require_col("fold", kShiftsFile);
    for (const auto& row : shifts.rows) {
        ShiftRecord rec;
        rec.patient_id = row[size_t(c_pat)];
        rec.stay_id = row[size_t(c_stay)];
        rec.shift_index = int(parse_int(row[size_t(c_idx)], "shift_index"));
        rec.label = phenotype::label_from_name(row[size_t(c_label)]);
        if (!row[size_t(c_bin)].empty()) rec.binary_delirium = row[size_t(c_bin)] == "1";
        rec.fold = int(parse_int(row[size_t(c_fold)], "fold"));
        ds.shifts.push_back(std::move(rec));
    }

    std::map<std::pair<std::string, int>, size_t> index;
    for (size_t i = 0; i < ds.shifts.size(); ++i)
        index[{ds.shifts[i].stay_id, ds.shifts[i].shift_index}] = i;

    CsvTable windows = read_csv((dir / kWindowsFile).string());
    int w_stay = windows.require_col("stay_id", kWindowsFile);
    int w_idx = windows.require_col("shift_index", kWindowsFile);
    int w_t = windows.require_col("t", kWindowsFile);
    int w_code = windows.require_col("code", kWindowsFile);
    int w_value = windows.require_col("value", kWindowsFile);
    for (const auto& row : windows.rows) {
        auto key = std::make_pair(row[size_t(w_stay)],
                                  int(parse_int(row[size_t(w_idx)], "shift_index")));
        auto it = index.find(key);
        if (it == index.end())
            throw DataError("windows.csv references unknown shift " + key.first + "/" +
                            std::to_string(key.second));
        encoding::ObservationTriplet trip;
        trip.t = parse_double(row[size_t(w_t)], "window t");
        trip.code = int(parse_int(row[size_t(w_code)], "window code"));
        trip.value = parse_double(row[size_t(w_value)], "window value");
        ds.shifts[it->second].window.push_back(trip);
    }

    CsvTable statics = read_csv((dir / kStaticsFile).string());
    if (statics.rows.size() != ds.shifts.size())
        throw DataError("statics.csv row count does not match shifts.csv");
    int dim = ds.statics.dim();
    if (int(statics.header.size()) != dim + 2)
        throw DataError("statics.csv column count does not match the static layout");
    for (size_t i = 0; i < statics.rows.size(); ++i) {
        const auto& row = statics.rows[i];
        if (row[0] != ds.shifts[i].stay_id)
            throw DataError("statics.csv row order does not match shifts.csv");
        ds.shifts[i].static_vector.reserve(size_t(dim));
        for (int c = 0; c < dim; ++c)
            ds.shifts[i].static_vector.push_back(
                parse_double(row[size_t(c + 2)], "static value"));
    }

    if (ds.config.tabular) {
        ds.tabular.col_min = j.at("tabular").at("col_min").get<std::vector<double>>();
        ds.tabular.col_max = j.at("tabular").at("col_max").get<std::vector<double>>();
        CsvTable tab = read_csv((dir / kTabularFile).string());
        if (tab.rows.size() != ds.shifts.size())
            throw DataError("tabular.csv row count does not match shifts.csv");
        int k = int(tab.header.size()) - 2;
        ds.tabular.var_codes.resize(size_t(k));
        for (int c = 0; c < k; ++c) ds.tabular.var_codes[size_t(c)] = c;
        ds.tabular.features = Matrix(int(tab.rows.size()), k);
        for (size_t i = 0; i < tab.rows.size(); ++i) {
            if (tab.rows[i][0] != ds.shifts[i].stay_id)
                throw DataError("tabular.csv row order does not match shifts.csv");
            for (int c = 0; c < k; ++c)
                ds.tabular.features(int(i), c) =
                    parse_double(tab.rows[i][size_t(c + 2)], "tabular value");
        }
    }

    return ds;
}

}  // namespace acuity::etl
