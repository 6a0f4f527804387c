#include "acuity/csv.hpp"

#include "acuity/util.hpp"

namespace acuity {

int CsvTable::col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return int(i);
    return -1;
}

int CsvTable::require_col(const std::string& name, const std::string& file) const {
    int c = col(name);
    if (c < 0) throw DataError(file + ": missing required column '" + name + "'");
    return c;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    out.push_back(std::move(field));
    return out;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file: " + path);
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV file: " + path);
    table.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != table.header.size())
            throw DataError(path + ": row has " + std::to_string(fields.size()) +
                            " fields, expected " + std::to_string(table.header.size()));
        table.rows.push_back(std::move(fields));
    }
    return table;
}

static void write_field(std::ofstream& out, const std::string& f) {
    if (f.find_first_of(",\"\n") == std::string::npos) {
        out << f;
        return;
    }
    out << '"';
    for (char c : f) {
        if (c == '"') out << "\"\"";
        else out << c;
    }
    out << '"';
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path), path_(path), width_(header.size()) {
    if (!out_) throw DataError("cannot open CSV file for writing: " + path);
    row(header);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    if (fields.size() != width_)
        throw DataError(path_ + ": writing row of width " + std::to_string(fields.size()) +
                        ", expected " + std::to_string(width_));
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out_ << ',';
        write_field(out_, fields[i]);
    }
    out_ << '\n';
}

void CsvWriter::close() {
    out_.close();
    if (out_.fail()) throw DataError("failed writing CSV file: " + path_);
}

}  // namespace acuity
