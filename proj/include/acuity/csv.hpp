#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace acuity {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // column index by header name, -1 when absent
    int col(const std::string& name) const;
    int require_col(const std::string& name, const std::string& file) const;
};

CsvTable read_csv(const std::string& path);
std::vector<std::string> split_csv_line(const std::string& line);

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);
    void row(const std::vector<std::string>& fields);
    void close();

private:
    std::ofstream out_;
    std::string path_;
    size_t width_ = 0;
};

}  // namespace acuity
