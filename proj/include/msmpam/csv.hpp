#pragma once

#include <map>
#include <string>
#include <vector>

namespace msmpam {

// Minimal CSV support for the file formats this project defines: UTF-8,
// comma separated, '.' decimal separator, no quoting (field values never
// contain commas).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;           // -1 when absent
    int require_column(const std::string& name) const;   // MissingColumn otherwise
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& table);

// Round-trip-exact formatting for doubles (17 significant digits when needed).
std::string format_double(double v);
double parse_double(const std::string& s, std::size_t line_no);
long parse_long(const std::string& s, std::size_t line_no);

}  // namespace msmpam
