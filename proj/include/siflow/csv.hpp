#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "siflow/types.hpp"

namespace siflow {

/// Header plus a rectangular block of doubles, one row per record.
struct CsvTable {
  std::vector<std::string> header;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows;
};

/// Reads a numeric CSV with a header row. Throws ConfigError naming the
/// 1-based row and column of the first malformed cell.
CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(std::istream& in, const std::string& source = "<stream>");

/// Writes doubles with round-trip precision.
void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const Mat& columns_are_points);

/// Shortest string that parses back to the same double.
std::string format_double(double v);

}  // namespace siflow
