#include "siflow/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "siflow/errors.hpp"

namespace siflow {
namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

CsvTable parse_csv(std::istream& in, const std::string& source) {
  CsvTable table;
  std::string line;
  if (!std::getline(in, line))
    throw ConfigError(source + ": empty file, expected a header row");
  for (auto& h : split_line(line)) table.header.push_back(trim(h));
  const auto cols = static_cast<Index>(table.header.size());

  std::vector<double> values;
  Index nrows = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (static_cast<Index>(cells.size()) != cols)
      throw ConfigError(source + ": row " + std::to_string(lineno) + " has " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(cols));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string cell = trim(cells[c]);
      double v = 0.0;
      const auto* first = cell.data();
      const auto* last = cell.data() + cell.size();
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (cell.empty() || ec != std::errc() || ptr != last)
        throw ConfigError(source + ": non-numeric cell '" + cell + "' at row " +
                          std::to_string(lineno) + ", column " +
                          std::to_string(c + 1) + " ('" + table.header[c] + "')");
      values.push_back(v);
    }
    ++nrows;
  }
  table.rows.resize(nrows, cols);
  for (Index r = 0; r < nrows; ++r)
    for (Index c = 0; c < cols; ++c) table.rows(r, c) = values[r * cols + c];
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const Mat& columns_are_points) {
  for (std::size_t i = 0; i < header.size(); ++i)
    out << (i ? "," : "") << header[i];
  out << '\n';
  for (Index j = 0; j < columns_are_points.cols(); ++j) {
    for (Index i = 0; i < columns_are_points.rows(); ++i)
      out << (i ? "," : "") << format_double(columns_are_points(i, j));
    out << '\n';
  }
}

}  // namespace siflow
