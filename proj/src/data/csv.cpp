#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "attnlreg/data/series.hpp"

namespace alr::data {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) fields.push_back(cell);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\"");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\"");
  return s.substr(first, last - first + 1);
}

}  // namespace

RawSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'", 0, 0);

  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path.string() + "' is empty (missing header)", 1, 0);
  std::vector<std::string> header = split_fields(line);
  for (auto& h : header) h = trim(h);
  const bool has_date = !header.empty() && header.front() == "date";
  const std::size_t first_value = has_date ? 1 : 0;
  if (header.size() <= first_value) throw ParseError("header has no value columns", 1, 0);

  RawSeries out;
  out.variable_names.assign(header.begin() + static_cast<std::ptrdiff_t>(first_value), header.end());
  const std::size_t n = out.variable_names.size();
  std::vector<float> values;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(fields.size()) + " fields, header has " +
                           std::to_string(header.size()),
                       row, fields.size());
    }
    if (has_date) out.timestamps.push_back(trim(fields[0]));
    for (std::size_t c = first_value; c < fields.size(); ++c) {
      const std::string cell = trim(fields[c]);
      float v = 0.0F;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw ParseError("row " + std::to_string(row) + ", column " + std::to_string(c + 1) + ": '" + cell +
                             "' is not a finite number",
                         row, c + 1);
      }
      values.push_back(v);
    }
  }
  const std::size_t rows = values.size() / n;
  if (rows == 0) throw ParseError("'" + path.string() + "' has no data rows", row, 0);
  out.values = Array<float>({rows, n}, std::move(values));
  return out;
}

void write_csv(const RawSeries& series, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path.string() + "'");
  const bool has_date = !series.timestamps.empty();
  if (has_date) out << "date,";
  for (std::size_t j = 0; j < series.variables(); ++j) out << (j ? "," : "") << series.variable_names[j];
  out << '\n';
  char buf[32];
  for (std::size_t r = 0; r < series.length(); ++r) {
    if (has_date) out << series.timestamps[r] << ',';
    for (std::size_t j = 0; j < series.variables(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), series.values.at(r, j));
      out << (j ? "," : "") << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

}  // namespace alr::data
