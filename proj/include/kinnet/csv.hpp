#pragma once
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "kinnet/errors.hpp"
#include "kinnet/text.hpp"

// Rectangular numeric tables: one header line of column names, then
// comma-separated double rows. Lines starting with '#' (the trajectory
// writer appends step statistics that way) and blank lines are skipped.

namespace kinnet {

struct NumericTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw config_error("table has no column named '" + std::string(name) + "'");
  }

  bool has_column(std::string_view name) const {
    for (const auto& c : columns)
      if (c == name) return true;
    return false;
  }

  std::vector<double> column_values(std::size_t idx) const {
    if (idx >= columns.size()) throw dimension_error("column index out of range");
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[idx]);
    return out;
  }
};

inline NumericTable parse_numeric_csv(std::string_view text) {
  NumericTable t;
  bool have_header = false;
  int line_no = 0;
  for (const auto raw : split_char(text, '\n')) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      for (const auto cell : split_char(line, ',')) {
        const std::string_view name = trim(cell);
        if (name.empty()) throw parse_error("empty column name", line_no);
        t.columns.emplace_back(name);
      }
      have_header = true;
      continue;
    }
    const auto cells = split_char(line, ',');
    if (cells.size() != t.columns.size())
      throw parse_error("expected " + std::to_string(t.columns.size()) + " cells, found " +
                            std::to_string(cells.size()),
                        line_no);
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto cell : cells) row.push_back(parse_real(trim(cell), line_no));
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw parse_error("missing header line");
  return t;
}

inline std::string write_numeric_csv(const NumericTable& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (i) out += ',';
    out += t.columns[i];
  }
  out += '\n';
  for (const auto& row : t.rows) {
    if (row.size() != t.columns.size())
      throw dimension_error("table row width does not match the header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += g17(row[i]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace kinnet
