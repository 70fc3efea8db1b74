#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vagram/common.hpp"

namespace vagram {

// Column-ordered CSV table. Numbers are rendered with 17 significant digits
// and '.' decimal separator; missing values become empty fields.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  const std::vector<std::string>& columns() const { return columns_; }
  std::size_t row_count() const { return rows_.size(); }

  void add_row(std::vector<std::string> cells) {
    if (cells.size() != columns_.size())
      throw Error("CsvTable: row with " + std::to_string(cells.size()) + " cells, expected " +
                  std::to_string(columns_.size()));
    rows_.push_back(std::move(cells));
  }

  std::string to_string() const {
    std::string out = join(columns_);
    for (const auto& row : rows_) out += join(row);
    return out;
  }

  void write(const std::filesystem::path& path) const { write_file_atomic(path, to_string()); }

  static std::string cell(double v) { return fmt_f64(v); }
  static std::string cell(const std::optional<double>& v) { return v ? fmt_f64(*v) : std::string(); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::uint64_t v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }

 private:
  static std::string join(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) line += ",";
      line += cells[i];
    }
    line += "\n";
    return line;
  }

  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace vagram
