#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfsurv {

// Strict numeric CSV: mandatory header row, comma separators, every field a
// finite number.  Lines starting with '#' are comments (artifacts written
// here carry their configuration in one) and blank lines are ignored.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<Eigen::VectorXd> data;  // column-major

  int rows() const { return data.empty() ? 0 : static_cast<int>(data[0].size()); }
  int cols() const { return static_cast<int>(columns.size()); }

  bool has(const std::string& name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
  }

  const Eigen::VectorXd& col(const std::string& name) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j] == name) return data[j];
    throw std::invalid_argument("csv: no column named '" + name + "'");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

}  // namespace detail

inline CsvTable read_csv(std::istream& in, const std::string& origin = "csv") {
  CsvTable t;
  std::string line;
  std::vector<std::vector<double>> cols;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    const std::vector<std::string> fields = detail::split_fields(s);
    if (!have_header) {
      for (const auto& f : fields) {
        if (f.empty())
          throw std::invalid_argument(origin + ": empty column name in header");
        if (std::find(t.columns.begin(), t.columns.end(), f) != t.columns.end())
          throw std::invalid_argument(origin + ": duplicate column '" + f + "'");
        t.columns.push_back(f);
      }
      cols.resize(t.columns.size());
      have_header = true;
      continue;
    }
    if (fields.size() != t.columns.size())
      throw std::invalid_argument(origin + " line " + std::to_string(line_no) +
                                  ": expected " + std::to_string(t.columns.size()) +
                                  " fields, got " + std::to_string(fields.size()));
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const std::string& f = fields[j];
      double value = 0.0;
      const auto [ptr, ec] =
          std::from_chars(f.data(), f.data() + f.size(), value);
      if (f.empty() || ec != std::errc{} || ptr != f.data() + f.size() ||
          !std::isfinite(value))
        throw std::invalid_argument(origin + " line " + std::to_string(line_no) +
                                    ", column '" + t.columns[j] +
                                    "': missing or non-numeric value '" + f + "'");
      cols[j].push_back(value);
    }
  }
  if (!have_header) throw std::invalid_argument(origin + ": no header row");
  t.data.resize(cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j)
    t.data[j] = Eigen::Map<Eigen::VectorXd>(cols[j].data(),
                                            static_cast<int>(cols[j].size()));
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open input file: " + path);
  return read_csv(in, path);
}

// 17 significant digits: the printed value reads back to the same double.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_csv(std::ostream& out, const std::vector<std::string>& columns,
                      const std::vector<Eigen::VectorXd>& data,
                      const std::string& comment = "") {
  if (columns.size() != data.size())
    throw std::invalid_argument("write_csv: header/data size mismatch");
  const int n = data.empty() ? 0 : static_cast<int>(data[0].size());
  for (const auto& c : data)
    if (c.size() != n) throw std::invalid_argument("write_csv: ragged columns");
  if (!comment.empty()) out << "# " << comment << "\n";
  for (std::size_t j = 0; j < columns.size(); ++j)
    out << (j ? "," : "") << columns[j];
  out << "\n";
  for (int i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j)
      out << (j ? "," : "") << format_number(data[j][i]);
    out << "\n";
  }
}

inline void write_csv_file(const std::string& path,
                           const std::vector<std::string>& columns,
                           const std::vector<Eigen::VectorXd>& data,
                           const std::string& comment = "") {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write output file: " + path);
  write_csv(out, columns, data, comment);
  if (!out) throw std::invalid_argument("write failed: " + path);
}

}  // namespace cfsurv
