#include "toa/io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace toa::io {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_matrix_csv(std::ostream& out, const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out = open_for_write(path);
  write_matrix_csv(out, m);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& field) {
  const char* begin = field.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  while (end && (*end == ' ' || *end == '\t')) ++end;
  if (end == begin || *end != '\0' || errno == ERANGE)
    throw FormatError("not a number: '" + field + "'");
  return v;
}

Matrix read_matrix_csv(std::istream& in) {
  std::vector<double> values;
  std::size_t cols = 0, rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (rows == 0) cols = fields.size();
    if (fields.size() != cols)
      throw FormatError("CSV row " + std::to_string(rows + 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(cols));
    for (const auto& f : fields) values.push_back(parse_double(f));
    ++rows;
  }
  if (rows == 0) throw FormatError("CSV holds no rows");
  return Matrix(rows, cols, std::move(values));
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_matrix_csv(in);
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace toa::io
