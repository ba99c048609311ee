#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "toa/matrix.hpp"

namespace toa::io {

// Shortest-form-independent decimal with 17 significant digits, enough to
// round-trip any double.
std::string format_double(double v);

// One matrix row per CSV line.
void write_matrix_csv(std::ostream& out, const Matrix& m);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);

// Parses a numeric CSV with equal-length rows. Throws FormatError.
Matrix read_matrix_csv(std::istream& in);
Matrix read_matrix_csv(const std::filesystem::path& path);

// Splits one CSV line on commas (no quoting; numeric files only).
std::vector<std::string> split_csv_line(const std::string& line);
double parse_double(const std::string& field);

// Opens a file for writing, creating parent directories. Throws
// std::runtime_error on failure.
std::ofstream open_for_write(const std::filesystem::path& path);

}  // namespace toa::io
