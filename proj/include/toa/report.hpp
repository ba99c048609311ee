#pragma once

#include <filesystem>
#include <vector>

#include "toa/matrix.hpp"
#include "toa/synthetic.hpp"

namespace toa::report {

// One row of magnitudes per operator row.
Matrix spectra(const Matrix& op);

// Columns t, noisy, clean, predicted with a header line.
void write_reconstruction_csv(const std::filesystem::path& path, const synthetic::Sample& sample,
                              const Matrix& predicted);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace toa::report
