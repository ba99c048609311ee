#include <fstream>

#include "toa/io.hpp"
#include "toa/linalg.hpp"
#include "toa/report.hpp"

namespace toa::report {

Matrix spectra(const Matrix& op) {
  Matrix out;
  for (std::size_t r = 0; r < op.rows(); ++r) {
    const Matrix row = dft_magnitude(Matrix::row_vector(op.row(r)));
    if (r == 0) out = Matrix(op.rows(), row.cols());
    std::copy(row.values().begin(), row.values().end(), out.row(r).begin());
  }
  return out;
}

void write_reconstruction_csv(const std::filesystem::path& path, const synthetic::Sample& sample,
                              const Matrix& predicted) {
  require_same_shape(sample.clean, predicted, "reconstruction");
  std::ofstream out = io::open_for_write(path);
  out << "t,noisy,clean,predicted\n";
  for (std::size_t t = 0; t < predicted.cols(); ++t)
    out << t << ',' << io::format_double(sample.noisy(0, t)) << ','
        << io::format_double(sample.clean(0, t)) << ',' << io::format_double(predicted(0, t))
        << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out = io::open_for_write(path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace toa::report
