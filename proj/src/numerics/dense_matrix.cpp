#include "falsevfl/dense_matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "falsevfl/error.hpp"
#include "falsevfl/kernels.hpp"

namespace falsevfl {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ConfigError("DenseMatrix: data length " + std::to_string(data_.size()) +
                      " != " + std::to_string(rows_) + " x " + std::to_string(cols_));
  }
}

DenseMatrix DenseMatrix::row_vector(std::span<const double> values) {
  return DenseMatrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

DenseMatrix DenseMatrix::from_rows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ConfigError("DenseMatrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return DenseMatrix(r, c, std::move(data));
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void DenseMatrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool DenseMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void DenseMatrix::add_scaled(const DenseMatrix& other, double alpha) {
  if (!same_shape(other)) throw ConfigError("DenseMatrix::add_scaled: shape mismatch");
  kernels::axpy(alpha, other.data(), data(), size());
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) throw ConfigError("matmul_nt: inner dimension mismatch");
  DenseMatrix out(a.rows(), b.rows());
  kernels::gemm_nt(a.data(), b.data(), out.data(), a.rows(), b.rows(), a.cols());
  return out;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimension mismatch");
  DenseMatrix out(a.rows(), b.cols());
  kernels::gemm_nn(a.data(), b.data(), out.data(), a.rows(), b.cols(), a.cols());
  return out;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

}  // namespace falsevfl
