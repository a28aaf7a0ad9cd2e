#include "deftx/tensor.hpp"

#include <cmath>
#include <string>

#include "deftx/error.hpp"

namespace deftx {

std::size_t shape_numel(std::span<const std::size_t> extents) {
  std::size_t n = 1;
  for (std::size_t e : extents) n *= e;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> extents, std::vector<double> values)
    : shape(std::move(extents)), data(std::move(values)) {
  if (shape.empty()) raise(ErrorKind::Dimensionality, "tensor needs at least one extent");
  for (std::size_t e : shape) {
    if (e == 0) raise(ErrorKind::Dimensionality, "tensor extents must be positive");
  }
  if (shape_numel(shape) != data.size()) {
    raise(ErrorKind::Dimensionality,
          "tensor data length " + std::to_string(data.size()) +
              " does not match extent product " + std::to_string(shape_numel(shape)));
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> extents) {
  const std::size_t n = shape_numel(extents);
  return Tensor(std::move(extents), std::vector<double>(n, 0.0));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols) {
  return zeros({rows, cols});
}

std::size_t Tensor::rows() const {
  if (!is_matrix()) raise(ErrorKind::Dimensionality, "rows() on non-matrix tensor");
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (!is_matrix()) raise(ErrorKind::Dimensionality, "cols() on non-matrix tensor");
  return shape[1];
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

bool all_finite(const Tensor& t) {
  for (double v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double frobenius_norm(const Tensor& t) {
  double sum = 0.0;
  for (double v : t.data) sum += v * v;
  return std::sqrt(sum);
}

double relative_frobenius_distance(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) raise(ErrorKind::Incompatibility, "shape mismatch in distance");
  double diff = 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    diff += d * d;
    ref += b.data[i] * b.data[i];
  }
  if (ref == 0.0) return std::sqrt(diff);
  return std::sqrt(diff / ref);
}

}  // namespace deftx
