#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace deftx {

// Dense row-major tensor of 64-bit floats. Extents are positive and the
// flat data length always equals their product.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> extents, std::vector<double> values);

  static Tensor zeros(std::vector<std::size_t> extents);
  static Tensor matrix(std::size_t rows, std::size_t cols);  // zero-filled

  std::size_t numel() const noexcept { return data.size(); }
  bool is_matrix() const noexcept { return shape.size() == 2; }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data[r * shape[1] + c];
  }
};

std::size_t shape_numel(std::span<const std::size_t> extents);
bool same_shape(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);
double frobenius_norm(const Tensor& t);
// ||a - b||_F / max(||b||_F, tiny); the relative-error workhorse in tests
// and denoising identities.
double relative_frobenius_distance(const Tensor& a, const Tensor& b);

}  // namespace deftx
