#pragma once

#include <cstddef>

#include "deftx/tensor.hpp"

namespace deftx {

// Thin SVD of an m x n matrix: u is m x p, s holds the p singular values
// sorted non-increasing, vt is p x n, with p = min(m, n). Sign of each
// (u column, vt row) pair is unspecified; only the product u diag(s) vt
// is meant to be consumed.
struct SvdFactors {
  Tensor u;
  Tensor s;   // 1-D, length p
  Tensor vt;
};

// One-sided Jacobi. Rotations stop once every column pair is orthogonal
// to within 1e-12 relative, or after 60 sweeps.
SvdFactors svd(const Tensor& w);

// u diag(s) vt, densified.
Tensor svd_reconstruct(const SvdFactors& f);

// Rank-r truncation u_r diag(s_r) vt_r; r is clamped to p.
Tensor svd_low_rank(const SvdFactors& f, std::size_t rank);

}  // namespace deftx
