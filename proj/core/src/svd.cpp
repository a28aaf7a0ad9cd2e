#include "deftx/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "deftx/error.hpp"

namespace deftx {

namespace {

constexpr double kOrthTolerance = 1e-12;
constexpr int kMaxSweeps = 60;

double dot(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

// Columns stored contiguously: col(j) = data[j * n_rows .. (j + 1) * n_rows).
struct ColMatrix {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<double> data;

  ColMatrix(std::size_t r, std::size_t c) : n_rows(r), n_cols(c), data(r * c, 0.0) {}
  double* col(std::size_t j) { return data.data() + j * n_rows; }
  const double* col(std::size_t j) const { return data.data() + j * n_rows; }
};

void rotate_columns(ColMatrix& m, std::size_t p, std::size_t q, double c, double s) {
  double* a = m.col(p);
  double* b = m.col(q);
  for (std::size_t i = 0; i < m.n_rows; ++i) {
    const double ai = a[i];
    const double bi = b[i];
    a[i] = c * ai - s * bi;
    b[i] = s * ai + c * bi;
  }
}

// Orthogonalizes the columns of `a` by plane rotations, accumulating them
// into `v` (initialized to identity). On exit a = u * diag(s) * v^T up to
// column scaling.
void jacobi_orthogonalize(ColMatrix& a, ColMatrix& v) {
  const std::size_t n = a.n_cols;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double app = dot(a.col(p), a.col(p), a.n_rows);
        const double aqq = dot(a.col(q), a.col(q), a.n_rows);
        const double apq = dot(a.col(p), a.col(q), a.n_rows);
        if (std::fabs(apq) <= kOrthTolerance * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_columns(a, p, q, c, s);
        rotate_columns(v, p, q, c, s);
      }
    }
    if (!rotated) break;
  }
}

// Replaces an exactly-zero column with a unit vector orthogonal to the
// given unit columns (Gram-Schmidt over canonical basis vectors). Only
// reachable for rank-deficient inputs with structurally zero columns.
void fill_orthonormal_column(ColMatrix& u, std::size_t target,
                             const std::vector<std::size_t>& unit_cols) {
  const std::size_t m = u.n_rows;
  for (std::size_t basis = 0; basis < m; ++basis) {
    std::vector<double> candidate(m, 0.0);
    candidate[basis] = 1.0;
    for (std::size_t j : unit_cols) {
      const double proj = dot(candidate.data(), u.col(j), m);
      const double* cj = u.col(j);
      for (std::size_t i = 0; i < m; ++i) candidate[i] -= proj * cj[i];
    }
    const double norm = std::sqrt(dot(candidate.data(), candidate.data(), m));
    if (norm > 0.5) {
      double* out = u.col(target);
      for (std::size_t i = 0; i < m; ++i) out[i] = candidate[i] / norm;
      return;
    }
  }
  raise(ErrorKind::NumericInput, "failed to complete orthonormal basis");
}

}  // namespace

SvdFactors svd(const Tensor& w) {
  if (!w.is_matrix()) {
    raise(ErrorKind::Dimensionality, "svd expects a 2-D tensor, got " +
                                         std::to_string(w.shape.size()) + "-D");
  }
  if (!all_finite(w)) raise(ErrorKind::NumericInput, "svd input has non-finite entries");

  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const bool transposed = m < n;
  const std::size_t work_rows = transposed ? n : m;
  const std::size_t work_cols = transposed ? m : n;  // == p = min(m, n)

  ColMatrix a(work_rows, work_cols);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double value = w.at(r, c);
      if (transposed) {
        a.col(r)[c] = value;
      } else {
        a.col(c)[r] = value;
      }
    }
  }

  ColMatrix v(work_cols, work_cols);
  for (std::size_t j = 0; j < work_cols; ++j) v.col(j)[j] = 1.0;

  jacobi_orthogonalize(a, v);

  // Column norms are the singular values; order them non-increasing.
  std::vector<double> norms(work_cols);
  for (std::size_t j = 0; j < work_cols; ++j) {
    norms[j] = std::sqrt(dot(a.col(j), a.col(j), a.n_rows));
  }
  std::vector<std::size_t> order(work_cols);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  ColMatrix left(work_rows, work_cols);
  ColMatrix right(work_cols, work_cols);
  std::vector<double> singular(work_cols);
  std::vector<std::size_t> unit_cols;
  std::vector<std::size_t> zero_cols;
  for (std::size_t j = 0; j < work_cols; ++j) {
    const std::size_t src = order[j];
    singular[j] = norms[src];
    const double* ac = a.col(src);
    const double* vc = v.col(src);
    std::copy(vc, vc + work_cols, right.col(j));
    if (norms[src] > 0.0) {
      double* lc = left.col(j);
      for (std::size_t i = 0; i < work_rows; ++i) lc[i] = ac[i] / norms[src];
      unit_cols.push_back(j);
    } else {
      zero_cols.push_back(j);
    }
  }
  for (std::size_t j : zero_cols) {
    fill_orthonormal_column(left, j, unit_cols);
    unit_cols.push_back(j);
  }

  const std::size_t p = work_cols;
  SvdFactors out;
  out.s = Tensor({p}, std::move(singular));
  if (!transposed) {
    // w = left * diag(s) * right^T
    out.u = Tensor::matrix(m, p);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < p; ++j) out.u.at(i, j) = left.col(j)[i];
    }
    out.vt = Tensor::matrix(p, n);
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t c = 0; c < n; ++c) out.vt.at(j, c) = right.col(j)[c];
    }
  } else {
    // w^T = left * diag(s) * right^T, so w = right * diag(s) * left^T.
    out.u = Tensor::matrix(m, p);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < p; ++j) out.u.at(i, j) = right.col(j)[i];
    }
    out.vt = Tensor::matrix(p, n);
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t c = 0; c < n; ++c) out.vt.at(j, c) = left.col(j)[c];
    }
  }
  return out;
}

Tensor svd_reconstruct(const SvdFactors& f) {
  return svd_low_rank(f, f.s.numel());
}

Tensor svd_low_rank(const SvdFactors& f, std::size_t rank) {
  const std::size_t m = f.u.rows();
  const std::size_t n = f.vt.cols();
  const std::size_t p = f.s.numel();
  const std::size_t r = std::min(rank, p);
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < r; ++k) {
      const double scaled = f.u.at(i, k) * f.s.data[k];
      if (scaled == 0.0) continue;
      const double* vrow = f.vt.data.data() + k * n;
      double* orow = out.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += scaled * vrow[j];
    }
  }
  return out;
}

}  // namespace deftx
