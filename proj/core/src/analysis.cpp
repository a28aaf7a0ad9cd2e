#include "deftx/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "deftx/error.hpp"

namespace deftx {

namespace {

std::size_t intersection_size(const BinaryMask& a, const BinaryMask& b) {
  std::size_t shared = 0;
  for (const MaskSlice& sa : a.slices) {
    const MaskSlice* sb = b.find(sa.name);
    if (sb == nullptr) continue;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < sa.indices.size() && j < sb->indices.size()) {
      if (sa.indices[i] == sb->indices[j]) {
        ++shared;
        ++i;
        ++j;
      } else if (sa.indices[i] < sb->indices[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }
  return shared;
}

std::string format_fraction(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double mask_overlap(const BinaryMask& a, const BinaryMask& b) {
  const std::size_t a_size = a.cardinality();
  if (a_size == 0) {
    raise(ErrorKind::Evaluation, "overlap undefined for empty support");
  }
  return static_cast<double>(intersection_size(a, b)) / static_cast<double>(a_size);
}

double jaccard_overlap(const BinaryMask& a, const BinaryMask& b) {
  const std::size_t shared = intersection_size(a, b);
  const std::size_t unioned = a.cardinality() + b.cardinality() - shared;
  if (unioned == 0) {
    raise(ErrorKind::Evaluation, "overlap undefined for empty supports");
  }
  return static_cast<double>(shared) / static_cast<double>(unioned);
}

std::vector<std::vector<double>> overlap_matrix(std::span<const BinaryMask> masks) {
  if (masks.size() < 2) {
    raise(ErrorKind::Evaluation, "overlap matrix needs at least two vectors");
  }
  std::vector<std::vector<double>> out(masks.size(),
                                       std::vector<double>(masks.size(), 0.0));
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (std::size_t j = 0; j < masks.size(); ++j) {
      out[i][j] = i == j ? 1.0 : mask_overlap(masks[i], masks[j]);
    }
  }
  return out;
}

SparsityReport sparsity_report(const SparseVector& vec) {
  SparsityReport report;
  report.budget = vec.budget;

  auto bump = [](std::vector<std::pair<std::string, std::size_t>>& table,
                 const std::string& key, std::size_t amount) {
    for (auto& entry : table) {
      if (entry.first == key) {
        entry.second += amount;
        return;
      }
    }
    table.emplace_back(key, amount);
  };

  for (const SparseSlice& slice : vec.slices) {
    SparsityRow row;
    row.name = slice.name;
    row.cls = slice.cls;
    row.numel = shape_numel(slice.shape);
    row.support = slice.indices.size();
    double sum_abs = 0.0;
    double sum_sq = 0.0;
    for (double v : slice.values) {
      const double a = std::fabs(v);
      row.max_abs = std::max(row.max_abs, a);
      sum_abs += a;
      sum_sq += v * v;
    }
    row.mean_abs = slice.values.empty() ? 0.0 : sum_abs / static_cast<double>(slice.values.size());
    row.l2 = std::sqrt(sum_sq);
    report.total_support += row.support;

    const std::size_t dot = slice.name.find('.');
    const std::string layer = dot == std::string::npos ? slice.name : slice.name.substr(0, dot);
    bump(report.per_layer, layer, row.support);
    bump(report.per_class, tensor_class_name(slice.cls), row.support);
    report.tensors.push_back(std::move(row));
  }
  return report;
}

std::string overlap_matrix_tsv(std::span<const std::string> names,
                               const std::vector<std::vector<double>>& directional,
                               const std::vector<std::vector<double>>& jaccard) {
  std::string out =
      "# overlap convention: directional = |A∩B|/|A| (row A, column B); "
      "jaccard = |A∩B|/|A∪B|\n";
  out += "# directional\n";
  out += "vector";
  for (const std::string& n : names) out += "\t" + n;
  out += "\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    out += names[i];
    for (std::size_t j = 0; j < names.size(); ++j) {
      out += "\t" + format_fraction(directional[i][j]);
    }
    out += "\n";
  }
  out += "# jaccard\n";
  out += "vector";
  for (const std::string& n : names) out += "\t" + n;
  out += "\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    out += names[i];
    for (std::size_t j = 0; j < names.size(); ++j) {
      out += "\t" + format_fraction(jaccard[i][j]);
    }
    out += "\n";
  }
  return out;
}

std::string overlap_long_format(std::span<const std::string> names,
                                const std::vector<std::vector<double>>& directional,
                                const std::vector<std::vector<double>>& jaccard) {
  std::string out = "vector_a\tvector_b\toverlap\tjaccard\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      out += names[i] + "\t" + names[j] + "\t" + format_fraction(directional[i][j]) +
             "\t" + format_fraction(jaccard[i][j]) + "\n";
    }
  }
  return out;
}

std::string sparsity_report_tsv(const SparsityReport& report) {
  std::string out = "# budget\t" + std::to_string(report.budget) + "\n";
  out += "tensor\tclass\tnumel\tsupport\tmax_abs\tmean_abs\tl2\n";
  char buf[64];
  for (const SparsityRow& row : report.tensors) {
    std::snprintf(buf, sizeof buf, "%.6g\t%.6g\t%.6g", row.max_abs, row.mean_abs, row.l2);
    out += row.name;
    out += "\t";
    out += tensor_class_name(row.cls);
    out += "\t" + std::to_string(row.numel) + "\t" + std::to_string(row.support) + "\t";
    out += buf;
    out += "\n";
  }
  out += "# per-layer\n";
  for (const auto& [layer, count] : report.per_layer) {
    out += layer + "\t" + std::to_string(count) + "\n";
  }
  out += "# per-class\n";
  for (const auto& [cls, count] : report.per_class) {
    out += cls + "\t" + std::to_string(count) + "\n";
  }
  return out;
}

}  // namespace deftx
