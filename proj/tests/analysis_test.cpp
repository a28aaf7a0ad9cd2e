#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "deftx/analysis.hpp"
#include "deftx/error.hpp"

using namespace deftx;

namespace {

BinaryMask mask_of(std::vector<std::pair<std::string, std::vector<std::uint64_t>>> spec) {
  BinaryMask mask;
  for (auto& [name, indices] : spec) mask.slices.push_back({name, indices});
  return mask;
}

SparseVector vector_with_support(const BinaryMask& mask, double value) {
  SparseVector vec;
  for (const MaskSlice& slice : mask.slices) {
    SparseSlice s;
    s.name = slice.name;
    s.shape = {1024};
    s.indices = slice.indices;
    s.values.assign(slice.indices.size(), value);
    vec.slices.push_back(std::move(s));
  }
  vec.budget = vec.support_size();
  return vec;
}

}  // namespace

TEST_CASE("mask_overlap hand cases") {
  const BinaryMask a = mask_of({{"w", {1, 3, 5}}});
  const BinaryMask b = mask_of({{"w", {3, 5, 9}}});
  CHECK(mask_overlap(a, b) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(mask_overlap(a, a) == 1.0);

  const BinaryMask disjoint = mask_of({{"w", {2, 4}}});
  CHECK(mask_overlap(a, disjoint) == 0.0);

  // different tensors never intersect
  const BinaryMask other = mask_of({{"x", {1, 3, 5}}});
  CHECK(mask_overlap(a, other) == 0.0);

  const BinaryMask empty;
  CHECK_THROWS_AS(mask_overlap(empty, a), Error);

  // asymmetry when budgets differ
  const BinaryMask big = mask_of({{"w", {1, 3, 5, 7, 9, 11}}});
  CHECK(mask_overlap(a, big) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(mask_overlap(big, a) == doctest::Approx(0.5).epsilon(1e-15));

  CHECK(jaccard_overlap(a, b) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("overlap depends only on supports, not stored values") {
  const BinaryMask a = mask_of({{"w", {1, 3, 5}}});
  const BinaryMask b = mask_of({{"w", {3, 5, 9}}});
  const SparseVector va = vector_with_support(a, 7.0);
  const SparseVector vb = vector_with_support(b, -2.0);
  CHECK(mask_overlap(va.support(), vb.support()) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const SparseVector va2 = vector_with_support(a, 0.001);
  CHECK(mask_overlap(va2.support(), vb.support()) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("overlap matrix against a brute-force set oracle") {
  Rng rng(5);
  std::vector<BinaryMask> masks;
  for (int v = 0; v < 4; ++v) {
    std::set<std::uint64_t> support;
    while (support.size() < 40) support.insert(rng.next_below(600));
    masks.push_back(
        mask_of({{"w", std::vector<std::uint64_t>(support.begin(), support.end())}}));
  }
  const auto matrix = overlap_matrix(masks);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    CHECK(matrix[i][i] == 1.0);
    for (std::size_t j = 0; j < masks.size(); ++j) {
      std::set<std::uint64_t> si(masks[i].slices[0].indices.begin(),
                                 masks[i].slices[0].indices.end());
      std::size_t shared = 0;
      for (std::uint64_t idx : masks[j].slices[0].indices) shared += si.contains(idx);
      CHECK(matrix[i][j] ==
            doctest::Approx(static_cast<double>(shared) / 40.0).epsilon(1e-15));
      // equal budgets make the matrix symmetric
      CHECK(matrix[i][j] == doctest::Approx(matrix[j][i]).epsilon(1e-15));
    }
  }

  SUBCASE("permuting the vectors permutes rows and columns") {
    std::vector<BinaryMask> permuted{masks[2], masks[0], masks[3], masks[1]};
    const auto pm = overlap_matrix(permuted);
    const std::size_t map[] = {2, 0, 3, 1};
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(pm[i][j] == matrix[map[i]][map[j]]);
      }
    }
  }

  SUBCASE("two disjoint vectors have zero off-diagonals") {
    std::vector<BinaryMask> pair{mask_of({{"w", {0, 1}}}), mask_of({{"w", {5, 6}}})};
    const auto m = overlap_matrix(pair);
    CHECK(m[0][1] == 0.0);
    CHECK(m[1][0] == 0.0);
  }

  CHECK_THROWS_AS(overlap_matrix(std::vector<BinaryMask>{mask_of({{"w", {1}}})}), Error);
}

TEST_CASE("sparsity report conserves counts and tallies per tensor") {
  SparseVector vec;
  vec.kind = VectorKind::Language;
  SparseSlice s1;
  s1.name = "layer0.attn.wq";
  s1.cls = TensorClass::WeightMatrix;
  s1.shape = {8, 8};
  s1.indices = {0, 5, 9};
  s1.values = {0.5, -1.5, 0.25};
  SparseSlice s2;
  s2.name = "layer0.attn.bq";
  s2.cls = TensorClass::Bias;
  s2.shape = {8};
  s2.indices = {1};
  s2.values = {2.0};
  SparseSlice s3;
  s3.name = "embed.token";
  s3.cls = TensorClass::Embedding;
  s3.shape = {16, 8};
  s3.indices = {3, 100};
  s3.values = {0.0, -0.5};
  vec.slices = {s1, s2, s3};
  vec.budget = 6;

  const SparsityReport report = sparsity_report(vec);
  CHECK(report.total_support == 6);
  CHECK(report.budget == 6);
  REQUIRE(report.tensors.size() == 3);
  CHECK(report.tensors[0].support == 3);
  CHECK(report.tensors[0].max_abs == 1.5);
  CHECK(report.tensors[1].support == 1);
  CHECK(report.tensors[2].support == 2);

  std::size_t layer0 = 0;
  std::size_t embed = 0;
  for (const auto& [layer, count] : report.per_layer) {
    if (layer == "layer0") layer0 = count;
    if (layer == "embed") embed = count;
  }
  CHECK(layer0 == 4);
  CHECK(embed == 2);

  std::size_t weight = 0;
  std::size_t bias = 0;
  for (const auto& [cls, count] : report.per_class) {
    if (cls == "weight-matrix") weight = count;
    if (cls == "bias") bias = count;
  }
  CHECK(weight == 3);
  CHECK(bias == 1);

  const SparseVector empty;
  const SparsityReport zero = sparsity_report(empty);
  CHECK(zero.total_support == 0);

  // emission helpers produce headers and one row per pair
  const std::vector<std::string> names{"a", "b"};
  const std::vector<std::vector<double>> m{{1.0, 0.25}, {0.5, 1.0}};
  const std::string tsv = overlap_matrix_tsv(names, m, m);
  CHECK(tsv.find("directional") != std::string::npos);
  const std::string longf = overlap_long_format(names, m, m);
  CHECK(longf.find("vector_a\tvector_b") != std::string::npos);
  const std::string rep = sparsity_report_tsv(report);
  CHECK(rep.find("layer0.attn.wq") != std::string::npos);
}
