#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "deftx/data.hpp"
#include "deftx/error.hpp"
#include "deftx/synthdata.hpp"

using namespace deftx;

namespace {

ModelSpec model_for(const SynthSpec& spec) {
  ModelSpec m;
  m.vocab_size = spec.vocab_size;
  m.d_model = 16;
  m.n_layers = 1;
  m.n_heads = 2;
  m.d_ff = 32;
  m.max_seq_len = spec.max_sentence_len + 2;
  m.n_classes = spec.n_classes;
  return m;
}

}  // namespace

TEST_CASE("language chains are row-stochastic and epsilon-0 collapses to the base") {
  LanguageSpec a;
  a.language_id = 1;
  a.epsilon = 0.5;
  const MarkovChain chain = language_chain(a);
  for (const auto& row : chain.rows) {
    REQUIRE(!row.empty());
    double total = 0.0;
    for (const auto& [tok, prob] : row) {
      CHECK(prob > 0.0);
      total += prob;
    }
    CHECK(std::fabs(total - 1.0) <= 1e-12);
  }

  LanguageSpec b = a;
  b.language_id = 2;
  LanguageSpec a0 = a;
  a0.epsilon = 0.0;
  LanguageSpec b0 = b;
  b0.epsilon = 0.0;
  const MarkovChain ca = language_chain(a0);
  const MarkovChain cb = language_chain(b0);
  REQUIRE(ca.rows.size() == cb.rows.size());
  for (std::size_t r = 0; r < ca.rows.size(); ++r) {
    CHECK(ca.rows[r] == cb.rows[r]);
  }

  // with epsilon > 0 the two languages genuinely differ
  const MarkovChain da = language_chain(a);
  const MarkovChain db = language_chain(b);
  bool differs = false;
  for (std::size_t r = 0; r < da.rows.size(); ++r) differs |= da.rows[r] != db.rows[r];
  CHECK(differs);
}

TEST_CASE("gen_corpus is deterministic and language-blind at epsilon 0") {
  LanguageSpec lang;
  lang.language_id = 3;
  lang.epsilon = 0.4;
  const DataSet c1 = gen_corpus(lang, 50, 7);
  const DataSet c2 = gen_corpus(lang, 50, 7);
  REQUIRE(c1.size() == c2.size());
  for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1.sentences[i] == c2.sentences[i]);

  LanguageSpec l1;
  l1.language_id = 1;
  l1.epsilon = 0.0;
  LanguageSpec l2;
  l2.language_id = 2;
  l2.epsilon = 0.0;
  const DataSet e1 = gen_corpus(l1, 50, 7);
  const DataSet e2 = gen_corpus(l2, 50, 7);
  for (std::size_t i = 0; i < e1.size(); ++i) CHECK(e1.sentences[i] == e2.sentences[i]);

  for (const auto& sentence : c1.sentences) {
    CHECK(sentence.size() >= lang.shared.min_sentence_len);
    CHECK(sentence.size() <= lang.shared.max_sentence_len);
    for (std::int32_t tok : sentence) {
      CHECK(tok >= tokens::kFirstContent);
      CHECK(tok < static_cast<std::int32_t>(lang.shared.vocab_size));
    }
  }
}

TEST_CASE("empirical bigram frequencies converge to the transition table") {
  LanguageSpec lang;
  lang.language_id = 1;
  lang.epsilon = 0.5;
  const MarkovChain chain = language_chain(lang);
  const DataSet corpus = gen_corpus(lang, 3200, 99);  // ~50k tokens

  std::size_t total_tokens = 0;
  for (const auto& s : corpus.sentences) total_tokens += s.size();
  CHECK(total_tokens >= 50000);

  const std::size_t content = chain.content_count;
  std::vector<double> counts(content * content, 0.0);
  std::vector<double> row_total(content, 0.0);
  for (const auto& s : corpus.sentences) {
    for (std::size_t i = 1; i < s.size(); ++i) {
      const std::size_t prev = static_cast<std::size_t>(s[i - 1] - tokens::kFirstContent);
      const std::size_t next = static_cast<std::size_t>(s[i] - tokens::kFirstContent);
      counts[prev * content + next] += 1.0;
      row_total[prev] += 1.0;
    }
  }
  double grand = 0.0;
  for (double v : row_total) grand += v;
  double tv = 0.0;
  for (std::size_t prev = 0; prev < content; ++prev) {
    if (row_total[prev] == 0.0) continue;
    double row_tv = 0.0;
    for (std::size_t next = 0; next < content; ++next) {
      const double empirical = counts[prev * content + next] / row_total[prev];
      const double model = chain.probability(static_cast<std::int32_t>(prev),
                                             static_cast<std::int32_t>(next));
      row_tv += std::fabs(empirical - model);
    }
    tv += (row_total[prev] / grand) * 0.5 * row_tv;
  }
  MESSAGE("visit-weighted bigram TV at ", total_tokens, " tokens: ", tv);
  CHECK(tv <= 0.05);
}

TEST_CASE("task data relabels exactly, stays balanced, and always carries markers") {
  LanguageSpec lang;
  lang.language_id = 2;
  lang.epsilon = 0.6;
  TaskSpec task;
  const std::size_t n = 900;
  const DataSet data = gen_task_data(lang, task, n, 31);
  REQUIRE(data.size() == n);
  REQUIRE(data.labels.size() == n);

  std::vector<std::size_t> histogram(lang.shared.n_classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(label_of(lang.shared, data.sentences[i]) == data.labels[i]);
    ++histogram[static_cast<std::size_t>(data.labels[i])];
    bool has_marker = false;
    for (std::int32_t tok : data.sentences[i]) {
      has_marker |= lang.shared.marker_class(tok) >= 0;
    }
    CHECK(has_marker);
  }
  const double expected = static_cast<double>(n) / static_cast<double>(histogram.size());
  for (std::size_t count : histogram) {
    CHECK(std::fabs(static_cast<double>(count) - expected) <= 0.05 * expected);
  }

  // determinism and epsilon-0 language independence
  const DataSet again = gen_task_data(lang, task, n, 31);
  for (std::size_t i = 0; i < n; ++i) CHECK(again.sentences[i] == data.sentences[i]);

  LanguageSpec l1 = lang;
  l1.language_id = 1;
  l1.epsilon = 0.0;
  LanguageSpec l2 = lang;
  l2.language_id = 9;
  l2.epsilon = 0.0;
  const DataSet t1 = gen_task_data(l1, task, 60, 5);
  const DataSet t2 = gen_task_data(l2, task, 60, 5);
  for (std::size_t i = 0; i < t1.size(); ++i) CHECK(t1.sentences[i] == t2.sentences[i]);
}

TEST_CASE("marker surface statistics differ across divergent languages") {
  TaskSpec task;
  LanguageSpec a;
  a.language_id = 1;
  a.epsilon = 0.8;
  LanguageSpec b = a;
  b.language_id = 2;
  const DataSet da = gen_task_data(a, task, 600, 11);
  const DataSet db = gen_task_data(b, task, 600, 11);

  auto marker_histogram = [&](const DataSet& d) {
    std::vector<double> h(a.shared.n_classes * a.shared.markers_per_class, 0.0);
    double total = 0.0;
    for (const auto& s : d.sentences) {
      for (std::int32_t tok : s) {
        if (a.shared.marker_class(tok) < 0) continue;
        h[static_cast<std::size_t>(tok - tokens::kFirstContent)] += 1.0;
        total += 1.0;
      }
    }
    for (double& v : h) v /= total;
    return h;
  };
  const auto ha = marker_histogram(da);
  const auto hb = marker_histogram(db);
  double tv = 0.0;
  for (std::size_t i = 0; i < ha.size(); ++i) tv += 0.5 * std::fabs(ha[i] - hb[i]);
  MESSAGE("marker emission TV between languages: ", tv);
  CHECK(tv > 0.1);
}

TEST_CASE("mlm_mask follows the corruption contract") {
  LanguageSpec lang;
  lang.language_id = 1;
  lang.epsilon = 0.5;
  const ModelSpec spec = model_for(lang.shared);
  const DataSet corpus = gen_corpus(lang, 256, 3);
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});

  SUBCASE("probability zero leaves every target ignored") {
    Batch batch = make_batch(corpus, idx, spec, Objective::Mlm);
    mlm_mask(batch, spec, 0.0, 5);
    for (std::int32_t t : batch.mlm_targets) CHECK(t == Batch::kIgnoreLabel);
  }

  SUBCASE("probability one with forced mask token replaces every eligible position") {
    Batch batch = make_batch(corpus, idx, spec, Objective::Mlm);
    const Batch original = batch;
    mlm_mask(batch, spec, 1.0, 5, /*mask_token_prob=*/1.0, /*random_token_prob=*/0.0);
    for (std::size_t pos = 0; pos < batch.token_ids.size(); ++pos) {
      const bool eligible = original.attention[pos] == 1 &&
                            original.token_ids[pos] >= tokens::kFirstContent;
      if (eligible) {
        CHECK(batch.mlm_targets[pos] == original.token_ids[pos]);
        CHECK(batch.token_ids[pos] == tokens::kMask);
      } else {
        CHECK(batch.mlm_targets[pos] == Batch::kIgnoreLabel);
        CHECK(batch.token_ids[pos] == original.token_ids[pos]);
      }
    }
  }

  SUBCASE("selected fraction concentrates near the configured probability") {
    std::size_t selected = 0;
    std::size_t eligible = 0;
    Batch batch = make_batch(corpus, idx, spec, Objective::Mlm);
    const Batch original = batch;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      Batch copy = original;
      mlm_mask(copy, spec, 0.15, seed);
      for (std::size_t pos = 0; pos < copy.token_ids.size(); ++pos) {
        const bool ok = original.attention[pos] == 1 &&
                        original.token_ids[pos] >= tokens::kFirstContent;
        eligible += ok;
        selected += copy.mlm_targets[pos] != Batch::kIgnoreLabel;
      }
    }
    REQUIRE(eligible > 100000);
    const double fraction = static_cast<double>(selected) / static_cast<double>(eligible);
    MESSAGE("selection fraction over ", eligible, " positions: ", fraction);
    CHECK(std::fabs(fraction - 0.15) <= 0.01);
  }

  SUBCASE("deterministic given the seed, and at least one position when p > 0") {
    Batch b1 = make_batch(corpus, idx, spec, Objective::Mlm);
    Batch b2 = b1;
    mlm_mask(b1, spec, 0.15, 77);
    mlm_mask(b2, spec, 0.15, 77);
    CHECK(b1.token_ids == b2.token_ids);
    CHECK(b1.mlm_targets == b2.mlm_targets);

    // tiny batch where random selection will often pick nothing
    Batch tiny = make_batch(corpus, std::vector<std::size_t>{0}, spec, Objective::Mlm);
    mlm_mask(tiny, spec, 0.01, 4);
    std::size_t any = 0;
    for (std::int32_t t : tiny.mlm_targets) any += t != Batch::kIgnoreLabel;
    CHECK(any >= 1);
  }
}

TEST_CASE("corpus flattening round-trips through the EOS separator") {
  LanguageSpec lang;
  lang.language_id = 4;
  lang.epsilon = 0.3;
  const DataSet corpus = gen_corpus(lang, 40, 13);
  const std::vector<std::int32_t> flat = flatten_corpus(corpus);
  const DataSet back = unflatten_corpus(flat);
  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back.sentences[i] == corpus.sentences[i]);
  }
}

TEST_CASE("synth spec validation") {
  SynthSpec bad;
  bad.vocab_size = 10;  // not enough room for markers + anchors + generics
  CHECK_THROWS_AS(bad.validate(), Error);

  LanguageSpec out_of_range;
  out_of_range.epsilon = 1.5;
  CHECK_THROWS_AS(language_chain(out_of_range), Error);
}
