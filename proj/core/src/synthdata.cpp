#include "deftx/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "deftx/error.hpp"
#include "deftx/rng.hpp"

namespace deftx {

namespace {

enum class Role { Marker, Anchor, Generic };

struct VocabLayout {
  std::size_t n_classes;
  std::size_t markers_per_class;
  std::size_t anchors_per_class;
  std::size_t content_count;
  std::size_t preference_groups;

  Role role(std::int32_t content_index, std::size_t& cls_out) const {
    const std::size_t idx = static_cast<std::size_t>(content_index);
    const std::size_t marker_total = n_classes * markers_per_class;
    const std::size_t anchor_total = n_classes * anchors_per_class;
    if (idx < marker_total) {
      cls_out = idx / markers_per_class;
      return Role::Marker;
    }
    if (idx < marker_total + anchor_total) {
      cls_out = (idx - marker_total) / anchors_per_class;
      return Role::Anchor;
    }
    cls_out = 0;
    return Role::Generic;
  }

  std::vector<std::int32_t> markers_of(std::size_t cls) const {
    std::vector<std::int32_t> out;
    for (std::size_t i = 0; i < markers_per_class; ++i) {
      out.push_back(static_cast<std::int32_t>(cls * markers_per_class + i));
    }
    return out;
  }

  // markers of `cls` whose in-class index falls in the preference group
  std::vector<std::int32_t> preferred_markers_of(std::size_t cls, std::size_t group,
                                                 std::size_t groups) const {
    std::vector<std::int32_t> out;
    for (std::size_t i = 0; i < markers_per_class; ++i) {
      if (groups > 0 && i % groups != group) continue;
      out.push_back(static_cast<std::int32_t>(cls * markers_per_class + i));
    }
    if (out.empty()) return markers_of(cls);
    return out;
  }

  std::vector<std::int32_t> anchors_of(std::size_t cls) const {
    std::vector<std::int32_t> out;
    const std::size_t base = n_classes * markers_per_class + cls * anchors_per_class;
    for (std::size_t i = 0; i < anchors_per_class; ++i) {
      out.push_back(static_cast<std::int32_t>(base + i));
    }
    return out;
  }

  std::vector<std::int32_t> generics() const {
    std::vector<std::int32_t> out;
    const std::size_t base = n_classes * (markers_per_class + anchors_per_class);
    for (std::size_t i = base; i < content_count; ++i) {
      out.push_back(static_cast<std::int32_t>(i));
    }
    return out;
  }
};

VocabLayout layout_of(const SynthSpec& spec) {
  return {spec.n_classes, spec.markers_per_class, spec.anchors_per_class,
          spec.content_count(), spec.preference_groups};
}

// Draws up to `count` distinct tokens from `pool` into `out` (skips
// duplicates already present).
void pick_distinct(const std::vector<std::int32_t>& pool, std::size_t count, Rng& rng,
                   std::vector<std::int32_t>& out) {
  if (pool.empty()) return;
  std::size_t attempts = 0;
  const std::size_t max_attempts = 64 * (count + 1);
  while (count > 0 && attempts < max_attempts) {
    const std::int32_t candidate = pool[rng.next_below(pool.size())];
    ++attempts;
    if (std::find(out.begin(), out.end(), candidate) != out.end()) continue;
    out.push_back(candidate);
    --count;
  }
}

// One sub-chain: every row lists `successors` transitions respecting the
// class topology (markers lead to their class anchors and back), with
// geometric weights so most mass sits on the first picks. A language's
// unique chain passes its preference group so anchors link to that
// language's slice of each marker set; the base chain passes none.
MarkovChain build_chain(const VocabLayout& layout, std::uint64_t seed,
                        std::size_t successors,
                        std::optional<std::size_t> preference_group) {
  MarkovChain chain;
  chain.content_count = layout.content_count;
  chain.rows.resize(layout.content_count);
  const std::vector<std::int32_t> generics = layout.generics();
  const Rng base(seed);
  for (std::size_t prev = 0; prev < layout.content_count; ++prev) {
    Rng rng = base.fork("row", prev);
    std::size_t cls = 0;
    const Role role = layout.role(static_cast<std::int32_t>(prev), cls);
    std::vector<std::int32_t> picks;
    const std::size_t half = successors - successors / 2;
    switch (role) {
      case Role::Marker:
        pick_distinct(layout.anchors_of(cls), half, rng, picks);
        pick_distinct(generics, successors - picks.size(), rng, picks);
        break;
      case Role::Anchor: {
        const std::vector<std::int32_t> pool =
            preference_group.has_value()
                ? layout.preferred_markers_of(cls, *preference_group,
                                              layout.preference_groups)
                : layout.markers_of(cls);
        pick_distinct(pool, half, rng, picks);
        pick_distinct(generics, successors - picks.size(), rng, picks);
        break;
      }
      case Role::Generic: {
        // mostly generic flow with an occasional hop into class regions
        pick_distinct(generics, successors - successors / 3, rng, picks);
        std::vector<std::int32_t> any(layout.content_count);
        std::iota(any.begin(), any.end(), 0);
        pick_distinct(any, successors - picks.size(), rng, picks);
        break;
      }
    }
    // geometric weights 0.55^i, normalized
    auto& row = chain.rows[prev];
    double total = 0.0;
    double w = 1.0;
    for (std::int32_t tok : picks) {
      row.emplace_back(tok, w);
      total += w;
      w *= 0.55;
    }
    for (auto& entry : row) entry.second /= total;
    std::sort(row.begin(), row.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  return chain;
}

std::int32_t sample_row(const std::vector<std::pair<std::int32_t, double>>& row,
                        Rng& rng) {
  const double u = rng.next_double();
  double cum = 0.0;
  for (const auto& [tok, prob] : row) {
    cum += prob;
    if (u < cum) return tok;
  }
  return row.back().first;
}

std::int32_t to_token_id(std::int32_t content_index) {
  return content_index + tokens::kFirstContent;
}

std::vector<std::int32_t> chain_sentence(const MarkovChain& chain, std::size_t len,
                                         Rng& rng) {
  std::vector<std::int32_t> sentence;
  sentence.reserve(len);
  std::int32_t current = static_cast<std::int32_t>(rng.next_below(chain.content_count));
  sentence.push_back(to_token_id(current));
  for (std::size_t i = 1; i < len; ++i) {
    current = sample_row(chain.rows[static_cast<std::size_t>(current)], rng);
    sentence.push_back(to_token_id(current));
  }
  return sentence;
}

}  // namespace

void SynthSpec::validate() const {
  const std::size_t reserved = static_cast<std::size_t>(tokens::kFirstContent);
  if (vocab_size <= reserved) raise(ErrorKind::Config, "vocab too small");
  const std::size_t structured = n_classes * (markers_per_class + anchors_per_class);
  if (content_count() < structured + 8) {
    raise(ErrorKind::Config, "vocab leaves too few generic tokens");
  }
  if (n_classes < 2) raise(ErrorKind::Config, "need at least two classes");
  if (markers_per_class == 0 || anchors_per_class == 0) {
    raise(ErrorKind::Config, "marker/anchor sets must be non-empty");
  }
  if (successors < 2 || successors > content_count()) {
    raise(ErrorKind::Config, "successors out of range");
  }
  if (min_sentence_len < 4 || min_sentence_len > max_sentence_len) {
    raise(ErrorKind::Config, "bad sentence length bounds");
  }
}

int SynthSpec::marker_class(std::int32_t token) const {
  const std::int32_t content = token - tokens::kFirstContent;
  if (content < 0) return -1;
  const std::size_t idx = static_cast<std::size_t>(content);
  if (idx >= n_classes * markers_per_class) return -1;
  return static_cast<int>(idx / markers_per_class);
}

std::pair<std::int32_t, std::int32_t> SynthSpec::marker_range(std::size_t cls) const {
  const std::int32_t lo =
      static_cast<std::int32_t>(cls * markers_per_class) + tokens::kFirstContent;
  return {lo, lo + static_cast<std::int32_t>(markers_per_class)};
}

double MarkovChain::probability(std::int32_t prev, std::int32_t next) const {
  for (const auto& [tok, prob] : rows[static_cast<std::size_t>(prev)]) {
    if (tok == next) return prob;
  }
  return 0.0;
}

MarkovChain language_chain(const LanguageSpec& lang) {
  lang.shared.validate();
  if (lang.epsilon < 0.0 || lang.epsilon > 1.0) {
    raise(ErrorKind::Config, "epsilon must lie in [0, 1]");
  }
  const VocabLayout layout = layout_of(lang.shared);
  const MarkovChain base =
      build_chain(layout, lang.shared.chain_seed, lang.shared.successors, std::nullopt);
  if (lang.epsilon == 0.0) return base;
  const std::uint64_t unique_seed =
      Rng(lang.shared.chain_seed)
          .fork("language", static_cast<std::uint64_t>(lang.language_id) + 1)
          .seed();
  const std::size_t group =
      lang.shared.preference_groups > 0
          ? static_cast<std::size_t>(lang.language_id) % lang.shared.preference_groups
          : 0;
  const MarkovChain unique =
      build_chain(layout, unique_seed, lang.shared.successors, group);

  MarkovChain mixed;
  mixed.content_count = base.content_count;
  mixed.rows.resize(base.rows.size());
  for (std::size_t r = 0; r < base.rows.size(); ++r) {
    std::vector<std::pair<std::int32_t, double>> merged;
    for (const auto& [tok, prob] : base.rows[r]) {
      merged.emplace_back(tok, (1.0 - lang.epsilon) * prob);
    }
    for (const auto& [tok, prob] : unique.rows[r]) {
      bool found = false;
      for (auto& entry : merged) {
        if (entry.first == tok) {
          entry.second += lang.epsilon * prob;
          found = true;
          break;
        }
      }
      if (!found) merged.emplace_back(tok, lang.epsilon * prob);
    }
    std::sort(merged.begin(), merged.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    mixed.rows[r] = std::move(merged);
  }
  return mixed;
}

std::vector<double> stationary_distribution(const MarkovChain& chain) {
  const std::size_t n = chain.content_count;
  std::vector<double> pi(n, 1.0 / static_cast<double>(n));
  std::vector<double> next(n, 0.0);
  for (int iter = 0; iter < 200; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t prev = 0; prev < n; ++prev) {
      const double mass = pi[prev];
      if (mass == 0.0) continue;
      for (const auto& [tok, prob] : chain.rows[prev]) {
        next[static_cast<std::size_t>(tok)] += mass * prob;
      }
    }
    double total = 0.0;
    for (double v : next) total += v;
    for (double& v : next) v /= total;
    pi.swap(next);
  }
  return pi;
}

DataSet gen_corpus(const LanguageSpec& lang, std::size_t n_sentences,
                   std::uint64_t seed) {
  const MarkovChain chain = language_chain(lang);
  Rng rng = Rng(seed).fork("corpus");
  DataSet out;
  out.sentences.reserve(n_sentences);
  const std::size_t span =
      lang.shared.max_sentence_len - lang.shared.min_sentence_len + 1;
  for (std::size_t i = 0; i < n_sentences; ++i) {
    const std::size_t len = lang.shared.min_sentence_len + rng.next_below(span);
    out.sentences.push_back(chain_sentence(chain, len, rng));
  }
  return out;
}

DataSet gen_task_data(const LanguageSpec& lang, const TaskSpec& task,
                      std::size_t n_examples, std::uint64_t seed) {
  const SynthSpec& spec = lang.shared;
  const MarkovChain chain = language_chain(lang);
  const std::vector<double> stationary = stationary_distribution(chain);
  const VocabLayout layout = layout_of(spec);

  // Per-class marker emission: the language's stationary weights over the
  // class marker set, sharpened. This is what makes surface forms differ
  // across languages while the rule stays the same.
  std::vector<std::vector<double>> emission(spec.n_classes);
  for (std::size_t cls = 0; cls < spec.n_classes; ++cls) {
    const std::vector<std::int32_t> markers = layout.markers_of(cls);
    double total = 0.0;
    for (std::int32_t m : markers) {
      const double w =
          std::pow(stationary[static_cast<std::size_t>(m)] + 1e-9,
                   task.emission_sharpness);
      emission[cls].push_back(w);
      total += w;
    }
    for (double& w : emission[cls]) w /= total;
  }

  auto sample_marker = [&](std::size_t cls, Rng& rng) {
    const double u = rng.next_double();
    double cum = 0.0;
    for (std::size_t i = 0; i < emission[cls].size(); ++i) {
      cum += emission[cls][i];
      if (u < cum) return to_token_id(layout.markers_of(cls)[i]);
    }
    return to_token_id(layout.markers_of(cls).back());
  };

  Rng rng = Rng(seed).fork("task");
  DataSet out;
  out.sentences.reserve(n_examples);
  out.labels.reserve(n_examples);
  const std::size_t span = spec.max_sentence_len - spec.min_sentence_len + 1;
  for (std::size_t i = 0; i < n_examples; ++i) {
    const std::size_t cls = i % spec.n_classes;  // balanced by construction
    const std::size_t len = spec.min_sentence_len + rng.next_below(span);
    std::vector<std::int32_t> sentence = chain_sentence(chain, len, rng);

    std::size_t distractor = rng.next_below(spec.n_classes - 1);
    if (distractor >= cls) ++distractor;
    for (std::size_t d = 0; d < task.distractors; ++d) {
      sentence[rng.next_below(len)] = sample_marker(distractor, rng);
    }

    auto counts = [&]() {
      std::vector<std::size_t> c(spec.n_classes, 0);
      for (std::int32_t tok : sentence) {
        const int mc = spec.marker_class(tok);
        if (mc >= 0) ++c[static_cast<std::size_t>(mc)];
      }
      return c;
    };
    std::vector<std::size_t> tally = counts();
    auto max_other = [&]() {
      std::size_t m = 0;
      for (std::size_t c = 0; c < spec.n_classes; ++c) {
        if (c != cls) m = std::max(m, tally[c]);
      }
      return m;
    };
    // Plant true-class markers until they strictly dominate. Each plant
    // lands on a non-class position (scan fallback keeps it total), so
    // the loop always terminates with a strict winner.
    while (tally[cls] < task.plant_min || tally[cls] <= max_other()) {
      std::size_t pos = len;
      for (int tries = 0; tries < 8; ++tries) {
        const std::size_t candidate = rng.next_below(len);
        if (spec.marker_class(sentence[candidate]) != static_cast<int>(cls)) {
          pos = candidate;
          break;
        }
      }
      if (pos == len) {
        for (std::size_t p = 0; p < len; ++p) {
          if (spec.marker_class(sentence[p]) != static_cast<int>(cls)) {
            pos = p;
            break;
          }
        }
      }
      if (pos == len) break;  // everything is already a class marker
      sentence[pos] = sample_marker(cls, rng);
      tally = counts();
    }
    out.sentences.push_back(std::move(sentence));
    out.labels.push_back(static_cast<std::int32_t>(cls));
  }
  return out;
}

std::int32_t label_of(const SynthSpec& spec, const std::vector<std::int32_t>& sentence) {
  std::vector<std::size_t> tally(spec.n_classes, 0);
  for (std::int32_t tok : sentence) {
    const int mc = spec.marker_class(tok);
    if (mc >= 0) ++tally[static_cast<std::size_t>(mc)];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < spec.n_classes; ++c) {
    if (tally[c] > tally[best]) best = c;
  }
  return static_cast<std::int32_t>(best);
}

void mlm_mask(Batch& batch, const ModelSpec& spec, double mask_prob,
              std::uint64_t seed, double mask_token_prob,
              double random_token_prob) {
  if (mask_prob < 0.0 || mask_prob > 1.0) {
    raise(ErrorKind::Config, "mask_prob must lie in [0, 1]");
  }
  const std::size_t n_pos = batch.batch_size * batch.seq_len;
  batch.mlm_targets.assign(n_pos, Batch::kIgnoreLabel);
  if (mask_prob == 0.0) return;

  const std::int32_t content_count =
      static_cast<std::int32_t>(spec.vocab_size) - tokens::kFirstContent;
  Rng rng = Rng(seed).fork("mlm");
  std::vector<std::size_t> eligible;
  std::size_t n_selected = 0;
  for (std::size_t pos = 0; pos < n_pos; ++pos) {
    if (batch.attention[pos] == 0) continue;
    if (batch.token_ids[pos] < tokens::kFirstContent) continue;
    eligible.push_back(pos);
    if (rng.next_double() >= mask_prob) continue;
    ++n_selected;
    batch.mlm_targets[pos] = batch.token_ids[pos];
    const double roll = rng.next_double();
    if (roll < mask_token_prob) {
      batch.token_ids[pos] = tokens::kMask;
    } else if (roll < mask_token_prob + random_token_prob) {
      batch.token_ids[pos] = tokens::kFirstContent +
                             static_cast<std::int32_t>(rng.next_below(
                                 static_cast<std::uint64_t>(content_count)));
    }
  }
  if (n_selected == 0 && !eligible.empty()) {
    const std::size_t pos = eligible[rng.next_below(eligible.size())];
    batch.mlm_targets[pos] = batch.token_ids[pos];
    batch.token_ids[pos] = tokens::kMask;
  }
}

std::vector<std::int32_t> flatten_corpus(const DataSet& corpus) {
  std::vector<std::int32_t> flat;
  for (const auto& sentence : corpus.sentences) {
    flat.insert(flat.end(), sentence.begin(), sentence.end());
    flat.push_back(tokens::kEos);
  }
  return flat;
}

DataSet unflatten_corpus(const std::vector<std::int32_t>& flat) {
  DataSet out;
  std::vector<std::int32_t> current;
  for (std::int32_t tok : flat) {
    if (tok == tokens::kEos) {
      if (!current.empty()) out.sentences.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(tok);
    }
  }
  if (!current.empty()) out.sentences.push_back(std::move(current));
  return out;
}

}  // namespace deftx
