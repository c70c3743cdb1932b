#pragma once

#include <set>
#include <string>
#include <vector>

#include "creward/reward.hpp"

namespace creward::testing {

// Procedural images judged by a hidden linear scorer: a stand-in for the
// human-labeled training set.
struct SyntheticPreferences {
  EmbeddingTable embeddings;
  std::vector<PairRecord> pairs;
  std::vector<PreferenceLabel> labels;
  std::vector<std::string> pair_ids;
};

inline SyntheticPreferences make_synthetic(const EmbeddingBackbone& backbone, int n_images, std::size_t n_pairs,
                                           double tie_fraction, std::uint64_t seed) {
  SyntheticPreferences s;
  std::vector<std::string> ids;
  for (int i = 0; i < n_images; ++i) {
    const auto id = "img" + std::to_string(i);
    s.embeddings[id] = backbone.embed(synthesize_image(seed * 100000 + static_cast<std::uint64_t>(i), 32, i % 5 == 0));
    ids.push_back(id);
  }
  Rng rng(seed);
  std::set<std::pair<std::uint64_t, std::uint64_t>> seen;
  while (s.pairs.size() < n_pairs) {
    const auto a = rng.uniform_index(ids.size());
    const auto b = rng.uniform_index(ids.size());
    if (a == b || !seen.insert({std::min(a, b), std::max(a, b)}).second) continue;
    s.pairs.push_back({"p" + std::to_string(s.pairs.size()), ids[a], ids[b]});
    s.pair_ids.push_back(s.pairs.back().pair_id);
  }
  const auto scorer = HiddenScorer::random(backbone.dim(), seed + 1);
  const auto margins = scorer.tie_margins(s.pairs, s.embeddings, tie_fraction);
  for (const auto& p : s.pairs) {
    PreferenceLabel l;
    l.pair_id = p.pair_id;
    l.annotator_id = "hidden";
    l.prompt_version = "synthetic";
    l.verdicts = scorer.judge(s.embeddings.at(p.image_a), s.embeddings.at(p.image_b), margins);
    s.labels.push_back(l);
  }
  return s;
}

}  // namespace creward::testing
