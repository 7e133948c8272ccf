#pragma once

// Single-video self-supervised baselines: time-contrastive n-pairs (TCN) and
// shuffle-and-learn (SaL) order verification, plus weighted combination.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "tcc/autodiff.hpp"
#include "tcc/embedder.hpp"

namespace tcc {

struct BaselineConfig {
  std::size_t tcn_window = 5;
  std::size_t tcn_anchors = 4;
  double sal_fraction_shuffled = 0.75;
  std::vector<std::size_t> sal_head_sizes{128, 64};
  std::size_t sal_triplets = 8;
  double combine_weight = 0.5;

  void validate() const {
    if (tcn_window == 0) throw ContractError("tcn_window must be >= 1");
    if (tcn_anchors < 2) throw ContractError("n-pairs needs at least 2 anchors");
    if (!(sal_fraction_shuffled > 0.0 && sal_fraction_shuffled < 1.0)) {
      throw ContractError("sal_fraction_shuffled must lie in (0, 1)");
    }
    if (sal_triplets == 0) throw ContractError("sal_triplets must be >= 1");
    if (!(combine_weight >= 0.0)) throw ContractError("combine_weight must be >= 0");
  }
};

/// Mean over rows of -log softmax(logits)[r, r]: each anchor's own positive is
/// the target class and every other pair's positive is a negative.
inline ad::Var npairs_loss_from_logits(const ad::Var& logits) {
  const std::size_t n = logits.value().rows();
  if (logits.value().cols() != n) throw ShapeError("n-pairs logits must be square");
  std::vector<std::size_t> diag(n);
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  return ad::mean(ad::neg(ad::pick(ad::log_softmax_rows(logits), diag)));
}

/// Anchors and their positives for one n-pairs draw.
struct NPairsSample {
  std::vector<std::size_t> anchors;
  std::vector<std::size_t> positives;
};

/// `n` distinct anchors; each positive lies within +-window of its anchor and differs from it.
inline NPairsSample sample_npairs(std::size_t length, std::size_t n, std::size_t window, std::mt19937_64& rng) {
  if (n < 2) throw ContractError("n-pairs needs at least 2 anchors");
  if (length < 2 * n) throw ContractError("sequence too short for " + std::to_string(n) + " n-pairs anchors");
  std::vector<std::size_t> pool(length);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  NPairsSample s;
  for (std::size_t k = 0; k < n; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, length - 1);
    std::swap(pool[k], pool[pick(rng)]);
    const std::size_t a = pool[k];
    const std::size_t lo = a >= window ? a - window : 0;
    const std::size_t hi = std::min(a + window, length - 1);
    std::uniform_int_distribution<std::size_t> off(lo, hi - 1);
    std::size_t p = off(rng);
    if (p >= a) ++p;  // skip the anchor itself
    s.anchors.push_back(a);
    s.positives.push_back(p);
  }
  return s;
}

/// Time-contrastive n-pairs loss on one sequence; similarity is negative squared distance.
inline ad::Var tcn_npairs_loss(const BoundEmbedder& enc, const FeatureSequence& seq, std::size_t n_anchors,
                               std::size_t window, std::mt19937_64& rng) {
  if (window == 0) throw ContractError("tcn window must be >= 1");
  const NPairsSample s = sample_npairs(seq.length(), n_anchors, window, rng);
  const ad::Var a = embed_frames(enc, seq, s.anchors);
  const ad::Var p = embed_frames(enc, seq, s.positives);
  return npairs_loss_from_logits(ad::neg(ad::pairwise_sq_dist(a, p)));
}

// ---------------------------------------------------------------------------
// Shuffle and learn

/// Binary order classifier over three concatenated frame embeddings.
inline Mlp init_sal_head(std::size_t embedding_dim, const std::vector<std::size_t>& hidden, std::uint64_t seed) {
  std::vector<std::size_t> sizes{3 * embedding_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  std::mt19937_64 rng(seed);
  return init_mlp(sizes, rng);
}

struct SalTriplet {
  std::array<std::size_t, 3> frames;  ///< presentation order
  bool shuffled = false;
};

/// Draws a < b < c; with probability `fraction_shuffled` presents a uniformly
/// chosen non-identity permutation of them.
inline SalTriplet sample_sal_triplet(std::size_t length, double fraction_shuffled, std::mt19937_64& rng) {
  if (length < 3) throw ContractError("shuffle-and-learn needs at least 3 frames");
  std::array<std::size_t, 3> t{};
  {
    std::vector<std::size_t> pool(length);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t k = 0; k < 3; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, length - 1);
      std::swap(pool[k], pool[pick(rng)]);
      t[k] = pool[k];
    }
    std::sort(t.begin(), t.end());
  }
  std::bernoulli_distribution coin(fraction_shuffled);
  SalTriplet out{t, coin(rng)};
  if (out.shuffled) {
    static constexpr std::array<std::array<int, 3>, 5> perms{{{0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    std::uniform_int_distribution<int> which(0, 4);
    const auto& p = perms[which(rng)];
    out.frames = {t[p[0]], t[p[1]], t[p[2]]};
  }
  return out;
}

/// Mean binary cross-entropy of the order classifier on `triplets` random triplets.
/// Label 1 means shuffled.
inline ad::Var sal_loss(const BoundEmbedder& enc, const BoundMlp& head, const FeatureSequence& seq,
                        std::size_t triplets, double fraction_shuffled, std::mt19937_64& rng) {
  if (seq.length() < 3) throw ContractError("shuffle-and-learn needs at least 3 frames");
  std::array<std::vector<std::size_t>, 3> slots;
  Tensor labels(Shape{triplets, 1});
  for (std::size_t t = 0; t < triplets; ++t) {
    const SalTriplet s = sample_sal_triplet(seq.length(), fraction_shuffled, rng);
    for (std::size_t k = 0; k < 3; ++k) slots[k].push_back(s.frames[k]);
    labels[t] = s.shuffled ? 1.0 : 0.0;
  }
  std::vector<std::size_t> all;
  for (const auto& s : slots) all.insert(all.end(), s.begin(), s.end());
  const ad::Var emb = embed_frames(enc, seq, all);
  std::vector<ad::Var> parts;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<std::size_t> rows(triplets);
    std::iota(rows.begin(), rows.end(), k * triplets);
    parts.push_back(ad::take_rows(emb, rows));
  }
  const ad::Var logit = forward(head, ad::concat_cols(parts));
  // BCE with logits: softplus(z) - y z
  ad::Tape& tape = *emb.tape();
  const ad::Var y = tape.constant(labels);
  return ad::mean(ad::sub(ad::softplus(logit), ad::mul(y, logit)));
}

/// loss_a + weight * loss_b.
inline ad::Var combined_loss(const ad::Var& loss_a, const ad::Var& loss_b, double weight) {
  if (!(weight >= 0.0)) throw ContractError("combination weight must be >= 0");
  return ad::add(loss_a, ad::scale(loss_b, weight));
}

}  // namespace tcc
