#pragma once

// Temporal cycle-consistency losses.
//
// For a query frame u_i of U, the soft nearest neighbour in V is
//   v~ = sum_j alpha_j v_j,   alpha = softmax_j(-||u_i - v_j||^2),
// and cycling back to U gives logits x_k = -||v~ - u_k||^2. Classification
// applies cross-entropy on x with target i; regression fits a Gaussian to
// beta = softmax(x) and penalises (i - mu)^2 / sigma^2 + lambda * log(sigma).

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tcc/autodiff.hpp"
#include "tcc/embedder.hpp"

namespace tcc {

enum class TccVariant { classification, regression, regression_mse };

inline const char* to_string(TccVariant v) {
  switch (v) {
    case TccVariant::classification: return "classification";
    case TccVariant::regression: return "regression";
    case TccVariant::regression_mse: return "regression_mse";
  }
  return "?";
}

struct TccConfig {
  TccVariant variant = TccVariant::regression;
  double lambda = 0.001;          ///< weight of the log-sigma term
  double variance_floor = 1e-6;   ///< lower clamp on sigma^2
  std::size_t frames_per_seq = 20;
  double temperature = 1.0;       ///< logits are -d^2 / temperature

  void validate() const {
    if (!(lambda >= 0.0)) throw ContractError("lambda must be >= 0");
    if (!(variance_floor > 0.0)) throw ContractError("variance_floor must be > 0");
    if (frames_per_seq == 0) throw ContractError("frames_per_seq must be >= 1");
    if (!(temperature > 0.0)) throw ContractError("temperature must be > 0");
  }
};

struct SoftNeighbor {
  ad::Var v_tilde;  ///< [d]
  ad::Var alpha;    ///< [M]
};

/// Soft nearest neighbour of the vector `u` (length d) among the rows of `v` (M x d).
inline SoftNeighbor soft_nearest_neighbor(const ad::Var& u, const ad::Var& v, double temperature = 1.0) {
  if (u.value().rank() != 1) throw ShapeError("soft_nearest_neighbor query must be a vector");
  if (v.value().rank() != 2 || v.value().rows() == 0) throw ShapeError("soft_nearest_neighbor needs a non-empty M x d set");
  const ad::Var dist = ad::pairwise_sq_dist(ad::reshape(u, Shape{1, u.value().size()}), v);
  const ad::Var alpha = ad::reshape(ad::softmax_rows(ad::scale(dist, -1.0 / temperature)), Shape{v.value().rows()});
  return SoftNeighbor{ad::weighted_sum(alpha, v), alpha};
}

/// Cycle-back logits for the query rows of U: row r holds -||v~_r - u_k||^2 / T over k.
inline ad::Var cycle_back_logits(const ad::Var& u, const ad::Var& v, const std::vector<std::size_t>& query_rows,
                                 double temperature = 1.0) {
  if (u.value().rank() != 2 || v.value().rank() != 2) throw ShapeError("cycle-back inputs must be matrices");
  if (v.value().rows() == 0) throw ShapeError("cycle-back target sequence is empty");
  for (std::size_t i : query_rows) {
    if (i >= u.value().rows()) {
      throw ContractError("frame index " + std::to_string(i) + " out of range for " + std::to_string(u.value().rows()) +
                          " frames");
    }
  }
  const ad::Var queries = ad::take_rows(u, query_rows);
  const ad::Var alpha = ad::softmax_rows(ad::scale(ad::pairwise_sq_dist(queries, v), -1.0 / temperature));
  const ad::Var v_tilde = ad::matmul(alpha, v);
  return ad::scale(ad::pairwise_sq_dist(v_tilde, u), -1.0 / temperature);
}

/// Per-query cross-entropy -log softmax(x)_i.
inline ad::Var classification_terms(const ad::Var& u, const ad::Var& v, const std::vector<std::size_t>& query_rows,
                                    double temperature = 1.0) {
  const ad::Var logp = ad::log_softmax_rows(cycle_back_logits(u, v, query_rows, temperature));
  return ad::neg(ad::pick(logp, query_rows));
}

struct RegressionTerms {
  ad::Var loss;      ///< per query
  ad::Var mu;        ///< per query
  ad::Var variance;  ///< per query, after the floor
};

namespace detail {

/// Column vector of positions 0..n-1 (or their squares).
inline Tensor positions(std::size_t n, bool squared) {
  Tensor t(Shape{n, 1});
  for (std::size_t k = 0; k < n; ++k) t[k] = squared ? static_cast<double>(k * k) : static_cast<double>(k);
  return t;
}

inline Tensor targets_of(const std::vector<std::size_t>& rows) {
  Tensor t(Shape{rows.size()});
  for (std::size_t r = 0; r < rows.size(); ++r) t[r] = static_cast<double>(rows[r]);
  return t;
}

/// mu and sigma^2 (unfloored) of each row of beta over positions 0..N-1.
inline std::pair<ad::Var, ad::Var> beta_moments(const ad::Var& beta) {
  ad::Tape& tape = *beta.tape();
  const std::size_t n = beta.value().cols(), q = beta.value().rows();
  const ad::Var pos = tape.constant(positions(n, false));
  const ad::Var pos_sq = tape.constant(positions(n, true));
  const ad::Var mu = ad::reshape(ad::matmul(beta, pos), Shape{q});
  const ad::Var second = ad::reshape(ad::matmul(beta, pos_sq), Shape{q});
  return {mu, ad::sub(second, ad::square(mu))};
}

}  // namespace detail

/// Gaussian fit to each row of `beta` (a distribution over positions) scored
/// against the row's target position: (target - mu)^2 / sigma^2 + lambda log sigma.
inline RegressionTerms gaussian_position_loss(const ad::Var& beta, const std::vector<std::size_t>& targets,
                                              double lambda, double variance_floor) {
  if (beta.value().rank() != 2 || beta.value().rows() != targets.size()) {
    throw ShapeError("one distribution row per target required");
  }
  auto [mu, raw_var] = detail::beta_moments(beta);
  const ad::Var var = ad::clamp_min(raw_var, variance_floor);
  const ad::Var target = beta.tape()->constant(detail::targets_of(targets));
  const ad::Var err2 = ad::square(ad::sub(target, mu));
  // lambda * log(sigma) = lambda / 2 * log(sigma^2)
  const ad::Var loss = ad::add(ad::div(err2, var), ad::scale(ad::log(var), 0.5 * lambda));
  return RegressionTerms{loss, mu, var};
}

/// Variance-aware cycle-back regression for each query row.
inline RegressionTerms regression_terms(const ad::Var& u, const ad::Var& v, const std::vector<std::size_t>& query_rows,
                                        double lambda, double variance_floor, double temperature = 1.0) {
  const ad::Var beta = ad::softmax_rows(cycle_back_logits(u, v, query_rows, temperature));
  return gaussian_position_loss(beta, query_rows, lambda, variance_floor);
}

/// (i - mu)^2 only, without the variance normalisation.
inline ad::Var mse_terms(const ad::Var& u, const ad::Var& v, const std::vector<std::size_t>& query_rows,
                         double temperature = 1.0) {
  const ad::Var beta = ad::softmax_rows(cycle_back_logits(u, v, query_rows, temperature));
  const ad::Var mu = detail::beta_moments(beta).first;
  const ad::Var target = u.tape()->constant(detail::targets_of(query_rows));
  return ad::square(ad::sub(target, mu));
}

inline ad::Var cycle_back_classification(const ad::Var& u, const ad::Var& v, std::size_t i, double temperature = 1.0) {
  return ad::element(classification_terms(u, v, {i}, temperature), 0);
}

struct RegressionLoss {
  ad::Var loss;
  ad::Var mu;
  ad::Var variance;
};

inline RegressionLoss cycle_back_regression(const ad::Var& u, const ad::Var& v, std::size_t i, double lambda,
                                            double variance_floor, double temperature = 1.0) {
  const RegressionTerms t = regression_terms(u, v, {i}, lambda, variance_floor, temperature);
  return RegressionLoss{ad::element(t.loss, 0), ad::element(t.mu, 0), ad::element(t.variance, 0)};
}

inline ad::Var cycle_back_regression_mse(const ad::Var& u, const ad::Var& v, std::size_t i, double temperature = 1.0) {
  return ad::element(mse_terms(u, v, {i}, temperature), 0);
}

/// Configured per-frame loss for every frame of U cycling through V.
inline ad::Var cycle_terms(const ad::Var& u, const ad::Var& v, const TccConfig& config) {
  std::vector<std::size_t> rows(u.value().rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  switch (config.variant) {
    case TccVariant::classification: return classification_terms(u, v, rows, config.temperature);
    case TccVariant::regression:
      return regression_terms(u, v, rows, config.lambda, config.variance_floor, config.temperature).loss;
    case TccVariant::regression_mse: return mse_terms(u, v, rows, config.temperature);
  }
  throw ContractError("unknown TCC variant");
}

// ---------------------------------------------------------------------------
// Batch loss

/// `count` sorted frame indices drawn uniformly without replacement from [0, n);
/// all frames when n <= count.
inline std::vector<std::size_t> sample_frames(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= count) return idx;
  for (std::size_t k = 0; k < count; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, n - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct BatchLossStats {
  std::size_t pairs = 0;
  std::size_t terms = 0;
};

/// Mean cycle-consistency loss over every ordered pair of distinct sequences in
/// the batch. Each sequence contributes one sorted frame sample per call.
inline ad::Var tcc_batch_loss(const BoundEmbedder& enc, std::span<const FeatureSequence> batch, const TccConfig& config,
                              std::mt19937_64& rng, BatchLossStats* stats = nullptr) {
  config.validate();
  if (batch.size() < 2) throw ContractError("TCC needs a batch of at least 2 sequences");
  std::vector<ad::Var> embeddings;
  embeddings.reserve(batch.size());
  for (const FeatureSequence& seq : batch) {
    if (seq.length() == 0) throw ContractError("sequence '" + seq.id + "' is empty");
    const auto frames = sample_frames(seq.length(), config.frames_per_seq, rng);
    embeddings.push_back(embed_frames(enc, seq, frames));
  }
  ad::Var total;
  std::size_t terms = 0, pairs = 0;
  for (std::size_t a = 0; a < batch.size(); ++a) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      if (a == b) continue;
      const ad::Var s = ad::sum(cycle_terms(embeddings[a], embeddings[b], config));
      total = total.valid() ? ad::add(total, s) : s;
      terms += embeddings[a].value().rows();
      ++pairs;
    }
  }
  if (stats != nullptr) *stats = BatchLossStats{pairs, terms};
  return ad::scale(total, 1.0 / static_cast<double>(terms));
}

inline double tcc_batch_loss(const EmbedderParams& params, std::span<const FeatureSequence> batch,
                             const TccConfig& config, std::uint64_t seed, BatchLossStats* stats = nullptr) {
  ad::Tape tape;
  std::mt19937_64 rng(seed);
  return tcc_batch_loss(bind(tape, params, false), batch, config, rng, stats).item();
}

}  // namespace tcc
