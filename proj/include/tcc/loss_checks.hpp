#pragma once

// Finite-difference checks of every training loss on small random instances.

#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tcc/baselines.hpp"
#include "tcc/grad_check.hpp"
#include "tcc/losses.hpp"

namespace tcc {

enum class CheckedLoss { classification, regression, regression_mse, npairs, sal, combined };

inline constexpr std::array<CheckedLoss, 6> kCheckedLosses{CheckedLoss::classification, CheckedLoss::regression,
                                                           CheckedLoss::regression_mse, CheckedLoss::npairs,
                                                           CheckedLoss::sal, CheckedLoss::combined};

inline const char* to_string(CheckedLoss l) {
  switch (l) {
    case CheckedLoss::classification: return "cycle_back_classification";
    case CheckedLoss::regression: return "cycle_back_regression";
    case CheckedLoss::regression_mse: return "cycle_back_regression_mse";
    case CheckedLoss::npairs: return "npairs";
    case CheckedLoss::sal: return "shuffle_and_learn";
    case CheckedLoss::combined: return "combined";
  }
  return "?";
}

/// A random problem: sizes, the point to differentiate at, and the loss as a
/// function of that point.
struct GradInstance {
  std::size_t n = 0, m = 0, d = 0;
  Tensor point;
  ScalarFn fn;
};

namespace detail {

inline std::vector<std::size_t> iota_rows(std::size_t from, std::size_t count) {
  std::vector<std::size_t> r(count);
  std::iota(r.begin(), r.end(), from);
  return r;
}

inline Tensor random_tensor(Shape shape, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = normal(rng);
  return t;
}

}  // namespace detail

/// Builds one instance with N, M in [2, max_len] and d in [1, max_dim].
/// The point holds U stacked over V (rows), except for shuffle-and-learn, where
/// it holds the three slot embeddings stacked by slot.
inline GradInstance make_grad_instance(CheckedLoss kind, std::mt19937_64& rng, std::size_t max_len = 8,
                                       std::size_t max_dim = 6) {
  std::uniform_int_distribution<std::size_t> len(2, max_len), dim(1, max_dim);
  GradInstance g;
  g.n = len(rng);
  g.m = kind == CheckedLoss::npairs ? g.n : len(rng);
  g.d = dim(rng);
  const std::size_t n = g.n, m = g.m;
  auto split = [n, m](const ad::Var& p) {
    return std::pair{ad::take_rows(p, detail::iota_rows(0, n)), ad::take_rows(p, detail::iota_rows(n, m))};
  };
  constexpr double lambda = 0.001, floor = 1e-6;

  switch (kind) {
    case CheckedLoss::classification:
      g.fn = [split](ad::Tape&, const ad::Var& p) {
        auto [u, v] = split(p);
        return ad::sum(cycle_terms(u, v, TccConfig{TccVariant::classification}));
      };
      break;
    case CheckedLoss::regression:
      g.fn = [split](ad::Tape&, const ad::Var& p) {
        auto [u, v] = split(p);
        return ad::sum(cycle_terms(u, v, TccConfig{TccVariant::regression, lambda, floor}));
      };
      break;
    case CheckedLoss::regression_mse:
      g.fn = [split](ad::Tape&, const ad::Var& p) {
        auto [u, v] = split(p);
        return ad::sum(cycle_terms(u, v, TccConfig{TccVariant::regression_mse}));
      };
      break;
    case CheckedLoss::npairs:
      g.fn = [split](ad::Tape&, const ad::Var& p) {
        auto [a, b] = split(p);
        return npairs_loss_from_logits(ad::neg(ad::pairwise_sq_dist(a, b)));
      };
      break;
    case CheckedLoss::sal: {
      // n triplets of d-dimensional slot embeddings through a fixed order head.
      const Mlp head = init_sal_head(g.d, {4, 3}, rng());
      Tensor labels(Shape{n, 1});
      std::bernoulli_distribution coin(0.75);
      for (double& y : labels.data()) y = coin(rng) ? 1.0 : 0.0;
      g.m = 2 * n;
      g.fn = [head, labels, n](ad::Tape& tape, const ad::Var& p) {
        std::vector<ad::Var> slots;
        for (std::size_t k = 0; k < 3; ++k) slots.push_back(ad::take_rows(p, detail::iota_rows(k * n, n)));
        const ad::Var z = forward(bind(tape, head, false), ad::concat_cols(slots));
        const ad::Var y = tape.constant(labels);
        return ad::mean(ad::sub(ad::softplus(z), ad::mul(y, z)));
      };
      break;
    }
    case CheckedLoss::combined: {
      const std::size_t pairs = std::min(n, m);
      g.fn = [split, pairs](ad::Tape&, const ad::Var& p) {
        auto [u, v] = split(p);
        const ad::Var tcc = ad::mean(cycle_terms(u, v, TccConfig{TccVariant::regression, lambda, floor}));
        const ad::Var np = npairs_loss_from_logits(ad::neg(ad::pairwise_sq_dist(
            ad::take_rows(u, detail::iota_rows(0, pairs)), ad::take_rows(v, detail::iota_rows(0, pairs)))));
        return combined_loss(tcc, np, 0.5);
      };
      break;
    }
  }
  g.point = detail::random_tensor(Shape{g.n + g.m, g.d}, 0.5, rng);
  return g;
}

struct LossCheckSummary {
  CheckedLoss loss = CheckedLoss::classification;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;
};

inline std::vector<LossCheckSummary> check_loss_gradients(std::size_t instances, std::uint64_t seed,
                                                          double tol = 1e-4, double step = 1e-5) {
  std::vector<LossCheckSummary> out;
  for (CheckedLoss kind : kCheckedLosses) {
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(kind) + 1)));
    LossCheckSummary s{kind};
    for (std::size_t k = 0; k < instances; ++k) {
      const GradInstance g = make_grad_instance(kind, rng);
      const GradCheckReport r = grad_check(g.fn, g.point, step, tol);
      ++s.instances;
      if (!r.passed) ++s.failures;
      s.max_rel_error = std::max(s.max_rel_error, r.max_rel_error);
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace tcc
