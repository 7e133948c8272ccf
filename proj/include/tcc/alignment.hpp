#pragma once

// Frame correspondence between embedded sequences and what is built on it:
// nearest-neighbour and DTW alignment, similarity matrices, anomaly scores and
// per-frame label transfer.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "tcc/metrics.hpp"
#include "tcc/tensor.hpp"

namespace tcc {

enum class AlignMode { nn, dtw };

struct AlignmentResult {
  AlignMode mode = AlignMode::nn;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  ///< (frame of U, frame of V)
  std::vector<double> distances;                           ///< Euclidean distance per pair
  double cost = 0.0;                                        ///< sum of squared distances over pairs
};

inline AlignmentResult nn_align(const Tensor& u, const Tensor& v) {
  detail::require_rows(u, "U");
  detail::require_rows(v, "V");
  if (u.cols() != v.cols()) throw ShapeError("U and V feature dims differ");
  AlignmentResult r;
  r.mode = AlignMode::nn;
  for (std::size_t i = 0; i < u.rows(); ++i) {
    const std::size_t j = nearest_row(u.row(i), v);
    const double d2 = detail::sq_dist(u.row(i), v.row(j));
    r.pairs.emplace_back(i, j);
    r.distances.push_back(std::sqrt(d2));
    r.cost += d2;
  }
  return r;
}

/// Dynamic time warping over squared-distance costs with steps (1,0), (0,1), (1,1).
/// `band`, when set, restricts |i - j| (after rescaling i to V's length) to at most band frames.
inline AlignmentResult dtw_align(const Tensor& u, const Tensor& v, std::optional<std::size_t> band = std::nullopt) {
  detail::require_rows(u, "U");
  detail::require_rows(v, "V");
  if (u.cols() != v.cols()) throw ShapeError("U and V feature dims differ");
  const std::size_t n = u.rows(), m = v.rows();
  constexpr double inf = std::numeric_limits<double>::infinity();
  auto allowed = [&](std::size_t i, std::size_t j) {
    if (!band) return true;
    const double centre = n == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(m - 1) / static_cast<double>(n - 1);
    return std::abs(static_cast<double>(j) - centre) <= static_cast<double>(*band);
  };

  std::vector<double> acc(n * m, inf);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return acc[i * m + j]; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (!allowed(i, j) && !(i == 0 && j == 0) && !(i == n - 1 && j == m - 1)) continue;
      const double c = detail::sq_dist(u.row(i), v.row(j));
      if (i == 0 && j == 0) {
        at(i, j) = c;
        continue;
      }
      double best = inf;
      if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
      if (i > 0) best = std::min(best, at(i - 1, j));
      if (j > 0) best = std::min(best, at(i, j - 1));
      at(i, j) = best + c;
    }
  }
  if (!std::isfinite(at(n - 1, m - 1))) throw ContractError("DTW band too narrow to connect the endpoints");

  AlignmentResult r;
  r.mode = AlignMode::dtw;
  r.cost = at(n - 1, m - 1);
  std::size_t i = n - 1, j = m - 1;
  r.pairs.emplace_back(i, j);
  while (i > 0 || j > 0) {
    // Prefer the diagonal, then (1,0), then (0,1) among equal predecessors.
    const double diag = (i > 0 && j > 0) ? at(i - 1, j - 1) : inf;
    const double up = i > 0 ? at(i - 1, j) : inf;
    const double left = j > 0 ? at(i, j - 1) : inf;
    if (diag <= up && diag <= left && i > 0 && j > 0) {
      --i;
      --j;
    } else if (up <= left && i > 0) {
      --i;
    } else {
      --j;
    }
    r.pairs.emplace_back(i, j);
  }
  std::reverse(r.pairs.begin(), r.pairs.end());
  for (const auto& [a, b] : r.pairs) r.distances.push_back(std::sqrt(detail::sq_dist(u.row(a), v.row(b))));
  return r;
}

/// out[i][j] = exp(-||u_i - v_j||^2).
inline Tensor similarity_matrix(const Tensor& u, const Tensor& v) {
  detail::require_rows(u, "U");
  detail::require_rows(v, "V");
  if (u.cols() != v.cols()) throw ShapeError("U and V feature dims differ");
  Tensor out(Shape{u.rows(), v.rows()});
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (std::size_t j = 0; j < v.rows(); ++j) out(i, j) = std::exp(-detail::sq_dist(u.row(i), v.row(j)));
  return out;
}

/// Distance from each query frame to the closest frame of any reference sequence.
inline Tensor anomaly_score(const Tensor& query, const std::vector<Tensor>& references) {
  detail::require_rows(query, "query");
  if (references.empty()) throw ContractError("anomaly scoring needs at least one reference sequence");
  Tensor out(Shape{query.rows()}, std::numeric_limits<double>::infinity());
  for (const Tensor& ref : references) {
    detail::require_rows(ref, "reference");
    if (ref.cols() != query.cols()) throw ShapeError("reference feature dim differs from query");
    for (std::size_t i = 0; i < query.rows(); ++i) {
      for (std::size_t j = 0; j < ref.rows(); ++j) out[i] = std::min(out[i], detail::sq_dist(query.row(i), ref.row(j)));
    }
  }
  for (double& s : out.data()) s = std::sqrt(s);
  return out;
}

/// Labels for the U side of `alignment`, taken from the matched V frames. With
/// several matches the closest one wins (lowest V index on ties).
template <class Label>
std::vector<Label> transfer_labels(const AlignmentResult& alignment, const std::vector<Label>& source_labels,
                                   std::size_t target_length) {
  std::vector<std::optional<std::pair<double, std::size_t>>> best(target_length);
  for (std::size_t k = 0; k < alignment.pairs.size(); ++k) {
    const auto [i, j] = alignment.pairs[k];
    if (i >= target_length) throw ContractError("alignment refers to a target frame past the end");
    if (j >= source_labels.size()) throw ContractError("alignment refers to a source frame without a label");
    const std::pair<double, std::size_t> cand{alignment.distances.at(k), j};
    if (!best[i] || cand < *best[i]) best[i] = cand;
  }
  std::vector<Label> out;
  out.reserve(target_length);
  for (std::size_t i = 0; i < target_length; ++i) {
    if (!best[i]) throw ContractError("target frame " + std::to_string(i) + " is not covered by the alignment");
    out.push_back(source_labels[best[i]->second]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text exports

/// "N M" then N rows of M space-separated values.
inline void write_similarity_matrix(std::ostream& os, const Tensor& sim) {
  os.precision(17);
  os << sim.rows() << ' ' << sim.cols() << '\n';
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    for (std::size_t j = 0; j < sim.cols(); ++j) {
      if (j != 0) os << ' ';
      os << sim(i, j);
    }
    os << '\n';
  }
}

/// One "i j distance" line per pair.
inline void write_alignment(std::ostream& os, const AlignmentResult& a) {
  os.precision(17);
  for (std::size_t k = 0; k < a.pairs.size(); ++k) {
    os << a.pairs[k].first << ' ' << a.pairs[k].second << ' ' << a.distances[k] << '\n';
  }
}

}  // namespace tcc
