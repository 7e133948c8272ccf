#pragma once

// Evaluation measures on frozen embeddings: hard cycle-consistency, Kendall's
// tau of nearest-neighbour retrieval, phase classification with a linear
// classifier and phase progression with a linear regressor.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "tcc/sequence.hpp"
#include "tcc/tensor.hpp"

namespace tcc {

namespace detail {

inline void require_rows(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.rows() == 0) throw ContractError(std::string(what) + " must be a non-empty matrix");
}

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = a[c] - b[c];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Index of the row of `set` closest to `query`; ties go to the lowest index.
inline std::size_t nearest_row(std::span<const double> query, const Tensor& set) {
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t j = 0; j < set.rows(); ++j) {
    const double d = detail::sq_dist(query, set.row(j));
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

inline std::vector<std::size_t> nearest_rows(const Tensor& queries, const Tensor& set) {
  std::vector<std::size_t> out(queries.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) out[i] = nearest_row(queries.row(i), set);
  return out;
}

/// Fraction of frames of U whose nearest neighbour in V maps back to themselves.
inline double cycle_consistency_fraction(const Tensor& u, const Tensor& v) {
  detail::require_rows(u, "U");
  detail::require_rows(v, "V");
  if (u.cols() != v.cols()) throw ShapeError("U and V feature dims differ");
  const auto forward = nearest_rows(u, v);
  std::size_t consistent = 0;
  for (std::size_t i = 0; i < u.rows(); ++i) {
    if (nearest_row(v.row(forward[i]), u) == i) ++consistent;
  }
  return static_cast<double>(consistent) / static_cast<double>(u.rows());
}

/// Kendall's tau of nearest-neighbour retrieval from U into V. A pair whose
/// frames retrieve the same frame of V counts as discordant.
inline double kendalls_tau(const Tensor& u, const Tensor& v) {
  detail::require_rows(u, "U");
  detail::require_rows(v, "V");
  if (u.rows() < 2) throw ContractError("Kendall's tau needs at least 2 frames");
  if (u.cols() != v.cols()) throw ShapeError("U and V feature dims differ");
  const auto nn = nearest_rows(u, v);
  const std::size_t n = u.rows();
  long long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // i < j, so concordance requires nn[i] < nn[j]
      if (nn[i] < nn[j]) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  return static_cast<double>(concordant - discordant) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

/// target[i][e] = (i - key_events[e]) / n.
inline Tensor phase_progression_targets(const PhaseAnnotation& annotation, std::size_t n) {
  const auto& events = annotation.key_events;
  for (std::size_t e : events) {
    if (e >= n) throw ContractError("key event " + std::to_string(e) + " beyond sequence length " + std::to_string(n));
  }
  Tensor out(Shape{n, events.size()});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t e = 0; e < events.size(); ++e) {
      out(i, e) = (static_cast<double>(i) - static_cast<double>(events[e])) / static_cast<double>(n);
    }
  }
  return out;
}

/// Coefficient of determination 1 - SS_res / SS_tot.
inline double r_squared(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw ShapeError("r_squared length mismatch");
  if (y.size() < 2) throw ContractError("r_squared needs at least 2 values");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0.0) throw UndefinedError("R^2 of a constant target");
  return 1.0 - ss_res / ss_tot;
}

// ---------------------------------------------------------------------------
// Linear probes

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline RowMatrix to_eigen(const Tensor& t) {
  return Eigen::Map<const RowMatrix>(t.data().data(), t.rows(), t.cols());
}

inline Tensor from_eigen(const RowMatrix& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<RowMatrix>(t.data().data(), m.rows(), m.cols()) = m;
  return t;
}

}  // namespace detail

/// Multinomial logistic regression on per-dimension standardised features.
struct LinearClassifier {
  Eigen::RowVectorXd feature_mean;
  Eigen::RowVectorXd feature_scale;
  Eigen::MatrixXd weights;  ///< d x C
  Eigen::RowVectorXd bias;  ///< C
  int num_classes = 0;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;

  std::vector<int> predict(const Tensor& x) const {
    const Eigen::MatrixXd z =
        ((detail::to_eigen(x).rowwise() - feature_mean).array().rowwise() / feature_scale.array()).matrix();
    const Eigen::MatrixXd logits = (z * weights).rowwise() + bias;
    std::vector<int> out(x.rows());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index best = 0;
      logits.row(i).maxCoeff(&best);
      out[i] = static_cast<int>(best);
    }
    return out;
  }
};

struct ClassifierOptions {
  double l2 = 1e-4;
  double gradient_tolerance = 1e-6;
  std::size_t max_steps = 10000;
};

/// Fits by damped Newton iterations on mean cross-entropy + l2/2 ||W||^2 until
/// the gradient norm drops below the tolerance. Labels must be in [0, C).
inline LinearClassifier fit_linear_classifier(const Tensor& x, std::span<const int> labels, std::uint64_t seed,
                                              const ClassifierOptions& opts = {}) {
  detail::require_rows(x, "X");
  if (labels.size() != x.rows()) throw ShapeError("one label per row required");
  const std::set<int> classes(labels.begin(), labels.end());
  if (*classes.begin() < 0) throw ContractError("labels must be non-negative");
  if (classes.size() < 2) throw DegenerateModelError("only one class present in the training labels");
  const int c = *classes.rbegin() + 1;
  if (x.rows() < static_cast<std::size_t>(c)) throw ContractError("fewer samples than classes");

  const Eigen::Index n = static_cast<Eigen::Index>(x.rows()), d = static_cast<Eigen::Index>(x.cols());
  const detail::RowMatrix raw = detail::to_eigen(x);
  LinearClassifier m;
  m.num_classes = c;
  m.feature_mean = raw.colwise().mean();
  m.feature_scale = ((raw.rowwise() - m.feature_mean).array().square().colwise().sum() / static_cast<double>(n)).sqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(m.feature_scale[j] > 1e-12)) m.feature_scale[j] = 1.0;
  }
  // Design matrix with a trailing bias column.
  Eigen::MatrixXd z(n, d + 1);
  z.leftCols(d) = ((raw.rowwise() - m.feature_mean).array().rowwise() / m.feature_scale.array()).matrix();
  z.col(d).setOnes();
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, c);
  for (Eigen::Index i = 0; i < n; ++i) y(i, labels[i]) = 1.0;

  const Eigen::Index p = d + 1;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> init(0.0, 1e-3);
  Eigen::MatrixXd theta(p, c);  // column k = [w_k; b_k]
  for (Eigen::Index k = 0; k < c; ++k)
    for (Eigen::Index j = 0; j < p; ++j) theta(j, k) = init(rng);

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, opts.l2);
  penalty[d] = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  auto probabilities = [&](const Eigen::MatrixXd& th) {
    Eigen::MatrixXd logits = z * th;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - mx).exp();
      logits.row(i) /= logits.row(i).sum();
    }
    return logits;
  };
  auto objective = [&](const Eigen::MatrixXd& th) {
    const Eigen::MatrixXd logits = z * th;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
      loss += lse - logits(i, labels[i]);
    }
    return loss * inv_n + 0.5 * (penalty.asDiagonal() * th).cwiseProduct(th).sum();
  };
  // Bias offsets common to all classes leave the loss unchanged; keep them centred.
  auto centre_bias = [&](Eigen::MatrixXd& th) { th.row(d).array() -= th.row(d).mean(); };

  centre_bias(theta);
  double f = objective(theta);
  for (std::size_t step = 0; step < opts.max_steps; ++step) {
    const Eigen::MatrixXd prob = probabilities(theta);
    const Eigen::MatrixXd grad = z.transpose() * (prob - y) * inv_n + penalty.asDiagonal() * theta;
    m.gradient_norm = grad.norm();
    m.iterations = step;
    if (m.gradient_norm < opts.gradient_tolerance) break;

    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(p * c, p * c);
    for (Eigen::Index a = 0; a < c; ++a) {
      for (Eigen::Index b = a; b < c; ++b) {
        const Eigen::VectorXd w = (prob.col(a).array() * ((a == b ? 1.0 : 0.0) - prob.col(b).array())).matrix();
        const Eigen::MatrixXd block = z.transpose() * w.asDiagonal() * z * inv_n;
        hess.block(a * p, b * p, p, p) = block;
        if (a != b) hess.block(b * p, a * p, p, p) = block.transpose();
      }
      hess.block(a * p, a * p, p, p).diagonal() += penalty;
    }
    hess.diagonal().array() += 1e-10;
    const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(grad.data(), p * c);
    const Eigen::VectorXd dir = hess.ldlt().solve(-g);
    Eigen::MatrixXd delta = Eigen::Map<const Eigen::MatrixXd>(dir.data(), p, c);

    double t = 1.0;
    const double slope = g.dot(dir);
    Eigen::MatrixXd next;
    double f_next = f;
    for (int ls = 0; ls < 60; ++ls) {
      next = theta + t * delta;
      centre_bias(next);
      f_next = objective(next);
      if (f_next <= f + 1e-4 * t * slope) break;
      t *= 0.5;
    }
    if (!(f_next <= f)) break;  // no further progress possible
    theta = next;
    f = f_next;
  }
  m.weights = theta.topRows(d);
  m.bias = theta.row(d);
  return m;
}

inline double classify_accuracy(const LinearClassifier& model, const Tensor& x, std::span<const int> labels) {
  if (labels.size() != x.rows()) throw ShapeError("one label per row required");
  const auto pred = model.predict(x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Affine least-squares map with a ridge penalty on the slope.
struct LinearRegressor {
  Eigen::MatrixXd weights;  ///< d x E
  Eigen::RowVectorXd bias;  ///< E

  Tensor predict(const Tensor& x) const {
    const detail::RowMatrix out = (detail::to_eigen(x) * weights).rowwise() + bias;
    return detail::from_eigen(out);
  }
};

inline LinearRegressor fit_linear_regressor(const Tensor& x, const Tensor& targets, double ridge = 1e-6) {
  detail::require_rows(x, "X");
  if (targets.rank() != 2 || targets.rows() != x.rows()) throw ShapeError("one target row per sample required");
  if (!(ridge >= 0.0)) throw ContractError("ridge must be >= 0");
  const detail::RowMatrix xs = detail::to_eigen(x);
  const detail::RowMatrix ys = detail::to_eigen(targets);
  const Eigen::RowVectorXd x_mean = xs.colwise().mean();
  const Eigen::RowVectorXd y_mean = ys.colwise().mean();
  const Eigen::MatrixXd xc = xs.rowwise() - x_mean;
  const Eigen::MatrixXd yc = ys.rowwise() - y_mean;
  Eigen::MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += ridge;
  LinearRegressor r;
  r.weights = gram.completeOrthogonalDecomposition().solve(xc.transpose() * yc);
  r.bias = y_mean - x_mean * r.weights;
  return r;
}

/// Mean R^2 over the target columns.
inline double mean_r_squared(const Tensor& targets, const Tensor& predictions) {
  if (targets.shape() != predictions.shape()) throw ShapeError("prediction shape mismatch");
  double total = 0.0;
  std::vector<double> y(targets.rows()), y_hat(targets.rows());
  for (std::size_t e = 0; e < targets.cols(); ++e) {
    for (std::size_t i = 0; i < targets.rows(); ++i) {
      y[i] = targets(i, e);
      y_hat[i] = predictions(i, e);
    }
    total += r_squared(y, y_hat);
  }
  return total / static_cast<double>(targets.cols());
}

}  // namespace tcc
