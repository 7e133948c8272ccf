#pragma once

// Optimisation loop and frozen-feature evaluation.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tcc/baselines.hpp"
#include "tcc/checkpoint.hpp"
#include "tcc/data.hpp"
#include "tcc/losses.hpp"
#include "tcc/metrics.hpp"

namespace tcc {

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One Adam update at step t >= 1. Weight decay is decoupled: params are first
/// scaled by (1 - lr * weight_decay).
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                      double weight_decay, std::uint64_t t, const AdamHyper& h = {}) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and state sizes differ");
  }
  if (t == 0) throw ContractError("adam_step: t must be >= 1");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] = params[i] * decay - lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Configuration

enum class LossKind { tcc_classification, tcc_regression, tcc_mse, tcn, sal, tcc_tcn, tcc_sal };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::tcc_classification: return "tcc_classification";
    case LossKind::tcc_regression: return "tcc_regression";
    case LossKind::tcc_mse: return "tcc_mse";
    case LossKind::tcn: return "tcn";
    case LossKind::sal: return "sal";
    case LossKind::tcc_tcn: return "tcc+tcn";
    case LossKind::tcc_sal: return "tcc+sal";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  for (LossKind k : {LossKind::tcc_classification, LossKind::tcc_regression, LossKind::tcc_mse, LossKind::tcn,
                     LossKind::sal, LossKind::tcc_tcn, LossKind::tcc_sal}) {
    if (s == to_string(k)) return k;
  }
  throw ContractError("unknown loss '" + s + "'");
}

inline bool uses_tcc(LossKind k) {
  return k != LossKind::tcn && k != LossKind::sal;
}
inline bool uses_tcn(LossKind k) { return k == LossKind::tcn || k == LossKind::tcc_tcn; }
inline bool uses_sal(LossKind k) { return k == LossKind::sal || k == LossKind::tcc_sal; }

inline TccVariant tcc_variant_of(LossKind k) {
  switch (k) {
    case LossKind::tcc_classification: return TccVariant::classification;
    case LossKind::tcc_mse: return TccVariant::regression_mse;
    default: return TccVariant::regression;
  }
}

struct TrainConfig {
  LossKind loss = LossKind::tcc_regression;
  std::size_t batch_size = 4;
  std::size_t frames_per_seq = 20;
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  double combine_weight = 0.5;
  double jitter_std = 0.05;  ///< feature-space augmentation per training step
  EmbedderConfig embedder;
  TccConfig tcc;
  BaselineConfig baseline;

  std::size_t checkpoint_every = 0;  ///< 0 writes only the final checkpoint
  bool early_stop = false;
  std::size_t plateau_window = 200;
  double plateau_tolerance = 1e-4;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ContractError("learning_rate must be >= 0");
    if (!(weight_decay >= 0.0)) throw ContractError("weight_decay must be >= 0");
    if (steps == 0) throw ContractError("steps must be >= 1");
    if (batch_size == 0) throw ContractError("batch_size must be >= 1");
    if (uses_tcc(loss) && batch_size < 2) throw ContractError("TCC losses need batch_size >= 2");
    if (frames_per_seq == 0) throw ContractError("frames_per_seq must be >= 1");
    if (!(combine_weight >= 0.0)) throw ContractError("combine_weight must be >= 0");
    if (!(jitter_std >= 0.0)) throw ContractError("jitter_std must be >= 0");
    if (plateau_window == 0) throw ContractError("plateau_window must be >= 1");
    embedder.validate();
    tcc.validate();
    baseline.validate();
  }
};

// ---------------------------------------------------------------------------
// Training

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint;  ///< rewritten every checkpoint_every steps and at the end
  std::optional<std::filesystem::path> loss_log;    ///< "step loss" per line
  std::ostream* console = nullptr;                  ///< "step loss wallclock_ms" per line
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  ///< one per step run by this call
  bool stopped_early = false;
  double wallclock_ms = 0.0;
};

namespace detail {

inline std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32)};
  return std::mt19937_64(seq);
}

inline std::vector<std::size_t> sample_batch(std::size_t n, std::size_t batch, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t k = 0; k < batch; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, n - 1);
    std::swap(idx[k], idx[pick(rng)]);
  }
  idx.resize(batch);
  return idx;
}

inline bool plateaued(const std::vector<double>& losses, std::size_t window, double tolerance) {
  if (losses.size() < 2 * window) return false;
  const auto end = losses.end();
  const double recent = std::accumulate(end - static_cast<std::ptrdiff_t>(window), end, 0.0) / window;
  const double before = std::accumulate(end - static_cast<std::ptrdiff_t>(2 * window),
                                        end - static_cast<std::ptrdiff_t>(window), 0.0) /
                        window;
  return (before - recent) < tolerance * std::abs(before);
}

}  // namespace detail

/// Loss of one training step on the given tape.
inline ad::Var training_loss(const TrainConfig& config, const BoundEmbedder& enc, const BoundMlp* head,
                             std::span<const FeatureSequence> batch, std::mt19937_64& rng) {
  std::optional<ad::Var> main;
  if (uses_tcc(config.loss)) {
    TccConfig tc = config.tcc;
    tc.variant = tcc_variant_of(config.loss);
    tc.frames_per_seq = config.frames_per_seq;
    main = tcc_batch_loss(enc, batch, tc, rng);
  }
  std::optional<ad::Var> single;
  if (uses_tcn(config.loss) || uses_sal(config.loss)) {
    ad::Var total;
    for (const FeatureSequence& seq : batch) {
      const ad::Var l =
          uses_tcn(config.loss)
              ? tcn_npairs_loss(enc, seq, config.baseline.tcn_anchors, config.baseline.tcn_window, rng)
              : sal_loss(enc, *head, seq, config.baseline.sal_triplets, config.baseline.sal_fraction_shuffled, rng);
      total = total.valid() ? ad::add(total, l) : l;
    }
    single = ad::scale(total, 1.0 / static_cast<double>(batch.size()));
  }
  if (main && single) return combined_loss(*main, *single, config.combine_weight);
  return main ? *main : *single;
}

inline Checkpoint initial_checkpoint(const TrainConfig& config) {
  Checkpoint ck;
  ck.params = init_params(config.embedder, config.seed);
  ck.seed = config.seed;
  if (uses_sal(config.loss)) {
    ck.head = init_sal_head(config.embedder.embedding_dim, config.baseline.sal_head_sizes, config.seed ^ 0x5a15eedULL);
  }
  std::size_t total = ck.params.parameter_count() + (ck.head ? ck.head->parameter_count() : 0);
  ck.optimizer = AdamState::zeros(total);
  return ck;
}

/// Runs steps until `config.steps` total steps have been taken, starting from
/// `resume` when given. Step s draws its batch and frames from an RNG seeded by
/// (seed, s), so a resumed run repeats the uninterrupted one exactly.
inline TrainResult train(TrainConfig config, std::span<const FeatureSequence> sequences, const TrainOutputs& out = {},
                         std::optional<Checkpoint> resume = std::nullopt) {
  if (config.embedder.input_dim == 0 && !sequences.empty()) config.embedder.input_dim = sequences.front().dim();
  config.validate();
  if (sequences.size() < config.batch_size) {
    throw ContractError("training needs at least " + std::to_string(config.batch_size) + " sequences, got " +
                        std::to_string(sequences.size()));
  }
  for (const auto& s : sequences) {
    if (s.dim() != config.embedder.input_dim) throw ShapeError("sequence '" + s.id + "' has the wrong feature dim");
  }

  TrainResult result;
  if (resume) {
    if (resume->params.config != config.embedder) throw ContractError("checkpoint embedder differs from the config");
    if (resume->seed != config.seed) throw ContractError("checkpoint seed differs from the config");
    if (uses_sal(config.loss) != resume->head.has_value()) {
      throw ContractError("checkpoint head does not match the loss");
    }
    result.checkpoint = std::move(*resume);
  } else {
    result.checkpoint = initial_checkpoint(config);
  }
  Checkpoint& ck = result.checkpoint;
  if (ck.step > config.steps) throw ContractError("checkpoint is already past the requested step count");
  const std::size_t n_embed = ck.params.parameter_count();
  if (ck.optimizer.m.empty()) ck.optimizer = AdamState::zeros(n_embed + (ck.head ? ck.head->parameter_count() : 0));

  std::ofstream log;
  if (out.loss_log) {
    if (out.loss_log->has_parent_path()) std::filesystem::create_directories(out.loss_log->parent_path());
    log.open(*out.loss_log, ck.step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw Error("cannot open loss log '" + out.loss_log->string() + "'");
    log << std::setprecision(17);
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<double> flat = ck.params.flat();
  if (ck.head) {
    const auto h = ck.head->flat();
    flat.insert(flat.end(), h.begin(), h.end());
  }
  std::vector<FeatureSequence> batch;
  while (ck.step < config.steps) {
    const std::uint64_t step = ck.step + 1;
    std::mt19937_64 rng = detail::step_rng(config.seed, step);
    batch.clear();
    for (std::size_t i : detail::sample_batch(sequences.size(), config.batch_size, rng)) {
      batch.push_back(jitter_augment(sequences[i], config.jitter_std, rng()));
    }

    ad::Tape tape;
    const BoundEmbedder enc = bind(tape, ck.params, true);
    std::optional<BoundMlp> head;
    if (ck.head) head = bind(tape, *ck.head, true);
    const ad::Var loss = training_loss(config, enc, head ? &*head : nullptr, batch, rng);
    const double value = loss.item();
    if (!std::isfinite(value)) throw Error("non-finite loss at step " + std::to_string(step));
    const ad::Gradients grads = tape.backward(loss);
    std::vector<double> g = flat_gradient(grads, enc.mlp);
    if (head) {
      const auto gh = flat_gradient(grads, *head);
      g.insert(g.end(), gh.begin(), gh.end());
    }

    adam_step(flat, g, ck.optimizer, config.learning_rate, config.weight_decay, step);
    ck.params.assign_flat(std::span<const double>(flat).first(n_embed));
    if (ck.head) ck.head->assign_flat(std::span<const double>(flat).subspan(n_embed));
    ck.step = step;
    result.losses.push_back(value);

    if (log.is_open()) log << step << ' ' << value << '\n' << std::flush;
    if (out.console != nullptr) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      *out.console << step << ' ' << value << ' ' << static_cast<long long>(ms) << '\n' << std::flush;
    }
    if (out.checkpoint && config.checkpoint_every != 0 && step % config.checkpoint_every == 0) {
      save_checkpoint(*out.checkpoint, ck);
    }
    if (config.early_stop && detail::plateaued(result.losses, config.plateau_window, config.plateau_tolerance)) {
      result.stopped_early = true;
      break;
    }
  }
  if (out.checkpoint) save_checkpoint(*out.checkpoint, ck);
  result.wallclock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  std::vector<double> label_fractions{0.1, 0.5, 1.0};
  bool label_metrics = true;
  std::uint64_t seed = 0;  ///< picks the labelled subset of training videos
};

struct FractionAccuracy {
  double fraction = 0.0;
  std::size_t videos = 0;
  double accuracy = 0.0;

  friend bool operator==(const FractionAccuracy&, const FractionAccuracy&) = default;
};

struct EvalReport {
  std::size_t sequences = 0;
  double kendalls_tau = 0.0;
  double cycle_consistency = 0.0;
  std::vector<FractionAccuracy> classification;
  std::optional<double> progression_r2;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

namespace detail {

inline Tensor stack_rows(const std::vector<Tensor>& parts) {
  std::size_t rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Tensor out(Shape{rows, parts.front().cols()});
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * p.cols()));
    r += p.rows();
  }
  return out;
}

inline const PhaseAnnotation& annotation_of(const FeatureSequence& s) {
  if (!s.annotation) throw MissingAnnotationError(s.id);
  return *s.annotation;
}

}  // namespace detail

/// Mean Kendall's tau and cycle-consistency fraction over ordered pairs of distinct embedded sequences.
inline std::pair<double, double> pairwise_alignment_scores(const std::vector<Tensor>& embeddings) {
  if (embeddings.size() < 2) throw ContractError("pairwise scores need at least two sequences");
  double tau = 0.0, cycle = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < embeddings.size(); ++a) {
    for (std::size_t b = 0; b < embeddings.size(); ++b) {
      if (a == b) continue;
      tau += kendalls_tau(embeddings[a], embeddings[b]);
      cycle += cycle_consistency_fraction(embeddings[a], embeddings[b]);
      ++pairs;
    }
  }
  return {tau / static_cast<double>(pairs), cycle / static_cast<double>(pairs)};
}

/// Phase accuracy on `test` of a linear classifier fitted on all frames of `train`.
inline double phase_accuracy(const std::vector<Tensor>& train_features, const std::vector<FeatureSequence>& train,
                             const std::vector<Tensor>& test_features, const std::vector<FeatureSequence>& test,
                             std::uint64_t seed) {
  std::vector<int> train_labels, test_labels;
  for (const auto& s : train) {
    const auto& l = detail::annotation_of(s).phase_labels;
    train_labels.insert(train_labels.end(), l.begin(), l.end());
  }
  for (const auto& s : test) {
    const auto& l = detail::annotation_of(s).phase_labels;
    test_labels.insert(test_labels.end(), l.begin(), l.end());
  }
  const LinearClassifier model = fit_linear_classifier(detail::stack_rows(train_features), train_labels, seed);
  return classify_accuracy(model, detail::stack_rows(test_features), test_labels);
}

/// Embeds both splits with frozen parameters and computes the alignment and,
/// when requested, the label-dependent metrics. Classifiers and regressors are
/// fitted on `train` and scored on `test`.
inline EvalReport evaluate(const EmbedderParams& params, const std::vector<FeatureSequence>& train,
                           const std::vector<FeatureSequence>& test, const EvalOptions& opts = {}) {
  if (test.empty()) throw ContractError("evaluation split is empty");
  EvalReport report;
  report.sequences = test.size();
  std::vector<Tensor> test_emb;
  for (const auto& s : test) test_emb.push_back(embed_sequence(params, s));
  if (test.size() >= 2) std::tie(report.kendalls_tau, report.cycle_consistency) = pairwise_alignment_scores(test_emb);

  if (!opts.label_metrics) return report;
  if (train.empty()) throw ContractError("label-dependent metrics need training sequences");
  for (const auto& s : train) detail::annotation_of(s);
  for (const auto& s : test) detail::annotation_of(s);
  std::vector<Tensor> train_emb;
  for (const auto& s : train) train_emb.push_back(embed_sequence(params, s));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(opts.seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (double f : opts.label_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ContractError("label fraction must lie in (0, 1]");
    const auto videos = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(f * static_cast<double>(train.size()))), 1, train.size());
    std::vector<Tensor> feats;
    std::vector<FeatureSequence> seqs;
    for (std::size_t k = 0; k < videos; ++k) {
      feats.push_back(train_emb[order[k]]);
      seqs.push_back(train[order[k]]);
    }
    report.classification.push_back(FractionAccuracy{f, videos, phase_accuracy(feats, seqs, test_emb, test, opts.seed)});
  }

  std::vector<Tensor> train_targets, test_targets;
  for (const auto& s : train) train_targets.push_back(phase_progression_targets(*s.annotation, s.length()));
  for (const auto& s : test) test_targets.push_back(phase_progression_targets(*s.annotation, s.length()));
  std::size_t events = train_targets.front().cols();
  bool uniform = true;
  for (const auto& t : train_targets) uniform = uniform && t.cols() == events;
  for (const auto& t : test_targets) uniform = uniform && t.cols() == events;
  if (uniform) {
    const LinearRegressor reg = fit_linear_regressor(detail::stack_rows(train_emb), detail::stack_rows(train_targets));
    report.progression_r2 =
        mean_r_squared(detail::stack_rows(test_targets), reg.predict(detail::stack_rows(test_emb)));
  }
  return report;
}

}  // namespace tcc
