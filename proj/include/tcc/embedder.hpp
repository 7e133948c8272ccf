#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tcc/autodiff.hpp"
#include "tcc/sequence.hpp"

namespace tcc {

/// Fully connected layer; `weight` is in x out so that y = x W + b.
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Stack of dense layers with ReLU between them (none after the last).
struct Mlp {
  std::vector<DenseLayer> layers;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Weights then bias of each layer, in layer order.
  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers) {
      out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
      out.insert(out.end(), l.bias.data().begin(), l.bias.data().end());
    }
    return out;
  }

  void assign_flat(std::span<const double> values) {
    if (values.size() != parameter_count()) throw ShapeError("flat parameter length mismatch");
    std::size_t off = 0;
    for (auto& l : layers) {
      for (double& v : l.weight.data()) v = values[off++];
      for (double& v : l.bias.data()) v = values[off++];
    }
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Glorot-uniform weights, zero biases.
inline Mlp init_mlp(std::span<const std::size_t> sizes, std::mt19937_64& rng) {
  if (sizes.size() < 2) throw ContractError("an MLP needs at least an input and an output size");
  Mlp mlp;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const std::size_t in = sizes[k], out = sizes[k + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{Tensor(Shape{in, out}), Tensor(Shape{out}, 0.0)};
    for (double& w : layer.weight.data()) w = dist(rng);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

/// An Mlp whose parameters have been placed on a tape.
struct BoundMlp {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;

  /// Parameter Vars in the same order as Mlp::flat().
  std::vector<ad::Var> vars() const {
    std::vector<ad::Var> out;
    for (std::size_t k = 0; k < weights.size(); ++k) {
      out.push_back(weights[k]);
      out.push_back(biases[k]);
    }
    return out;
  }
};

inline BoundMlp bind(ad::Tape& tape, const Mlp& mlp, bool trainable = true) {
  BoundMlp b;
  for (const auto& l : mlp.layers) {
    b.weights.push_back(trainable ? tape.leaf(l.weight) : tape.constant(l.weight));
    b.biases.push_back(trainable ? tape.leaf(l.bias) : tape.constant(l.bias));
  }
  return b;
}

inline ad::Var forward(const BoundMlp& mlp, ad::Var x) {
  for (std::size_t k = 0; k < mlp.weights.size(); ++k) {
    x = ad::add_row(ad::matmul(x, mlp.weights[k]), mlp.biases[k]);
    if (k + 1 < mlp.weights.size()) x = ad::relu(x);
  }
  return x;
}

/// Gathers the gradients of a bound MLP into Mlp::flat() order.
inline std::vector<double> flat_gradient(const ad::Gradients& grads, const BoundMlp& mlp) {
  std::vector<double> out;
  for (const ad::Var& v : mlp.vars()) {
    const Tensor g = grads[v];
    out.insert(out.end(), g.data().begin(), g.data().end());
  }
  return out;
}

// ---------------------------------------------------------------------------

struct EmbedderConfig {
  std::size_t input_dim = 0;
  std::size_t context_frames = 2;
  std::size_t context_stride = 15;
  std::vector<std::size_t> hidden_sizes{512, 512};
  std::size_t embedding_dim = 128;

  void validate() const {
    if (input_dim == 0) throw ContractError("embedder input_dim must be positive");
    if (context_frames == 0) throw ContractError("context_frames must be >= 1");
    if (context_stride == 0) throw ContractError("context_stride must be >= 1");
    if (embedding_dim == 0) throw ContractError("embedding_dim must be >= 1");
    for (std::size_t h : hidden_sizes) {
      if (h == 0) throw ContractError("hidden layer sizes must be positive");
    }
  }

  std::size_t stacked_dim() const { return input_dim * context_frames; }

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> sizes{stacked_dim()};
    sizes.insert(sizes.end(), hidden_sizes.begin(), hidden_sizes.end());
    sizes.push_back(embedding_dim);
    return sizes;
  }

  friend bool operator==(const EmbedderConfig&, const EmbedderConfig&) = default;
};

/// The encoder: context stacking followed by FC-ReLU layers and a linear projection.
struct EmbedderParams {
  EmbedderConfig config;
  Mlp mlp;

  std::size_t parameter_count() const { return mlp.parameter_count(); }
  std::vector<double> flat() const { return mlp.flat(); }
  void assign_flat(std::span<const double> values) { mlp.assign_flat(values); }

  friend bool operator==(const EmbedderParams&, const EmbedderParams&) = default;
};

inline EmbedderParams init_params(const EmbedderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const auto sizes = config.layer_sizes();
  return EmbedderParams{config, init_mlp(sizes, rng)};
}

/// Row r is the concatenation of frames idx[r], idx[r]+stride, ..., idx[r]+(k-1)*stride,
/// each clamped to the last frame.
inline Tensor stack_context(const Tensor& frames, std::span<const std::size_t> indices, std::size_t context_frames,
                            std::size_t stride) {
  const std::size_t n = frames.rows(), d = frames.cols();
  Tensor out(Shape{indices.size(), d * context_frames});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n) throw ContractError("frame index out of range");
    for (std::size_t c = 0; c < context_frames; ++c) {
      const std::size_t src = std::min(indices[r] + c * stride, n - 1);
      std::copy_n(frames.row(src).begin(), d, out.row(r).begin() + c * d);
    }
  }
  return out;
}

struct BoundEmbedder {
  EmbedderConfig config;
  BoundMlp mlp;
};

inline BoundEmbedder bind(ad::Tape& tape, const EmbedderParams& params, bool trainable = true) {
  return BoundEmbedder{params.config, bind(tape, params.mlp, trainable)};
}

/// Embeddings (|indices| x embedding_dim) of the chosen frames of `seq`.
inline ad::Var embed_frames(const BoundEmbedder& enc, const FeatureSequence& seq, std::span<const std::size_t> indices) {
  if (seq.dim() != enc.config.input_dim) {
    throw ShapeError("sequence '" + seq.id + "' has feature dim " + std::to_string(seq.dim()) + ", embedder expects " +
                     std::to_string(enc.config.input_dim));
  }
  ad::Tape& tape = *enc.mlp.weights.front().tape();
  const ad::Var x =
      tape.constant(stack_context(seq.frames, indices, enc.config.context_frames, enc.config.context_stride));
  return forward(enc.mlp, x);
}

inline ad::Var embed_sequence(const BoundEmbedder& enc, const FeatureSequence& seq) {
  if (seq.length() == 0) throw ContractError("cannot embed an empty sequence");
  std::vector<std::size_t> all(seq.length());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return embed_frames(enc, seq, all);
}

/// Evaluation-only embedding with frozen parameters.
inline Tensor embed_sequence(const EmbedderParams& params, const FeatureSequence& seq) {
  ad::Tape tape;
  return embed_sequence(bind(tape, params, false), seq).value();
}

inline EmbeddingSequence embed(const EmbedderParams& params, const FeatureSequence& seq) {
  return EmbeddingSequence{seq.id, embed_sequence(params, seq), seq.fps, seq.annotation};
}

}  // namespace tcc
