#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tcc/error.hpp"
#include "tcc/tensor.hpp"

namespace tcc {

/// Key events (frame indices, implicit start 0 and end N-1 included) and the
/// per-frame phase label derived from them.
struct PhaseAnnotation {
  std::vector<std::size_t> key_events;
  std::vector<int> phase_labels;

  std::size_t num_phases() const { return key_events.size() < 2 ? 0 : key_events.size() - 1; }

  /// Throws ContractError unless the annotation is consistent with a sequence of `n` frames.
  void validate(std::size_t n) const {
    if (phase_labels.size() != n) throw ContractError("phase label count does not match frame count");
    if (key_events.size() < 2) throw ContractError("annotation needs at least start and end events");
    if (key_events.front() != 0 || key_events.back() != n - 1) {
      throw ContractError("key events must start at frame 0 and end at frame N-1");
    }
    for (std::size_t e = 1; e < key_events.size(); ++e) {
      if (key_events[e] <= key_events[e - 1]) throw ContractError("key events must be strictly increasing");
    }
    for (std::size_t e = 0; e + 1 < key_events.size(); ++e) {
      const int expected = phase_labels[key_events[e]];
      if (expected < 0) throw ContractError("negative phase label");
      // The closing event N-1 may belong to the last phase or start a one-frame run.
      for (std::size_t i = key_events[e]; i < key_events[e + 1]; ++i) {
        if (phase_labels[i] != expected) throw ContractError("phase label changes between key events");
      }
    }
  }

  /// Builds the annotation from per-frame labels: one key event at the first
  /// frame of each phase run, plus the final frame.
  static PhaseAnnotation from_labels(std::vector<int> labels) {
    PhaseAnnotation a;
    const std::size_t n = labels.size();
    if (n < 2) throw ContractError("annotation needs at least two frames");
    for (std::size_t i = 0; i < n; ++i) {
      if (i == 0 || labels[i] != labels[i - 1]) a.key_events.push_back(i);
    }
    if (a.key_events.back() != n - 1) a.key_events.push_back(n - 1);
    a.phase_labels = std::move(labels);
    return a;
  }

  friend bool operator==(const PhaseAnnotation&, const PhaseAnnotation&) = default;
};

/// One video as per-frame feature vectors (N x d).
struct FeatureSequence {
  std::string id;
  Tensor frames;
  double fps = 20.0;
  std::optional<PhaseAnnotation> annotation;

  std::size_t length() const { return frames.rank() == 2 ? frames.rows() : 0; }
  std::size_t dim() const { return frames.rank() == 2 ? frames.cols() : 0; }

  void validate() const {
    if (frames.rank() != 2 || frames.rows() == 0) throw ContractError("sequence '" + id + "' has no frames");
    if (!frames.all_finite()) throw ContractError("sequence '" + id + "' has non-finite features");
    if (!(fps > 0.0)) throw ContractError("sequence '" + id + "' has non-positive fps");
    if (annotation) annotation->validate(length());
  }

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

/// Per-frame embeddings share the sequence layout.
using EmbeddingSequence = FeatureSequence;

}  // namespace tcc
