#pragma once

// Sequence datasets: synthetic generation, the manifest + TCCF on-disk format,
// feature jitter and the train/validation split.
//
// TCCF layout (little-endian): "TCCF", u32 version, u32 N, u32 d, N*d f64 row-major.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcc/binary_io.hpp"
#include "tcc/sequence.hpp"

namespace tcc {

// ---------------------------------------------------------------------------
// Synthetic actions

struct SyntheticConfig {
  std::size_t num_sequences = 50;
  std::size_t min_len = 60;
  std::size_t max_len = 120;
  std::size_t latent_dim = 2;
  std::size_t obs_dim = 16;
  std::size_t num_phases = 4;
  double noise_std = 0.05;
  double warp_strength = 1.0;
  double fps = 20.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_phases < 2) throw ContractError("num_phases must be >= 2");
    if (min_len < num_phases) throw ContractError("min_len must be >= num_phases");
    if (max_len < min_len) throw ContractError("max_len must be >= min_len");
    if (latent_dim == 0 || obs_dim == 0) throw ContractError("latent and observation dims must be positive");
    if (!(noise_std >= 0.0)) throw ContractError("noise_std must be >= 0");
    if (!(warp_strength >= 0.0)) throw ContractError("warp_strength must be >= 0");
    if (!(fps > 0.0)) throw ContractError("fps must be positive");
  }
};

/// The dataset-wide action: a smooth latent curve of progress p in [0, 1]
/// (a sum of four sinusoids per latent dimension) observed through a fixed
/// affine map.
struct SyntheticAction {
  static constexpr std::size_t kComponents = 4;

  std::vector<double> frequency;  ///< cycles over the whole action, per component
  Tensor amplitude;               ///< latent_dim x components
  Tensor phase;                   ///< latent_dim x components
  Tensor mixing;                  ///< obs_dim x latent_dim
  std::vector<double> offset;     ///< obs_dim

  static SyntheticAction sample(const SyntheticConfig& cfg, std::mt19937_64& rng) {
    SyntheticAction a;
    std::uniform_real_distribution<double> freq(0.5, 2.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t m = 0; m < kComponents; ++m) a.frequency.push_back(freq(rng));
    a.amplitude = Tensor(Shape{cfg.latent_dim, kComponents});
    a.phase = Tensor(Shape{cfg.latent_dim, kComponents});
    for (double& v : a.amplitude.data()) v = normal(rng);
    for (double& v : a.phase.data()) v = angle(rng);
    a.mixing = Tensor(Shape{cfg.obs_dim, cfg.latent_dim});
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
    for (double& v : a.mixing.data()) v = normal(rng) * scale;
    for (std::size_t c = 0; c < cfg.obs_dim; ++c) a.offset.push_back(normal(rng));
    return a;
  }

  std::vector<double> latent(double p) const {
    std::vector<double> z(amplitude.rows(), 0.0);
    for (std::size_t l = 0; l < z.size(); ++l)
      for (std::size_t m = 0; m < kComponents; ++m)
        z[l] += amplitude(l, m) * std::sin(2.0 * std::numbers::pi * frequency[m] * p + phase(l, m));
    return z;
  }

  /// Noise-free observation at progress p.
  std::vector<double> observe(double p) const {
    const auto z = latent(p);
    std::vector<double> x = offset;
    for (std::size_t c = 0; c < x.size(); ++c)
      for (std::size_t l = 0; l < z.size(); ++l) x[c] += mixing(c, l) * z[l];
    return x;
  }
};

/// Monotone progress p_0 = 0 < ... < p_{L-1} = 1 from log-normal step rates.
inline std::vector<double> sample_progress(std::size_t length, double warp_strength, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> p(length, 0.0);
  if (length == 1) return p;
  for (std::size_t t = 1; t < length; ++t) p[t] = p[t - 1] + std::exp(warp_strength * normal(rng));
  const double total = p.back();
  for (double& v : p) v /= total;
  p.back() = 1.0;
  return p;
}

inline int phase_of(double progress, std::size_t num_phases) {
  const auto k = static_cast<long>(std::floor(progress * static_cast<double>(num_phases)));
  return static_cast<int>(std::clamp<long>(k, 0, static_cast<long>(num_phases) - 1));
}

/// True when every phase label in [0, num_phases) occurs before the final frame,
/// which keeps the key-event count at num_phases + 1.
inline bool covers_all_phases(const std::vector<double>& progress, std::size_t num_phases) {
  std::vector<bool> seen(num_phases, false);
  for (std::size_t t = 0; t + 1 < progress.size(); ++t) seen[static_cast<std::size_t>(phase_of(progress[t], num_phases))] = true;
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

struct SyntheticSequence {
  FeatureSequence sequence;
  std::vector<double> progress;  ///< ground-truth p per frame
};

/// Generates sequences of one synthetic action; deterministic given the config.
inline std::vector<SyntheticSequence> generate_synthetic_with_progress(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const SyntheticAction action = SyntheticAction::sample(cfg, rng);
  std::uniform_int_distribution<std::size_t> length(cfg.min_len, cfg.max_len);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<SyntheticSequence> out;
  for (std::size_t s = 0; s < cfg.num_sequences; ++s) {
    const std::size_t len = length(rng);
    // Long enough sequences are redrawn until every phase is visited at least once.
    std::vector<double> p = sample_progress(len, cfg.warp_strength, rng);
    for (int attempt = 0; attempt < 1000 && len >= 4 * cfg.num_phases && !covers_all_phases(p, cfg.num_phases);
         ++attempt) {
      p = sample_progress(len, cfg.warp_strength, rng);
    }
    Tensor frames(Shape{len, cfg.obs_dim});
    std::vector<int> labels(len);
    for (std::size_t t = 0; t < len; ++t) {
      const auto x = action.observe(p[t]);
      for (std::size_t c = 0; c < cfg.obs_dim; ++c) frames(t, c) = x[c] + cfg.noise_std * noise(rng);
      labels[t] = phase_of(p[t], cfg.num_phases);
    }
    std::ostringstream id;
    id << "seq_" << std::setw(4) << std::setfill('0') << s;
    FeatureSequence seq{id.str(), std::move(frames), cfg.fps, PhaseAnnotation::from_labels(std::move(labels))};
    out.push_back(SyntheticSequence{std::move(seq), std::move(p)});
  }
  return out;
}

inline std::vector<FeatureSequence> generate_synthetic(const SyntheticConfig& cfg) {
  std::vector<FeatureSequence> out;
  for (auto& s : generate_synthetic_with_progress(cfg)) out.push_back(std::move(s.sequence));
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation and splitting

/// Adds i.i.d. N(0, std^2) to every feature; labels are untouched.
inline FeatureSequence jitter_augment(const FeatureSequence& seq, double std_dev, std::uint64_t seed) {
  if (!(std_dev >= 0.0)) throw ContractError("jitter std must be >= 0");
  FeatureSequence out = seq;
  if (std_dev == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, std_dev);
  for (double& v : out.frames.data()) v += noise(rng);
  return out;
}

/// Stable assignment of a sequence id to the validation split.
inline bool is_validation_id(const std::string& id, double val_fraction = 0.2, std::uint64_t seed = 0) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  auto mix = [&h](unsigned char byte) {
    h ^= byte;
    h *= 1099511628211ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  for (char ch : id) mix(static_cast<unsigned char>(ch));
  // splitmix64 finaliser: raw FNV-1a high bits barely depend on the last bytes.
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return static_cast<double>(h >> 11) * 0x1.0p-53 < val_fraction;
}

// ---------------------------------------------------------------------------
// On-disk format

inline constexpr std::uint32_t kSequenceFormatVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;
inline constexpr std::uint64_t kMaxSequenceValues = std::uint64_t{1} << 28;

inline void write_sequence_file(const std::filesystem::path& path, const Tensor& frames) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os.write("TCCF", 4);
  io::write_u32(os, kSequenceFormatVersion);
  io::write_u32(os, static_cast<std::uint32_t>(frames.rows()));
  io::write_u32(os, static_cast<std::uint32_t>(frames.cols()));
  io::write_f64s(os, frames.data());
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

inline Tensor read_sequence_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError(path.string());
  io::Reader in(is, path.string());
  in.magic("TCCF");
  const std::uint32_t version = in.u32();
  if (version != kSequenceFormatVersion) {
    throw VersionError(path.string() + ": sequence format version " + std::to_string(version) + ", expected " +
                       std::to_string(kSequenceFormatVersion));
  }
  const std::uint64_t n = in.u32(), d = in.u32();
  if (n == 0 || d == 0) throw FormatError(path.string() + ": empty sequence");
  if (n * d > kMaxSequenceValues) {
    throw SizeOverflowError(path.string() + ": " + std::to_string(n) + "x" + std::to_string(d) + " values");
  }
  Tensor frames(Shape{n, d}, in.f64s(n * d));
  if (!in.at_end()) throw FormatError(path.string() + ": trailing bytes after frame data");
  return frames;
}

/// Sequences plus the split each manifest record declares ("" when absent).
struct Dataset {
  std::vector<FeatureSequence> sequences;
  std::vector<std::string> splits;

  /// Records whose declared split matches; undeclared records fall back to the id hash.
  std::vector<FeatureSequence> subset(const std::string& split, double val_fraction = 0.2,
                                      std::uint64_t seed = 0) const {
    if (split != "train" && split != "val") throw ContractError("split must be 'train' or 'val'");
    std::vector<FeatureSequence> out;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
      std::string s = i < splits.size() ? splits[i] : "";
      if (s.empty()) s = is_validation_id(sequences[i].id, val_fraction, seed) ? "val" : "train";
      if (s == split) out.push_back(sequences[i]);
    }
    return out;
  }

  const FeatureSequence& find(const std::string& id) const {
    for (const auto& s : sequences) {
      if (s.id == id) return s;
    }
    throw ContractError("no sequence with id '" + id + "'");
  }
};

/// Writes `manifest_path` and one `<id>.tccf` per sequence next to it.
inline void save_dataset(const std::filesystem::path& manifest_path, const Dataset& data) {
  const auto dir = manifest_path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < data.sequences.size(); ++i) {
    const FeatureSequence& s = data.sequences[i];
    s.validate();
    const std::string file = s.id + ".tccf";
    write_sequence_file(dir / file, s.frames);
    nlohmann::ordered_json rec;
    rec["id"] = s.id;
    rec["path"] = file;
    rec["fps"] = s.fps;
    if (i < data.splits.size() && !data.splits[i].empty()) rec["split"] = data.splits[i];
    if (s.annotation) {
      rec["key_events"] = s.annotation->key_events;
      rec["phase_labels"] = s.annotation->phase_labels;
    }
    records.push_back(std::move(rec));
  }
  nlohmann::ordered_json manifest;
  manifest["format"] = "tcc-manifest";
  manifest["version"] = kManifestVersion;
  manifest["sequences"] = std::move(records);
  std::ofstream os(manifest_path, std::ios::trunc);
  if (!os) throw Error("cannot open '" + manifest_path.string() + "' for writing");
  os << manifest.dump(1) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw MissingFileError(manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  try {
    if (manifest.at("format").get<std::string>() != "tcc-manifest") {
      throw FormatError(manifest_path.string() + ": not a sequence manifest");
    }
    const auto version = manifest.at("version").get<std::uint32_t>();
    if (version != kManifestVersion) {
      throw VersionError(manifest_path.string() + ": manifest version " + std::to_string(version));
    }
    Dataset data;
    const auto dir = manifest_path.parent_path();
    for (const auto& rec : manifest.at("sequences")) {
      FeatureSequence s;
      s.id = rec.at("id").get<std::string>();
      s.fps = rec.at("fps").get<double>();
      s.frames = read_sequence_file(dir / rec.at("path").get<std::string>());
      if (rec.contains("key_events") || rec.contains("phase_labels")) {
        PhaseAnnotation a;
        a.key_events = rec.at("key_events").get<std::vector<std::size_t>>();
        a.phase_labels = rec.at("phase_labels").get<std::vector<int>>();
        s.annotation = std::move(a);
      }
      s.validate();
      data.sequences.push_back(std::move(s));
      data.splits.push_back(rec.value("split", std::string{}));
    }
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

}  // namespace tcc
