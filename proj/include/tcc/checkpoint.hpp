#pragma once

// Binary checkpoints: magic "TCCE", u32 version, the embedder configuration,
// the training position, flat parameters and optimizer moments. All numbers
// are little-endian; parameters are f64.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <vector>

#include "tcc/binary_io.hpp"
#include "tcc/embedder.hpp"

namespace tcc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;

  static AdamState zeros(std::size_t n) { return AdamState{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)}; }
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct Checkpoint {
  EmbedderParams params;
  std::optional<Mlp> head;  ///< order-verification head, when trained with it
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  AdamState optimizer;      ///< moments over embedder parameters followed by head parameters

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline void write_sizes(std::ostream& os, const std::vector<std::size_t>& sizes) {
  io::write_u32(os, static_cast<std::uint32_t>(sizes.size()));
  for (std::size_t s : sizes) io::write_u32(os, static_cast<std::uint32_t>(s));
}

inline std::vector<std::size_t> read_sizes(io::Reader& in) {
  const std::uint32_t n = in.u32();
  if (n > 64) throw FormatError("implausible layer count " + std::to_string(n));
  std::vector<std::size_t> sizes(n);
  for (auto& s : sizes) s = in.u32();
  return sizes;
}

inline void write_values(std::ostream& os, const std::vector<double>& values) {
  io::write_u64(os, values.size());
  io::write_f64s(os, values);
}

inline std::vector<double> read_values(io::Reader& in, std::size_t expected) {
  const std::uint64_t n = in.u64();
  if (n != expected) {
    throw FormatError("expected " + std::to_string(expected) + " values, file holds " + std::to_string(n));
  }
  return in.f64s(n);
}

inline Mlp mlp_of_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw FormatError("network needs at least two layer sizes");
  Mlp m;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    m.layers.push_back(DenseLayer{Tensor(Shape{sizes[k], sizes[k + 1]}), Tensor(Shape{sizes[k + 1]})});
  }
  return m;
}

inline std::vector<std::size_t> sizes_of(const Mlp& m) {
  std::vector<std::size_t> sizes{m.layers.front().weight.rows()};
  for (const auto& l : m.layers) sizes.push_back(l.weight.cols());
  return sizes;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  const EmbedderConfig& c = ck.params.config;
  os.write("TCCE", 4);
  io::write_u32(os, kCheckpointVersion);
  io::write_u32(os, static_cast<std::uint32_t>(c.input_dim));
  io::write_u32(os, static_cast<std::uint32_t>(c.context_frames));
  io::write_u32(os, static_cast<std::uint32_t>(c.context_stride));
  io::write_u32(os, static_cast<std::uint32_t>(c.embedding_dim));
  detail::write_sizes(os, c.hidden_sizes);
  io::write_u64(os, ck.step);
  io::write_u64(os, ck.seed);
  detail::write_values(os, ck.params.flat());
  io::write_u32(os, ck.head ? 1 : 0);
  if (ck.head) {
    detail::write_sizes(os, detail::sizes_of(*ck.head));
    detail::write_values(os, ck.head->flat());
  }
  detail::write_values(os, ck.optimizer.m);
  detail::write_values(os, ck.optimizer.v);
}

inline Checkpoint read_checkpoint(std::istream& is, const std::string& what = "checkpoint") {
  io::Reader in(is, what);
  in.magic("TCCE");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(what + ": checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  EmbedderConfig& c = ck.params.config;
  c.input_dim = in.u32();
  c.context_frames = in.u32();
  c.context_stride = in.u32();
  c.embedding_dim = in.u32();
  c.hidden_sizes = detail::read_sizes(in);
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(what + ": " + e.what());
  }
  ck.step = in.u64();
  ck.seed = in.u64();
  ck.params.mlp = detail::mlp_of_sizes(c.layer_sizes());
  ck.params.assign_flat(detail::read_values(in, ck.params.parameter_count()));
  std::size_t total = ck.params.parameter_count();
  const std::uint32_t has_head = in.u32();
  if (has_head > 1) throw FormatError(what + ": bad head flag");
  if (has_head == 1) {
    Mlp head = detail::mlp_of_sizes(detail::read_sizes(in));
    head.assign_flat(detail::read_values(in, head.parameter_count()));
    total += head.parameter_count();
    ck.head = std::move(head);
  }
  const std::uint64_t nm = in.u64();
  if (nm != 0 && nm != total) throw FormatError(what + ": optimizer state does not match the parameters");
  ck.optimizer.m = in.f64s(nm);
  ck.optimizer.v = detail::read_values(in, nm);
  if (!in.at_end()) throw FormatError(what + ": trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, ck);
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError(path.string());
  return read_checkpoint(is, path.string());
}

}  // namespace tcc
