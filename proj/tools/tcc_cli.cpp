// Command-line front end: dataset generation, training, evaluation and the
// alignment applications.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tcc/tcc.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw tcc::Error("cannot open '" + path.string() + "' for writing");
  return os;
}

std::vector<std::string> split_ids(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  for (std::string id; std::getline(ss, id, ',');) {
    if (!id.empty()) out.push_back(id);
  }
  if (out.empty()) throw tcc::ContractError("empty id list");
  return out;
}

ordered_json report_json(const tcc::EvalReport& r) {
  ordered_json j;
  j["sequences"] = r.sequences;
  j["kendalls_tau"] = r.kendalls_tau;
  j["cycle_consistency"] = r.cycle_consistency;
  ordered_json acc = ordered_json::array();
  for (const auto& a : r.classification) {
    acc.push_back({{"fraction", a.fraction}, {"videos", a.videos}, {"accuracy", a.accuracy}});
  }
  j["classification"] = acc;
  if (r.progression_r2) j["progression_r2"] = *r.progression_r2;
  return j;
}

int exit_code_of(const std::exception& e) {
  if (dynamic_cast<const tcc::MissingFileError*>(&e)) return 3;
  if (dynamic_cast<const tcc::FormatError*>(&e) || dynamic_cast<const tcc::VersionError*>(&e) ||
      dynamic_cast<const tcc::TruncatedError*>(&e) || dynamic_cast<const tcc::SizeOverflowError*>(&e)) {
    return 4;
  }
  if (dynamic_cast<const tcc::MissingAnnotationError*>(&e)) return 5;
  if (dynamic_cast<const tcc::ShapeError*>(&e) || dynamic_cast<const tcc::ContractError*>(&e)) return 6;
  return 1;
}

// Options shared by the commands that embed sequences of a dataset.
struct ModelInputs {
  std::string data;
  std::string ckpt;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--data", data, "Dataset manifest")->required();
    cmd->add_option("--ckpt", ckpt, "Model checkpoint")->required();
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal cycle-consistency embedding toolkit"};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  app.require_subcommand(1);

  // synth-gen
  tcc::SyntheticConfig synth;
  std::string synth_out;
  std::size_t val_count = 0;
  auto* gen = app.add_subcommand("synth-gen", "Generate a synthetic action dataset");
  gen->add_option("--out", synth_out, "Output directory")->required();
  gen->add_option("--num", synth.num_sequences, "Number of sequences")->required();
  gen->add_option("--seed", synth.seed, "Generator seed")->required();
  gen->add_option("--phases", synth.num_phases, "Number of phases K")->capture_default_str();
  gen->add_option("--noise", synth.noise_std, "Observation noise std")->capture_default_str();
  gen->add_option("--min-len", synth.min_len)->capture_default_str();
  gen->add_option("--max-len", synth.max_len)->capture_default_str();
  gen->add_option("--dim", synth.obs_dim, "Feature dimension d")->capture_default_str();
  gen->add_option("--latent-dim", synth.latent_dim)->capture_default_str();
  gen->add_option("--warp", synth.warp_strength, "Temporal warp strength")->capture_default_str();
  gen->add_option("--val-count", val_count, "Mark the last N sequences as validation (default: id hash split)");

  // train
  tcc::TrainConfig tc;
  std::string train_data, train_out, loss_name = "tcc_regression", log_path, resume_path, summary_path;
  bool quiet = false;
  auto* tr = app.add_subcommand("train", "Train an embedder");
  tr->add_option("--data", train_data, "Dataset manifest")->required();
  tr->add_option("--loss", loss_name)
      ->check(CLI::IsMember({"tcc_regression", "tcc_classification", "tcc_mse", "tcn", "sal", "tcc+tcn", "tcc+sal"}))
      ->capture_default_str();
  tr->add_option("--steps", tc.steps)->required();
  tr->add_option("--seed", tc.seed)->required();
  tr->add_option("--out", train_out, "Checkpoint path")->required();
  tr->add_option("--lr", tc.learning_rate)->capture_default_str();
  tr->add_option("--weight-decay", tc.weight_decay)->capture_default_str();
  tr->add_option("--batch-size", tc.batch_size)->capture_default_str();
  tr->add_option("--frames", tc.frames_per_seq)->capture_default_str();
  tr->add_option("--lambda", tc.tcc.lambda)->capture_default_str();
  tr->add_option("--combine-weight", tc.combine_weight)->capture_default_str();
  tr->add_option("--jitter", tc.jitter_std, "Feature jitter std during training")->capture_default_str();
  tr->add_option("--embedding-dim", tc.embedder.embedding_dim)->capture_default_str();
  tr->add_option("--checkpoint-every", tc.checkpoint_every)->capture_default_str();
  tr->add_flag("--early-stop", tc.early_stop, "Stop on a moving-average loss plateau");
  tr->add_option("--log", log_path, "Loss log path (default: CKPT.loss)");
  tr->add_option("--summary", summary_path, "Summary JSON path (default: CKPT.json)");
  tr->add_option("--resume", resume_path, "Continue from this checkpoint");
  tr->add_flag("--quiet", quiet, "No per-step console output");

  // eval
  std::string eval_data, eval_ckpt, eval_split = "val", eval_json;
  std::vector<double> fractions;
  auto* ev = app.add_subcommand("eval", "Evaluate frozen embeddings");
  ev->add_option("--data", eval_data)->required();
  ev->add_option("--ckpt", eval_ckpt)->required();
  ev->add_option("--split", eval_split)->check(CLI::IsMember({"train", "val"}))->capture_default_str();
  ev->add_option("--label-fraction", fractions, "Fractions of labelled training videos (repeatable)");
  ev->add_option("--json", eval_json, "Also write the report as JSON");

  // align / simmat / anomaly / transfer
  ModelInputs align_in, sim_in, anom_in, xfer_in;
  std::string align_a, align_b, align_mode = "dtw", align_out;
  std::optional<std::size_t> align_band;
  auto* al = app.add_subcommand("align", "Align two sequences");
  align_in.add_to(al);
  al->add_option("--a", align_a)->required();
  al->add_option("--b", align_b)->required();
  al->add_option("--mode", align_mode)->check(CLI::IsMember({"nn", "dtw"}))->capture_default_str();
  al->add_option("--band", align_band, "DTW band half-width in frames");
  al->add_option("--out", align_out)->required();

  std::string sim_a, sim_b, sim_out;
  auto* sm = app.add_subcommand("simmat", "Write the embedding similarity matrix of two sequences");
  sim_in.add_to(sm);
  sm->add_option("--a", sim_a)->required();
  sm->add_option("--b", sim_b)->required();
  sm->add_option("--out", sim_out)->required();

  std::string anom_query, anom_refs, anom_out;
  auto* an = app.add_subcommand("anomaly", "Per-frame distance to the closest reference frame");
  anom_in.add_to(an);
  an->add_option("--query", anom_query)->required();
  an->add_option("--refs", anom_refs, "Comma-separated reference ids")->required();
  an->add_option("--out", anom_out)->required();

  std::string xfer_source, xfer_target, xfer_out, xfer_mode = "dtw";
  std::optional<std::size_t> xfer_band;
  auto* xf = app.add_subcommand("transfer", "Transfer phase labels from source to target frames");
  xfer_in.add_to(xf);
  xf->add_option("--source", xfer_source)->required();
  xf->add_option("--target", xfer_target)->required();
  xf->add_option("--mode", xfer_mode)->check(CLI::IsMember({"nn", "dtw"}))->capture_default_str();
  xf->add_option("--band", xfer_band, "DTW band half-width in frames");
  xf->add_option("--out", xfer_out)->required();

  // grad-check
  double gc_tol = 1e-4;
  std::size_t gc_instances = 50;
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every loss");
  gc->add_option("--tol", gc_tol)->capture_default_str();
  gc->add_option("--instances", gc_instances)->capture_default_str();
  gc->add_option("--seed", gc_seed)->capture_default_str();

  // export-embeddings
  ModelInputs exp_in;
  std::string exp_out;
  auto* ex = app.add_subcommand("export-embeddings", "Embed every sequence and write a dataset of embeddings");
  exp_in.add_to(ex);
  ex->add_option("--out", exp_out, "Output manifest path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      tcc::Dataset data;
      data.sequences = tcc::generate_synthetic(synth);
      if (val_count > data.sequences.size()) throw tcc::ContractError("--val-count exceeds --num");
      if (val_count > 0) {
        for (std::size_t i = 0; i < data.sequences.size(); ++i) {
          data.splits.push_back(i + val_count >= data.sequences.size() ? "val" : "train");
        }
      }
      const fs::path manifest = fs::path(synth_out) / "manifest.json";
      tcc::save_dataset(manifest, data);
      std::cout << "wrote " << data.sequences.size() << " sequences to " << manifest.string() << '\n';
    } else if (*tr) {
      tc.loss = tcc::parse_loss_kind(loss_name);
      const tcc::Dataset data = tcc::load_dataset(train_data);
      const auto train_set = data.subset("train");
      if (train_set.empty()) throw tcc::ContractError("dataset has no training sequences");
      tc.embedder.input_dim = train_set.front().dim();
      tcc::TrainOutputs outputs;
      outputs.checkpoint = fs::path(train_out);
      outputs.loss_log = fs::path(log_path.empty() ? train_out + ".loss" : log_path);
      if (!quiet) outputs.console = &std::cout;
      std::optional<tcc::Checkpoint> resume;
      if (!resume_path.empty()) resume = tcc::load_checkpoint(resume_path);
      const tcc::TrainResult r = tcc::train(tc, train_set, outputs, resume);

      ordered_json summary;
      summary["loss"] = loss_name;
      summary["seed"] = tc.seed;
      summary["steps"] = r.checkpoint.step;
      summary["stopped_early"] = r.stopped_early;
      summary["first_loss"] = r.losses.empty() ? 0.0 : r.losses.front();
      summary["final_loss"] = r.losses.empty() ? 0.0 : r.losses.back();
      summary["wallclock_ms"] = r.wallclock_ms;
      summary["checkpoint"] = train_out;
      open_out(summary_path.empty() ? train_out + ".json" : summary_path) << summary.dump(2) << '\n';
    } else if (*ev) {
      const tcc::Dataset data = tcc::load_dataset(eval_data);
      const tcc::Checkpoint ck = tcc::load_checkpoint(eval_ckpt);
      tcc::EvalOptions opts;
      if (!fractions.empty()) opts.label_fractions = fractions;
      const tcc::EvalReport r = tcc::evaluate(ck.params, data.subset("train"), data.subset(eval_split), opts);
      std::cout.precision(6);
      std::cout << "split=" << eval_split << '\n'
                << "sequences=" << r.sequences << '\n'
                << "kendalls_tau=" << r.kendalls_tau << '\n'
                << "cycle_consistency=" << r.cycle_consistency << '\n';
      for (const auto& a : r.classification) {
        std::cout << "accuracy@" << a.fraction << '=' << a.accuracy << '\n';
      }
      if (r.progression_r2) std::cout << "progression_r2=" << *r.progression_r2 << '\n';
      if (!eval_json.empty()) open_out(eval_json) << report_json(r).dump(2) << '\n';
    } else if (*al) {
      const tcc::Dataset data = tcc::load_dataset(align_in.data);
      const tcc::Checkpoint ck = tcc::load_checkpoint(align_in.ckpt);
      const tcc::Tensor u = tcc::embed_sequence(ck.params, data.find(align_a));
      const tcc::Tensor v = tcc::embed_sequence(ck.params, data.find(align_b));
      const auto result = align_mode == "nn" ? tcc::nn_align(u, v) : tcc::dtw_align(u, v, align_band);
      auto os = open_out(align_out);
      tcc::write_alignment(os, result);
    } else if (*sm) {
      const tcc::Dataset data = tcc::load_dataset(sim_in.data);
      const tcc::Checkpoint ck = tcc::load_checkpoint(sim_in.ckpt);
      auto os = open_out(sim_out);
      tcc::write_similarity_matrix(os, tcc::similarity_matrix(tcc::embed_sequence(ck.params, data.find(sim_a)),
                                                              tcc::embed_sequence(ck.params, data.find(sim_b))));
    } else if (*an) {
      const tcc::Dataset data = tcc::load_dataset(anom_in.data);
      const tcc::Checkpoint ck = tcc::load_checkpoint(anom_in.ckpt);
      std::vector<tcc::Tensor> refs;
      for (const auto& id : split_ids(anom_refs)) refs.push_back(tcc::embed_sequence(ck.params, data.find(id)));
      const tcc::Tensor scores = tcc::anomaly_score(tcc::embed_sequence(ck.params, data.find(anom_query)), refs);
      auto os = open_out(anom_out);
      os.precision(17);
      for (std::size_t i = 0; i < scores.size(); ++i) os << i << ' ' << scores[i] << '\n';
    } else if (*xf) {
      const tcc::Dataset data = tcc::load_dataset(xfer_in.data);
      const tcc::Checkpoint ck = tcc::load_checkpoint(xfer_in.ckpt);
      const tcc::FeatureSequence& source = data.find(xfer_source);
      const tcc::FeatureSequence& target = data.find(xfer_target);
      if (!source.annotation) throw tcc::MissingAnnotationError(source.id);
      const tcc::Tensor t = tcc::embed_sequence(ck.params, target);
      const tcc::Tensor s = tcc::embed_sequence(ck.params, source);
      const auto alignment = xfer_mode == "nn" ? tcc::nn_align(t, s) : tcc::dtw_align(t, s, xfer_band);
      const auto labels = tcc::transfer_labels(alignment, source.annotation->phase_labels, target.length());
      auto os = open_out(xfer_out);
      for (std::size_t i = 0; i < labels.size(); ++i) os << i << ' ' << labels[i] << '\n';
    } else if (*gc) {
      bool ok = true;
      for (const auto& s : tcc::check_loss_gradients(gc_instances, gc_seed, gc_tol)) {
        std::cout << tcc::to_string(s.loss) << ": " << (s.failures == 0 ? "ok" : "FAIL") << " instances=" << s.instances
                  << " failures=" << s.failures << " max_rel_error=" << s.max_rel_error << '\n';
        ok = ok && s.failures == 0;
      }
      return ok ? 0 : 2;
    } else if (*ex) {
      const tcc::Dataset data = tcc::load_dataset(exp_in.data);
      const tcc::Checkpoint ck = tcc::load_checkpoint(exp_in.ckpt);
      tcc::Dataset out;
      out.splits = data.splits;
      for (const auto& s : data.sequences) out.sequences.push_back(tcc::embed(ck.params, s));
      tcc::save_dataset(exp_out, out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_of(e);
  }
  return 0;
}
