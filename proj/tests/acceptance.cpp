// Acceptance suite: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. `--only 3,4` restricts the run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "support.hpp"
#include "tcc/tcc.hpp"

namespace fs = std::filesystem;
using tcc::FeatureSequence;
using tcc::LossKind;
using tcc::Tensor;
using testing_support::to_tensor;

namespace {

// Thresholds.
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr std::size_t kGradInstances = 50;
constexpr double kGradSeconds = 30.0;
constexpr std::size_t kOracleInstances = 200;
constexpr double kMinTrainedTau = 0.85;
constexpr double kMinCycle = 0.8;
constexpr double kMaxUntrainedTau = 0.3;
constexpr double kMaxAlignmentMinutes = 10.0;
constexpr double kMinRegressionOverMse = 0.03;
constexpr double kMinFewShotGain = 0.10;
constexpr std::size_t kRobustRuns = 10;

constexpr std::uint64_t kDataSeed = 1;
const std::vector<std::uint64_t> kTrainSeeds{1, 2, 3};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Split {
  std::vector<FeatureSequence> train, val;
};

Split alignment_data() {
  tcc::SyntheticConfig c;
  c.num_sequences = 50;
  c.obs_dim = 16;
  c.num_phases = 4;
  c.noise_std = 0.05;
  c.min_len = 60;
  c.max_len = 120;
  c.seed = kDataSeed;
  auto all = tcc::generate_synthetic(c);
  Split s;
  s.train.assign(all.begin(), all.begin() + 40);
  s.val.assign(all.begin() + 40, all.end());
  return s;
}

tcc::TrainConfig alignment_config(LossKind loss, std::uint64_t seed) {
  tcc::TrainConfig c;
  c.loss = loss;
  c.steps = 2000;
  c.batch_size = 4;
  c.frames_per_seq = 20;
  c.learning_rate = 1e-4;
  c.tcc.lambda = 1e-3;
  c.seed = seed;
  c.embedder.input_dim = 16;
  return c;
}

/// Trained models are shared between criteria 3, 4 and 5.
class ModelCache {
 public:
  explicit ModelCache(const Split& data) : data_(data) {}

  const tcc::EmbedderParams& get(LossKind loss, std::uint64_t seed) {
    const auto key = std::make_pair(static_cast<int>(loss), seed);
    auto it = models_.find(key);
    if (it == models_.end()) {
      const auto t0 = Clock::now();
      auto result = tcc::train(alignment_config(loss, seed), data_.train);
      const double s = seconds_since(t0);
      seconds_[key] = s;
      std::cout << "  trained " << tcc::to_string(loss) << " seed " << seed << " in " << fmt(s) << " s, final loss "
                << fmt(result.losses.back()) << '\n'
                << std::flush;
      it = models_.emplace(key, std::move(result.checkpoint.params)).first;
    }
    return it->second;
  }

  double seconds(LossKind loss, std::uint64_t seed) const {
    return seconds_.at(std::make_pair(static_cast<int>(loss), seed));
  }

 private:
  const Split& data_;
  std::map<std::pair<int, std::uint64_t>, tcc::EmbedderParams> models_;
  std::map<std::pair<int, std::uint64_t>, double> seconds_;
};

std::pair<double, double> val_alignment(const tcc::EmbedderParams& params, const Split& data) {
  tcc::EvalOptions opts;
  opts.label_metrics = false;
  const auto r = tcc::evaluate(params, data.train, data.val, opts);
  return {r.kendalls_tau, r.cycle_consistency};
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  const auto summaries = tcc::check_loss_gradients(kGradInstances, 2024, kGradTol, kGradStep);
  const double s = seconds_since(t0);
  Outcome o{s < kGradSeconds, ""};
  for (const auto& r : summaries) {
    o.pass = o.pass && r.failures == 0 && r.instances >= kGradInstances;
    o.detail += std::string(tcc::to_string(r.loss)) + " " + std::to_string(r.instances - r.failures) + "/" +
                std::to_string(r.instances) + " (max rel " + sci(r.max_rel_error) + "); ";
  }
  o.detail += "runtime " + fmt(s) + " s";
  return o;
}

Outcome metric_oracles() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> len(1, 10), dim(1, 4);
  std::map<std::string, std::size_t> mismatches{{"kendalls_tau", 0}, {"cycle_consistency", 0}, {"nn_align", 0},
                                                {"dtw_cost", 0}, {"anomaly", 0}};
  for (std::size_t t = 0; t < kOracleInstances; ++t) {
    const std::size_t d = dim(rng);
    const std::size_t n = std::max<std::size_t>(2, len(rng)), m = len(rng);
    const auto u = oracle::random_matrix(n, d, rng), v = oracle::random_matrix(m, d, rng);
    const Tensor tu = to_tensor(u), tv = to_tensor(v);

    if (tcc::kendalls_tau(tu, tv) != oracle::kendalls_tau(u, v)) ++mismatches["kendalls_tau"];
    if (tcc::cycle_consistency_fraction(tu, tv) != oracle::cycle_fraction(u, v)) ++mismatches["cycle_consistency"];

    const auto nn = tcc::nn_align(tu, tv);
    bool nn_ok = nn.pairs.size() == n;
    for (std::size_t i = 0; nn_ok && i < n; ++i) {
      const std::size_t j = oracle::argmin_row(u[i], v);
      nn_ok = nn.pairs[i] == std::make_pair(i, j) && nn.distances[i] == std::sqrt(oracle::sq_dist(u[i], v[j]));
    }
    if (!nn_ok) ++mismatches["nn_align"];

    if (tcc::dtw_align(tu, tv).cost != oracle::dtw_enumerate(u, v)) ++mismatches["dtw_cost"];

    std::vector<oracle::Matrix> refs{v, oracle::random_matrix(len(rng), d, rng)};
    const auto got = tcc::anomaly_score(tu, {to_tensor(refs[0]), to_tensor(refs[1])});
    const auto want = oracle::anomaly(u, refs);
    bool an_ok = true;
    for (std::size_t i = 0; i < n; ++i) an_ok = an_ok && got[i] == want[i];
    if (!an_ok) ++mismatches["anomaly"];
  }
  Outcome o{true, std::to_string(kOracleInstances) + " instances; mismatches:"};
  for (const auto& [name, count] : mismatches) {
    o.pass = o.pass && count == 0;
    o.detail += " " + name + "=" + std::to_string(count);
  }
  return o;
}

Outcome synthetic_alignment(ModelCache& cache, const Split& data) {
  std::vector<double> tau, cycle, untrained;
  double total_seconds = 0.0;
  for (std::uint64_t seed : kTrainSeeds) {
    const auto& params = cache.get(LossKind::tcc_regression, seed);
    const auto t0 = Clock::now();
    const auto [t, c] = val_alignment(params, data);
    total_seconds += cache.seconds(LossKind::tcc_regression, seed) + seconds_since(t0);
    tau.push_back(t);
    cycle.push_back(c);
    untrained.push_back(val_alignment(tcc::init_params(alignment_config(LossKind::tcc_regression, seed).embedder, seed),
                                      data)
                            .first);
  }
  const double per_run_minutes = total_seconds / 60.0 / static_cast<double>(kTrainSeeds.size());
  const bool tau_ok = median(tau) >= kMinTrainedTau;
  const bool cycle_ok = median(cycle) >= kMinCycle;
  const bool untrained_ok = std::abs(median(untrained)) < kMaxUntrainedTau;
  const bool time_ok = per_run_minutes < kMaxAlignmentMinutes;
  Outcome o{tau_ok && cycle_ok && untrained_ok && time_ok, ""};
  o.detail = "val tau " + list(tau) + " median " + fmt(median(tau)) + (tau_ok ? " ok" : " LOW") + "; cycle " +
             list(cycle) + " median " + fmt(median(cycle)) + (cycle_ok ? " ok" : " LOW") + "; untrained tau " +
             list(untrained) + " median " + fmt(median(untrained)) + (untrained_ok ? " ok" : " TOO HIGH") +
             "; train+eval " + fmt(per_run_minutes) + " min per seed" + (time_ok ? " ok" : " SLOW");
  return o;
}

Outcome ablation_ordering(ModelCache& cache, const Split& data) {
  std::map<LossKind, std::vector<double>> tau;
  for (LossKind k : {LossKind::tcc_regression, LossKind::tcc_classification, LossKind::tcc_mse}) {
    for (std::uint64_t seed : kTrainSeeds) tau[k].push_back(val_alignment(cache.get(k, seed), data).first);
  }
  const double reg = median(tau[LossKind::tcc_regression]);
  const double cls = median(tau[LossKind::tcc_classification]);
  const double mse = median(tau[LossKind::tcc_mse]);
  Outcome o{reg >= cls && cls >= mse && reg - mse >= kMinRegressionOverMse, ""};
  o.detail = "median val tau regression " + fmt(reg) + " " + list(tau[LossKind::tcc_regression]) +
             ", classification " + fmt(cls) + " " + list(tau[LossKind::tcc_classification]) + ", mse " + fmt(mse) +
             " " + list(tau[LossKind::tcc_mse]) + "; regression - mse = " + fmt(reg - mse);
  return o;
}

Outcome few_shot(ModelCache& cache, const Split& data) {
  std::vector<double> emb_acc, raw_acc, gain;
  for (std::uint64_t seed : kTrainSeeds) {
    const auto& params = cache.get(LossKind::tcc_regression, seed);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, data.train.size() - 1);
    const std::vector<FeatureSequence> one{data.train[pick(rng)]};

    std::vector<Tensor> one_emb{tcc::embed_sequence(params, one[0])}, val_emb;
    for (const auto& s : data.val) val_emb.push_back(tcc::embed_sequence(params, s));
    std::vector<Tensor> one_raw{one[0].frames}, val_raw;
    for (const auto& s : data.val) val_raw.push_back(s.frames);

    emb_acc.push_back(tcc::phase_accuracy(one_emb, one, val_emb, data.val, seed));
    raw_acc.push_back(tcc::phase_accuracy(one_raw, one, val_raw, data.val, seed));
    gain.push_back(emb_acc.back() - raw_acc.back());
  }
  Outcome o{median(gain) >= kMinFewShotGain, ""};
  o.detail = "1-video phase accuracy, embeddings " + list(emb_acc) + " vs raw " + list(raw_acc) + "; median gain " +
             fmt(median(gain));
  return o;
}

Outcome formula_examples() {
  const std::vector<double> y{1, 2, 3};
  const Tensor line = Tensor::from_rows({{0}, {1}, {2}, {3}, {4}});
  const Tensor reversed = Tensor::from_rows({{4}, {3}, {2}, {1}, {0}});
  const double r_perfect = tcc::r_squared(y, y);
  const double r_mean = tcc::r_squared(y, std::vector<double>{2, 2, 2});
  const double r_reverse = tcc::r_squared(y, std::vector<double>{3, 2, 1});
  const double tau_same = tcc::kendalls_tau(line, line);
  const double tau_rev = tcc::kendalls_tau(line, reversed);
  Outcome o{r_perfect == 1.0 && r_mean == 0.0 && r_reverse == -3.0 && tau_same == 1.0 && tau_rev == -1.0, ""};
  o.detail = "r2 " + fmt(r_perfect) + ", " + fmt(r_mean) + ", " + fmt(r_reverse) + "; tau " + fmt(tau_same) + ", " +
             fmt(tau_rev);
  return o;
}

Outcome determinism_and_persistence(const Split& data) {
  const auto dir = testing_support::scratch_dir("acceptance_persist");
  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  auto config = alignment_config(LossKind::tcc_regression, 5);
  config.steps = 30;
  const std::vector<FeatureSequence> subset(data.train.begin(), data.train.begin() + 8);
  tcc::train(config, subset, {dir / "a.ckpt", dir / "a.loss", nullptr});
  tcc::train(config, subset, {dir / "b.ckpt", dir / "b.loss", nullptr});
  check(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"), "checkpoint bytes differ between identical runs");
  check(slurp(dir / "a.loss") == slurp(dir / "b.loss"), "loss logs differ between identical runs");

  auto half = config;
  half.steps = 13;
  tcc::train(half, subset, {dir / "r.ckpt", dir / "r.loss", nullptr});
  tcc::train(config, subset, {dir / "r.ckpt", dir / "r.loss", nullptr}, tcc::load_checkpoint(dir / "r.ckpt"));
  check(slurp(dir / "r.ckpt") == slurp(dir / "a.ckpt"), "resumed checkpoint differs from uninterrupted run");
  check(slurp(dir / "r.loss") == slurp(dir / "a.loss"), "resumed loss log differs from uninterrupted run");

  const auto ck = tcc::load_checkpoint(dir / "a.ckpt");
  tcc::save_checkpoint(dir / "c.ckpt", ck);
  check(slurp(dir / "c.ckpt") == slurp(dir / "a.ckpt"), "checkpoint re-save changes bytes");
  check(tcc::load_checkpoint(dir / "c.ckpt") == ck, "checkpoint load is not exact");

  tcc::Dataset ds;
  ds.sequences = data.val;
  tcc::save_dataset(dir / "d1" / "manifest.json", ds);
  const auto back = tcc::load_dataset(dir / "d1" / "manifest.json");
  check(back.sequences == ds.sequences, "dataset load is not exact");
  tcc::save_dataset(dir / "d2" / "manifest.json", back);
  check(slurp(dir / "d1" / "manifest.json") == slurp(dir / "d2" / "manifest.json"), "manifest re-save changes bytes");
  for (const auto& s : ds.sequences) {
    check(slurp(dir / "d1" / (s.id + ".tccf")) == slurp(dir / "d2" / (s.id + ".tccf")),
          "sequence file re-save changes bytes: " + s.id);
  }

  Outcome o{failures.empty(), ""};
  o.detail = failures.empty() ? "identical runs, resume and file round trips are bit-exact" : failures.front();
  for (std::size_t i = 1; i < failures.size(); ++i) o.detail += "; " + failures[i];
  return o;
}

Outcome robustness(const Split& data) {
  std::size_t finite_runs = 0;
  std::string detail;
  const std::vector<LossKind> kinds{LossKind::tcc_regression, LossKind::tcc_classification, LossKind::tcc_mse,
                                    LossKind::tcc_tcn, LossKind::tcc_sal};
  for (std::size_t r = 0; r < kRobustRuns; ++r) {
    const bool degenerate = r % 2 == 0;
    std::vector<FeatureSequence> seqs(data.train.begin(), data.train.begin() + 4);
    if (degenerate) {
      seqs[1] = seqs[0];
      seqs[1].id += "_copy";
    }
    auto c = alignment_config(degenerate ? LossKind::tcc_regression : kinds[r / 2], 100 + r);
    c.steps = 60;
    c.learning_rate = 1e-3;
    if (degenerate) c.jitter_std = 0.0;
    bool ok = true;
    try {
      const auto result = tcc::train(c, seqs);
      for (double l : result.losses) ok = ok && std::isfinite(l);
      for (double p : result.checkpoint.params.flat()) ok = ok && std::isfinite(p);
    } catch (const tcc::Error& e) {
      ok = false;
      detail += std::string(" run ") + std::to_string(r) + ": " + e.what() + ";";
    }
    finite_runs += ok ? 1 : 0;
  }
  return Outcome{finite_runs == kRobustRuns,
                 std::to_string(finite_runs) + "/" + std::to_string(kRobustRuns) +
                     " runs finite (even runs: two identical sequences in a batch of 4, no jitter)" + detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int n) { return selected.empty() || selected.count(n) > 0; };

  const Split data = alignment_data();
  ModelCache cache(data);
  const std::vector<std::pair<int, std::string>> names{
      {1, "gradient correctness"},       {2, "metric oracles"},      {3, "synthetic alignment"},
      {4, "ablation ordering"},          {5, "few-shot direction"},  {6, "evaluation formulas"},
      {7, "determinism and persistence"}, {8, "robustness"}};

  bool all_pass = true;
  for (const auto& [n, name] : names) {
    if (!wanted(n)) continue;
    Outcome o;
    try {
      switch (n) {
        case 1: o = gradient_correctness(); break;
        case 2: o = metric_oracles(); break;
        case 3: o = synthetic_alignment(cache, data); break;
        case 4: o = ablation_ordering(cache, data); break;
        case 5: o = few_shot(cache, data); break;
        case 6: o = formula_examples(); break;
        case 7: o = determinism_and_persistence(data); break;
        case 8: o = robustness(data); break;
      }
    } catch (const std::exception& e) {
      o = Outcome{false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << name << "): " << o.detail << '\n'
              << std::flush;
  }
  return all_pass ? 0 : 1;
}
