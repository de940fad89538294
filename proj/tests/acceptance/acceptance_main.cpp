// Acceptance gate: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include <CLI11.hpp>

#include "anyshot/errors.hpp"
#include "anyshot/experiment.hpp"
#include "anyshot/gradient_suite.hpp"
#include "anyshot/itq.hpp"
#include "anyshot/log.hpp"
#include "anyshot/retrieval.hpp"
#include "anyshot/sem_pcyc.hpp"

namespace fs = std::filesystem;
using namespace anyshot;

namespace {

// Pinned tolerances.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 30.0;
constexpr std::size_t kGradInstances = 20;
constexpr double kMetricTolerance = 1e-9;
constexpr double kMetricSeconds = 60.0;
constexpr std::size_t kMetricInstances = 100;
constexpr double kClosedFormTolerance = 1e-12;
constexpr double kOrthogonalityDrift = 1e-6;
constexpr std::size_t kItqSeeds = 20;
constexpr std::size_t kItqIterations = 50;
constexpr double kZeroShotFloor = 0.50;
constexpr double kBaselineRatio = 3.0;
constexpr double kFewShotInversion = 0.02;
constexpr double kPruneMildDrop = -0.05;
constexpr double kPruneSevereGap = 0.05;
const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// Cached synthetic runs. The cache is wiped whenever this binary is rebuilt.

class Workspace {
 public:
  explicit Workspace(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    const auto exe = fs::read_symlink("/proc/self/exe");
    const auto stamp = std::to_string(fs::last_write_time(exe).time_since_epoch().count());
    const fs::path stamp_file = dir_ / "stamp";
    std::string old;
    if (std::ifstream in(stamp_file); in) std::getline(in, old);
    if (old != stamp) {
      fs::remove_all(dir_);
      fs::create_directories(dir_);
      std::ofstream(stamp_file) << stamp << '\n';
    }
  }

  const fs::path& dir() const { return dir_; }

  ExperimentConfig config(std::uint64_t seed) {
    const fs::path bench = dir_ / ("bench_s" + std::to_string(seed));
    if (!fs::exists(bench / "experiment.conf")) write_synthetic_experiment(bench, seed);
    return ExperimentConfig::load(bench / "experiment.conf");
  }

  const ExperimentData& data(std::uint64_t seed, std::size_t k) {
    const auto key = std::make_pair(seed, k);
    auto it = data_.find(key);
    if (it == data_.end()) it = data_.emplace(key, load_experiment_data(config(seed), k)).first;
    return it->second;
  }

  SemPcycModel cached(const std::string& name, std::uint64_t seed, const std::function<SemPcycModel()>& make) {
    const fs::path path = dir_ / (name + "_s" + std::to_string(seed) + ".spck");
    if (fs::exists(path)) return SemPcycModel::load(path);
    const auto start = std::chrono::steady_clock::now();
    SemPcycModel m = make();
    m.save(path);
    std::cout << "  trained " << name << " seed " << seed << " in " << fmt(seconds_since(start)) << " s\n";
    return m;
  }

  SemPcycModel variant(const AblationVariant& v, std::uint64_t seed) {
    return cached(v.name, seed, [&] {
      return train_model(config(seed), data(seed, 0), v.weights, v.use_side_encoder).model;
    });
  }

  SemPcycModel full(std::uint64_t seed) { return variant(ablation_variants(config(seed).weights).back(), seed); }

  double zero_shot(const SemPcycModel& m, std::uint64_t seed, Setting s = Setting::kZeroShot) {
    return evaluate_setting(m, data(seed, 0), s).map_at_all;
  }

 private:
  fs::path dir_;
  std::map<std::pair<std::uint64_t, std::size_t>, ExperimentData> data_;
};

// ---------------------------------------------------------------------------

Outcome gradient_suite(Workspace&) {
  GradientSuiteConfig cfg;
  cfg.instances = kGradInstances;
  const auto start = std::chrono::steady_clock::now();
  const auto rows = run_gradient_suite(cfg);
  const double secs = seconds_since(start);
  std::set<std::string> terms;
  std::set<std::size_t> instances;
  for (const auto& r : rows) {
    terms.insert(r.term);
    instances.insert(r.instance);
  }
  const double worst = max_error(rows);
  std::ostringstream d;
  d << rows.size() << " checks over " << terms.size() << " terms and " << instances.size()
    << " instances, max relative error " << worst << ", " << fmt(secs) << " s";
  return {worst < kGradTolerance && secs < kGradSeconds && instances.size() >= kGradInstances &&
              terms.size() >= 11,
          d.str()};
}

struct OracleResult {
  double map = 0.0;
  double p100 = 0.0;
  std::vector<double> ap;
};

// Independent brute-force retrieval metrics.
OracleResult oracle_metrics(const Eigen::MatrixXd& q, const Eigen::MatrixXd& g, const std::vector<int>& qk,
                            const std::vector<int>& gk) {
  OracleResult out;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<std::pair<double, Eigen::Index>> d;
    for (Eigen::Index j = 0; j < g.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < g.cols(); ++c) s += (q(i, c) - g(j, c)) * (q(i, c) - g(j, c));
      d.emplace_back(s, j);
    }
    std::sort(d.begin(), d.end());
    std::size_t hits = 0, top_hits = 0;
    double sum = 0.0;
    const std::size_t depth = std::min<std::size_t>(100, d.size());
    for (std::size_t r = 0; r < d.size(); ++r) {
      if (gk[static_cast<std::size_t>(d[r].second)] == qk[static_cast<std::size_t>(i)]) {
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        if (r < depth) ++top_hits;
      }
    }
    if (hits == 0) continue;
    out.ap.push_back(sum / static_cast<double>(hits));
    out.p100 += static_cast<double>(top_hits) / static_cast<double>(depth);
  }
  out.map = mean(out.ap);
  out.p100 /= static_cast<double>(out.ap.size());
  return out;
}

Outcome metric_oracle(Workspace&) {
  std::mt19937_64 gen(20240601);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t t = 0; t < kMetricInstances; ++t) {
    const auto nq = static_cast<Eigen::Index>(1 + gen() % 200);
    const auto ng = static_cast<Eigen::Index>(1 + gen() % 500);
    const auto dim = static_cast<Eigen::Index>(2 + gen() % 15);
    const int classes = static_cast<int>(1 + gen() % 10);
    Eigen::MatrixXd q(nq, dim), g(ng, dim);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = normal(gen);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(gen);
    if (t % 3 == 0) {
      q = q.array().round();
      g = g.array().round();
    }
    std::vector<int> qk(static_cast<std::size_t>(nq)), gk(static_cast<std::size_t>(ng));
    for (auto& k : qk) k = static_cast<int>(gen() % static_cast<std::uint64_t>(classes));
    for (auto& k : gk) k = static_cast<int>(gen() % static_cast<std::uint64_t>(classes));
    if (std::none_of(qk.begin(), qk.end(), [&](int k) { return std::count(gk.begin(), gk.end(), k) > 0; })) {
      gk[0] = qk[0];
    }
    RelevanceKeys keys;
    keys.queries.assign(qk.begin(), qk.end());
    keys.gallery.assign(gk.begin(), gk.end());
    const EvalReport r = evaluate_embeddings(q, g, keys);
    const OracleResult o = oracle_metrics(q, g, qk, gk);
    if (r.per_query_ap.size() != o.ap.size()) return {false, "instance " + std::to_string(t) + ": query count differs"};
    worst = std::max({worst, std::abs(r.map_at_all - o.map), std::abs(r.precision_at_100 - o.p100)});
    for (std::size_t i = 0; i < o.ap.size(); ++i) worst = std::max(worst, std::abs(r.per_query_ap[i] - o.ap[i]));
    ++checked;
  }
  const double secs = seconds_since(start);
  std::ostringstream d;
  d << checked << " instances, max abs deviation " << worst << ", " << fmt(secs) << " s";
  return {worst <= kMetricTolerance && secs < kMetricSeconds, d.str()};
}

Outcome closed_form_losses(Workspace&) {
  std::vector<std::pair<std::string, double>> dev;
  dev.emplace_back("ap[1,0,1,0]", std::abs(average_precision({true, false, true, false}) - 5.0 / 6.0));
  const std::size_t target[] = {0};
  dev.emplace_back("ce uniform K=4",
                   std::abs(softmax_cross_entropy(Eigen::MatrixXd::Zero(1, 4), target).loss - std::log(4.0)));
  DenseLayer hidden{Eigen::MatrixXd::Zero(3, 4), Eigen::MatrixXd::Zero(1, 4), Activation::kLeakyRelu};
  DenseLayer out{Eigen::MatrixXd::Zero(4, 1), Eigen::MatrixXd::Zero(1, 1), Activation::kSigmoid};
  const DenseNet half({hidden, out});
  const Eigen::MatrixXd fakes[] = {Eigen::MatrixXd::Random(5, 3), Eigen::MatrixXd::Random(6, 3)};
  dev.emplace_back("adversarial at D=0.5",
                   std::abs(adversarial_loss(AdversarialBranch::kSemantic, half, Eigen::MatrixXd::Random(4, 3), fakes)
                                .objective -
                            4.0 * std::log(0.5)));
  const LossComponents ones{1, 1, 1, 1, 1, 1, 1, 1};
  dev.emplace_back("total objective", std::abs(total_objective(ones, LossWeights{}) - 6.01));
  bool pass = true;
  std::string d;
  for (const auto& [name, v] : dev) {
    pass = pass && v <= kClosedFormTolerance;
    std::ostringstream s;
    s << name << " dev " << v;
    d += (d.empty() ? "" : "; ") + s.str();
  }
  return {pass, d};
}

Outcome itq_properties(Workspace&) {
  bool monotone = true;
  double drift = 0.0;
  for (std::size_t seed = 0; seed < kItqSeeds; ++seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd x(400, 32);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(gen);
    const ItqFit fit = itq_fit(x, 16, kItqIterations);
    for (std::size_t t = 1; t < fit.errors.size(); ++t) {
      if (fit.errors[t] > fit.errors[t - 1] * (1.0 + 1e-12)) monotone = false;
    }
    const auto& r = fit.codec.rotation;
    drift = std::max(drift, (r.transpose() * r - Eigen::MatrixXd::Identity(r.rows(), r.cols())).cwiseAbs().maxCoeff());
  }

  // b = 1: the only orthogonal 1x1 rotations are +1 and -1.
  std::mt19937_64 gen(99);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(200, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(gen) * (1.0 + static_cast<double>(i % 6));
  const ItqFit fit = itq_fit(x, 1, kItqIterations);
  const Eigen::VectorXd v = (x.rowwise() - fit.codec.mean) * fit.codec.projection;
  double best = INFINITY;
  double best_r = 0.0;
  for (double rot : {1.0, -1.0}) {
    const Eigen::VectorXd vr = v * rot;
    const double err = (vr.unaryExpr([](double a) { return a >= 0.0 ? 1.0 : -1.0; }) - vr).squaredNorm();
    if (err < best) {
      best = err;
      best_r = rot;
    }
  }
  const BitCodes codes = itq_encode(fit.codec, x);
  bool codes_match = true;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const bool expected = v(i) * fit.codec.rotation(0, 0) >= 0.0;
    codes_match = codes_match && codes.bit(static_cast<std::size_t>(i), 0) == expected;
  }
  const double b1_dev = std::abs(fit.errors.back() - best) / std::max(1.0, best);
  std::ostringstream d;
  d << "monotone over " << kItqSeeds << " seeds: " << (monotone ? "yes" : "no") << ", max orthogonality drift "
    << drift << ", b=1 error vs brute force rel dev " << b1_dev << " (rotation " << fit.codec.rotation(0, 0)
    << ", brute-force " << best_r << ")";
  return {monotone && drift < kOrthogonalityDrift && b1_dev < 1e-12 && codes_match, d.str()};
}

std::vector<double> zero_shot_maps(Workspace& ws, Setting setting = Setting::kZeroShot) {
  std::vector<double> out;
  for (auto seed : kSeeds) out.push_back(ws.zero_shot(ws.full(seed), seed, setting));
  return out;
}

Outcome synthetic_end_to_end(Workspace& ws) {
  const auto start = std::chrono::steady_clock::now();
  const auto maps = zero_shot_maps(ws);
  return {mean(maps) >= kZeroShotFloor,
          "zero-shot mAP@all per seed " + list(maps) + ", mean " + fmt(mean(maps)) + " (floor " +
              fmt(kZeroShotFloor) + "), " + fmt(seconds_since(start)) + " s incl. cache"};
}

Outcome random_baseline_ratio(Workspace& ws) {
  const auto trained = zero_shot_maps(ws);
  std::vector<double> random;
  for (auto seed : kSeeds) {
    const auto cfg = ws.config(seed);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.epochs = 0;
    random.push_back(ws.zero_shot(train(ws.data(seed, 0).episode, ws.data(seed, 0).side, cfg.weights, tc).model, seed));
  }
  const double ratio = mean(trained) / mean(random);
  return {ratio >= kBaselineRatio, "trained " + fmt(mean(trained)) + " vs untrained " + list(random) + " mean " +
                                       fmt(mean(random)) + ", ratio " + fmt(ratio) + " (need " +
                                       fmt(kBaselineRatio) + ")"};
}

Outcome generalized_not_above_zero_shot(Workspace& ws) {
  const auto zs = zero_shot_maps(ws);
  const auto gzs = zero_shot_maps(ws, Setting::kGeneralizedZeroShot);
  bool pass = true;
  for (std::size_t i = 0; i < zs.size(); ++i) pass = pass && gzs[i] <= zs[i];
  return {pass, "generalized " + list(gzs) + " vs zero-shot " + list(zs)};
}

Outcome ablation_trend(Workspace& ws) {
  const auto variants = ablation_variants(ws.config(kSeeds.front()).weights);
  std::map<std::string, std::vector<double>> maps;
  for (const auto& v : variants) {
    if (v.name != "adversarial_only" && v.name != "adversarial_cycle" && v.name != "adversarial_classification" &&
        v.name != "full") {
      continue;
    }
    for (auto seed : kSeeds) maps[v.name].push_back(ws.zero_shot(ws.variant(v, seed), seed));
  }
  const double full = mean(maps["full"]);
  bool pass = true;
  std::string d;
  for (const auto& [name, m] : maps) {
    if (name != "full") pass = pass && full >= mean(m);
    d += (d.empty() ? "" : ", ") + name + " " + fmt(mean(m));
  }
  return {pass, d};
}

Outcome few_shot_trend(Workspace& ws) {
  std::vector<double> by_k{mean(zero_shot_maps(ws))};
  for (std::size_t k : {1, 5}) {
    std::vector<double> maps;
    for (auto seed : kSeeds) {
      const auto cfg = ws.config(seed);
      const ExperimentData& data = ws.data(seed, k);
      const SemPcycModel tuned = ws.cached("full_k" + std::to_string(k), seed, [&] {
        FinetuneConfig fc = cfg.finetune;
        fc.seed = cfg.seed;
        return few_shot_finetune(ws.full(seed), data.episode, data.side, cfg.weights, fc).model;
      });
      maps.push_back(evaluate_setting(tuned, data, Setting::kFewShot).map_at_all);
    }
    by_k.push_back(mean(maps));
  }
  std::size_t inversions = 0;
  double worst = 0.0;
  for (std::size_t i = 1; i < by_k.size(); ++i) {
    if (by_k[i] < by_k[i - 1]) {
      ++inversions;
      worst = std::max(worst, by_k[i - 1] - by_k[i]);
    }
  }
  return {inversions == 0 || (inversions == 1 && worst <= kFewShotInversion),
          "mean mAP for k=0,1,5: " + list(by_k) + ", inversions " + std::to_string(inversions)};
}

Outcome prune_sweep(Workspace& ws) {
  std::map<double, std::vector<double>> maps;
  for (auto seed : kSeeds) {
    const SemPcycModel full = ws.full(seed);
    maps[0.0].push_back(ws.zero_shot(full, seed));
    for (double ratio : {0.1, 0.9}) {
      const auto cfg = ws.config(seed);
      ExperimentData data = ws.data(seed, 0);
      const PruneResult pruned = prune_side_info(full, data.side, ratio);
      data.side = pruned.table;
      const SemPcycModel retrained = ws.cached("prune" + std::to_string(static_cast<int>(ratio * 100)), seed, [&] {
        return train_model(cfg, data, cfg.weights, true).model;
      });
      maps[ratio].push_back(evaluate_setting(retrained, data, Setting::kZeroShot).map_at_all);
    }
  }
  const double m0 = mean(maps[0.0]), m10 = mean(maps[0.1]), m90 = mean(maps[0.9]);
  return {m10 - m0 >= kPruneMildDrop && m10 - m90 >= kPruneSevereGap,
          "mean mAP at 0%/10%/90% removal: " + fmt(m0) + " / " + fmt(m10) + " / " + fmt(m90) +
              "; 10% change " + fmt(m10 - m0) + ", 90% gap " + fmt(m10 - m90)};
}

int run(const std::string& cli, const std::string& args) {
  const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), dir).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return out;
}

Outcome determinism(Workspace& ws, const std::string& cli) {
  const fs::path root = ws.dir() / "determinism";
  fs::remove_all(root);
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* name : {"a", "b"}) {
    const fs::path dir = root / name;
    if (run(cli, "synth --seed 11 --out " + (dir / "data").string()) != 0) return {false, "synth failed"};
    std::ofstream(dir / "data" / "experiment.conf", std::ios::app)
        << "train.epochs = 3\nfinetune.steps = 20\neval.itq_bits = 32\nprune.ratios = 0, 0.5\n"
        << "gradcheck.instances = 3\n";
    const std::string conf = "--config " + (dir / "data" / "experiment.conf").string() + " --out " +
                             (dir / "out").string();
    for (const std::string sub : {"build-sideinfo", "train", "finetune --k 2", "evaluate",
                                  "evaluate --setting few_shot --k 2", "evaluate --setting zero_shot --binary",
                                  "prune-sweep", "ablate --k 2", "gradcheck"}) {
      if (run(cli, sub + " " + conf) != 0) return {false, "subcommand '" + sub + "' failed"};
    }
    runs.push_back(snapshot(dir));
  }
  std::size_t differing = 0;
  std::string first;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) {
      ++differing;
      if (first.empty()) first = name;
    }
  }
  const bool same_set = runs[0].size() == runs[1].size();
  return {differing == 0 && same_set && !runs[0].empty(),
          std::to_string(runs[0].size()) + " artifacts compared across two runs, " + std::to_string(differing) +
              " differ" + (first.empty() ? "" : " (first: " + first + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string criterion;
  std::string cache = "acceptance_cache";
  std::string cli = "anyshot";
  app.add_option("--criterion", criterion, "criterion id, or 'all'")->required();
  app.add_option("--cache-dir", cache, "directory for cached benchmarks and models");
  app.add_option("--cli", cli, "path to the anyshot executable");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome(Workspace&)>>> criteria = {
      {"gradient_suite", gradient_suite},
      {"metric_oracle", metric_oracle},
      {"closed_form_losses", closed_form_losses},
      {"itq_properties", itq_properties},
      {"synthetic_end_to_end", synthetic_end_to_end},
      {"random_baseline_ratio", random_baseline_ratio},
      {"generalized_not_above_zero_shot", generalized_not_above_zero_shot},
      {"ablation_trend", ablation_trend},
      {"few_shot_trend", few_shot_trend},
      {"prune_sweep", prune_sweep},
      {"determinism", [&](Workspace& ws) { return determinism(ws, cli); }},
  };

  Workspace ws(cache);
  bool all_pass = true;
  bool found = false;
  for (const auto& [id, check] : criteria) {
    if (criterion != "all" && criterion != id) continue;
    found = true;
    Outcome o;
    try {
      o = check(ws);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << id << ": " << o.detail << std::endl;
    all_pass = all_pass && o.pass;
  }
  if (!found) {
    std::cerr << "unknown criterion '" << criterion << "'\n";
    return 2;
  }
  return all_pass ? 0 : 1;
}
