// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "prunecert/certifier.hpp"
#include "prunecert/io.hpp"
#include "prunecert/pruner.hpp"
#include "support.hpp"

using namespace prunecert;
namespace fs = std::filesystem;
namespace pt = prunecert::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

MlpPolicy sweep_policy(std::mt19937_64& rng, std::size_t depth) {
  return pt::random_policy(rng, pt::random_widths(rng, depth, 32), 0.1, true);
}

CalibrationBatch calibrate(const MlpPolicy& p, const StateSpace& space, std::uint64_t seed) {
  return collect_calibration(p, sample_states(space, 128, seed));
}

struct SweepStats {
  std::size_t cases = 0;
  std::size_t violations = 0;
  std::size_t failed_holds = 0;
  double worst_tightness = 0.0;
};

// Prunes `layers` of random policies at 10/50/90% by OBD and audits 1e4
// states in the R = 10 ball.
SweepStats sweep(std::uint64_t seed, std::size_t min_depth, bool multi) {
  std::mt19937_64 rng(seed);
  SweepStats stats;
  const double fractions[] = {0.1, 0.5, 0.9};
  for (int n = 0; n < 50; ++n) {
    const std::size_t depth = uniform_index(rng, min_depth, 5);
    const MlpPolicy p = sweep_policy(rng, depth);
    std::vector<std::size_t> all(depth);
    std::iota(all.begin(), all.end(), std::size_t{1});
    std::shuffle(all.begin(), all.end(), rng);
    const std::size_t count = multi ? std::min<std::size_t>(depth, uniform_index(rng, 2, 3)) : 1;
    std::vector<std::size_t> layers(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(layers.begin(), layers.end());

    const StateSpace space = StateSpace::ball(p.input_dim(), 10.0);
    const CalibrationBatch calib = calibrate(p, space, rng());
    const auto ranked = rank_weights(p, calib, layers);
    for (double f : fractions) {
      const auto k = static_cast<std::size_t>(std::llround(f * static_cast<double>(ranked.size())));
      const PruneResult r = apply_plan(p, ranked, k, calib);
      const Certificate c = certify(p, r.pruned, r.plan, space, {10'000, rng(), Sampler::interior});
      ++stats.cases;
      stats.violations += c.audit->violations;
      if (!c.audit->holds) ++stats.failed_holds;
      if (std::isfinite(c.audit->tightness)) stats.worst_tightness = std::max(stats.worst_tightness, c.audit->tightness);
    }
  }
  return stats;
}

Outcome soundness() {
  const SweepStats s = sweep(1001, 1, false);
  std::ostringstream os;
  os << s.cases << " cases, " << s.violations << " per-state violations, " << s.failed_holds
     << " budget failures, max tightness " << s.worst_tightness;
  return {s.violations == 0 && s.failed_holds == 0 && s.cases == 150, os.str()};
}

Outcome multi_layer() {
  const SweepStats s = sweep(2002, 2, true);
  std::ostringstream os;
  os << s.cases << " cases, " << s.violations << " per-state violations, " << s.failed_holds
     << " budget failures, max tightness " << s.worst_tightness;
  return {s.violations == 0 && s.failed_holds == 0 && s.cases == 150, os.str()};
}

Outcome tightness() {
  const MlpPolicy original({Layer{Matrix::from_rows({{1}}), {0.0}, Activation::relu()}});
  const MlpPolicy pruned({Layer{Matrix::from_rows({{0.5}}), {0.0}, Activation::relu()}});
  const PrunePlan plan = plan_from_policies(original, pruned);
  const std::vector<Vector> at_two{{2.0}};
  const StateSpace space = StateSpace::from_states(at_two);
  const AuditSummary a = audit_states(original, pruned, plan, space, at_two);
  const double err = std::abs(a.tightness - 1.0);
  std::ostringstream os;
  os.precision(17);
  os << "bound " << a.budget << ", deviation " << a.max_dev << ", tightness " << a.tightness;
  return {err <= 1e-12 && a.violations == 0, os.str()};
}

Outcome saliency_oracle() {
  std::mt19937_64 rng(4004);
  std::size_t mismatched = 0;
  std::size_t weights = 0;
  const std::size_t k1[] = {1};
  for (int n = 0; n < 20; ++n) {
    const std::size_t rows = uniform_index(rng, 1, 8);
    const std::size_t d = uniform_index(rng, 1, 8);
    const Matrix w = pt::random_matrix(rng, rows, d);
    const MlpPolicy p({Layer{w, Vector(rows, 0.0), Activation::relu()}});
    // Scaled basis states give a diagonal Gram matrix.
    std::uniform_real_distribution<double> scale(0.25, 4.0);
    std::vector<Vector> states;
    for (std::size_t i = 0; i < d; ++i) {
      Vector s(d, 0.0);
      s[i] = scale(rng);
      states.push_back(s);
    }
    const CalibrationBatch calib = collect_calibration(p, states);
    RankOptions exact;
    exact.damping = Damping::none();
    const auto ranked = rank_weights(p, calib, k1, exact);

    std::vector<std::pair<double, std::size_t>> brute;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        Matrix w_hat = w;
        w_hat(r, c) = 0.0;
        brute.emplace_back(activation_loss(w, w_hat, calib.input(1)), r * d + c);
      }
    std::sort(brute.begin(), brute.end());
    weights += brute.size();
    if (ranked.size() != brute.size()) {
      ++mismatched;
      continue;
    }
    for (std::size_t i = 0; i < brute.size(); ++i)
      if (ranked[i].row * d + ranked[i].col != brute[i].second) {
        ++mismatched;
        break;
      }
  }
  std::ostringstream os;
  os << "20 layers, " << weights << " weights, " << mismatched << " rankings differ";
  return {mismatched == 0, os.str()};
}

Outcome obs_oracle() {
  std::mt19937_64 rng(5005);
  double worst = 0.0;
  std::size_t loss_failures = 0;
  for (int n = 0; n < 100; ++n) {
    const std::size_t d = uniform_index(rng, 2, 16);
    const std::size_t samples = d + uniform_index(rng, 2, 24);
    const Matrix x = pt::random_matrix(rng, d, samples);
    const Vector w = pt::random_vector(rng, d);
    const std::size_t q = uniform_index(rng, 0, d - 1);

    const MlpPolicy p({Layer{Matrix(1, d, w), {0.0}, Activation::relu()}});
    std::vector<Vector> states;
    for (std::size_t j = 0; j < samples; ++j) states.push_back(x.column_vector(j));
    const CalibrationBatch calib = collect_calibration(p, states);
    const SaliencyEntry entry{1, 0, q, w[q], 0.0};
    ApplyOptions opts;
    opts.compensate = true;
    opts.damping = Damping::none();
    const PruneResult r = apply_plan(p, std::span(&entry, 1), 1, calib, opts);
    const Vector got = r.pruned.layer(1).weight.row_vector(0);

    const Vector want = pt::oracle_constrained_row(w, q, x);
    for (std::size_t i = 0; i < d; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));

    const Matrix wm(1, d, w);
    Matrix zeroed = wm;
    zeroed(0, q) = 0.0;
    if (activation_loss(wm, r.pruned.layer(1).weight, x) > activation_loss(wm, zeroed, x) + 1e-10) ++loss_failures;
  }
  std::ostringstream os;
  os << "100 cases, max |row - oracle| " << worst << ", " << loss_failures << " loss increases";
  return {worst <= 1e-8 && loss_failures == 0, os.str()};
}

Outcome spectral() {
  std::mt19937_64 rng(6006);
  double worst = 0.0;
  for (int n = 0; n < 100; ++n) {
    const Matrix m = pt::random_matrix(rng, uniform_index(rng, 1, 64), uniform_index(rng, 1, 64));
    const double oracle = pt::oracle_spectral_norm(m);
    worst = std::max(worst, std::abs(spectral_norm(m) - oracle) / oracle);
  }

  std::size_t probe_violations = 0;
  double worst_ratio = 0.0;
  for (int n = 0; n < 20; ++n) {
    const MlpPolicy p = sweep_policy(rng, uniform_index(rng, 1, 5));
    const double lip = lipschitz_upper(p);
    std::uniform_real_distribution<double> log_step(-6.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      const Vector s = pt::random_vector(rng, p.input_dim(), 3.0);
      Vector dir = pt::random_vector(rng, p.input_dim());
      const double h = std::pow(10.0, log_step(rng)) / norm2(dir);
      Vector s2 = s;
      for (std::size_t j = 0; j < s.size(); ++j) s2[j] += h * dir[j];
      const double ratio = norm2(subtract(forward(p, s), forward(p, s2))) / norm2(subtract(s, s2));
      worst_ratio = std::max(worst_ratio, ratio / lip);
      if (ratio > lip * (1.0 + 1e-9)) ++probe_violations;
    }
  }
  std::ostringstream os;
  os << "max relative error " << worst << " on 100 matrices; " << probe_violations
     << " Lipschitz violations in 20000 probes (max slope / bound " << worst_ratio << ")";
  return {worst <= 1e-6 && probe_violations == 0, os.str()};
}

Outcome non_expansive() {
  std::mt19937_64 rng(7007);
  std::size_t violations = 0;
  std::size_t kinds = 0;
  std::uniform_real_distribution<double> log_scale(-3.0, 3.0);
  for (const Activation& a : pt::certified_activations()) {
    ++kinds;
    for (int i = 0; i < 100'000; ++i) {
      const Vector x = pt::random_vector(rng, uniform_index(rng, 1, 32), std::pow(10.0, log_scale(rng)));
      if (norm2(apply_activation(a, x)) > norm2(x)) ++violations;
    }
  }
  std::ostringstream os;
  os << kinds << " activations x 1e5 vectors, " << violations << " violations";
  return {violations == 0, os.str()};
}

Outcome budget_round_trip() {
  std::mt19937_64 rng(8008);
  std::size_t failures = 0;
  double worst_excess = -INFINITY;
  std::uniform_real_distribution<double> log_eps(-3.0, 1.0);
  for (int n = 0; n < 20; ++n) {
    const std::size_t depth = uniform_index(rng, 1, 4);
    const MlpPolicy p = pt::random_policy(rng, pt::random_widths(rng, depth, 16));
    std::vector<std::size_t> layers;
    for (std::size_t k = 1; k <= depth; ++k)
      if (rng() % 2 == 0) layers.push_back(k);
    if (layers.empty()) layers.push_back(uniform_index(rng, 1, depth));
    const double eps = std::pow(10.0, log_eps(rng));
    const StateSpace space = StateSpace::ball(p.input_dim(), 5.0);
    Allocation alloc = Allocation::uniform();
    if (n % 2 == 1) {
      std::vector<double> w;
      for (std::size_t i = 0; i < layers.size(); ++i) w.push_back(0.5 + static_cast<double>(rng() % 4));
      alloc = Allocation::proportional(w);
    }
    const MagnitudeCaps caps = admissible_magnitude(p, layers, eps, space, alloc);

    // Perturbations placed exactly at the caps.
    PrunePlan synthetic;
    for (std::size_t i = 0; i < caps.layers.size(); ++i) {
      const Matrix& w = p.layer(caps.layers[i]).weight;
      const Matrix m = pt::random_matrix(rng, w.rows(), w.cols());
      const double cap = std::isfinite(caps.caps[i]) ? caps.caps[i] : 1.0;
      LayerDelta d;
      d.layer = caps.layers[i];
      d.delta = (cap / spectral_norm(m)) * m;
      d.delta_spectral_norm = spectral_norm(d.delta);
      synthetic.layers.push_back(std::move(d));
    }
    const double b_synth = multi_layer_budget(p, synthetic, space).budget;

    // Real pruning under the same caps, re-certified from the two policies.
    const CalibrationBatch calib = calibrate(p, space, rng());
    const auto ranked = rank_weights(p, calib, layers);
    ApplyOptions opts;
    opts.compensate = n % 3 == 0;
    const PruneResult r = apply_plan_within_caps(p, ranked, caps.by_layer(depth), calib, opts);
    const double b_real = multi_layer_budget(p, plan_from_policies(p, r.pruned), space).budget;

    for (double b : {b_synth, b_real}) {
      worst_excess = std::max(worst_excess, b - eps);
      if (b > eps + 1e-9) ++failures;
    }
  }
  std::ostringstream os;
  os << "20 pairs, " << failures << " exceed epsilon, max B - eps " << worst_excess;
  return {failures == 0, os.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

int shell(const std::string& cmd) {
  const int status = std::system((cmd + " > /dev/null 2>&1").c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

struct Fixture {
  std::string dynamics;
  std::string model;
  std::string box_lower, box_upper;
  std::vector<std::string> starts;
};

Outcome closed_loop() {
  const fs::path root = fs::temp_directory_path() / "prunecert-acceptance";
  fs::remove_all(root);
  const std::string exe = PRUNECERT_CLI_PATH;
  const fs::path data = PRUNECERT_TEST_DATA;
  const Fixture fixtures[] = {
      {"pendulum", "pendulum_policy.json", "-3.141592653589793,-10", "3.141592653589793,10",
       {"0.3,0", "-0.8,1.5", "1.2,-2"}},
      {"double_integrator", "double_integrator_policy.json", "-10,-10", "10,10", {"5,-2", "-8,3", "1,1"}},
  };
  const char* outputs[] = {"pruned_model.json", "plan.json", "certificate.json", "trajectory.csv",
                           "deviation_report.json"};

  std::ostringstream os;
  bool pass = true;
  std::size_t certified = 0, violations = 0;
  for (const auto& f : fixtures) {
    const std::string model = (data / f.model).string();
    const std::string box = " --box-lower=" + f.box_lower + " --box-upper=" + f.box_upper;
    for (std::size_t i = 0; i < f.starts.size(); ++i) {
      std::string runs[2];
      for (int rep = 0; rep < 2; ++rep) {
        const fs::path dir = root / (f.dynamics + std::to_string(i) + "_" + std::to_string(rep));
        const std::string o = " -o " + dir.string();
        const std::string pruned = (dir / "pruned_model.json").string();
        const int prune = shell(exe + " prune -m " + model + " --sparsity 0.5 --layers 1 --seed 7" + box + o);
        const int cert = shell(exe + " certify -m " + model + " -p " + pruned + " --seed 7" + box + o);
        const int sim = shell(exe + " simulate -m " + model + " -p " + pruned + " --dynamics " + f.dynamics +
                              " --x0=" + f.starts[i] + " -T 500" + o);
        if (prune != 0 || cert != 0 || sim != 0) {
          pass = false;
          os << f.dynamics << " x0=(" << f.starts[i] << ") exit codes " << prune << "/" << cert << "/" << sim
             << "; ";
          continue;
        }
        for (const char* name : outputs) runs[rep] += slurp(dir / name) + '\x1e';
        if (rep == 0) {
          const auto report = load_json(dir / "deviation_report.json");
          const auto plan = plan_from_json(load_json(dir / "plan.json"));
          const std::size_t layer1 = load_policy(model).layer(1).weight.size();
          certified += report["certified_states"].get<std::size_t>();
          violations += report["violations"].get<std::size_t>();
          if (report["violations"] != 0 || report["certified_states"] == 0 || !report["error"].is_null() ||
              plan.pruned_count() != layer1 / 2)
            pass = false;
        }
      }
      if (runs[0] != runs[1]) {
        pass = false;
        os << f.dynamics << " x0=(" << f.starts[i] << ") outputs differ between runs; ";
      }
    }
  }
  fs::remove_all(root);
  os << certified << " in-ball states over 6 rollouts of T = 500, " << violations
     << " violations, reruns byte-identical: " << (pass ? "yes" : "see above");
  return {pass, os.str()};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"1 soundness sweep (single layer)", soundness},
      {"2 multi-layer additivity", multi_layer},
      {"3 tightness fixture", tightness},
      {"4 saliency oracle", saliency_oracle},
      {"5 OBS oracle", obs_oracle},
      {"6 spectral norm and Lipschitz bound", spectral},
      {"7 non-expansive activations", non_expansive},
      {"8 budget round-trip", budget_round_trip},
      {"9 closed-loop audit via CLI", closed_loop},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " -- " << o.detail << " [" << secs << " s]"
              << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
