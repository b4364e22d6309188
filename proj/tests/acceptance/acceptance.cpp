// Acceptance suite: one PASS/FAIL line per criterion AC1..AC9.
//
//   acceptance [WORK_DIR] [--smoke]
//
// WORK_DIR (default ./acceptance_work) is wiped and receives every run
// directory. --smoke shrinks iteration counts to check the plumbing only;
// its verdicts are not the criteria. Exit status is the number of failed
// criteria (0 when all pass).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "../unit/oracles.hpp"
#include "pft/app.hpp"
#include "pft/taylor.hpp"

using namespace pft;
using namespace pft::app;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + p.string() + "'");
  return {std::istreambuf_iterator<char>(in), {}};
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v, const char* f = "%.2f") {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(f, v[i]);
  return s + "]";
}

// ---- run plan ---------------------------------------------------------------------

struct Plan {
  std::int64_t vae_iterations = 20000;
  std::int64_t frozen_iterations = 20000;      // AC3
  std::int64_t ablation_iterations = 20000;    // AC4, AC5: 9 runs; seed 1 of the full arm is the AC3 run
  std::int64_t supervised_iterations = 5000;   // AC6, AC7: 3 supervised + 3 baseline runs
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

// Reference configurations shipped in configs/.
Config reference_config(const char* name) { return Config::load(std::string(PFT_CONFIG_DIR) + "/" + name); }

double metric(const fs::path& ckpt, const std::string& which, const std::string& key) {
  auto model = load_model(ckpt.string());
  EvalOptions o;
  o.which = which;
  evaluate(*model, ckpt.string(), o);
  const json j = json::parse(slurp(ckpt.parent_path() / ("metrics_" + which + ".json")));
  return j.at(key).get<double>();
}

struct Suite {
  fs::path work;
  Plan plan;
  bool smoke = false;
  int failures = 0;

  fs::path generator;  // frozen-mode VAE
  std::string generator_error;

  void report(const char* id, const char* title, const std::function<Verdict()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = body();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s %s %s: %s (%.0f s)%s\n", id, v.pass ? "PASS" : "FAIL", title, v.detail.c_str(), seconds_since(t0),
                smoke ? " [smoke scale]" : "");
    std::fflush(stdout);
  }

  Config frozen_config(std::uint64_t seed, const std::string& dir) const {
    Config c = reference_config("frozen.toml");
    c.set("run.seed", std::to_string(seed));
    c.set("run.output_dir", (work / dir).string());
    c.set("train_vae.iterations", std::to_string(plan.vae_iterations));
    return c;
  }

  const fs::path& frozen_generator() {
    if (!generator_error.empty()) fail(ErrorKind::usage, "generator unavailable: " + generator_error);
    if (generator.empty()) {
      try {
        train_vae(frozen_config(1, "generator"));
        generator = work / "generator" / "vae.pfckpt";
      } catch (const std::exception& e) {
        generator_error = e.what();
        throw;
      }
    }
    return generator;
  }

  // Trains one frozen-mode bank; returns its checkpoint.
  fs::path frozen_run(const std::string& dir, std::uint64_t seed, std::int64_t iterations,
                      const std::vector<std::pair<std::string, std::string>>& sets = {}, double* seconds = nullptr) {
    const fs::path& gen = frozen_generator();
    Config c = frozen_config(seed, dir);
    c.set("train.iterations", std::to_string(iterations));
    for (const auto& [k, v] : sets) c.set(k, v);
    const auto t0 = std::chrono::steady_clock::now();
    train_potentials(c, gen.string());
    if (seconds) *seconds = seconds_since(t0);
    return work / dir / "potentials.pfckpt";
  }

  fs::path frozen_full(std::uint64_t seed, double* seconds = nullptr) {
    const std::string dir = fmt("frozen_full_s%llu", static_cast<unsigned long long>(seed));
    const fs::path ckpt = work / dir / "potentials.pfckpt";
    if (fs::exists(ckpt) && !seconds) return ckpt;
    return frozen_run(dir, seed, plan.ablation_iterations, {}, seconds);
  }

  // ---- AC1 ----
  Verdict autodiff() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20240601);
    std::uniform_int_distribution<int> depth(1, 3), width(1, 16);
    double worst_grad = 0;
    for (int trial = 0; trial < 100; ++trial) {
      oracle::DenseNet net;
      net.widths.push_back(static_cast<std::size_t>(width(rng)));
      const int layers = depth(rng);
      for (int l = 0; l < layers; ++l) net.widths.push_back(static_cast<std::size_t>(width(rng)));
      const auto p = oracle::uniform(rng, net.param_count());
      const auto x = oracle::uniform(rng, net.widths[0]);
      const auto fd = oracle::fd_gradient([&](const std::vector<double>& q) { return net.eval(q, x); }, p, 1e-5);

      ad::Tape tape;
      std::vector<Value> vars;
      std::size_t off = 0;
      Value a = tape.constant(Tensor({1, static_cast<std::int64_t>(x.size())}, x));
      for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
        const auto in = static_cast<std::int64_t>(net.widths[l]), out = static_cast<std::int64_t>(net.widths[l + 1]);
        const auto at = [&](std::size_t n) {
          std::vector<double> v(p.begin() + static_cast<long>(off), p.begin() + static_cast<long>(off + n));
          off += n;
          return v;
        };
        Value w = tape.variable(Tensor({out, in}, at(static_cast<std::size_t>(out * in))));
        Value b = tape.variable(Tensor({out}, at(static_cast<std::size_t>(out))));
        vars.push_back(w);
        vars.push_back(b);
        a = ad::add(ad::matmul(a, w, false, true), b);
        if (l + 2 < net.widths.size()) a = ad::tanh(a);
      }
      Value y = ad::sum(a);
      tape.backward(y);
      std::vector<double> g;
      for (const auto& v : vars) {
        const auto adj = tape.adjoint(v);
        g.insert(g.end(), adj.begin(), adj.end());
      }
      worst_grad = std::max(worst_grad, oracle::max_rel_err(g, fd));
    }

    double worst_second = 0;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      const int degree = trial % 5;
      std::vector<double> c(5, 0.0);
      for (int i = 0; i <= degree; ++i) c[static_cast<std::size_t>(i)] = u(rng);
      const double x0 = 2 * u(rng), v = u(rng) + 1.5;
      ad::Tape tape;
      Value x = tape.constant(Tensor({1, 1}, {x0}));
      auto poly = [&](const ad::Taylor2& t) {
        ad::Taylor2 acc = ad::add_scalar(ad::scale(t, c[1]), c[0]);
        ad::Taylor2 power = t;
        for (int i = 2; i <= 4; ++i) {
          power = ad::mul(power, t);
          acc = ad::add(acc, ad::scale(power, c[static_cast<std::size_t>(i)]));
        }
        return acc;
      };
      const auto r = ad::directional_second(poly, x, Tensor({1, 1}, {v}));
      const double exact = (2 * c[2] + 6 * c[3] * x0 + 12 * c[4] * x0 * x0) * v * v;
      worst_second = std::max(worst_second, std::abs(r.second.item() - exact));
    }
    const double t = seconds_since(t0);
    return {worst_grad < 1e-4 && worst_second < 1e-10 && t < 60,
            fmt("max gradient rel. error %.2e (< 1e-4), max second-derivative error %.2e (< 1e-10), %.1f s (< 60 s)",
                worst_grad, worst_second, t)};
  }

  // ---- AC2 ----
  Verdict wave_residual() {
    nn::ParamStore store;
    std::mt19937_64 rng(11);
    pot::PotentialConfig pc;
    pc.K = 1;
    pc.d = 8;
    pc.kind = pot::PotentialKind::plane_wave;
    pot::PotentialBank wave(pc, store, rng, "wave/");
    store.at("wave/c").data = {1.3};
    pc.kind = pot::PotentialKind::linear;
    pot::PotentialBank line(pc, store, rng, "line/");
    store.at("line/0.slope").data = oracle::uniform(rng, 8, -2, 2);

    std::mt19937_64 probes(12);
    double worst = 0;
    bool linear_zero = true;
    for (int i = 0; i < 1000; ++i) {
      const auto z = oracle::uniform(probes, 8, -3, 3);
      const double t = oracle::uniform(probes, 1, 0, 10)[0];
      worst = std::max(worst, std::abs(pot::wave_residual(wave, store, 0, z, t)));
      linear_zero = linear_zero && pot::wave_residual(line, store, 0, z, t) == 0.0;
    }
    return {worst < 1e-8 && linear_zero,
            fmt("plane wave max |f| %.2e over 1000 probes (< 1e-8); linear potential f == 0 exactly: %s", worst,
                linear_zero ? "yes" : "no")};
  }

  // ---- AC3 ----
  Verdict frozen_training() {
    const fs::path init = frozen_run("frozen_init", 1, 0);
    const double f0 = metric(init, "residuals", "mean_residual");
    double secs = 0;
    const fs::path ckpt = plan.frozen_iterations == plan.ablation_iterations
                              ? frozen_full(1, &secs)
                              : frozen_run("frozen_ac3", 1, plan.frozen_iterations, {}, &secs);
    const double f1 = metric(ckpt, "residuals", "mean_residual");
    const double v0 = metric(ckpt, "residuals", "median_velocity0");
    const double acc = metric(ckpt, "classifier", "classifier_accuracy_pct");
    const bool a = f1 <= 0.1 * f0, b = v0 < 0.05, c = acc >= 90.0, t = secs < 1800;
    return {a && b && c && t,
            fmt("%lld iterations in %.0f s (< 1800 s: %s); (a) mean |f| %.4g -> %.4g, ratio %.3f (<= 0.1: %s); "
                "(b) median |grad u(z0,0)| %.4g (< 0.05: %s); (c) classifier accuracy %.1f%% (>= 90: %s)",
                static_cast<long long>(plan.frozen_iterations), secs, t ? "yes" : "no", f0, f1, f1 / f0,
                a ? "yes" : "no", v0, b ? "yes" : "no", acc, c ? "yes" : "no")};
  }

  // ---- AC4 ----
  std::vector<double> full_vp;
  Verdict vp_score() {
    full_vp.clear();
    for (auto s : plan.seeds) full_vp.push_back(metric(frozen_full(s), "vp", "vp_score_pct"));
    const double m = mean_of(full_vp);
    double spread = 0;
    for (double v : full_vp) spread = std::max(spread, std::abs(v - m));
    return {m >= 50.0 && spread <= 5.0,
            fmt("VP per seed %s, mean %.2f%% (>= 50, chance 25), max deviation from mean %.2f (<= 5)",
                join(full_vp).c_str(), m, spread)};
  }

  // ---- AC5 ----
  Verdict ablation() {
    if (full_vp.size() != plan.seeds.size()) vp_score();
    std::vector<double> no_jac, no_f;
    for (auto s : plan.seeds) {
      const auto tag = static_cast<unsigned long long>(s);
      no_jac.push_back(metric(frozen_run(fmt("frozen_nojac_s%llu", tag), s, plan.ablation_iterations,
                                         {{"losses.disable_jac", "true"}}),
                              "vp", "vp_score_pct"));
      no_f.push_back(metric(
          frozen_run(fmt("frozen_nof_s%llu", tag), s, plan.ablation_iterations, {{"losses.disable_f", "true"}}), "vp",
          "vp_score_pct"));
    }
    const double full = mean_of(full_vp), nj = mean_of(no_jac), nf = mean_of(no_f);
    const bool ok = full >= nj && nj >= nf && full - nf >= 2.0;
    return {ok, fmt("VP mean full %.2f %s >= w/o L_J %.2f %s >= w/o L_f %.2f %s; full - w/o L_f = %.2f (>= 2)", full,
                    join(full_vp).c_str(), nj, join(no_jac).c_str(), nf, join(no_f).c_str(), full - nf)};
  }

  // ---- AC6 / AC7 ----
  std::vector<fs::path> supervised, baseline;
  void supervised_runs() {
    if (supervised.size() == plan.seeds.size()) return;
    supervised.clear();
    baseline.clear();
    for (auto s : plan.seeds) {
      const auto tag = static_cast<unsigned long long>(s);
      Config c = reference_config("supervised.toml");
      c.set("run.seed", std::to_string(s));
      c.set("train_vae.seed", std::to_string(s));
      c.set("train.iterations", std::to_string(plan.supervised_iterations));
      c.set("train_vae.iterations", std::to_string(plan.supervised_iterations));
      c.set("run.output_dir", (work / fmt("supervised_s%llu", tag)).string());
      train_potentials(c, "");
      supervised.push_back(work / fmt("supervised_s%llu", tag) / "potentials.pfckpt");
      c.set("run.output_dir", (work / fmt("baseline_s%llu", tag)).string());
      train_vae(c);
      baseline.push_back(work / fmt("baseline_s%llu", tag) / "vae.pfckpt");
    }
  }

  Verdict equivariance() {
    supervised_runs();
    std::vector<double> learned, vanilla, ratio;
    for (const auto& ckpt : supervised) {
      learned.push_back(metric(ckpt, "equivariance", "equivariance_err"));
      vanilla.push_back(metric(ckpt, "equivariance", "equivariance_vanilla"));
      ratio.push_back(learned.back() / vanilla.back());
    }
    const double l = mean_of(learned), v = mean_of(vanilla);
    return {l <= 0.5 * v, fmt("mean equivariance error learned %.2f vs vanilla %.2f, ratio %.3f (<= 0.5); per seed %s",
                              l, v, l / v, join(ratio, "%.3f").c_str())};
  }

  Verdict likelihood() {
    supervised_runs();
    std::vector<double> sup, base;
    for (std::size_t i = 0; i < supervised.size(); ++i) {
      sup.push_back(metric(supervised[i], "loglik", "loglik_estimate"));
      base.push_back(metric(baseline[i], "loglik", "loglik_estimate"));
    }
    const double s = mean_of(sup), b = mean_of(base);
    return {s >= b - 2.0, fmt("IWAE-64 mean supervised %.2f %s vs baseline %.2f %s nats/image, gap %.2f (>= -2)", s,
                              join(sup).c_str(), b, join(base).c_str(), s - b)};
  }

  // ---- AC8 ----
  Verdict determinism() {
    Config c = frozen_config(5, "det");
    c.set("train_vae.iterations", "300");
    c.set("data.train_images", "400");
    c.set("train.iterations", "150");
    c.set("run.log_interval", "25");
    c.set("eval.vp_pairs", "200");
    c.set("eval.vp_epochs", "10");
    c.set("eval.loglik_images", "32");
    c.set("eval.classifier_pairs", "200");
    c.set("eval.residual_probes", "16");
    std::vector<std::string> differing;
    std::int64_t compared = 0;
    const fs::path dir = work / "det";
    auto run_all = [&] {
      train_vae(c);
      train_potentials(c, (dir / "vae.pfckpt").string());
      auto model = load_model((dir / "potentials.pfckpt").string());
      for (const char* which : {"vp", "loglik", "residuals", "classifier"}) {
        EvalOptions o;
        o.which = which;
        evaluate(*model, (dir / "potentials.pfckpt").string(), o);
      }
      TraverseOptions t;
      t.k = 1;
      t.seed = 9;
      t.sign = -1;
      traverse(*model, (dir / "potentials.pfckpt").string(), t);
    };
    // Both runs write to the same directory; the first is moved aside.
    run_all();
    fs::rename(dir, work / "det_first");
    run_all();
    for (const auto& e : fs::directory_iterator(work / "det_first")) {
      const auto name = e.path().filename();
      ++compared;
      if (!fs::exists(dir / name) || slurp(e.path()) != slurp(dir / name))
        differing.push_back(name.string());
    }
    // Metrics of a full-size checkpoint, evaluated twice.
    const fs::path big = frozen_full(plan.seeds.front());
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      auto model = load_model(big.string());
      EvalOptions o;
      o.which = "vp";
      o.out_path = (work / fmt("det_vp_%d.json", rep)).string();
      evaluate(*model, big.string(), o);
    }
    ++compared;
    if (slurp(work / "det_vp_0.json") != slurp(work / "det_vp_1.json")) differing.push_back("full-size metrics_vp");
    std::string names;
    for (const auto& d : differing) names += " " + d;
    return {differing.empty() && compared > 8,
            fmt("%lld artifacts compared across reruns (checkpoints, logs, config echo, metrics, grids, trajectories), "
                "%zu differ%s",
                static_cast<long long>(compared), differing.size(), names.c_str())};
  }

  // ---- AC9 ----
  Verdict identity_at_init() {
    Config c = frozen_config(1, "identity");
    c.set("potentials.head_init", "zero");
    c.set("train.iterations", "0");
    train_potentials(c, frozen_generator().string());
    const fs::path ckpt = work / "identity" / "potentials.pfckpt";
    auto model = load_model(ckpt.string());
    const std::int64_t S = model->vae->config().size;
    int grids = 0, identical = 0;
    for (int k = 0; k < model->bank->K(); ++k)
      for (int sign : {1, -1}) {
        TraverseOptions o;
        o.k = k;
        o.seed = 100 + static_cast<std::uint64_t>(k);
        o.sign = sign;
        o.steps = 10;
        traverse(*model, ckpt.string(), o);
        const Tensor g = eval::read_ppm(
            (work / "identity" / fmt("traverse_k%d_seed%d_%s.ppm", k, 100 + k, sign > 0 ? "pos" : "neg")).string());
        const std::int64_t W = g.shape[2];
        bool same = W == S * (o.steps + 1);
        for (std::int64_t ch = 0; same && ch < 3; ++ch)
          for (std::int64_t y = 0; same && y < S; ++y)
            for (std::int64_t x = S; same && x < W; ++x)
              same = g.data[static_cast<std::size_t>((ch * S + y) * W + x)] ==
                     g.data[static_cast<std::size_t>((ch * S + y) * W + x % S)];
        ++grids;
        identical += same;
      }
    return {grids > 0 && identical == grids,
            fmt("%d of %d traversal grids (K potentials x both signs, 11 frames each) show one repeated image",
                identical, grids)};
  }
};

}  // namespace

int main(int argc, char** argv) {
  Suite s;
  s.work = "acceptance_work";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--smoke") s.smoke = true;
    else s.work = a;
  }
  if (s.smoke) {
    s.plan.vae_iterations = 300;
    s.plan.frozen_iterations = s.plan.ablation_iterations = 60;
    s.plan.supervised_iterations = 60;
  }
  fs::remove_all(s.work);
  fs::create_directories(s.work);
  s.work = fs::absolute(s.work);
  std::printf("acceptance work directory: %s\n", s.work.string().c_str());
  std::fflush(stdout);

  s.report("AC1", "autodiff-correctness", [&] { return s.autodiff(); });
  s.report("AC2", "wave-residual-exactness", [&] { return s.wave_residual(); });
  s.report("AC3", "frozen-generator-training", [&] { return s.frozen_training(); });
  s.report("AC4", "vp-score", [&] { return s.vp_score(); });
  s.report("AC5", "ablation-ordering", [&] { return s.ablation(); });
  s.report("AC6", "supervised-equivariance", [&] { return s.equivariance(); });
  s.report("AC7", "likelihood-parity", [&] { return s.likelihood(); });
  s.report("AC8", "determinism", [&] { return s.determinism(); });
  s.report("AC9", "identity-at-init", [&] { return s.identity_at_init(); });

  std::printf("acceptance: %d of 9 criteria failed\n", s.failures);
  return s.failures;
}
