// Acceptance run. Prints one "[PASS]" or "[FAIL]" line per criterion on
// stdout (progress goes to stderr and to log files under --work) and exits 1
// when any selected criterion fails.
//
//   lmnet_acceptance [--only 1,4,...] [--work DIR] [--seed S] [--second-seed S2]

#include <malloc.h>
#include <sys/wait.h>

#include <CLI11.hpp>
#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lmnet/config.hpp"
#include "lmnet/evaluation.hpp"
#include "lmnet/io.hpp"
#include "lmnet/metrics.hpp"
#include "lmnet/models.hpp"
#include "lmnet/pipeline.hpp"
#include "lmnet/random.hpp"
#include "lmnet/training.hpp"

namespace fs = std::filesystem;
using namespace lmnet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

struct Stopwatch {
  std::chrono::steady_clock::time_point wall = std::chrono::steady_clock::now();
  double cpu = cpu_seconds();
  double wall_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall).count();
  }
  double cpu_s() const { return cpu_seconds() - cpu; }
};

PointCloud random_cloud(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(u(rng), u(rng), u(rng));
  return c;
}

// ---------------------------------------------------------------------------
// 1. Metric oracles

double brute_chamfer_sum(const PointCloud& a, const PointCloud& b) {
  double s = 0.0;
  for (const auto& p : a.points) {
    double best = INFINITY;
    for (const auto& q : b.points) best = std::min(best, (p - q).squaredNorm());
    s += best;
  }
  double t = 0.0;
  for (const auto& q : b.points) {
    double best = INFINITY;
    for (const auto& p : a.points) best = std::min(best, (p - q).squaredNorm());
    t += best;
  }
  return s + t;
}

double brute_emd(const PointCloud& a, const PointCloud& b) {
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) c += (a.points[i] - b.points[perm[i]]).norm();
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Outcome metric_oracles() {
  Stopwatch sw;
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> size64(1, 64), size6(1, 6), size_auction(2, 64);
  double chamfer_err = 0.0;
  for (int t = 0; t < 200; ++t) {
    const PointCloud a = random_cloud(size64(rng), rng), b = random_cloud(size64(rng), rng);
    chamfer_err = std::max(chamfer_err, std::abs(chamfer_sum(a, b) - brute_chamfer_sum(a, b)));
  }
  double exact_err = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = size6(rng);
    const PointCloud a = random_cloud(n, rng), b = random_cloud(n, rng);
    exact_err = std::max(exact_err, std::abs(emd_exact(a, b).cost - brute_emd(a, b)));
  }
  double auction_gap = 0.0;
  bool below_exact = false;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = size_auction(rng);
    const PointCloud a = random_cloud(n, rng), b = random_cloud(n, rng);
    const double exact = emd_exact(a, b).cost, approx = emd_auction(a, b).cost;
    if (approx < exact - 1e-12) below_exact = true;
    auction_gap = std::max(auction_gap, (approx - exact) / exact);
  }
  const double secs = sw.wall_s();
  const bool pass = chamfer_err <= 1e-12 && exact_err <= 1e-12 && auction_gap <= 0.01 && !below_exact && secs < 60.0;
  return {pass, fmt("chamfer max|err| %.2e (<=1e-12), emd_exact vs brute force %.2e (<=1e-12), auction max gap "
                    "%.3g%% (<=1%%)%s, %.1fs (<60s)",
                    chamfer_err, exact_err, auction_gap * 100.0, below_exact ? ", BELOW EXACT" : "", secs)};
}

// ---------------------------------------------------------------------------
// 2. Gradient suite

constexpr double kFdStep = 1e-6;  // also the margin to the nearest non-smooth point
constexpr double kGradRelTol = 1e-4;

// Which piece of every piecewise operation is active. Two evaluations with the
// same signature lie on one smooth piece.
std::vector<std::uint64_t> active_pieces(const Graph& g) {
  std::vector<std::uint64_t> sig;
  for (std::size_t id = 0; id < g.size(); ++id) {
    const Var v{id};
    const std::string_view op = g.op(v);
    if (op == "relu" || op == "abs") {
      for (double x : g.value(g.inputs(v)[0]).values) sig.push_back(x > 0.0 ? 1 : (x < 0.0 ? 2 : 0));
    } else if (op == "maxpool_over_points") {
      const Tensor& in = g.value(g.inputs(v)[0]);
      const std::size_t segments = g.shape(v)[0], cols = in.dim(1), per = in.dim(0) / segments;
      for (std::size_t s = 0; s < segments; ++s)
        for (std::size_t c = 0; c < cols; ++c) {
          std::size_t best = 0;
          for (std::size_t r = 1; r < per; ++r)
            if (in.values[(s * per + r) * cols + c] > in.values[(s * per + best) * cols + c]) best = r;
          sig.push_back(best);
        }
    } else if (op == "chamfer") {
      const Tensor& a = g.value(g.inputs(v)[0]);
      const Tensor& b = g.value(g.inputs(v)[1]);
      for (std::size_t s = 0; s < a.dim(0); ++s) {
        const auto nn = mutual_nearest(std::span<const double>(a.values).subspan(s * a.dim(1), a.dim(1)),
                                       std::span<const double>(b.values).subspan(s * b.dim(1), b.dim(1)));
        sig.insert(sig.end(), nn.a_to_b.begin(), nn.a_to_b.end());
        sig.insert(sig.end(), nn.b_to_a.begin(), nn.b_to_a.end());
      }
    }
  }
  return sig;
}

struct GradSuite {
  std::size_t cases = 0, checked = 0, excluded = 0, failures = 0;
  double worst = 0.0;
  std::string worst_case;
  std::vector<std::string> failed_cases;

  using Builder = std::function<Var(Graph&)>;

  void check(const std::string& name, const std::vector<Tensor*>& probes, const Builder& build) {
    ++cases;
    for (Tensor* t : probes) {
      t->set_requires_grad(true);
      t->zero_grad();
    }
    double f0 = 0.0;
    std::vector<std::uint64_t> base;
    {
      Graph g;
      const Var loss = build(g);
      f0 = g.value(loss).values.at(0);
      base = active_pieces(g);
      g.backward(loss);
    }
    auto eval = [&](std::vector<std::uint64_t>& sig) {
      Graph g;
      const double v = g.value(build(g)).values.at(0);
      sig = active_pieces(g);
      return v;
    };
    const double floor = 1e-8 * std::max(1.0, std::abs(f0));
    bool case_failed = false;
    for (Tensor* t : probes) {
      const std::vector<double> analytic = t->grad;
      for (std::size_t i = 0; i < t->size(); ++i) {
        const double saved = t->values[i];
        std::vector<std::uint64_t> su, sd;
        t->values[i] = saved + kFdStep;
        const double up = eval(su);
        t->values[i] = saved - kFdStep;
        const double down = eval(sd);
        t->values[i] = saved;
        if (su != base || sd != base) {
          ++excluded;
          continue;
        }
        ++checked;
        const double numeric = (up - down) / (2.0 * kFdStep);
        const double err = std::abs(analytic[i] - numeric);
        const double scale = std::max(std::abs(analytic[i]), std::abs(numeric));
        const double rel = scale > 0.0 ? err / scale : 0.0;
        if (err > kGradRelTol * scale + floor) {
          ++failures;
          case_failed = true;
        }
        if (scale > 1e-6 && rel > worst) {
          worst = rel;
          worst_case = name;
        }
      }
    }
    if (case_failed) failed_cases.push_back(name);
  }
};

Tensor rnd(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape), true);
  for (double& v : t.values) v = u(rng);
  return t;
}

// Scalar read-out Σ out ⊙ R with a fixed random R.
Var project(Graph& g, Var v, std::uint64_t seed) {
  Tensor r = rnd(g.shape(v), seed);
  r.set_requires_grad(false);
  return sum(g, mul(g, v, g.input(std::move(r))));
}

std::vector<Tensor*> tensors_of(const NamedTensors& named) {
  std::vector<Tensor*> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.num_points = 16;
  mc.latent_dim = 6;
  mc.encoder_widths = {8, 6};
  mc.decoder_widths = {12, 12};
  mc.image_size = 16;
  mc.image_layers = {{3, 2, 4}, {3, 2, 4}};
  return mc;
}

Outcome gradient_suite() {
  Stopwatch sw;
  GradSuite s;
  const auto P = [](Graph& g, Tensor& t) { return g.parameter(t); };
  {
    Tensor x = rnd({5, 4}, 1), w = rnd({4, 3}, 2), b = rnd({3}, 3);
    s.check("linear", {&x, &w, &b}, [&](Graph& g) { return project(g, linear(g, P(g, x), P(g, w), P(g, b)), 9); });
  }
  {
    Tensor x = rnd({2, 3, 4}, 4), b = rnd({4}, 5);
    s.check("add_bias", {&x, &b}, [&](Graph& g) { return project(g, add_bias(g, P(g, x), P(g, b)), 9); });
  }
  {
    Tensor x = rnd({6, 5}, 6, -2.0, 2.0);
    s.check("relu", {&x}, [&](Graph& g) { return project(g, relu(g, P(g, x)), 9); });
    s.check("softplus", {&x}, [&](Graph& g) { return project(g, softplus(g, P(g, x)), 9); });
    s.check("abs", {&x}, [&](Graph& g) { return project(g, abs(g, P(g, x)), 9); });
    s.check("square", {&x}, [&](Graph& g) { return project(g, square(g, P(g, x)), 9); });
    s.check("scale", {&x}, [&](Graph& g) { return project(g, scale(g, P(g, x), -1.7), 9); });
    s.check("sum", {&x}, [&](Graph& g) { return scale(g, sum(g, square(g, P(g, x))), 0.5); });
    s.check("mean", {&x}, [&](Graph& g) { return mean(g, square(g, P(g, x))); });
    s.check("reshape", {&x}, [&](Graph& g) { return project(g, reshape(g, P(g, x), {3, 10}), 9); });
    s.check("slice_columns", {&x}, [&](Graph& g) { return project(g, slice_columns(g, P(g, x), 1, 4), 9); });
  }
  {
    Tensor a = rnd({4, 3}, 7), b = rnd({4, 3}, 8);
    s.check("add", {&a, &b}, [&](Graph& g) { return project(g, add(g, P(g, a), P(g, b)), 9); });
    s.check("sub", {&a, &b}, [&](Graph& g) { return project(g, sub(g, P(g, a), P(g, b)), 9); });
    s.check("mul", {&a, &b}, [&](Graph& g) { return project(g, mul(g, P(g, a), P(g, b)), 9); });
  }
  {
    Tensor x = rnd({2, 4, 3}, 10), gamma = rnd({3}, 11, 0.5, 1.5), beta = rnd({3}, 12);
    RunningStats stats(3);
    s.check("batch_norm (train)", {&x, &gamma, &beta}, [&](Graph& g) {
      return project(g, batch_norm(g, P(g, x), P(g, gamma), P(g, beta), stats, Mode::train), 9);
    });
    RunningStats fixed(3);
    fixed.mean = rnd({3}, 13);
    fixed.var = rnd({3}, 14, 0.3, 2.0);
    s.check("batch_norm (eval)", {&x, &gamma, &beta}, [&](Graph& g) {
      return project(g, batch_norm(g, P(g, x), P(g, gamma), P(g, beta), fixed, Mode::eval), 9);
    });
    const RunningStats& frozen = fixed;
    s.check("batch_norm (frozen stats)", {&x, &gamma, &beta}, [&](Graph& g) {
      return project(g, batch_norm(g, P(g, x), P(g, gamma), P(g, beta), frozen), 9);
    });
  }
  {
    Tensor x = rnd({12, 4}, 15);
    s.check("maxpool_over_points", {&x}, [&](Graph& g) { return project(g, maxpool_over_points(g, P(g, x), 3), 9); });
  }
  {
    Tensor x = rnd({2, 7, 6, 2}, 16), k3 = rnd({3, 3, 2, 3}, 17), k5 = rnd({5, 5, 2, 2}, 18);
    s.check("conv2d 3x3/1", {&x, &k3}, [&](Graph& g) { return project(g, conv2d(g, P(g, x), P(g, k3), 1), 9); });
    s.check("conv2d 5x5/2", {&x, &k5}, [&](Graph& g) { return project(g, conv2d(g, P(g, x), P(g, k5), 2), 9); });
  }
  {
    Tensor a = rnd({2, 15}, 19), b = rnd({2, 21}, 20);
    s.check("chamfer (sum)", {&a, &b},
            [&](Graph& g) { return chamfer_loss(g, P(g, a), P(g, b), ChamferReduction::sum); });
    s.check("chamfer (mean)", {&a, &b},
            [&](Graph& g) { return chamfer_loss(g, P(g, a), P(g, b), ChamferReduction::mean); });
  }
  {
    Tensor p = rnd({3, 5}, 21), q = rnd({3, 5}, 22);
    s.check("latent_loss l1", {&p, &q}, [&](Graph& g) { return latent_loss(g, P(g, p), P(g, q), LatentNorm::l1); });
    s.check("latent_loss l2", {&p, &q}, [&](Graph& g) { return latent_loss(g, P(g, p), P(g, q), LatentNorm::l2); });
  }
  {
    Tensor sigma = rnd({3, 4}, 23, 0.0, 1.5);
    const std::vector<double> phi{0.0, 165.0, 180.0};
    TrainConfig cfg;
    s.check("diversity_loss", {&sigma}, [&](Graph& g) { return diversity_loss(g, P(g, sigma), phi, cfg); });
    Tensor lm = rnd({1}, 24), div = rnd({1}, 25);
    s.check("joint_loss", {&lm, &div}, [&](Graph& g) { return joint_loss(g, P(g, lm), P(g, div), 2.5); });
  }
  {
    Tensor mu = rnd({3, 4}, 26), sigma = rnd({3, 4}, 27, 0.1, 1.0);
    Tensor eps = rnd({3, 4}, 28);
    eps.set_requires_grad(false);
    s.check("reparameterize", {&mu, &sigma}, [&](Graph& g) {
      return project(g, reparameterize(g, P(g, mu), P(g, sigma), g.constant(eps)), 9);
    });
  }
  // Composites.
  const ModelConfig mc = tiny_model();
  {
    PointDecoder decoder(mc, 31);
    Tensor z = rnd({3, mc.latent_dim}, 32);
    Tensor target = rnd({3, 20 * 3}, 33);
    target.set_requires_grad(false);
    std::vector<Tensor*> probes{&z};
    for (Tensor* t : tensors_of(decoder.parameters())) probes.push_back(t);
    s.check("chamfer through decoder", probes, [&](Graph& g) {
      return chamfer_loss(g, decoder.forward(g, P(g, z), Mode::train), g.constant(target), ChamferReduction::mean);
    });
  }
  {
    PointEncoder encoder(mc, 34);
    PointDecoder decoder(mc, 35);
    Tensor points = rnd({3 * mc.num_points, 3}, 36);
    std::vector<Tensor*> probes{&points};
    for (Tensor* t : tensors_of(encoder.parameters())) probes.push_back(t);
    for (Tensor* t : tensors_of(decoder.parameters())) probes.push_back(t);
    s.check("auto-encoder chamfer", probes, [&](Graph& g) {
      const Var x = P(g, points);
      const Var rec = decoder.forward(g, encoder.forward(g, x, 3, Mode::train), Mode::train);
      return chamfer_loss(g, rec, reshape(g, x, {3, mc.num_points * 3}), ChamferReduction::mean);
    });
  }
  {
    ImageEncoder image(mc, ImageHead::probabilistic, 37);
    Tensor views = rnd({3, mc.image_size, mc.image_size, 1}, 38, 0.0, 1.0);
    Tensor eps = rnd({3, mc.latent_dim}, 39), target = rnd({3, mc.latent_dim}, 40);
    eps.set_requires_grad(false);
    target.set_requires_grad(false);
    const std::vector<double> phi{0.0, 90.0, 180.0};
    TrainConfig cfg;
    std::vector<Tensor*> probes{&views};
    for (Tensor* t : tensors_of(image.parameters())) probes.push_back(t);
    s.check("probabilistic image loss", probes, [&](Graph& g) {
      const auto out = image.forward(g, P(g, views), Mode::train);
      const Var z = reparameterize(g, out.mu, out.sigma, g.constant(eps));
      return joint_loss(g, latent_loss(g, z, g.constant(target), LatentNorm::l1),
                        diversity_loss(g, out.sigma, phi, cfg), 1.0);
    });
  }
  // Negative control: a backward that is off by 1% must be caught.
  GradSuite control;
  {
    Tensor x = rnd({4, 3}, 41);
    control.check("control", {&x}, [&](Graph& g) {
      const Var in = P(g, x);
      Tensor out = g.value(in);
      for (double& v : out.values) v = v * v;
      const std::size_t out_id = g.size();
      const Var y = g.record("square", {in}, std::move(out), [=](Graph& gg) {
        const auto dy = gg.grad(Var{out_id});
        const auto& xv = gg.value(in).values;
        auto dx = gg.grad(in);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 1.01 * 2.0 * xv[i] * dy[i];
      });
      return project(g, y, 9);
    });
  }
  const double secs = sw.wall_s();
  std::string failed;
  for (const auto& c : s.failed_cases) failed += (failed.empty() ? "" : ", ") + c;
  const bool control_caught = control.failures == control.checked && control.checked > 0;
  const bool pass = s.failures == 0 && s.checked > 0 && control_caught && secs < 120.0;
  return {pass, fmt("%zu cases, %zu entries checked, %zu excluded within %.0e of a non-smooth point, %zu over "
                    "rel tol %.0e (worst rel err %.2e in %s)%s%s; 1%%-wrong control %s; %.1fs (<120s)",
                    s.cases, s.checked, s.excluded, kFdStep, s.failures, kGradRelTol, s.worst, s.worst_case.c_str(),
                    failed.empty() ? "" : "; failing: ", failed.c_str(), control_caught ? "caught" : "MISSED", secs)};
}

// ---------------------------------------------------------------------------
// 3. Permutation invariance

Outcome permutation_invariance() {
  Stopwatch sw;
  const ModelConfig mc = RunConfig::desk().model_config();
  std::size_t mismatches = 0, compared = 0;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    PointEncoder encoder(mc, derive_seed(7000, draw));
    std::mt19937_64 rng(derive_seed(7100, draw));
    std::uniform_real_distribution<double> u(-0.5, 0.5), pos(0.5, 2.0);
    // Non-trivial batch-norm state so every layer does real work.
    for (auto& [name, t] : encoder.state()) {
      if (name.ends_with("running_var") || name.ends_with("gamma"))
        for (double& v : t->values) v = pos(rng);
      else if (name.ends_with("running_mean") || name.ends_with("beta"))
        for (double& v : t->values) v = u(rng);
    }
    PointCloud cloud = random_cloud(mc.num_points, rng);
    const LatentCode ref = encode_points(encoder, cloud);
    for (int p = 0; p < 50; ++p) {
      std::shuffle(cloud.points.begin(), cloud.points.end(), rng);
      ++compared;
      if (encode_points(encoder, cloud).values != ref.values) ++mismatches;
    }
  }
  return {mismatches == 0, fmt("%zu of %zu permuted encodings differ bitwise (20 parameter draws x 50 permutations, "
                               "N=%zu, k=%zu), %.1fs",
                               mismatches, compared, mc.num_points, mc.latent_dim, sw.wall_s())};
}

// ---------------------------------------------------------------------------
// 4-7. Desk-scale runs

struct DeskRun {
  std::uint64_t seed = 0;
  RunConfig cfg;
  fs::path out;
  fs::path ae;
  double ae_cpu = 0.0, lm_cpu = 0.0;
  BenchmarkTable table;
  Comparison comparison;
};

class DeskRuns {
 public:
  DeskRuns(fs::path work) : work_(std::move(work)) {}

  const DeskRun& get(std::uint64_t seed) {
    auto it = runs_.find(seed);
    if (it == runs_.end()) it = runs_.emplace(seed, run(seed)).first;
    return it->second;
  }

  std::ofstream& log_for(std::uint64_t seed) {
    auto it = logs_.find(seed);
    if (it == logs_.end()) {
      fs::create_directories(work_);
      it = logs_.emplace(seed, std::ofstream(work_ / fmt("desk-seed-%llu.log", (unsigned long long)seed))).first;
    }
    return it->second;
  }

  fs::path dir(std::uint64_t seed) const { return work_ / fmt("desk-seed-%llu", (unsigned long long)seed); }

 private:
  DeskRun run(std::uint64_t seed) {
    DeskRun r;
    r.seed = seed;
    r.cfg = RunConfig::desk();
    r.cfg.seed = seed;
    r.out = dir(seed);
    fs::remove_all(r.out);
    const Paths paths(r.cfg, r.out);
    std::ostream& log = log_for(seed);
    std::cerr << "  desk run, seed " << seed << ": gen-data\n";
    run_gen_data(r.cfg, paths, log);
    std::cerr << "  desk run, seed " << seed << ": train-ae\n";
    Stopwatch ae;
    r.ae = run_train_ae(r.cfg, paths, log);
    r.ae_cpu = ae.cpu_s();
    std::vector<fs::path> ckpts{r.ae};
    for (LmVariant v : {LmVariant::l1, LmVariant::l2, LmVariant::chamfer}) {
      std::cerr << "  desk run, seed " << seed << ": train-lm " << to_string(v) << '\n';
      Stopwatch lm;
      ckpts.push_back(run_train_lm(r.cfg, paths, v, r.ae, log));
      r.lm_cpu += lm.cpu_s();
    }
    std::cerr << "  desk run, seed " << seed << ": eval\n";
    r.table = run_eval(r.cfg, paths, ckpts, log);
    r.comparison = compare_variants({r.table});
    return r;
  }

  fs::path work_;
  std::map<std::uint64_t, DeskRun> runs_;
  std::map<std::uint64_t, std::ofstream> logs_;
};

double overall_chamfer(const BenchmarkTable& t, const std::string& variant) {
  for (const auto& r : t.rows)
    if (r.variant == variant && r.category == BenchmarkTable::kOverall) return r.chamfer;
  throw std::runtime_error("no overall row for " + variant);
}

std::string describe_checks(const Comparison& c) {
  std::string s;
  for (const auto& k : c.checks)
    s += fmt("%s%s %.4f vs %s %.4f (%+.1f%%, %s)", s.empty() ? "" : "; ", k.better.c_str(), k.better_value,
             k.worse.c_str(), k.worse_value, k.relative_margin * 100.0, to_string(k.verdict));
  return s;
}

Outcome stage_ordering(DeskRuns& runs, std::uint64_t seed_a, std::uint64_t seed_b) {
  constexpr double kBudget = 3600.0;
  const DeskRun& a = runs.get(seed_a);
  const double train_a = a.ae_cpu + a.lm_cpu;
  std::string detail = fmt("seed %llu: %s; training CPU %.0fs", (unsigned long long)seed_a,
                           describe_checks(a.comparison).c_str(), train_a);
  bool pass = train_a <= kBudget;
  bool any_fail = false, any_inconclusive = false;
  for (const auto& k : a.comparison.checks) {
    any_fail |= k.verdict == Verdict::fail;
    any_inconclusive |= k.verdict != Verdict::pass && k.verdict != Verdict::fail;
  }
  if (any_fail) return {false, detail};
  if (any_inconclusive) {
    // Inconclusive checks are decided by the ordering itself holding on both
    // seeds; a fail verdict on the second seed fails outright.
    const DeskRun& b = runs.get(seed_b);
    const double train_b = b.ae_cpu + b.lm_cpu;
    detail += fmt(" | rerun seed %llu: %s; training CPU %.0fs", (unsigned long long)seed_b,
                  describe_checks(b.comparison).c_str(), train_b);
    pass = pass && train_b <= kBudget;
    for (std::size_t i = 0; i < a.comparison.checks.size(); ++i) {
      const auto& ka = a.comparison.checks[i];
      const auto& kb = b.comparison.checks.at(i);
      if (kb.verdict == Verdict::fail) pass = false;
      if (ka.verdict != Verdict::pass && (ka.relative_margin < 0.0 || kb.relative_margin < 0.0)) pass = false;
    }
  }
  return {pass, detail + fmt(" (budget %.0fs per seed)", kBudget)};
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : " < ") + x;
  return s;
}

Outcome rank_agreement(DeskRuns& runs, std::uint64_t seed) {
  const DeskRun& r = runs.get(seed);
  std::string latent;
  for (const char* v : {kVariantL1, kVariantL2, kVariantChamfer})
    for (const auto& row : r.table.rows)
      if (row.variant == v && row.category == BenchmarkTable::kOverall)
        latent += fmt("%s%s L1 %.4f / CD %.4f", latent.empty() ? "" : ", ", v, row.latent_l1, row.chamfer);
  return {r.comparison.rank_agreement,
          fmt("seed %llu: by latent L1: %s; by Chamfer: %s (%s)", (unsigned long long)seed,
              join(r.comparison.rank_by_latent).c_str(), join(r.comparison.rank_by_chamfer).c_str(), latent.c_str())};
}

struct ProbRun {
  fs::path checkpoint;
  double cpu = 0.0;
};

std::optional<ProbRun> prob_run;

const ProbRun& probabilistic(DeskRuns& runs, std::uint64_t seed) {
  if (!prob_run) {
    const DeskRun& r = runs.get(seed);
    std::cerr << "  desk run, seed " << seed << ": train-prob\n";
    Stopwatch sw;
    ProbRun p;
    p.checkpoint = run_train_prob(r.cfg, Paths(r.cfg, r.out), r.ae, runs.log_for(seed));
    p.cpu = sw.cpu_s();
    prob_run = p;
  }
  return *prob_run;
}

Outcome diversity_behaviour(DeskRuns& runs, std::uint64_t seed) {
  const DeskRun& r = runs.get(seed);
  const ProbRun& p = probabilistic(runs, seed);
  Stopwatch sweep;
  const Paths paths(r.cfg, r.out);
  const DiversityReport report = run_diversity(r.cfg, paths, p.checkpoint, 8, runs.log_for(seed));
  const LoadedModel m = load_model(p.checkpoint);
  const Dataset ds = load_dataset(paths.data);
  const auto chairs = ds.subset(Split::test, category_from_string(r.cfg.prob_category));
  const std::vector<double> azimuths{0.0, 180.0};
  const std::vector<std::vector<double>> zeros(8, std::vector<double>(m.image->latent_dim(), 0.0));
  const DiversityReport at_zero = diversity_sweep(*m.image, m.decoder, chairs, azimuths, zeros);
  double max_zero_spread = 0.0;
  for (const auto& rec : at_zero.records) max_zero_spread = std::max(max_zero_spread, rec.spread);
  const double sweep_cpu = sweep.cpu_s();

  const double sigma_back = report.mean_sigma(180.0), sigma_front = report.mean_sigma(0.0);
  const double spread_back = report.mean_spread(180.0), spread_front = report.mean_spread(0.0);
  const double total = r.ae_cpu + p.cpu + sweep_cpu;
  const bool a = sigma_back >= 2.0 * sigma_front;
  const bool b = spread_back >= 2.0 * spread_front;
  const bool c = max_zero_spread == 0.0;
  return {a && b && c && total < 1800.0,
          fmt("(a) mean sigma back %.4f vs front %.4f, ratio %.2f (>=2) %s; (b) spread back %.4f vs front %.4f, "
              "ratio %.2f (>=2) %s; (c) eps=0 max spread %g %s; %zu test chairs; CPU AE %.0fs + prob %.0fs + sweep "
              "%.0fs = %.0fs (<1800s)",
              sigma_back, sigma_front, sigma_back / sigma_front, a ? "ok" : "NO", spread_back, spread_front,
              spread_back / spread_front, b ? "ok" : "NO", max_zero_spread, c ? "ok" : "NO", chairs.size(), r.ae_cpu,
              p.cpu, sweep_cpu, total)};
}

Outcome variant_parity(DeskRuns& runs, std::uint64_t seed) {
  const DeskRun& r = runs.get(seed);
  const ProbRun& p = probabilistic(runs, seed);
  // Variant I on the same chairs, seed, epochs, learning rate and views.
  RunConfig c1 = r.cfg;
  c1.lm_category = r.cfg.prob_category;
  c1.lm_epochs = r.cfg.prob_epochs;
  c1.lm_learning_rate = r.cfg.prob_learning_rate;
  c1.data_dir = fs::absolute(Paths(r.cfg, r.out).data).string();
  const Paths p1(c1, r.out / "variant-one");
  std::cerr << "  desk run, seed " << seed << ": train-lm l1 on " << c1.lm_category << '\n';
  const fs::path v1 = run_train_lm(c1, p1, LmVariant::l1, r.ae, runs.log_for(seed));

  const Dataset ds = load_dataset(p1.data);
  const auto chairs = ds.subset(Split::test, category_from_string(r.cfg.prob_category));
  const EvalConfig ec = r.cfg.eval_config();
  auto score = [&](const fs::path& ckpt) {
    const LoadedModel m = load_model(ckpt);
    const Evaluation ev = evaluate_image_model(m.stage, *m.image, m.encoder, m.decoder, chairs, ec);
    return overall_chamfer(ev.table, m.stage);
  };
  const double one = score(v1), two = score(p.checkpoint);
  const double rel = std::abs(two - one) / one;
  return {rel <= 0.05, fmt("chairlike test Chamfer: Variant II %.4f vs Variant I %.4f, difference %.2f%% (<=5%%)",
                           two, one, rel * 100.0)};
}

// ---------------------------------------------------------------------------
// 8. ICP

RigidTransform random_rigid(std::mt19937_64& rng, double max_deg, double max_shift) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> ang(-max_deg, max_deg), shift(-max_shift, max_shift);
  const Vec3 axis = Vec3(n(rng), n(rng), n(rng)).normalized();
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(ang(rng) * M_PI / 180.0, axis).toRotationMatrix();
  t.translation = Vec3(shift(rng), shift(rng), shift(rng));
  return t;
}

Outcome icp_improvement() {
  Stopwatch sw;
  std::mt19937_64 rng(8080);
  const PrimitiveKind kinds[] = {PrimitiveKind::box, PrimitiveKind::cylinder, PrimitiveKind::chairlike,
                                 PrimitiveKind::tablelike, PrimitiveKind::sphere};
  std::size_t worse = 0;
  double mean_pre = 0.0, mean_post = 0.0;
  for (int i = 0; i < 50; ++i) {
    const TriangleMesh mesh = generate_primitive(kinds[i % 5], derive_seed(8081, i));
    const PointCloud target = sample_mesh_uniform(mesh, 512, derive_seed(8082, i));
    const PointCloud source =
        random_rigid(rng, 30.0, 0.1).apply(sample_mesh_uniform(mesh, 512, derive_seed(8083, i)));
    const double pre = chamfer_mean(source, target);
    const double post = chamfer_mean(icp_align(source, target).aligned, target);
    if (post > pre) ++worse;
    mean_pre += pre / 50.0;
    mean_post += post / 50.0;
  }
  const PointCloud cloud = random_cloud(256, rng);
  RigidTransform truth;
  truth.rotation = Eigen::AngleAxisd(10.0 * M_PI / 180.0, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  truth.translation = Vec3(0.03, -0.02, 0.01);
  const IcpResult rec = icp_align(cloud, truth.apply(cloud), 100, 1e-16);
  const double err = std::max((rec.transform.rotation - truth.rotation).cwiseAbs().maxCoeff(),
                              (rec.transform.translation - truth.translation).cwiseAbs().maxCoeff());
  return {worse == 0 && err <= 1e-6,
          fmt("%zu of 50 pairs worse after ICP (mean Chamfer %.5f -> %.5f); 10-degree recovery max|err| %.2e "
              "(<=1e-6), %.1fs",
              worse, mean_pre, mean_post, err, sw.wall_s())};
}

// ---------------------------------------------------------------------------
// 9. Diversity-loss analytics

Outcome diversity_analytics() {
  constexpr double step = 1e-4;
  double worst_offset = 0.0;
  std::size_t scans = 0;
  for (double eta : {0.5, 1.0, 2.0})
    for (double delta : {20.0, 45.0})
      for (double phi = 0.0; phi < 360.0; phi += 15.0) {
        TrainConfig cfg;
        cfg.eta = eta;
        cfg.delta_deg = delta;
        const double target = eta * std::exp(-std::pow(angle_difference(phi, 180.0, true), 2) / (delta * delta));
        double best = 0.0, best_loss = INFINITY;
        const std::size_t steps = static_cast<std::size_t>(std::llround(1.5 * eta / step));
        for (std::size_t i = 0; i <= steps; ++i) {
          const double s = static_cast<double>(i) * step;
          const double l = diversity_loss(std::vector<double>{s}, phi, cfg);
          if (l < best_loss) {
            best_loss = l;
            best = s;
          }
        }
        worst_offset = std::max(worst_offset, std::abs(best - target));
        ++scans;
      }
  TrainConfig cfg;
  cfg.eta = 1.3;
  constexpr std::size_t k = 8;
  const double e1 = diversity_loss(std::vector<double>(k, cfg.eta), 180.0, cfg);
  const double e2 = diversity_loss(std::vector<double>(k, 0.0), 0.0, cfg);
  const double e3 = diversity_loss(std::vector<double>(k, 0.0), 180.0, cfg) / k;
  const bool closed = std::abs(e1) <= 1e-9 && std::abs(e2) <= 1e-9 && std::abs(e3 - cfg.eta * cfg.eta) <= 1e-9;
  return {worst_offset <= step && closed,
          fmt("%zu grid scans (step %.0e): worst |argmin - target| %.1e; closed forms: on-target %.1e, 180 deg off "
              "%.1e, sigma=0 at peak %.12f per dim vs eta^2 %.12f",
              scans, step, worst_offset, e1, e2, e3, cfg.eta * cfg.eta)};
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(LMNET_CLI) + " " + args + " >> " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const char* sub : {"data", "checkpoints", "reports"})
    for (const auto& e : fs::recursive_directory_iterator(root / sub))
      if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
  files["recon.ply"] = read_file(root / "recon.ply");
  return files;
}

Outcome cli_determinism(const fs::path& work, std::uint64_t seed) {
  Stopwatch sw;
  const fs::path dir = work / "cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path config = dir / "run.cfg";
  write_file_atomic(config,
                    "preset = desk\nper_category = 5\ngt_points = 512\noversample = 4\nnum_points = 256\n"
                    "batch_size = 4\nae_epochs = 3\nlm_epochs = 1\nprob_epochs = 1\nviews_per_shape = 2\n"
                    "view_stride = 6\n"
                    "eval_points = 256\n");
  const std::string global = "--config " + config.string() + " --seed " + std::to_string(seed) + " --out ";
  std::vector<std::map<std::string, std::string>> snaps;
  for (const char* name : {"a", "b"}) {
    const fs::path out = dir / name, log = dir / (std::string(name) + ".log");
    const std::string g = global + out.string() + " ";
    const std::string ck = " --checkpoint " + (out / "checkpoints").string() + "/";
    std::vector<std::string> steps{"gen-data", "train-ae", "train-lm --variant l1", "train-lm --variant l2",
                                   "train-lm --variant chamfer", "train-prob",
                                   "eval" + ck + "ae.ckpt" + ck + "lm-l1.ckpt" + ck + "lm-l2.ckpt" + ck +
                                       "lm-chamfer.ckpt" + ck + "prob.ckpt",
                                   "diversity" + ck + "prob.ckpt --samples 4"};
    for (const auto& s : steps)
      if (int code = run_cli(g + s, log); code != 0)
        return {false, fmt("run %s: '%s' exited with %d (see %s)", name, s.c_str(), code, log.string().c_str())};
    std::vector<fs::path> views;
    for (const auto& e : fs::directory_iterator(out / "data" / "views")) views.push_back(e.path());
    std::sort(views.begin(), views.end());
    const std::string rec = "reconstruct" + ck + "lm-l1.ckpt --image " + views.front().string() + " --output " +
                            (out / "recon.ply").string();
    if (int code = run_cli(g + rec, log); code != 0)
      return {false, fmt("run %s: reconstruct exited with %d", name, code)};
    snaps.push_back(snapshot(out));
  }
  std::size_t differing = 0;
  std::string first;
  for (const auto& [path, bytes] : snaps[0]) {
    auto it = snaps[1].find(path);
    if (it == snaps[1].end() || it->second != bytes) {
      if (!differing++) first = path;
    }
  }
  if (snaps[1].size() != snaps[0].size()) ++differing;
  std::size_t ckpts = 0, reports = 0;
  for (const auto& [path, bytes] : snaps[0]) {
    ckpts += path.starts_with("checkpoints/");
    reports += path.starts_with("reports/");
  }
  return {differing == 0 && ckpts == 5 && reports == 3,
          fmt("%zu files compared (%zu checkpoints, %zu report tables, dataset, PLY); %zu differ%s%s, %.1fs",
              snaps[0].size(), ckpts, reports, differing, differing ? ", first: " : "", first.c_str(), sw.wall_s())};
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);

  CLI::App app{"lmnet acceptance run"};
  std::vector<int> only;
  std::string work = "acceptance-work";
  std::uint64_t seed = 1, second_seed = 2;
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--work", work, "scratch directory");
  app.add_option("--seed", seed, "seed of the desk-scale run");
  app.add_option("--second-seed", second_seed, "seed of the rerun for inconclusive orderings");
  CLI11_PARSE(app, argc, argv);

  const fs::path work_dir = fs::absolute(work);
  DeskRuns runs(work_dir);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracles", metric_oracles},
      {"gradient suite", gradient_suite},
      {"permutation invariance", permutation_invariance},
      {"stage ordering", [&] { return stage_ordering(runs, seed, second_seed); }},
      {"latent/reconstruction rank agreement", [&] { return rank_agreement(runs, seed); }},
      {"diversity behaviour", [&] { return diversity_behaviour(runs, seed); }},
      {"variant II near-parity", [&] { return variant_parity(runs, seed); }},
      {"ICP improvement", icp_improvement},
      {"diversity-loss analytics", diversity_analytics},
      {"end-to-end determinism", [&] { return cli_determinism(work_dir, seed); }},
  };

  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    std::cerr << "criterion " << id << ": " << criteria[i].first << '\n';
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << ". " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
