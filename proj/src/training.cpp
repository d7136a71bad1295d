#include "lmnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lmnet/io.hpp"
#include "lmnet/metrics.hpp"
#include "lmnet/random.hpp"

namespace lmnet {

namespace {

constexpr std::uint64_t kEncoderStream = 1;
constexpr std::uint64_t kDecoderStream = 2;
constexpr std::uint64_t kImageStream = 3;
constexpr std::uint64_t kShuffleStream = 100;
constexpr std::uint64_t kEpsilonStream = 200;
constexpr std::uint64_t kViewStream = 300;

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::ae: return "AE";
    case Stage::lm: return "LM";
    case Stage::prob: return "PROB";
  }
  return "?";
}

const char* to_string(LmVariant v) {
  switch (v) {
    case LmVariant::chamfer: return "chamfer";
    case LmVariant::l2: return "l2";
    case LmVariant::l1: return "l1";
  }
  return "?";
}

Stage stage_from_string(std::string_view s) {
  for (auto v : {Stage::ae, Stage::lm, Stage::prob})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown stage '" + std::string(s) + "' (expected AE, LM or PROB)");
}

LmVariant variant_from_string(std::string_view s) {
  for (auto v : {LmVariant::chamfer, LmVariant::l2, LmVariant::l1})
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown latent-matching variant '" + std::string(s) + "' (expected chamfer, l1 or l2)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be > 0");
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (epochs == 0) fail("epochs must be >= 1");
  if (!(delta_deg > 0.0)) fail("delta_deg must be > 0");
  if (!(eta >= 0.0)) fail("eta must be >= 0");
  if (!(lambda_div >= 0.0)) fail("lambda_div must be >= 0");
  if (!std::isfinite(phi_o_deg)) fail("phi_o_deg must be finite");
}

bool TrainLog::same_trajectory(const TrainLog& other) const {
  if (epochs.size() != other.epochs.size()) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.epoch != b.epoch || a.steps != b.steps || a.loss != b.loss || a.latent != b.latent ||
        a.diversity != b.diversity || a.grad_norm != b.grad_norm || a.mean_sigma != b.mean_sigma)
      return false;
  }
  return true;
}

std::string TrainLog::to_tsv() const {
  TsvTable t;
  t.header = {"epoch", "steps", "loss", "latent", "diversity", "grad_norm", "mean_sigma", "seconds"};
  for (const auto& e : epochs)
    t.rows.push_back({std::to_string(e.epoch), std::to_string(e.steps), format_number(e.loss), format_number(e.latent),
                      format_number(e.diversity), format_number(e.grad_norm), format_number(e.mean_sigma),
                      format_number(e.seconds)});
  return t.to_string();
}

// ---------------------------------------------------------------------------
// Losses

double latent_loss(std::span<const double> pred, std::span<const double> target, LatentNorm norm) {
  if (pred.size() != target.size())
    throw std::invalid_argument("latent_loss: lengths differ (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(target.size()) + ")");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += norm == LatentNorm::l2 ? d * d : std::fabs(d);
  }
  return s;
}

Var latent_loss(Graph& g, Var pred, Var target, LatentNorm norm) {
  const Shape& a = g.shape(pred);
  if (a.size() != 2 || a != g.shape(target))
    throw std::invalid_argument("latent_loss: expected equal [B x k] shapes, got " + shape_string(a) + " and " +
                                shape_string(g.shape(target)));
  Var d = sub(g, pred, target);
  Var per = norm == LatentNorm::l2 ? square(g, d) : abs(g, d);
  return scale(g, sum(g, per), 1.0 / static_cast<double>(a[0]));
}

double angle_difference(double phi_i_deg, double phi_o_deg, bool wrap) {
  double d = phi_i_deg - phi_o_deg;
  if (wrap) {
    d = std::fmod(d, 360.0);
    if (d > 180.0) d -= 360.0;
    if (d < -180.0) d += 360.0;
  }
  return d;
}

double diversity_target(double phi_i_deg, const TrainConfig& cfg) {
  const double d = angle_difference(phi_i_deg, cfg.phi_o_deg, cfg.wrap_angles);
  return cfg.eta * std::exp(-(d * d) / (cfg.delta_deg * cfg.delta_deg));
}

double diversity_loss(std::span<const double> sigma, double phi_i_deg, const TrainConfig& cfg) {
  const double t = diversity_target(phi_i_deg, cfg);
  double s = 0.0;
  for (double v : sigma) s += (v - t) * (v - t);
  return s;
}

Var diversity_loss(Graph& g, Var sigma, std::span<const double> phi_i_deg, const TrainConfig& cfg) {
  const Shape& s = g.shape(sigma);
  if (s.size() != 2 || s[0] != phi_i_deg.size())
    throw std::invalid_argument("diversity_loss: sigma " + shape_string(s) + " does not match " +
                                std::to_string(phi_i_deg.size()) + " azimuths");
  Tensor target(s);
  for (std::size_t b = 0; b < s[0]; ++b)
    std::fill_n(target.values.begin() + static_cast<std::ptrdiff_t>(b * s[1]), s[1],
                diversity_target(phi_i_deg[b], cfg));
  Var d = sub(g, sigma, g.input(std::move(target)));
  return scale(g, sum(g, square(g, d)), 1.0 / static_cast<double>(s[0]));
}

double joint_loss(double l_lm, double l_div, double lambda_div) { return l_lm + lambda_div * l_div; }

Var joint_loss(Graph& g, Var l_lm, Var l_div, double lambda_div) {
  return add(g, l_lm, scale(g, l_div, lambda_div));
}

PointCloud cloud_prefix(const PointCloud& cloud, std::size_t n) {
  if (cloud.size() < n)
    throw std::invalid_argument("cloud has " + std::to_string(cloud.size()) + " points, need " + std::to_string(n));
  if (cloud.size() == n) return cloud;
  return PointCloud(std::vector<Vec3>(cloud.points.begin(), cloud.points.begin() + static_cast<std::ptrdiff_t>(n)));
}

// ---------------------------------------------------------------------------
// Shared loop machinery

namespace {

std::vector<Tensor*> tensors_of(const NamedTensors& named) {
  std::vector<Tensor*> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

// Seeded shuffle cut into full batches. A dataset smaller than one batch
// becomes a single batch, cycled up to at least two samples for batch norm.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  if (n == 0) return out;
  if (n < batch) {
    std::vector<std::size_t> b;
    for (std::size_t i = 0; i < std::max<std::size_t>(n, 2); ++i) b.push_back(order[i % n]);
    out.push_back(std::move(b));
    return out;
  }
  for (std::size_t s = 0; s + batch <= n; s += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(s + batch));
  return out;
}

struct EpochAccumulator {
  EpochRecord rec;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void add(double loss, double latent, double diversity, double grad_norm, double mean_sigma) {
    rec.loss += loss;
    rec.latent += latent;
    rec.diversity += diversity;
    rec.grad_norm += grad_norm;
    rec.mean_sigma += mean_sigma;
    ++rec.steps;
  }

  EpochRecord finish(std::size_t epoch) {
    const double n = static_cast<double>(std::max<std::size_t>(rec.steps, 1));
    rec.epoch = epoch;
    rec.loss /= n;
    rec.latent /= n;
    rec.diversity /= n;
    rec.grad_norm /= n;
    rec.mean_sigma /= n;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
  }
};

double checked(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
  return v;
}

template <typename Step>
void with_context(std::size_t epoch, std::size_t batch, Step&& step) {
  try {
    step();
  } catch (const NumericError& e) {
    throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + ": " + e.what());
  }
}

Tensor stack_flat_clouds(const std::vector<PointCloud>& clouds, const std::vector<std::size_t>& idx) {
  const std::size_t n = clouds[idx[0]].size();
  Tensor t({idx.size(), n * 3});
  for (std::size_t b = 0; b < idx.size(); ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c) t.values[(b * n + i) * 3 + c] = clouds[idx[b]].points[i][c];
  return t;
}

// (shape, view) pairs visited in one image-stage epoch.
struct ViewRef {
  std::size_t shape;
  std::size_t view;
};

std::vector<ViewRef> epoch_views(std::span<const ShapeSample> shapes, const TrainConfig& cfg, std::size_t epoch) {
  std::vector<ViewRef> out;
  std::mt19937_64 rng(derive_seed(cfg.seed, kViewStream + epoch));
  for (std::size_t s = 0; s < shapes.size(); ++s) {
    const std::size_t nv = shapes[s].views.size();
    if (nv == 0) throw std::invalid_argument("shape " + shapes[s].id + " has no views");
    std::vector<std::size_t> v(nv);
    std::iota(v.begin(), v.end(), 0);
    if (cfg.views_per_shape != 0 && cfg.views_per_shape < nv) {
      std::shuffle(v.begin(), v.end(), rng);
      v.resize(cfg.views_per_shape);
      std::sort(v.begin(), v.end());
    }
    for (std::size_t i : v) out.push_back({s, i});
  }
  return out;
}

Tensor stack_selected_views(std::span<const ShapeSample> shapes, const std::vector<ViewRef>& refs,
                            const std::vector<std::size_t>& idx) {
  std::vector<const RenderedView*> views;
  for (std::size_t i : idx) views.push_back(&shapes[refs[i].shape].views[refs[i].view]);
  return stack_views(views);
}

Tensor stack_codes(const std::vector<LatentCode>& codes, const std::vector<ViewRef>& refs,
                   const std::vector<std::size_t>& idx) {
  const std::size_t k = codes[0].size();
  Tensor t({idx.size(), k});
  for (std::size_t b = 0; b < idx.size(); ++b)
    std::copy(codes[refs[idx[b]].shape].values.begin(), codes[refs[idx[b]].shape].values.end(),
              t.values.begin() + static_cast<std::ptrdiff_t>(b * k));
  return t;
}

std::vector<PointCloud> prefixes(std::span<const PointCloud> clouds, std::size_t n) {
  std::vector<PointCloud> out;
  out.reserve(clouds.size());
  for (const auto& c : clouds) out.push_back(cloud_prefix(c, n));
  return out;
}

std::vector<PointCloud> shape_clouds(std::span<const ShapeSample> shapes, std::size_t n) {
  std::vector<PointCloud> out;
  out.reserve(shapes.size());
  for (const auto& s : shapes) out.push_back(cloud_prefix(s.cloud, n));
  return out;
}

void check_inputs(std::size_t count, const ModelConfig& model, const TrainConfig& cfg, const char* who) {
  cfg.validate();
  model.validate();
  if (count == 0) throw std::invalid_argument(std::string(who) + ": empty dataset");
}

}  // namespace

std::vector<LatentCode> encode_clouds(const PointEncoder& encoder, std::span<const PointCloud> clouds,
                                      std::size_t num_points) {
  std::vector<LatentCode> out;
  constexpr std::size_t kChunk = 16;
  for (std::size_t s = 0; s < clouds.size(); s += kChunk) {
    const std::size_t e = std::min(clouds.size(), s + kChunk);
    const std::vector<PointCloud> chunk = prefixes(clouds.subspan(s, e - s), num_points);
    Graph g;
    Var z = encoder.infer(g, g.input(stack_clouds(chunk)), chunk.size());
    const auto& v = g.value(z).values;
    const std::size_t k = v.size() / chunk.size();
    for (std::size_t b = 0; b < chunk.size(); ++b)
      out.push_back({std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(b * k),
                                         v.begin() + static_cast<std::ptrdiff_t>((b + 1) * k))});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage I

AutoencoderResult train_autoencoder(std::span<const PointCloud> clouds, const ModelConfig& model,
                                    const TrainConfig& cfg, const ProgressFn& progress) {
  check_inputs(clouds.size(), model, cfg, "train_autoencoder");
  const std::vector<PointCloud> data = prefixes(clouds, model.num_points);
  AutoencoderResult r{PointEncoder(model, derive_seed(cfg.seed, kEncoderStream)),
                      PointDecoder(model, derive_seed(cfg.seed, kDecoderStream)), {}};
  std::vector<Tensor*> params = tensors_of(r.encoder.parameters());
  for (Tensor* t : tensors_of(r.decoder.parameters())) params.push_back(t);
  Adam opt(params, AdamOptions{cfg.learning_rate});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochAccumulator acc;
    const auto batches = make_batches(data.size(), cfg.batch_size, derive_seed(cfg.seed, kShuffleStream + epoch));
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      with_context(epoch, bi, [&] {
        const auto& idx = batches[bi];
        Graph g;
        Tensor target = stack_flat_clouds(data, idx);
        Var x = g.input(Tensor({idx.size() * model.num_points, 3}, target.values));
        Var z = r.encoder.forward(g, x, idx.size(), Mode::train);
        Var y = r.decoder.forward(g, z, Mode::train);
        Var loss = chamfer_loss(g, y, g.input(std::move(target)), ChamferReduction::mean);
        const double l = checked(g.value(loss).values[0], "loss");
        opt.zero_grad();
        g.backward(loss);
        const double gn = checked(opt.grad_norm(), "gradient norm");
        opt.step();
        acc.add(l, l, 0.0, gn, 0.0);
      });
    }
    r.log.epochs.push_back(acc.finish(epoch));
    if (progress) progress(r.log.epochs.back());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Stage II

ImageTrainResult train_latent_matching(std::span<const ShapeSample> shapes, const PointEncoder& encoder,
                                       const PointDecoder& decoder, const ModelConfig& model,
                                       const TrainConfig& cfg, const ProgressFn& progress) {
  check_inputs(shapes.size(), model, cfg, "train_latent_matching");
  if (decoder.num_points() != model.num_points)
    throw std::invalid_argument("train_latent_matching: decoder emits " + std::to_string(decoder.num_points()) +
                                " points, model config says " + std::to_string(model.num_points));
  const std::vector<PointCloud> clouds = shape_clouds(shapes, model.num_points);
  std::vector<LatentCode> codes;
  if (cfg.lm_variant != LmVariant::chamfer) codes = encode_clouds(encoder, clouds, model.num_points);

  ImageTrainResult r{ImageEncoder(model, ImageHead::deterministic, derive_seed(cfg.seed, kImageStream)), {}};
  Adam opt(tensors_of(r.encoder.parameters()), AdamOptions{cfg.learning_rate});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochAccumulator acc;
    const std::vector<ViewRef> refs = epoch_views(shapes, cfg, epoch);
    const auto batches = make_batches(refs.size(), cfg.batch_size, derive_seed(cfg.seed, kShuffleStream + epoch));
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      with_context(epoch, bi, [&] {
        const auto& idx = batches[bi];
        Graph g;
        Var zi = r.encoder.forward(g, g.input(stack_selected_views(shapes, refs, idx)), Mode::train).mu;
        Var loss;
        if (cfg.lm_variant == LmVariant::chamfer) {
          std::vector<std::size_t> shape_idx;
          for (std::size_t i : idx) shape_idx.push_back(refs[i].shape);
          Var y = decoder.infer(g, zi);
          loss = chamfer_loss(g, y, g.input(stack_flat_clouds(clouds, shape_idx)), ChamferReduction::mean);
        } else {
          const LatentNorm norm = cfg.lm_variant == LmVariant::l1 ? LatentNorm::l1 : LatentNorm::l2;
          loss = latent_loss(g, zi, g.input(stack_codes(codes, refs, idx)), norm);
        }
        const double l = checked(g.value(loss).values[0], "loss");
        opt.zero_grad();
        g.backward(loss);
        const double gn = checked(opt.grad_norm(), "gradient norm");
        opt.step();
        acc.add(l, l, 0.0, gn, 0.0);
      });
    }
    r.log.epochs.push_back(acc.finish(epoch));
    if (progress) progress(r.log.epochs.back());
  }
  return r;
}

ImageTrainResult train_probabilistic(std::span<const ShapeSample> shapes, const PointEncoder& encoder,
                                     const ModelConfig& model, const TrainConfig& cfg, const ProgressFn& progress) {
  check_inputs(shapes.size(), model, cfg, "train_probabilistic");
  const std::vector<PointCloud> clouds = shape_clouds(shapes, model.num_points);
  const std::vector<LatentCode> codes = encode_clouds(encoder, clouds, model.num_points);
  const std::size_t k = model.latent_dim;

  ImageTrainResult r{ImageEncoder(model, ImageHead::probabilistic, derive_seed(cfg.seed, kImageStream)), {}};
  Adam opt(tensors_of(r.encoder.parameters()), AdamOptions{cfg.learning_rate});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochAccumulator acc;
    const std::vector<ViewRef> refs = epoch_views(shapes, cfg, epoch);
    const auto batches = make_batches(refs.size(), cfg.batch_size, derive_seed(cfg.seed, kShuffleStream + epoch));
    std::mt19937_64 eps_rng(derive_seed(cfg.seed, kEpsilonStream + epoch));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      Tensor eps({idx.size(), k});
      if (cfg.shared_epsilon) {
        for (std::size_t b = 0; b < idx.size(); ++b)
          std::fill_n(eps.values.begin() + static_cast<std::ptrdiff_t>(b * k), k, normal(eps_rng));
      } else {
        for (double& e : eps.values) e = normal(eps_rng);
      }
      with_context(epoch, bi, [&] {
        Graph g;
        auto out = r.encoder.forward(g, g.input(stack_selected_views(shapes, refs, idx)), Mode::train);
        Var z = reparameterize(g, out.mu, out.sigma, g.input(std::move(eps)));
        Var l_lm = latent_loss(g, z, g.input(stack_codes(codes, refs, idx)), LatentNorm::l1);
        std::vector<double> phi;
        for (std::size_t i : idx) phi.push_back(shapes[refs[i].shape].views[refs[i].view].azimuth_deg);
        Var l_div = diversity_loss(g, out.sigma, phi, cfg);
        Var loss = joint_loss(g, l_lm, l_div, cfg.lambda_div);
        const double l = checked(g.value(loss).values[0], "loss");
        const auto& sv = g.value(out.sigma).values;
        const double mean_sigma = std::accumulate(sv.begin(), sv.end(), 0.0) / static_cast<double>(sv.size());
        opt.zero_grad();
        g.backward(loss);
        const double gn = checked(opt.grad_norm(), "gradient norm");
        opt.step();
        acc.add(l, g.value(l_lm).values[0], g.value(l_div).values[0], gn, mean_sigma);
      });
    }
    r.log.epochs.push_back(acc.finish(epoch));
    if (progress) progress(r.log.epochs.back());
  }
  return r;
}

}  // namespace lmnet
