#include "lmnet/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "lmnet/random.hpp"

namespace lmnet {

namespace {

std::vector<double> normal_values(std::size_t n, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// Parameters of a mutable network go in as trainable leaves, those of a const
// network as constants.
template <typename T>
Var bind(Graph& g, T& t) {
  if constexpr (std::is_const_v<T>)
    return g.constant(t);
  else
    return g.parameter(t);
}

template <typename BN>
Var normalize(Graph& g, Var x, BN& bn, Mode mode) {
  if constexpr (std::is_const_v<BN>)
    return batch_norm(g, x, g.constant(bn.gamma), g.constant(bn.beta), bn.stats);
  else
    return batch_norm(g, x, g.parameter(bn.gamma), g.parameter(bn.beta), bn.stats, mode);
}

template <typename Layers, typename Norms>
Var run_mlp(Graph& g, Var x, Layers& layers, Norms& norms, Mode mode) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = linear(g, x, bind(g, layers[i].weight), bind(g, layers[i].bias));
    x = normalize(g, x, norms[i], mode);
    x = relu(g, x);
  }
  return x;
}

void add_dense(NamedTensors& out, const std::string& name, Dense& d) {
  out.emplace_back(name + ".weight", &d.weight);
  out.emplace_back(name + ".bias", &d.bias);
}

void add_norm(NamedTensors& out, const std::string& name, BatchNorm& bn, bool with_stats) {
  out.emplace_back(name + ".gamma", &bn.gamma);
  out.emplace_back(name + ".beta", &bn.beta);
  if (with_stats) {
    out.emplace_back(name + ".running_mean", &bn.stats.mean);
    out.emplace_back(name + ".running_var", &bn.stats.var);
  }
}

ConstNamedTensors to_const(const NamedTensors& v) {
  ConstNamedTensors out;
  out.reserve(v.size());
  for (const auto& [name, t] : v) out.emplace_back(name, t);
  return out;
}

std::size_t count(const NamedTensors& v) {
  std::size_t n = 0;
  for (const auto& entry : v) n += entry.second->size();
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<ConvLayerSpec> ModelConfig::paper_image_layers() {
  return {{3, 2, 32},  {3, 1, 32},  {3, 2, 64},  {3, 1, 64},  {3, 1, 64},  {3, 2, 128},
          {3, 1, 128}, {3, 1, 128}, {3, 2, 256}, {3, 1, 256}, {3, 1, 256}, {5, 2, 512}};
}

std::vector<ConvLayerSpec> ModelConfig::scaled_image_layers(std::size_t divisor) {
  if (divisor == 0) throw std::invalid_argument("scaled_image_layers: divisor must be positive");
  auto layers = paper_image_layers();
  for (auto& l : layers) {
    if (l.channels % divisor)
      throw std::invalid_argument("scaled_image_layers: " + std::to_string(l.channels) + " channels not divisible by " +
                                  std::to_string(divisor));
    l.channels /= divisor;
  }
  return layers;
}

void ModelConfig::validate() const {
  if (num_points == 0) throw std::invalid_argument("model config: num_points must be positive");
  if (latent_dim == 0) throw std::invalid_argument("model config: latent_dim must be positive");
  if (encoder_widths.empty() || encoder_widths.back() != latent_dim)
    throw std::invalid_argument("model config: last encoder width must equal latent_dim (" +
                                std::to_string(latent_dim) + ")");
  for (auto w : encoder_widths)
    if (w == 0) throw std::invalid_argument("model config: zero encoder width");
  for (auto w : decoder_widths)
    if (w == 0) throw std::invalid_argument("model config: zero decoder width");
  if (image_layers.empty()) throw std::invalid_argument("model config: image encoder needs at least one layer");
  std::size_t size = image_size;
  for (const auto& l : image_layers) {
    if (l.kernel % 2 == 0 || l.channels == 0 || (l.stride != 1 && l.stride != 2))
      throw std::invalid_argument("model config: image layers need odd kernels, stride 1 or 2, channels > 0");
    size = (size + l.stride - 1) / l.stride;
  }
  if (size == 0) throw std::invalid_argument("model config: image shrinks to nothing");
}

Dense::Dense(std::size_t in, std::size_t out, std::uint64_t seed, double gain)
    : weight({in, out}, normal_values(in * out, std::sqrt(gain / static_cast<double>(in)), seed), true),
      bias({out}, std::vector<double>(out, 0.0), true) {}

BatchNorm::BatchNorm(std::size_t channels)
    : gamma({channels}, std::vector<double>(channels, 1.0), true),
      beta({channels}, std::vector<double>(channels, 0.0), true),
      stats(channels) {}

Conv::Conv(const ConvLayerSpec& spec, std::size_t in_channels, std::uint64_t seed)
    : kernel({spec.kernel, spec.kernel, in_channels, spec.channels},
             normal_values(spec.kernel * spec.kernel * in_channels * spec.channels,
                           std::sqrt(2.0 / static_cast<double>(spec.kernel * spec.kernel * in_channels)), seed),
             true),
      bias({spec.channels}, std::vector<double>(spec.channels, 0.0), true),
      stride(spec.stride) {}

// ---------------------------------------------------------------------------
// Point encoder

PointEncoder::PointEncoder(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::size_t in = 3;
  for (std::size_t i = 0; i < config.encoder_widths.size(); ++i) {
    layers_.emplace_back(in, config.encoder_widths[i], derive_seed(seed, i));
    norms_.emplace_back(config.encoder_widths[i]);
    in = config.encoder_widths[i];
  }
}

namespace {

void check_points(const Graph& g, Var points, std::size_t batch) {
  const Shape& s = g.shape(points);
  if (s.size() != 2 || s[1] != 3 || batch == 0 || s[0] % batch || s[0] == 0)
    throw std::invalid_argument("point encoder: expected [(B*N) x 3] with B = " + std::to_string(batch) + ", got " +
                                shape_string(s));
}

}  // namespace

Var PointEncoder::forward(Graph& g, Var points, std::size_t batch, Mode mode) {
  check_points(g, points, batch);
  return maxpool_over_points(g, run_mlp(g, points, layers_, norms_, mode), batch);
}

Var PointEncoder::infer(Graph& g, Var points, std::size_t batch) const {
  check_points(g, points, batch);
  return maxpool_over_points(g, run_mlp(g, points, layers_, norms_, Mode::eval), batch);
}

NamedTensors PointEncoder::parameters() {
  NamedTensors out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    add_dense(out, "encoder." + std::to_string(i), layers_[i]);
    add_norm(out, "encoder." + std::to_string(i) + ".bn", norms_[i], false);
  }
  return out;
}

NamedTensors PointEncoder::state() {
  NamedTensors out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    add_dense(out, "encoder." + std::to_string(i), layers_[i]);
    add_norm(out, "encoder." + std::to_string(i) + ".bn", norms_[i], true);
  }
  return out;
}

ConstNamedTensors PointEncoder::state() const { return to_const(const_cast<PointEncoder*>(this)->state()); }

std::size_t PointEncoder::layer_parameter_count(std::size_t layer) const {
  return layers_.at(layer).parameter_count() + norms_.at(layer).parameter_count();
}

std::size_t PointEncoder::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) n += layer_parameter_count(i);
  return n;
}

std::size_t PointEncoder::latent_dim() const { return layers_.empty() ? 0 : layers_.back().bias.size(); }

// ---------------------------------------------------------------------------
// Point decoder

PointDecoder::PointDecoder(const ModelConfig& config, std::uint64_t seed) : num_points_(config.num_points) {
  config.validate();
  std::size_t in = config.latent_dim;
  for (std::size_t i = 0; i < config.decoder_widths.size(); ++i) {
    hidden_.emplace_back(in, config.decoder_widths[i], derive_seed(seed, i));
    norms_.emplace_back(config.decoder_widths[i]);
    in = config.decoder_widths[i];
  }
  output_ = Dense(in, num_points_ * 3, derive_seed(seed, 1000), 1.0);
}

namespace {

void check_latent(const Graph& g, Var z, std::size_t k) {
  const Shape& s = g.shape(z);
  if (s.size() != 2 || s[1] != k || s[0] == 0)
    throw std::invalid_argument("decoder: expected [B x " + std::to_string(k) + "], got " + shape_string(s));
}

}  // namespace

Var PointDecoder::forward(Graph& g, Var z, Mode mode) {
  check_latent(g, z, hidden_.empty() ? output_.weight.dim(0) : hidden_[0].weight.dim(0));
  Var h = run_mlp(g, z, hidden_, norms_, mode);
  return linear(g, h, g.parameter(output_.weight), g.parameter(output_.bias));
}

Var PointDecoder::infer(Graph& g, Var z) const {
  check_latent(g, z, hidden_.empty() ? output_.weight.dim(0) : hidden_[0].weight.dim(0));
  Var h = run_mlp(g, z, hidden_, norms_, Mode::eval);
  return linear(g, h, g.constant(output_.weight), g.constant(output_.bias));
}

NamedTensors PointDecoder::parameters() {
  NamedTensors out;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    add_dense(out, "decoder." + std::to_string(i), hidden_[i]);
    add_norm(out, "decoder." + std::to_string(i) + ".bn", norms_[i], false);
  }
  add_dense(out, "decoder.out", output_);
  return out;
}

NamedTensors PointDecoder::state() {
  NamedTensors out;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    add_dense(out, "decoder." + std::to_string(i), hidden_[i]);
    add_norm(out, "decoder." + std::to_string(i) + ".bn", norms_[i], true);
  }
  add_dense(out, "decoder.out", output_);
  return out;
}

ConstNamedTensors PointDecoder::state() const { return to_const(const_cast<PointDecoder*>(this)->state()); }

std::size_t PointDecoder::parameter_count() const { return count(const_cast<PointDecoder*>(this)->parameters()); }

// ---------------------------------------------------------------------------
// Image encoder

ImageEncoder::ImageEncoder(const ModelConfig& config, ImageHead head, std::uint64_t seed)
    : head_(head), latent_dim_(config.latent_dim), batch_norm_(config.image_batch_norm) {
  config.validate();
  std::size_t in = 1, size = config.image_size;
  for (std::size_t i = 0; i < config.image_layers.size(); ++i) {
    const auto& spec = config.image_layers[i];
    convs_.emplace_back(spec, in, derive_seed(seed, i));
    norms_.emplace_back(spec.channels);
    in = spec.channels;
    size = (size + spec.stride - 1) / spec.stride;
  }
  const std::size_t outputs = head == ImageHead::probabilistic ? 2 * latent_dim_ : latent_dim_;
  head_layer_ = Dense(size * size * in, outputs, derive_seed(seed, 1000), 1.0);
}

namespace {

template <typename Convs, typename Norms, typename Head>
ImageEncoder::Output run_image(Graph& g, Var x, Convs& convs, Norms& norms, Head& head, bool use_bn, ImageHead kind,
                               std::size_t k, Mode mode) {
  const Shape& s = g.shape(x);
  if (s.size() != 4 || s[3] != 1 || s[0] == 0)
    throw std::invalid_argument("image encoder: expected [B x H x W x 1], got " + shape_string(s));
  for (std::size_t i = 0; i < convs.size(); ++i) {
    x = conv2d(g, x, bind(g, convs[i].kernel), convs[i].stride);
    x = add_bias(g, x, bind(g, convs[i].bias));
    if (use_bn) x = normalize(g, x, norms[i], mode);
    x = relu(g, x);
  }
  const Shape& fs = g.shape(x);
  x = reshape(g, x, {fs[0], fs[1] * fs[2] * fs[3]});
  Var out = linear(g, x, bind(g, head.weight), bind(g, head.bias));
  if (kind == ImageHead::deterministic) return {out, Var{}};
  return {slice_columns(g, out, 0, k), softplus(g, slice_columns(g, out, k, 2 * k))};
}

}  // namespace

ImageEncoder::Output ImageEncoder::forward(Graph& g, Var images, Mode mode) {
  return run_image(g, images, convs_, norms_, head_layer_, batch_norm_, head_, latent_dim_, mode);
}

ImageEncoder::Output ImageEncoder::infer(Graph& g, Var images) const {
  return run_image(g, images, convs_, norms_, head_layer_, batch_norm_, head_, latent_dim_, Mode::eval);
}

NamedTensors ImageEncoder::parameters() {
  NamedTensors out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::string name = "image." + std::to_string(i);
    out.emplace_back(name + ".kernel", &convs_[i].kernel);
    out.emplace_back(name + ".bias", &convs_[i].bias);
    if (batch_norm_) add_norm(out, name + ".bn", norms_[i], false);
  }
  add_dense(out, "image.head", head_layer_);
  return out;
}

NamedTensors ImageEncoder::state() {
  NamedTensors out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::string name = "image." + std::to_string(i);
    out.emplace_back(name + ".kernel", &convs_[i].kernel);
    out.emplace_back(name + ".bias", &convs_[i].bias);
    if (batch_norm_) add_norm(out, name + ".bn", norms_[i], true);
  }
  add_dense(out, "image.head", head_layer_);
  return out;
}

ConstNamedTensors ImageEncoder::state() const { return to_const(const_cast<ImageEncoder*>(this)->state()); }

std::size_t ImageEncoder::parameter_count() const { return count(const_cast<ImageEncoder*>(this)->parameters()); }

// ---------------------------------------------------------------------------
// Conveniences

Tensor stack_clouds(std::span<const PointCloud> clouds) {
  if (clouds.empty()) throw std::invalid_argument("stack_clouds: no clouds");
  const std::size_t n = clouds[0].size();
  Tensor t({clouds.size() * n, 3});
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    if (clouds[b].size() != n)
      throw std::invalid_argument("stack_clouds: cloud " + std::to_string(b) + " has " +
                                  std::to_string(clouds[b].size()) + " points, expected " + std::to_string(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 3; ++c) t.values[(b * n + i) * 3 + c] = clouds[b].points[i][c];
  }
  return t;
}

Tensor stack_views(std::span<const RenderedView* const> views) {
  if (views.empty()) throw std::invalid_argument("stack_views: no views");
  constexpr std::size_t r = RenderedView::kResolution;
  Tensor t({views.size(), r, r, 1});
  for (std::size_t b = 0; b < views.size(); ++b) {
    if (views[b]->pixels.size() != r * r) throw std::invalid_argument("stack_views: malformed view");
    std::copy(views[b]->pixels.begin(), views[b]->pixels.end(), t.values.begin() + static_cast<std::ptrdiff_t>(b * r * r));
  }
  return t;
}

LatentCode encode_points(const PointEncoder& encoder, const PointCloud& cloud) {
  Graph g;
  Var z = encoder.infer(g, g.input(stack_clouds(std::span(&cloud, 1))), 1);
  return {g.value(z).values};
}

LatentCode encode_points(PointEncoder& encoder, const PointCloud& cloud, Mode mode) {
  Graph g;
  Var z = encoder.forward(g, g.input(stack_clouds(std::span(&cloud, 1))), 1, mode);
  return {g.value(z).values};
}

PointCloud decode(const PointDecoder& decoder, const LatentCode& z) {
  Graph g;
  Var out = decoder.infer(g, g.input(Tensor({1, z.size()}, z.values)));
  return PointCloud::from_flat(g.value(out).values);
}

LatentCode encode_image_deterministic(const ImageEncoder& encoder, const RenderedView& view) {
  if (encoder.head() != ImageHead::deterministic)
    throw std::invalid_argument("encode_image_deterministic: encoder has a probabilistic head");
  const RenderedView* p = &view;
  Graph g;
  auto out = encoder.infer(g, g.input(stack_views(std::span(&p, 1))));
  return {g.value(out.mu).values};
}

GaussianLatent encode_image_probabilistic(const ImageEncoder& encoder, const RenderedView& view) {
  if (encoder.head() != ImageHead::probabilistic)
    throw std::invalid_argument("encode_image_probabilistic: encoder has a deterministic head");
  const RenderedView* p = &view;
  Graph g;
  auto out = encoder.infer(g, g.input(stack_views(std::span(&p, 1))));
  return {g.value(out.mu).values, g.value(out.sigma).values};
}

LatentCode reparameterize(const GaussianLatent& g, std::span<const double> epsilon) {
  if (g.mu.size() != g.sigma.size() || epsilon.size() != g.mu.size())
    throw std::invalid_argument("reparameterize: mu, sigma and epsilon sizes differ");
  LatentCode z;
  z.values.resize(g.mu.size());
  for (std::size_t i = 0; i < z.values.size(); ++i) z.values[i] = g.mu[i] + epsilon[i] * g.sigma[i];
  return z;
}

Var reparameterize(Graph& g, Var mu, Var sigma, Var epsilon) { return add(g, mu, mul(g, epsilon, sigma)); }

}  // namespace lmnet
