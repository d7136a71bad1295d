#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "grad_check.hpp"
#include "lmnet/metrics.hpp"
#include "lmnet/models.hpp"

namespace lmnet {
namespace {

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(u(rng), u(rng), u(rng));
  return c;
}

ModelConfig small_config() {
  ModelConfig c;
  c.num_points = 16;
  c.latent_dim = 8;
  c.encoder_widths = {6, 8};
  c.decoder_widths = {10};
  c.image_size = 16;
  c.image_layers = {{3, 2, 3}, {3, 2, 4}};
  return c;
}

RenderedView random_view(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RenderedView v;
  for (double& p : v.pixels) p = u(rng) < 0.5 ? 0.0 : u(rng);
  return v;
}

TEST(PointEncoder, LayerParameterCountsMatchReference) {
  const PointEncoder enc(ModelConfig{}, 1);
  // weights + bias + batch-norm scale and shift per layer
  const std::size_t expected[] = {384, 8576, 16768, 33536, 132608};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(enc.layer_parameter_count(i), expected[i]) << "layer " << i;
  EXPECT_EQ(enc.parameter_count(), 384u + 8576u + 16768u + 33536u + 132608u);
  EXPECT_EQ(enc.latent_dim(), 512u);
}

TEST(PointDecoder, ReferenceShapes) {
  const ModelConfig cfg;
  const PointDecoder dec(cfg, 2);
  EXPECT_EQ(dec.parameter_count(), (512 * 256 + 256 + 512) + (256 * 256 + 256 + 512) + (256 * 6144 + 6144));
  LatentCode z{std::vector<double>(512, 0.1)};
  const PointCloud out = decode(dec, z);
  EXPECT_EQ(out.size(), 2048u);
  EXPECT_EQ(decode(dec, z).points, out.points);
}

TEST(ImageEncoder, ReferenceLayoutProducesLatentWidth) {
  const ModelConfig cfg;
  const ImageEncoder det(cfg, ImageHead::deterministic, 3);
  const RenderedView blank;
  const LatentCode z = encode_image_deterministic(det, blank);
  EXPECT_EQ(z.size(), 512u);
  for (double v : z.values) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(encode_image_deterministic(det, blank).values, z.values);
  // head: 4x4x512 features to k
  EXPECT_EQ(const_cast<ImageEncoder&>(det).head_layer().weight.shape, (Shape{4 * 4 * 512, 512}));
}

TEST(PointEncoder, ExactPermutationInvariance) {
  ModelConfig cfg = small_config();
  cfg.encoder_widths = {64, 128, 8};
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    const PointEncoder enc(cfg, 100 + draw);
    const PointCloud c = random_cloud(300, draw);
    const LatentCode ref = encode_points(enc, c);
    for (std::uint64_t p = 0; p < 10; ++p) {
      PointCloud shuffled = c;
      std::shuffle(shuffled.points.begin(), shuffled.points.end(), std::mt19937_64(p));
      EXPECT_EQ(encode_points(enc, shuffled).values, ref.values);
    }
  }
}

TEST(PointEncoder, DuplicatedPointsGiveSameCodeInEval) {
  const PointEncoder enc(small_config(), 4);
  const PointCloud c = random_cloud(50, 5);
  PointCloud twice = c;
  twice.points.insert(twice.points.end(), c.points.begin(), c.points.end());
  EXPECT_EQ(encode_points(enc, twice).values, encode_points(enc, c).values);
}

TEST(PointEncoder, OutputLengthIndependentOfN) {
  const PointEncoder enc(small_config(), 6);
  for (std::size_t n : {1, 7, 200}) EXPECT_EQ(encode_points(enc, random_cloud(n, n)).size(), 8u);
}

TEST(PointEncoder, TrainModeUpdatesRunningStats) {
  PointEncoder enc(small_config(), 7);
  const auto before = enc.state();
  std::vector<double> mean_before = before[4].second->values;  // encoder.0.bn.running_mean
  ASSERT_EQ(before[4].first, "encoder.0.bn.running_mean");
  encode_points(enc, random_cloud(20, 8), Mode::train);
  EXPECT_NE(enc.state()[4].second->values, mean_before);
}

TEST(PointDecoder, Continuity) {
  const PointDecoder dec(small_config(), 9);
  LatentCode z{std::vector<double>(8, 0.3)};
  const PointCloud base = decode(dec, z);
  auto shift = [&](double d) {
    LatentCode zz = z;
    for (double& v : zz.values) v += d;
    const PointCloud moved = decode(dec, zz);
    double m = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) m = std::max(m, (moved.points[i] - base.points[i]).norm());
    return m;
  };
  const double small = shift(1e-6), large = shift(1e-3);
  EXPECT_LT(small, large);
  EXPECT_LT(small, 1e-4);
}

TEST(ImageEncoder, SigmaNonNegativeAndZeroHeadGivesZeroMu) {
  ImageEncoder enc(small_config(), ImageHead::probabilistic, 10);
  ModelConfig cfg = small_config();
  const RenderedView v = random_view(11);
  // the small config expects 16x16 images
  Graph g;
  Tensor img({1, 16, 16, 1});
  for (std::size_t i = 0; i < 256; ++i) img.values[i] = v.pixels[i];
  auto out = enc.infer(g, g.input(img));
  for (double s : g.value(out.sigma).values) EXPECT_GE(s, 0.0);

  std::fill(enc.head_layer().weight.values.begin(), enc.head_layer().weight.values.end(), 0.0);
  std::fill(enc.head_layer().bias.values.begin(), enc.head_layer().bias.values.end(), 0.0);
  Graph g2;
  auto zero = enc.infer(g2, g2.input(img));
  for (double m : g2.value(zero.mu).values) EXPECT_EQ(m, 0.0);
  for (double s : g2.value(zero.sigma).values) EXPECT_NEAR(s, std::log(2.0), 1e-15);
  (void)cfg;
}

TEST(ImageEncoder, TrunkGradientsMatchFiniteDifferences) {
  ImageEncoder enc(small_config(), ImageHead::probabilistic, 12);
  Tensor img = testing::random_tensor({3, 16, 16, 1}, 13, 0.0, 1.0);
  auto params = enc.parameters();
  // check the first conv kernel and bias plus the head weight, through mu and sigma
  const Tensor wmu = testing::random_tensor({3, 8}, 14), wsig = testing::random_tensor({3, 8}, 15);
  auto loss = [&](Graph& g) {
    auto out = enc.forward(g, g.input(img), Mode::train);
    return add(g, sum(g, mul(g, out.mu, g.constant(wmu))), sum(g, mul(g, out.sigma, g.constant(wsig))));
  };
  for (auto& [name, t] : params) t->zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  std::size_t checked = 0, bad = 0;
  for (auto& [name, t] : params) {
    for (std::size_t i = 0; i < t->size(); i += std::max<std::size_t>(1, t->size() / 12)) {
      const double saved = t->values[i];
      auto eval = [&](double x) {
        t->values[i] = x;
        Graph g;
        const double v = g.value(loss(g)).values[0];
        return v;
      };
      const double up = eval(saved + 1e-4), down = eval(saved - 1e-4);
      t->values[i] = saved;
      const double numeric = (up - down) / 2e-4;
      ++checked;
      if (std::abs(t->grad[i] - numeric) > 1e-4 * std::max(1.0, std::abs(numeric))) {
        ++bad;
        ADD_FAILURE() << name << "[" << i << "] analytic " << t->grad[i] << " numeric " << numeric;
      }
    }
  }
  EXPECT_GT(checked, 50u);
  EXPECT_EQ(bad, 0u);
}

TEST(AutoEncoder, ChamferGradientsMatchFiniteDifferences) {
  const ModelConfig cfg = small_config();
  PointEncoder enc(cfg, 16);
  PointDecoder dec(cfg, 17);
  std::vector<PointCloud> clouds{random_cloud(16, 18), random_cloud(16, 19)};
  const Tensor pts = stack_clouds(clouds);
  Tensor target({2, 48});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 48; ++i) target.values[b * 48 + i] = pts.values[b * 48 + i];
  auto loss = [&](Graph& g) {
    Var z = enc.forward(g, g.input(pts), 2, Mode::train);
    return chamfer_loss(g, dec.forward(g, z, Mode::train), g.constant(target), ChamferReduction::mean);
  };
  NamedTensors params = enc.parameters();
  for (auto& p : dec.parameters()) params.push_back(p);
  // running statistics change on every train-mode pass but never feed the output
  for (auto& [name, t] : params) t->zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  std::size_t total = 0, good = 0;
  for (auto& [name, t] : params) {
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double saved = t->values[i];
      t->values[i] = saved + 1e-4;
      double up, down;
      {
        Graph g;
        up = g.value(loss(g)).values[0];
      }
      t->values[i] = saved - 1e-4;
      {
        Graph g;
        down = g.value(loss(g)).values[0];
      }
      t->values[i] = saved;
      const double numeric = (up - down) / 2e-4;
      ++total;
      good += std::abs(t->grad[i] - numeric) <= 1e-4 * std::max(1.0, std::abs(numeric));
    }
  }
  EXPECT_GE(static_cast<double>(good), 0.99 * static_cast<double>(total)) << good << " of " << total;
}

TEST(Reparameterize, Identities) {
  GaussianLatent g{{1, 2, 3}, {0.5, 0, 2}};
  std::vector<double> zero(3, 0.0), eps{1, -1, 0.5};
  EXPECT_EQ(reparameterize(g, zero).values, g.mu);
  EXPECT_EQ(reparameterize(g, eps).values, (std::vector<double>{1.5, 2, 4}));
  GaussianLatent flat{{1, 2, 3}, {0, 0, 0}};
  EXPECT_EQ(reparameterize(flat, eps).values, flat.mu);
  EXPECT_THROW(reparameterize(g, std::vector<double>(2)), std::invalid_argument);

  std::vector<Tensor> in{testing::random_tensor({2, 3}, 20), testing::random_tensor({2, 3}, 21, 0.1, 1.0)};
  const Tensor e = testing::random_tensor({2, 3}, 22);
  testing::expect_gradients_match(in, [&](Graph& gr, const std::vector<Var>& v) {
    return sum(gr, reparameterize(gr, v[0], v[1], gr.constant(e)));
  });
  // d z / d sigma = eps and d z / d mu = 1
  Graph gr;
  Var z = reparameterize(gr, gr.parameter(in[0]), gr.parameter(in[1]), gr.constant(e));
  in[0].zero_grad();
  in[1].zero_grad();
  gr.backward(sum(gr, z));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(in[0].grad[i], 1.0);
    EXPECT_EQ(in[1].grad[i], e.values[i]);
  }
}

TEST(ModelConfig, ValidationAndScaling) {
  ModelConfig c;
  c.encoder_widths.back() = 256;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  const auto quarter = ModelConfig::scaled_image_layers(4);
  EXPECT_EQ(quarter.front().channels, 8u);
  EXPECT_EQ(quarter.back().channels, 128u);
  EXPECT_THROW(ModelConfig::scaled_image_layers(3), std::invalid_argument);
}

TEST(Models, StateNamesAreUniqueAndStable) {
  const ModelConfig cfg = small_config();
  PointEncoder a(cfg, 1), b(cfg, 1);
  ImageEncoder ia(cfg, ImageHead::deterministic, 2);
  std::set<std::string> names;
  for (auto& [n, t] : ia.state()) EXPECT_TRUE(names.insert(n).second) << n;
  const auto sa = a.state(), sb = b.state();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].first, sb[i].first);
    EXPECT_EQ(sa[i].second->values, sb[i].second->values);
  }
}

}  // namespace
}  // namespace lmnet
