#pragma once

// Point-cloud encoder, point-cloud decoder and image encoder (deterministic and
// probabilistic heads), built from autodiff operations.
//
// Every network exposes its trainable tensors through `parameters()` and all of
// its persistent state (weights plus batch-norm running statistics) through
// `state()`, both as ordered (name, tensor) lists. Checkpoints and optimizers
// rely on that order being stable.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lmnet/autodiff.hpp"
#include "lmnet/geometry.hpp"

namespace lmnet {

struct ConvLayerSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t channels = 32;

  bool operator==(const ConvLayerSpec&) const = default;
};

struct ModelConfig {
  std::size_t num_points = 2048;
  std::size_t latent_dim = 512;
  /// Widths of the per-point shared layers; the last one equals latent_dim.
  std::vector<std::size_t> encoder_widths{64, 128, 128, 256, 512};
  /// Hidden widths of the decoder; the output layer has num_points·3 units.
  std::vector<std::size_t> decoder_widths{256, 256};
  std::vector<ConvLayerSpec> image_layers = paper_image_layers();
  bool image_batch_norm = true;
  std::size_t image_size = RenderedView::kResolution;

  /// Twelve 3x3/5x5 convolutions halving resolution five times, so a 128×128
  /// view ends at 4×4×512.
  static std::vector<ConvLayerSpec> paper_image_layers();
  /// Same layer schedule with every channel count divided by `divisor`.
  static std::vector<ConvLayerSpec> scaled_image_layers(std::size_t divisor);

  /// Throws std::invalid_argument when the widths are inconsistent.
  void validate() const;
};

struct LatentCode {
  std::vector<double> values;
  std::size_t size() const { return values.size(); }
};

struct GaussianLatent {
  std::vector<double> mu;
  std::vector<double> sigma;
};

/// Fully connected layer; also realizes a per-point 1x1 convolution.
struct Dense {
  Tensor weight;  // [in×out]
  Tensor bias;    // [out]

  Dense() = default;
  /// Weights ~ N(0, gain / in), bias zero.
  Dense(std::size_t in, std::size_t out, std::uint64_t seed, double gain = 2.0);
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  RunningStats stats;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);
  std::size_t parameter_count() const { return gamma.size() + beta.size(); }
};

struct Conv {
  Tensor kernel;  // [k×k×in×out]
  Tensor bias;    // [out]
  std::size_t stride = 1;

  Conv() = default;
  Conv(const ConvLayerSpec& spec, std::size_t in_channels, std::uint64_t seed);
};

/// Per-point shared MLP (linear → batch norm → ReLU per layer) followed by a
/// maxpool over points.
class PointEncoder {
 public:
  PointEncoder() = default;
  PointEncoder(const ModelConfig& config, std::uint64_t seed);

  /// points [(B·N)×3] holding B clouds of N points each → [B×k].
  Var forward(Graph& g, Var points, std::size_t batch, Mode mode);
  /// Eval-mode forward with every tensor bound as a constant; nothing in the
  /// encoder is written and no gradient reaches its tensors.
  Var infer(Graph& g, Var points, std::size_t batch) const;

  NamedTensors parameters();
  NamedTensors state();
  ConstNamedTensors state() const;
  /// Weights, biases and batch-norm affine terms of one per-point layer.
  std::size_t layer_parameter_count(std::size_t layer) const;
  std::size_t parameter_count() const;
  std::size_t latent_dim() const;

 private:
  std::vector<Dense> layers_;
  std::vector<BatchNorm> norms_;
};

/// Fully connected decoder: hidden layers use linear → batch norm → ReLU, the
/// output layer is linear and reshaped to N×3 per sample.
class PointDecoder {
 public:
  PointDecoder() = default;
  PointDecoder(const ModelConfig& config, std::uint64_t seed);

  /// z [B×k] → [B×(N·3)].
  Var forward(Graph& g, Var z, Mode mode);
  Var infer(Graph& g, Var z) const;

  NamedTensors parameters();
  NamedTensors state();
  ConstNamedTensors state() const;
  std::size_t parameter_count() const;
  std::size_t num_points() const { return num_points_; }

 private:
  std::vector<Dense> hidden_;
  std::vector<BatchNorm> norms_;
  Dense output_;
  std::size_t num_points_ = 0;
};

enum class ImageHead { deterministic, probabilistic };

/// Convolutional image encoder. The deterministic head emits k values; the
/// probabilistic head emits 2k values split into μ and a raw σ that goes
/// through softplus.
class ImageEncoder {
 public:
  struct Output {
    Var mu;     // [B×k]
    Var sigma;  // [B×k], probabilistic head only
  };

  ImageEncoder() = default;
  ImageEncoder(const ModelConfig& config, ImageHead head, std::uint64_t seed);

  /// images [B×H×W×1] → head outputs.
  Output forward(Graph& g, Var images, Mode mode);
  Output infer(Graph& g, Var images) const;

  NamedTensors parameters();
  NamedTensors state();
  ConstNamedTensors state() const;
  std::size_t parameter_count() const;
  ImageHead head() const { return head_; }
  std::size_t latent_dim() const { return latent_dim_; }
  Dense& head_layer() { return head_layer_; }

 private:
  std::vector<Conv> convs_;
  std::vector<BatchNorm> norms_;
  Dense head_layer_;
  ImageHead head_ = ImageHead::deterministic;
  std::size_t latent_dim_ = 0;
  bool batch_norm_ = true;
};

// ---------------------------------------------------------------------------
// Single-sample conveniences

/// Packs clouds into a [(B·N)×3] tensor; every cloud must have N points.
Tensor stack_clouds(std::span<const PointCloud> clouds);
/// Packs views into a [B×128×128×1] tensor.
Tensor stack_views(std::span<const RenderedView* const> views);

/// Eval-mode conveniences over a single sample.
LatentCode encode_points(const PointEncoder& encoder, const PointCloud& cloud);
PointCloud decode(const PointDecoder& decoder, const LatentCode& z);
LatentCode encode_image_deterministic(const ImageEncoder& encoder, const RenderedView& view);
GaussianLatent encode_image_probabilistic(const ImageEncoder& encoder, const RenderedView& view);

/// Train-mode variants update batch-norm running statistics.
LatentCode encode_points(PointEncoder& encoder, const PointCloud& cloud, Mode mode);

/// z = μ + ε ⊙ σ.
LatentCode reparameterize(const GaussianLatent& g, std::span<const double> epsilon);
/// Differentiable counterpart over [B×k] tensors; `epsilon` is a constant.
Var reparameterize(Graph& g, Var mu, Var sigma, Var epsilon);

}  // namespace lmnet
