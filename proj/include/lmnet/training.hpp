#pragma once

// Two-stage training: the point-cloud auto-encoder (Stage I), latent matching
// of an image encoder against the frozen auto-encoder (Stage II, three loss
// variants) and the probabilistic image encoder trained with the
// view-dependent diversity loss.
//
// Every trainer is deterministic per seed: weight initialization, epoch
// shuffles, view selection and ε draws each come from their own derived
// stream of TrainConfig::seed.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lmnet/autodiff.hpp"
#include "lmnet/data.hpp"
#include "lmnet/models.hpp"

namespace lmnet {

enum class Stage { ae, lm, prob };
enum class LmVariant { chamfer, l2, l1 };
enum class LatentNorm { l1, l2 };

const char* to_string(Stage s);
const char* to_string(LmVariant v);
Stage stage_from_string(std::string_view s);
LmVariant variant_from_string(std::string_view s);

struct TrainConfig {
  Stage stage = Stage::ae;
  LmVariant lm_variant = LmVariant::l1;
  double learning_rate = 5e-5;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  double lambda_div = 1.0;
  double eta = 1.0;
  double phi_o_deg = 180.0;
  double delta_deg = 20.0;
  /// Wrap φ_i − φ_o into [−180, 180] before squaring; off reproduces the raw
  /// difference.
  bool wrap_angles = true;
  /// One ε scalar per sample shared by every latent dimension instead of an
  /// independent ε per dimension.
  bool shared_epsilon = false;
  /// Image stages: views drawn per shape and epoch (0 = every view).
  std::size_t views_per_shape = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  /// Mean over the epoch's batches of the optimized loss and its parts. For
  /// Stage I and the deterministic variants `latent` holds the whole loss.
  double loss = 0.0;
  double latent = 0.0;
  double diversity = 0.0;
  double grad_norm = 0.0;  // mean gradient L2 norm before each step
  double mean_sigma = 0.0;  // probabilistic stage only
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  /// Equality of every recorded value except wall-clock time.
  bool same_trajectory(const TrainLog& other) const;
  /// Tab-separated, one row per epoch.
  std::string to_tsv() const;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

// ---------------------------------------------------------------------------
// Losses

/// l2: Σ (a−b)²; l1: Σ |a−b|. Throws on a length mismatch.
double latent_loss(std::span<const double> pred, std::span<const double> target, LatentNorm norm);
/// Batch mean of the per-row latent loss between two [B×k] nodes.
Var latent_loss(Graph& g, Var pred, Var target, LatentNorm norm);

/// φ_i − φ_o in degrees, wrapped into [−180, 180] when `wrap` is set.
double angle_difference(double phi_i_deg, double phi_o_deg, bool wrap);
/// η·exp(−Δφ²/δ²).
double diversity_target(double phi_i_deg, const TrainConfig& cfg);
/// Σ_d (σ_d − target)².
double diversity_loss(std::span<const double> sigma, double phi_i_deg, const TrainConfig& cfg);
/// Batch mean of the per-row diversity loss; sigma [B×k], one azimuth per row.
Var diversity_loss(Graph& g, Var sigma, std::span<const double> phi_i_deg, const TrainConfig& cfg);

double joint_loss(double l_lm, double l_div, double lambda_div);
Var joint_loss(Graph& g, Var l_lm, Var l_div, double lambda_div);

/// First `n` points of a cloud. Ground-truth clouds are stored in FPS order,
/// so the prefix is itself a farthest-point subsample.
PointCloud cloud_prefix(const PointCloud& cloud, std::size_t n);

// ---------------------------------------------------------------------------
// Trainers

struct AutoencoderResult {
  PointEncoder encoder;
  PointDecoder decoder;
  TrainLog log;
};

/// Minimizes the batch mean of chamfer_sum / N between each input cloud and
/// its reconstruction. Clouds are cut to their first model.num_points points.
AutoencoderResult train_autoencoder(std::span<const PointCloud> clouds, const ModelConfig& model,
                                    const TrainConfig& cfg, const ProgressFn& progress = {});

struct ImageTrainResult {
  ImageEncoder encoder;
  TrainLog log;
};

/// Deterministic image encoder trained against the frozen auto-encoder. The
/// l1/l2 variants match E_P(X_P); the chamfer variant decodes through the
/// frozen decoder and matches X_P directly.
ImageTrainResult train_latent_matching(std::span<const ShapeSample> shapes, const PointEncoder& encoder,
                                       const PointDecoder& decoder, const ModelConfig& model,
                                       const TrainConfig& cfg, const ProgressFn& progress = {});

/// Probabilistic image encoder: z = μ + ε⊙σ with one ε ~ N(0, I) per sample
/// and step (or one shared scalar per sample with cfg.shared_epsilon); loss = L1(z, E_P(X_P)) + λ·diversity(σ, φ_i).
ImageTrainResult train_probabilistic(std::span<const ShapeSample> shapes, const PointEncoder& encoder,
                                     const ModelConfig& model, const TrainConfig& cfg,
                                     const ProgressFn& progress = {});

/// Latent codes E_P(X_P) of every cloud (first num_points points), eval mode.
std::vector<LatentCode> encode_clouds(const PointEncoder& encoder, std::span<const PointCloud> clouds,
                                      std::size_t num_points);

}  // namespace lmnet
