#pragma once

// Benchmark harness: per-sample reconstruction metrics aggregated per
// category, ordering checks between model variants, and the ε sweep that
// measures how much reconstructions of one view spread apart.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lmnet/data.hpp"
#include "lmnet/models.hpp"

namespace lmnet {

struct EvalConfig {
  bool icp = true;
  bool emd = true;
  std::size_t eval_points = 1024;
  /// Image models: every view_stride-th view of each shape (1 = all views).
  std::size_t view_stride = 1;
  std::uint64_t seed = 0;
};

/// One evaluated (shape, view) pair. Point-cloud models use view = -1.
struct SampleResult {
  std::string shape_id;
  Category category = Category::box_family;
  int view = -1;
  double azimuth_deg = 0.0;
  double chamfer = 0.0;  // ×100
  double emd = 0.0;      // ×100
  double latent_l1 = 0.0;
  double latent_l2 = 0.0;
};

struct BenchmarkRow {
  std::string variant;
  std::string category;  // category name or "overall"
  double chamfer = 0.0;
  double emd = 0.0;
  double latent_l1 = 0.0;
  double latent_l2 = 0.0;
  std::size_t count = 0;
};

struct BenchmarkTable {
  static constexpr const char* kOverall = "overall";

  std::vector<BenchmarkRow> rows;
  /// Identifies the evaluated shapes and the scoring seed and options; tables
  /// are comparable only when their keys are equal.
  std::string test_set_key;

  const BenchmarkRow& row(std::string_view variant, std::string_view category = kOverall) const;
  /// Columns: variant, category, chamfer, emd, latent_l1, latent_l2, count.
  std::string to_tsv() const;
  static BenchmarkTable from_tsv(std::string_view text);
  void append(const BenchmarkTable& other);
};

struct Evaluation {
  BenchmarkTable table;
  std::vector<SampleResult> samples;
};

/// What a model returns for one input: its reconstruction and, for models
/// with an image latent, the predicted code.
struct Prediction {
  PointCloud cloud;
  std::optional<LatentCode> latent;
};

struct EvalItem {
  const ShapeSample* shape = nullptr;
  int view = -1;  // -1: the model reads the ground-truth cloud
};

/// Batched model under test.
using Predictor = std::function<std::vector<Prediction>(std::span<const EvalItem>)>;

/// Runs `predict` over `items`, scores each prediction against the shape's
/// ground-truth cloud with evaluate_pair (per-sample seed derived from
/// cfg.seed and the item index) and, when the prediction carries a latent,
/// its L1/L2 distance to `targets[item index]` (parallel to `items`, may be
/// empty). Aggregates per category in first-appearance order plus an overall
/// row.
Evaluation evaluate_model(const std::string& variant, std::span<const EvalItem> items, const Predictor& predict,
                          const std::vector<const LatentCode*>& targets, const EvalConfig& cfg);

/// Items for a point-cloud model (one per shape) or an image model (strided
/// views per shape).
std::vector<EvalItem> cloud_items(std::span<const ShapeSample> shapes);
std::vector<EvalItem> view_items(std::span<const ShapeSample> shapes, std::size_t view_stride);

/// Auto-encoder reconstructing the first decoder.num_points() points of each
/// ground-truth cloud. Latent errors are zero by construction.
Evaluation evaluate_autoencoder(const std::string& variant, const PointEncoder& encoder,
                                const PointDecoder& decoder, std::span<const ShapeSample> shapes,
                                const EvalConfig& cfg);

/// Image encoder + frozen decoder. A probabilistic encoder is evaluated at its
/// mean (ε = 0). Latent errors are measured against E_P of the first
/// decoder.num_points() ground-truth points.
Evaluation evaluate_image_model(const std::string& variant, const ImageEncoder& image,
                                const PointEncoder& encoder, const PointDecoder& decoder,
                                std::span<const ShapeSample> shapes, const EvalConfig& cfg);

// ---------------------------------------------------------------------------
// Variant comparison

enum class Verdict { pass, fail, inconclusive, indistinguishable };
const char* to_string(Verdict v);

struct OrderingCheck {
  std::string better;  // expected lower Chamfer
  std::string worse;
  double better_value = 0.0;
  double worse_value = 0.0;
  /// (worse − better) / worse; positive when the expected ordering holds.
  double relative_margin = 0.0;
  Verdict verdict = Verdict::fail;
};

struct Comparison {
  std::vector<OrderingCheck> checks;
  std::vector<std::string> rank_by_latent;
  std::vector<std::string> rank_by_chamfer;
  bool rank_agreement = false;
  /// indistinguishable when every variant scores identically; otherwise the
  /// worst check verdict (fail < inconclusive < pass).
  Verdict overall = Verdict::fail;

  std::string to_tsv() const;
};

/// Expected orderings on overall Chamfer:
///   AE ≤ LM-l1, AE ≤ LM-l2, LM-l1 ≤ LM-chamfer.
/// A check passes with relative margin ≥ `margin`, fails at ≤ −margin and is
/// inconclusive in between. Rank agreement compares the LM variants ranked
/// by latent L1 error and by Chamfer. Throws std::invalid_argument when the
/// tables do not share one test set key or a variant is missing.
Comparison compare_variants(const std::vector<BenchmarkTable>& tables, double margin = 0.02);

/// Variant names used by the pipeline.
inline constexpr const char* kVariantAE = "AE";
inline constexpr const char* kVariantL1 = "LM-l1";
inline constexpr const char* kVariantL2 = "LM-l2";
inline constexpr const char* kVariantChamfer = "LM-chamfer";
inline constexpr const char* kVariantProb = "PROB";

// ---------------------------------------------------------------------------
// Diversity

struct DiversityRecord {
  std::string shape_id;
  double azimuth_deg = 0.0;
  double mean_sigma = 0.0;
  /// Mean Chamfer (×100) over unordered pairs of ε-reconstructions.
  double spread = 0.0;
};

struct DiversityReport {
  std::vector<DiversityRecord> records;

  /// Averages over the records at one azimuth; NaN when there are none.
  double mean_spread(double azimuth_deg) const;
  double mean_sigma(double azimuth_deg) const;
  /// Columns: shape_id, azimuth, mean_sigma, spread.
  std::string to_tsv() const;
};

/// `count` standard normal vectors of length k from one seeded stream.
std::vector<std::vector<double>> draw_epsilons(std::size_t count, std::size_t k, std::uint64_t seed);

/// For every shape and every listed azimuth, decodes z = μ + ε_j⊙σ for each
/// ε_j and records the mean pairwise Chamfer among the reconstructions.
DiversityReport diversity_sweep(const ImageEncoder& image, const PointDecoder& decoder,
                                std::span<const ShapeSample> shapes, std::span<const double> azimuths_deg,
                                const std::vector<std::vector<double>>& epsilons);

}  // namespace lmnet
