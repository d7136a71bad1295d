#pragma once

// Point-set distances: Chamfer (plain and differentiable), exact EMD via the
// Hungarian algorithm, approximate EMD via an epsilon-scaling auction, and the
// evaluation protocol that combines them.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lmnet/autodiff.hpp"
#include "lmnet/geometry.hpp"

namespace lmnet {

/// Σ_a min_b ‖a−b‖² + Σ_b min_a ‖a−b‖².
double chamfer_sum(const PointCloud& a, const PointCloud& b);
/// Same squared terms, each direction averaged over its own cloud.
double chamfer_mean(const PointCloud& a, const PointCloud& b);

enum class ChamferReduction { sum, mean };

/// Differentiable Chamfer distance averaged over a batch of cloud pairs.
/// `a` is [B×(Na·3)] and `b` is [B×(Nb·3)]. Nearest-neighbour correspondences
/// are held fixed for the backward pass; both inputs receive gradients when
/// they require them.
Var chamfer_loss(Graph& g, Var a, Var b, ChamferReduction reduction);

/// Bijection source index -> target index.
struct Matching {
  std::vector<std::size_t> assignment;

  bool is_bijection() const;
};

struct EmdResult {
  double cost = 0.0;
  Matching matching;
};

/// Optimal assignment for a square cost matrix (row-major n×n) by the
/// Hungarian algorithm with potentials, O(n³).
EmdResult solve_assignment(const std::vector<double>& cost, std::size_t n);

/// Exact EMD with Euclidean edge costs. Requires |a| == |b| <= 256.
EmdResult emd_exact(const PointCloud& a, const PointCloud& b);

struct AuctionOptions {
  /// Initial epsilon as a fraction of the largest edge cost.
  double initial_fraction = 0.25;
  /// Epsilon shrinks by this factor after every phase.
  double reduction = 5.0;
  /// Final epsilon as a fraction of (largest edge cost / n); the final matching
  /// is within n·epsilon of the optimum.
  double final_fraction = 1e-6;
  /// Total bids allowed across all phases before giving up.
  std::size_t max_bids = 2'000'000'000;
};

/// Forward auction with epsilon scaling on Euclidean edge costs. Requires
/// |a| == |b|; throws std::runtime_error when the bid cap is exhausted.
EmdResult emd_auction(const PointCloud& a, const PointCloud& b, const AuctionOptions& options = {});

struct MetricReport {
  double chamfer_scaled = 0.0;  // chamfer_mean × 100
  double emd_scaled = 0.0;      // (auction EMD / n) × 100
  std::size_t n_eval_points = 1024;
  bool icp_applied = false;
};

struct EvaluateOptions {
  bool apply_icp = true;
  bool compute_emd = true;
  std::size_t eval_points = 1024;
  std::size_t icp_max_iters = 50;
  double icp_tol = 1e-10;
};

/// Renormalize both clouds to the unit box, draw `eval_points` from each
/// (seeded), optionally align pred to gt with ICP, then report Chamfer and EMD.
MetricReport evaluate_pair(const PointCloud& pred, const PointCloud& gt, std::uint64_t seed,
                           const EvaluateOptions& options = {});

}  // namespace lmnet
