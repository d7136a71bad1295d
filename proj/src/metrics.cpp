#include "lmnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace lmnet {

namespace {

double sum_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

void require_non_empty(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: point clouds must be non-empty");
}

}  // namespace

double chamfer_sum(const PointCloud& a, const PointCloud& b) {
  require_non_empty(a, b);
  const NearestPairs nn = mutual_nearest(a.flat(), b.flat());
  return sum_of(nn.a_dist2) + sum_of(nn.b_dist2);
}

double chamfer_mean(const PointCloud& a, const PointCloud& b) {
  require_non_empty(a, b);
  const NearestPairs nn = mutual_nearest(a.flat(), b.flat());
  return sum_of(nn.a_dist2) / static_cast<double>(a.size()) +
         sum_of(nn.b_dist2) / static_cast<double>(b.size());
}

Var chamfer_loss(Graph& g, Var a, Var b, ChamferReduction reduction) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0) || av.dim(1) % 3 ||
      bv.dim(1) % 3 || av.dim(1) == 0 || bv.dim(1) == 0)
    throw std::invalid_argument("chamfer_loss: expected [B x Na*3] and [B x Nb*3], got " +
                                shape_string(av.shape) + " and " + shape_string(bv.shape));
  const std::size_t batch = av.dim(0);
  const std::size_t la = av.dim(1), lb = bv.dim(1);
  const std::size_t na = la / 3, nb = lb / 3;
  const double wa = reduction == ChamferReduction::sum ? 1.0 : 1.0 / static_cast<double>(na);
  const double wb = reduction == ChamferReduction::sum ? 1.0 : 1.0 / static_cast<double>(nb);

  std::vector<NearestPairs> pairs;
  pairs.reserve(batch);
  double total = 0.0;
  for (std::size_t s = 0; s < batch; ++s) {
    pairs.push_back(mutual_nearest(std::span<const double>(av.values).subspan(s * la, la),
                                   std::span<const double>(bv.values).subspan(s * lb, lb)));
    total += wa * sum_of(pairs.back().a_dist2) + wb * sum_of(pairs.back().b_dist2);
  }
  Tensor out({1}, std::vector<double>{total / static_cast<double>(batch)});
  const std::size_t out_id = g.size();
  return g.record("chamfer", {a, b}, std::move(out), [=, pairs = std::move(pairs)](Graph& gg) {
    const double dy = gg.grad(Var{out_id})[0] / static_cast<double>(batch);
    auto da = gg.grad(a);
    auto db = gg.grad(b);
    const auto& ax = gg.value(a).values;
    const auto& bx = gg.value(b).values;
    for (std::size_t s = 0; s < batch; ++s) {
      const NearestPairs& nn = pairs[s];
      const std::size_t oa = s * la, ob = s * lb;
      for (std::size_t i = 0; i < na; ++i) {
        const std::size_t j = nn.a_to_b[i];
        for (std::size_t c = 0; c < 3; ++c) {
          const double diff = 2.0 * wa * dy * (ax[oa + 3 * i + c] - bx[ob + 3 * j + c]);
          if (!da.empty()) da[oa + 3 * i + c] += diff;
          if (!db.empty()) db[ob + 3 * j + c] -= diff;
        }
      }
      for (std::size_t j = 0; j < nb; ++j) {
        const std::size_t i = nn.b_to_a[j];
        for (std::size_t c = 0; c < 3; ++c) {
          const double diff = 2.0 * wb * dy * (bx[ob + 3 * j + c] - ax[oa + 3 * i + c]);
          if (!db.empty()) db[ob + 3 * j + c] += diff;
          if (!da.empty()) da[oa + 3 * i + c] -= diff;
        }
      }
    }
  });
}

bool Matching::is_bijection() const {
  std::vector<char> seen(assignment.size(), 0);
  for (std::size_t t : assignment) {
    if (t >= assignment.size() || seen[t]) return false;
    seen[t] = 1;
  }
  return true;
}

namespace {

std::vector<double> euclidean_costs(const PointCloud& a, const PointCloud& b) {
  const std::size_t n = a.size();
  std::vector<double> cost(n * b.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < b.size(); ++j) cost[i * b.size() + j] = (a.points[i] - b.points[j]).norm();
  return cost;
}

double matching_cost(const std::vector<double>& cost, std::size_t n, const Matching& m) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += cost[i * n + m.assignment[i]];
  return total;
}

}  // namespace

EmdResult solve_assignment(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) throw std::invalid_argument("solve_assignment: cost matrix is not n x n");
  EmdResult result;
  if (n == 0) return result;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is a virtual source.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  result.matching.assignment.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) result.matching.assignment[owner[j] - 1] = j - 1;
  result.cost = matching_cost(cost, n, result.matching);
  return result;
}

EmdResult emd_exact(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("emd_exact: cloud sizes differ (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  if (a.size() > 256)
    throw std::invalid_argument("emd_exact: n = " + std::to_string(a.size()) + " exceeds the limit of 256");
  return solve_assignment(euclidean_costs(a, b), a.size());
}

EmdResult emd_auction(const PointCloud& a, const PointCloud& b, const AuctionOptions& options) {
  if (a.size() != b.size())
    throw std::invalid_argument("emd_auction: cloud sizes differ (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  const std::size_t n = a.size();
  EmdResult result;
  if (n == 0) return result;
  const std::vector<double> cost = euclidean_costs(a, b);
  const double cmax = *std::max_element(cost.begin(), cost.end());
  result.matching.assignment.assign(n, 0);
  if (n == 1 || cmax == 0.0) {
    std::iota(result.matching.assignment.begin(), result.matching.assignment.end(), 0);
    result.cost = matching_cost(cost, n, result.matching);
    return result;
  }

  const double eps_final = options.final_fraction * cmax / static_cast<double>(n);
  double eps = std::max(options.initial_fraction * cmax, eps_final);
  std::vector<double> price(n, 0.0);
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> person_of(n), object_of(n);
  std::size_t bids = 0;

  while (true) {
    std::fill(person_of.begin(), person_of.end(), kNone);
    std::fill(object_of.begin(), object_of.end(), kNone);
    std::deque<std::size_t> unassigned(n);
    std::iota(unassigned.begin(), unassigned.end(), 0);
    while (!unassigned.empty()) {
      if (++bids > options.max_bids)
        throw std::runtime_error("emd_auction: no convergence within " + std::to_string(options.max_bids) +
                                 " bids");
      const std::size_t i = unassigned.front();
      unassigned.pop_front();
      const double* row = cost.data() + i * n;
      double best = -std::numeric_limits<double>::infinity(), second = best;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double value = -row[j] - price[j];
        if (value > best) {
          second = best;
          best = value;
          best_j = j;
        } else if (value > second) {
          second = value;
        }
      }
      price[best_j] += (best - second) + eps;
      if (person_of[best_j] != kNone) {
        object_of[person_of[best_j]] = kNone;
        unassigned.push_back(person_of[best_j]);
      }
      person_of[best_j] = i;
      object_of[i] = best_j;
    }
    if (eps <= eps_final) break;
    eps = std::max(eps / options.reduction, eps_final);
  }
  result.matching.assignment = object_of;
  result.cost = matching_cost(cost, n, result.matching);
  return result;
}

MetricReport evaluate_pair(const PointCloud& pred, const PointCloud& gt, std::uint64_t seed,
                           const EvaluateOptions& options) {
  if (pred.size() < options.eval_points || gt.size() < options.eval_points)
    throw std::invalid_argument("evaluate_pair: both clouds need at least " +
                                std::to_string(options.eval_points) + " points (got " +
                                std::to_string(pred.size()) + " and " + std::to_string(gt.size()) + ")");
  PointCloud p = random_subset(renormalize_unit_box(pred), options.eval_points, seed);
  const PointCloud t = random_subset(renormalize_unit_box(gt), options.eval_points, seed);
  if (options.apply_icp) p = icp_align(p, t, options.icp_max_iters, options.icp_tol).aligned;
  MetricReport report;
  report.n_eval_points = options.eval_points;
  report.icp_applied = options.apply_icp;
  report.chamfer_scaled = chamfer_mean(p, t) * 100.0;
  if (options.compute_emd)
    report.emd_scaled = emd_auction(p, t).cost / static_cast<double>(options.eval_points) * 100.0;
  return report;
}

}  // namespace lmnet
