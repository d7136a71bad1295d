#include "lmnet/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace lmnet {

// ---------------------------------------------------------------------------
// Basic types

std::vector<double> PointCloud::flat() const {
  std::vector<double> out(points.size() * 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[3 * i] = points[i].x();
    out[3 * i + 1] = points[i].y();
    out[3 * i + 2] = points[i].z();
  }
  return out;
}

PointCloud PointCloud::from_flat(std::span<const double> xyz) {
  if (xyz.size() % 3 != 0)
    throw std::invalid_argument("flat point array length " + std::to_string(xyz.size()) +
                                " is not a multiple of 3");
  PointCloud c;
  c.points.reserve(xyz.size() / 3);
  for (std::size_t i = 0; i < xyz.size(); i += 3) c.points.emplace_back(xyz[i], xyz[i + 1], xyz[i + 2]);
  return c;
}

void PointCloud::validate() const {
  if (points.empty()) throw std::invalid_argument("point cloud is empty");
  for (std::size_t i = 0; i < points.size(); ++i)
    if (!points[i].allFinite())
      throw std::invalid_argument("point " + std::to_string(i) + " has a non-finite coordinate");
}

double TriangleMesh::triangle_area(std::size_t face) const {
  const auto& f = faces.at(face);
  const Vec3& a = vertices.at(f[0]);
  const Vec3& b = vertices.at(f[1]);
  const Vec3& c = vertices.at(f[2]);
  return 0.5 * (b - a).cross(c - a).norm();
}

double TriangleMesh::surface_area() const {
  double s = 0.0;
  for (std::size_t i = 0; i < faces.size(); ++i) s += triangle_area(i);
  return s;
}

void TriangleMesh::append(const TriangleMesh& other) {
  const auto offset = static_cast<std::uint32_t>(vertices.size());
  vertices.insert(vertices.end(), other.vertices.begin(), other.vertices.end());
  for (const auto& f : other.faces) faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
}

void TriangleMesh::validate() const {
  if (faces.empty()) throw std::invalid_argument("mesh has no faces");
  for (std::size_t i = 0; i < faces.size(); ++i) {
    for (auto idx : faces[i])
      if (idx >= vertices.size())
        throw std::invalid_argument("face " + std::to_string(i) + " references vertex " +
                                    std::to_string(idx) + " of " + std::to_string(vertices.size()));
    if (!(triangle_area(i) > 1e-12))
      throw std::invalid_argument("face " + std::to_string(i) + " is degenerate");
  }
}

PointCloud RigidTransform::apply(const PointCloud& cloud) const {
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) out.points.push_back(apply(p));
  return out;
}

RigidTransform RigidTransform::after(const RigidTransform& first) const {
  RigidTransform t;
  t.rotation = rotation * first.rotation;
  t.translation = rotation * first.translation + translation;
  return t;
}

bool RigidTransform::is_proper_rotation(double tol) const {
  return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(rotation.determinant() - 1.0) <= tol;
}

// ---------------------------------------------------------------------------
// Nearest neighbours

NearestPairs mutual_nearest(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty() || a.size() % 3 || b.size() % 3)
    throw std::invalid_argument("mutual_nearest: point arrays must be non-empty [N x 3]");
  const std::size_t na = a.size() / 3, nb = b.size() / 3;
  std::vector<double> bx(nb), by(nb), bz(nb);
  for (std::size_t j = 0; j < nb; ++j) {
    bx[j] = b[3 * j];
    by[j] = b[3 * j + 1];
    bz[j] = b[3 * j + 2];
  }
  NearestPairs out;
  out.a_to_b.assign(na, 0);
  out.a_dist2.assign(na, 0.0);
  out.b_to_a.assign(nb, 0);
  out.b_dist2.assign(nb, std::numeric_limits<double>::infinity());
  std::vector<double> d(nb);
  for (std::size_t i = 0; i < na; ++i) {
    const double ax = a[3 * i], ay = a[3 * i + 1], az = a[3 * i + 2];
    for (std::size_t j = 0; j < nb; ++j) {
      const double dx = ax - bx[j], dy = ay - by[j], dz = az - bz[j];
      d[j] = dx * dx + dy * dy + dz * dz;
    }
    std::size_t best = 0;
    double bd = d[0];
    for (std::size_t j = 1; j < nb; ++j)
      if (d[j] < bd) {
        bd = d[j];
        best = j;
      }
    out.a_to_b[i] = best;
    out.a_dist2[i] = bd;
    for (std::size_t j = 0; j < nb; ++j)
      if (d[j] < out.b_dist2[j]) {
        out.b_dist2[j] = d[j];
        out.b_to_a[j] = i;
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

PointCloud farthest_point_sample(const PointCloud& candidates, std::size_t k) {
  const std::size_t n = candidates.size();
  if (k == 0) throw std::invalid_argument("farthest_point_sample: k must be at least 1");
  if (k > n)
    throw std::invalid_argument("farthest_point_sample: k = " + std::to_string(k) +
                                " exceeds candidate count " + std::to_string(n));
  const std::vector<double> xyz = candidates.flat();
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  PointCloud out;
  out.points.reserve(k);
  std::size_t current = 0;
  for (std::size_t s = 0; s < k; ++s) {
    out.points.push_back(candidates.points[current]);
    const double cx = xyz[3 * current], cy = xyz[3 * current + 1], cz = xyz[3 * current + 2];
    std::size_t next = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = xyz[3 * i] - cx, dy = xyz[3 * i + 1] - cy, dz = xyz[3 * i + 2] - cz;
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (min_d2[i] > best) {
        best = min_d2[i];
        next = i;
      }
    }
    current = next;
  }
  return out;
}

PointCloud farthest_point_sample(const TriangleMesh& mesh, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("farthest_point_sample: k must be at least 1");
  return farthest_point_sample(sample_mesh_uniform(mesh, 100 * k, seed), k);
}

PointCloud sample_mesh_uniform(const TriangleMesh& mesh, std::size_t m, std::uint64_t seed) {
  if (m == 0) throw std::invalid_argument("sample_mesh_uniform: m must be at least 1");
  mesh.validate();
  std::vector<double> cdf(mesh.faces.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    total += mesh.triangle_area(i);
    cdf[i] = total;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  PointCloud out;
  out.points.reserve(m);
  for (std::size_t s = 0; s < m; ++s) {
    const double u = uni(rng) * total;
    const std::size_t f = std::min<std::size_t>(
        static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()),
        cdf.size() - 1);
    const double r1 = std::sqrt(uni(rng));
    const double r2 = uni(rng);
    const auto& face = mesh.faces[f];
    out.points.push_back((1.0 - r1) * mesh.vertices[face[0]] + r1 * (1.0 - r2) * mesh.vertices[face[1]] +
                         r1 * r2 * mesh.vertices[face[2]]);
  }
  return out;
}

PointCloud random_subset(const PointCloud& cloud, std::size_t count, std::uint64_t seed) {
  if (count > cloud.size())
    throw std::invalid_argument("random_subset: requested " + std::to_string(count) + " of " +
                                std::to_string(cloud.size()) + " points");
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  PointCloud out;
  out.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.points.push_back(cloud.points[idx[i]]);
  return out;
}

PointCloud renormalize_unit_box(const PointCloud& cloud) {
  cloud.validate();
  Vec3 lo = cloud.points.front(), hi = cloud.points.front();
  for (const Vec3& p : cloud.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0)) throw std::invalid_argument("renormalize_unit_box: cloud has zero extent");
  const Vec3 center = 0.5 * (lo + hi);
  PointCloud out;
  out.points.reserve(cloud.size());
  for (const Vec3& p : cloud.points) out.points.push_back((p - center) / extent);
  return out;
}

// ---------------------------------------------------------------------------
// ICP

RigidTransform fit_rigid(std::span<const Vec3> from, std::span<const Vec3> to,
                         std::span<const double> weights) {
  if (from.size() != to.size() || from.size() != weights.size() || from.empty())
    throw std::invalid_argument("fit_rigid: correspondence arrays must be non-empty and equal length");
  double wsum = 0.0;
  Vec3 cf = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) {
    wsum += weights[i];
    cf += weights[i] * from[i];
    ct += weights[i] * to[i];
  }
  if (!(wsum > 0.0)) throw std::invalid_argument("fit_rigid: weights must sum to a positive value");
  cf /= wsum;
  ct /= wsum;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) h += weights[i] * (from[i] - cf) * (to[i] - ct).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if (!u.allFinite() || !v.allFinite()) throw std::runtime_error("fit_rigid: SVD failed");
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = v * d * u.transpose();
  t.translation = ct - t.rotation * cf;
  if (!t.rotation.allFinite() || !t.translation.allFinite())
    throw std::runtime_error("fit_rigid: SVD failed");
  return t;
}

namespace {

double symmetric_error(const NearestPairs& nn) {
  const double fwd = std::accumulate(nn.a_dist2.begin(), nn.a_dist2.end(), 0.0);
  const double bwd = std::accumulate(nn.b_dist2.begin(), nn.b_dist2.end(), 0.0);
  return fwd / static_cast<double>(nn.a_dist2.size()) + bwd / static_cast<double>(nn.b_dist2.size());
}

}  // namespace

IcpResult icp_align(const PointCloud& source, const PointCloud& target, std::size_t max_iters,
                    double tol) {
  source.validate();
  target.validate();
  const std::vector<double> tflat = target.flat();
  const double ws = 1.0 / static_cast<double>(source.size());
  const double wt = 1.0 / static_cast<double>(target.size());

  IcpResult result;
  result.aligned = source;
  NearestPairs nn = mutual_nearest(result.aligned.flat(), tflat);
  double error = symmetric_error(nn);
  result.error_history.push_back(error);

  std::vector<Vec3> from, to;
  std::vector<double> weights;
  for (std::size_t it = 0; it < max_iters && error > 0.0; ++it) {
    from.clear();
    to.clear();
    weights.clear();
    for (std::size_t i = 0; i < source.size(); ++i) {
      from.push_back(result.aligned.points[i]);
      to.push_back(target.points[nn.a_to_b[i]]);
      weights.push_back(ws);
    }
    for (std::size_t j = 0; j < target.size(); ++j) {
      from.push_back(result.aligned.points[nn.b_to_a[j]]);
      to.push_back(target.points[j]);
      weights.push_back(wt);
    }
    const RigidTransform step = fit_rigid(from, to, weights);
    const RigidTransform total = step.after(result.transform);
    PointCloud moved = total.apply(source);
    NearestPairs next = mutual_nearest(moved.flat(), tflat);
    const double next_error = symmetric_error(next);
    if (next_error > error) break;
    const double improvement = error - next_error;
    result.transform = total;
    result.aligned = std::move(moved);
    nn = std::move(next);
    error = next_error;
    result.error_history.push_back(error);
    result.iterations = it + 1;
    if (improvement < tol) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Procedural shapes

namespace {

void add_box(TriangleMesh& mesh, const Vec3& center, const Vec3& half) {
  TriangleMesh box;
  for (int i = 0; i < 8; ++i) {
    box.vertices.push_back(center + Vec3((i & 1) ? half.x() : -half.x(), (i & 2) ? half.y() : -half.y(),
                                         (i & 4) ? half.z() : -half.z()));
  }
  // Outward-facing quads split into two triangles each.
  const std::array<std::array<std::uint32_t, 4>, 6> quads = {{
      {0, 2, 3, 1},  // -z
      {4, 5, 7, 6},  // +z
      {0, 1, 5, 4},  // -y
      {2, 6, 7, 3},  // +y
      {0, 4, 6, 2},  // -x
      {1, 3, 7, 5},  // +x
  }};
  for (const auto& q : quads) {
    box.faces.push_back({q[0], q[1], q[2]});
    box.faces.push_back({q[0], q[2], q[3]});
  }
  mesh.append(box);
}

void add_cylinder(TriangleMesh& mesh, const Vec3& base_center, double radius, double height,
                  std::size_t segments) {
  TriangleMesh cyl;
  for (std::size_t s = 0; s < segments; ++s) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(s) / static_cast<double>(segments);
    const Vec3 offset(radius * std::cos(a), radius * std::sin(a), 0.0);
    cyl.vertices.push_back(base_center + offset);
    cyl.vertices.push_back(base_center + offset + Vec3(0, 0, height));
  }
  const auto bottom = static_cast<std::uint32_t>(cyl.vertices.size());
  cyl.vertices.push_back(base_center);
  cyl.vertices.push_back(base_center + Vec3(0, 0, height));
  const std::uint32_t top = bottom + 1;
  const auto n = static_cast<std::uint32_t>(segments);
  for (std::uint32_t s = 0; s < n; ++s) {
    const std::uint32_t b0 = 2 * s, t0 = 2 * s + 1;
    const std::uint32_t b1 = 2 * ((s + 1) % n), t1 = 2 * ((s + 1) % n) + 1;
    cyl.faces.push_back({b0, b1, t1});
    cyl.faces.push_back({b0, t1, t0});
    cyl.faces.push_back({bottom, b1, b0});
    cyl.faces.push_back({top, t0, t1});
  }
  mesh.append(cyl);
}

TriangleMesh icosphere(std::size_t budget, double radius) {
  if (budget < 20) throw std::invalid_argument("sphere: triangle budget must be at least 20");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh m;
  m.vertices = {Vec3(-1, t, 0), Vec3(1, t, 0),  Vec3(-1, -t, 0), Vec3(1, -t, 0),
                Vec3(0, -1, t), Vec3(0, 1, t),  Vec3(0, -1, -t), Vec3(0, 1, -t),
                Vec3(t, 0, -1), Vec3(t, 0, 1),  Vec3(-t, 0, -1), Vec3(-t, 0, 1)};
  m.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (Vec3& v : m.vertices) v.normalize();
  while (m.faces.size() * 4 <= budget) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoint;
    auto mid = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoint.find(key); it != midpoint.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      const auto id = static_cast<std::uint32_t>(m.vertices.size() - 1);
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<std::array<std::uint32_t, 3>> faces;
    for (const auto& f : m.faces) {
      const std::uint32_t ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      faces.push_back({f[0], ab, ca});
      faces.push_back({f[1], bc, ab});
      faces.push_back({f[2], ca, bc});
      faces.push_back({ab, bc, ca});
    }
    m.faces = std::move(faces);
  }
  for (Vec3& v : m.vertices) v *= radius;
  return m;
}

void normalize_mesh(TriangleMesh& mesh) {
  Vec3 lo = mesh.vertices.front(), hi = mesh.vertices.front();
  for (const Vec3& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 center = 0.5 * (lo + hi);
  const double extent = (hi - lo).maxCoeff();
  for (Vec3& v : mesh.vertices) v = (v - center) / extent;
}

void check_range(const char* what, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi))
    throw std::invalid_argument(std::string(what) + " = " + std::to_string(v) + " outside [" +
                                std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

void add_legs(TriangleMesh& mesh, int legs, double width, double depth, double thickness, double length) {
  const double x = width / 2 - thickness / 2;
  const double y = depth / 2 - thickness / 2;
  const Vec3 half(thickness / 2, thickness / 2, length / 2);
  if (legs == 4) {
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0}) add_box(mesh, Vec3(sx * x, sy * y, length / 2), half);
  } else {
    add_box(mesh, Vec3(-x, -y, length / 2), half);
    add_box(mesh, Vec3(x, -y, length / 2), half);
    add_box(mesh, Vec3(0, y, length / 2), half);
  }
}

struct Builder {
  TriangleMesh operator()(const SphereParams& p) const { return icosphere(p.triangle_budget, 0.5); }

  TriangleMesh operator()(const BoxParams& p) const {
    check_range("box size_x", p.size_x, 0.05, 1.0);
    check_range("box size_y", p.size_y, 0.05, 1.0);
    check_range("box size_z", p.size_z, 0.05, 1.0);
    TriangleMesh m;
    add_box(m, Vec3::Zero(), Vec3(p.size_x, p.size_y, p.size_z) / 2);
    normalize_mesh(m);
    return m;
  }

  TriangleMesh operator()(const CylinderParams& p) const {
    check_range("cylinder radius", p.radius, 0.05, 0.5);
    check_range("cylinder height", p.height, 0.05, 1.0);
    check_range("cylinder segments", static_cast<double>(p.segments), 8, 128);
    TriangleMesh m;
    add_cylinder(m, Vec3::Zero(), p.radius, p.height, p.segments);
    normalize_mesh(m);
    return m;
  }

  TriangleMesh operator()(const ChairParams& p) const {
    check_range("chair seat_width", p.seat_width, 0.3, 0.7);
    check_range("chair seat_depth", p.seat_depth, 0.3, 0.7);
    check_range("chair seat_height", p.seat_height, 0.3, 0.6);
    check_range("chair seat_thickness", p.seat_thickness, 0.02, 0.1);
    check_range("chair leg_thickness", p.leg_thickness, 0.02, 0.1);
    check_range("chair back_height", p.back_height, 0.2, 0.7);
    check_range("chair arm_height", p.arm_height, 0.08, 0.3);
    if (p.legs != 3 && p.legs != 4) throw std::invalid_argument("chair legs must be 3 or 4");
    TriangleMesh m;
    const double top = p.seat_height;
    add_box(m, Vec3(0, 0, top - p.seat_thickness / 2),
            Vec3(p.seat_width / 2, p.seat_depth / 2, p.seat_thickness / 2));
    add_legs(m, p.legs, p.seat_width, p.seat_depth, p.leg_thickness, top - p.seat_thickness);
    if (p.backrest) {
      add_box(m, Vec3(0, p.seat_depth / 2 - p.seat_thickness / 2, top + p.back_height / 2),
              Vec3(p.seat_width / 2, p.seat_thickness / 2, p.back_height / 2));
    }
    if (p.armrests) {
      const double a = p.leg_thickness;
      for (double sx : {-1.0, 1.0}) {
        const double x = sx * (p.seat_width / 2 - a / 2);
        add_box(m, Vec3(x, 0, top + p.arm_height + a / 2), Vec3(a / 2, p.seat_depth / 2, a / 2));
        add_box(m, Vec3(x, -(p.seat_depth / 2 - a / 2), top + p.arm_height / 2),
                Vec3(a / 2, a / 2, p.arm_height / 2));
      }
    }
    normalize_mesh(m);
    return m;
  }

  TriangleMesh operator()(const TableParams& p) const {
    check_range("table top_width", p.top_width, 0.4, 1.0);
    check_range("table top_depth", p.top_depth, 0.4, 1.0);
    check_range("table top_thickness", p.top_thickness, 0.02, 0.1);
    check_range("table height", p.height, 0.3, 0.8);
    check_range("table leg_thickness", p.leg_thickness, 0.02, 0.12);
    if (p.legs != 3 && p.legs != 4) throw std::invalid_argument("table legs must be 3 or 4");
    TriangleMesh m;
    add_box(m, Vec3(0, 0, p.height - p.top_thickness / 2),
            Vec3(p.top_width / 2, p.top_depth / 2, p.top_thickness / 2));
    const double leg_len = p.height - p.top_thickness;
    if (p.pedestal) {
      add_box(m, Vec3(0, 0, p.top_thickness / 2),
              Vec3(p.top_width / 4, p.top_depth / 4, p.top_thickness / 2));
      add_cylinder(m, Vec3(0, 0, p.top_thickness), p.leg_thickness, leg_len - p.top_thickness, 16);
    } else {
      add_legs(m, p.legs, p.top_width, p.top_depth, p.leg_thickness, leg_len);
    }
    normalize_mesh(m);
    return m;
  }
};

}  // namespace

PrimitiveKind kind_of(const PrimitiveParams& params) {
  return static_cast<PrimitiveKind>(params.index());
}

const char* to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::sphere: return "sphere";
    case PrimitiveKind::box: return "box";
    case PrimitiveKind::cylinder: return "cylinder";
    case PrimitiveKind::chairlike: return "chairlike";
    case PrimitiveKind::tablelike: return "tablelike";
  }
  return "unknown";
}

TriangleMesh generate_primitive(const PrimitiveParams& params) {
  TriangleMesh m = std::visit(Builder{}, params);
  m.validate();
  return m;
}

PrimitiveParams random_primitive_params(PrimitiveKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto coin = [&](double p) { return u(0.0, 1.0) < p; };
  switch (kind) {
    case PrimitiveKind::sphere: return SphereParams{};
    case PrimitiveKind::box: {
      BoxParams p;
      p.size_x = u(0.2, 1.0);
      p.size_y = u(0.2, 1.0);
      p.size_z = u(0.2, 1.0);
      return p;
    }
    case PrimitiveKind::cylinder: {
      CylinderParams p;
      p.radius = u(0.1, 0.5);
      p.height = u(0.2, 1.0);
      return p;
    }
    case PrimitiveKind::chairlike: {
      ChairParams p;
      p.seat_width = u(0.35, 0.6);
      p.seat_depth = u(0.35, 0.6);
      p.seat_height = u(0.35, 0.55);
      p.seat_thickness = u(0.03, 0.07);
      p.leg_thickness = u(0.03, 0.07);
      p.legs = coin(0.7) ? 4 : 3;
      p.backrest = coin(0.85);
      p.back_height = u(0.3, 0.6);
      p.armrests = coin(0.4);
      p.arm_height = u(0.12, 0.25);
      return p;
    }
    case PrimitiveKind::tablelike: {
      TableParams p;
      p.top_width = u(0.5, 1.0);
      p.top_depth = u(0.4, 0.9);
      p.top_thickness = u(0.03, 0.08);
      p.height = u(0.35, 0.75);
      p.leg_thickness = u(0.03, 0.1);
      p.legs = coin(0.7) ? 4 : 3;
      p.pedestal = coin(0.25);
      return p;
    }
  }
  throw std::invalid_argument("unknown primitive kind");
}

TriangleMesh generate_primitive(PrimitiveKind kind, std::uint64_t seed) {
  return generate_primitive(random_primitive_params(kind, seed));
}

// ---------------------------------------------------------------------------
// Rendering

Vec3 view_direction(double azimuth_deg, double elevation_deg) {
  const double a = azimuth_deg * std::numbers::pi / 180.0;
  const double e = elevation_deg * std::numbers::pi / 180.0;
  return Vec3(std::sin(a) * std::cos(e), -std::cos(a) * std::cos(e), std::sin(e));
}

RenderedView render_view(const TriangleMesh& mesh, double azimuth_deg, double elevation_deg) {
  if (!(azimuth_deg >= 0.0 && azimuth_deg < 360.0))
    throw std::invalid_argument("render_view: azimuth must lie in [0, 360)");
  if (!(elevation_deg >= -90.0 && elevation_deg <= 90.0))
    throw std::invalid_argument("render_view: elevation must lie in [-90, 90]");
  constexpr double kHalf = 0.75;
  constexpr double kDepthRange = 0.9;
  constexpr auto kRes = RenderedView::kResolution;

  const double a = azimuth_deg * std::numbers::pi / 180.0;
  const Vec3 forward = -view_direction(azimuth_deg, elevation_deg);
  const Vec3 right(std::cos(a), std::sin(a), 0.0);
  const Vec3 up = right.cross(forward);

  const double px_per_unit = static_cast<double>(kRes) / (2.0 * kHalf);
  std::vector<Eigen::Vector3d> screen(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    screen[i] = Vec3((v.dot(right) + kHalf) * px_per_unit - 0.5, (kHalf - v.dot(up)) * px_per_unit - 0.5,
                     v.dot(forward));
  }

  std::vector<double> depth(kRes * kRes, std::numeric_limits<double>::infinity());
  for (const auto& f : mesh.faces) {
    const Vec3& p0 = screen[f[0]];
    const Vec3& p1 = screen[f[1]];
    const Vec3& p2 = screen[f[2]];
    const double area = (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p2.x() - p0.x()) * (p1.y() - p0.y());
    if (std::abs(area) < 1e-12) continue;
    const double xmin = std::min({p0.x(), p1.x(), p2.x()}), xmax = std::max({p0.x(), p1.x(), p2.x()});
    const double ymin = std::min({p0.y(), p1.y(), p2.y()}), ymax = std::max({p0.y(), p1.y(), p2.y()});
    const auto c0 = static_cast<long>(std::max(0.0, std::ceil(xmin)));
    const auto c1 = static_cast<long>(std::min(static_cast<double>(kRes - 1), std::floor(xmax)));
    const auto r0 = static_cast<long>(std::max(0.0, std::ceil(ymin)));
    const auto r1 = static_cast<long>(std::min(static_cast<double>(kRes - 1), std::floor(ymax)));
    for (long r = r0; r <= r1; ++r) {
      for (long c = c0; c <= c1; ++c) {
        const double x = static_cast<double>(c), y = static_cast<double>(r);
        const double w0 = ((p1.x() - x) * (p2.y() - y) - (p2.x() - x) * (p1.y() - y)) / area;
        const double w1 = ((p2.x() - x) * (p0.y() - y) - (p0.x() - x) * (p2.y() - y)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < -1e-12 || w1 < -1e-12 || w2 < -1e-12) continue;
        const double z = w0 * p0.z() + w1 * p1.z() + w2 * p2.z();
        double& d = depth[static_cast<std::size_t>(r) * kRes + static_cast<std::size_t>(c)];
        if (z < d) d = z;
      }
    }
  }

  RenderedView view;
  view.azimuth_deg = azimuth_deg;
  view.elevation_deg = elevation_deg;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (std::isinf(depth[i])) continue;
    view.pixels[i] = std::clamp((kDepthRange - depth[i]) / (2.0 * kDepthRange), 1e-3, 1.0);
  }
  return view;
}

}  // namespace lmnet
