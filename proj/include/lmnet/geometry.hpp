#pragma once

// Point clouds, triangle meshes and the geometric routines around them:
// sampling, renormalization, rigid alignment, procedural shapes and an
// orthographic depth rasterizer.
//
// Canonical object frame: up = +z, objects face -y. Azimuth 0 looks at the
// front (camera on the -y side), azimuth 180 looks at the back.

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace lmnet {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct PointCloud {
  std::vector<Vec3> points;

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  /// Row-major [N×3] copy.
  std::vector<double> flat() const;
  static PointCloud from_flat(std::span<const double> xyz);

  /// Throws std::invalid_argument on an empty cloud or a non-finite coordinate.
  void validate() const;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;

  double triangle_area(std::size_t face) const;
  double surface_area() const;
  void append(const TriangleMesh& other);
  /// Face indices in range and every triangle area above 1e-12.
  void validate() const;
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  PointCloud apply(const PointCloud& cloud) const;
  /// The transform that applies `first`, then `*this`.
  RigidTransform after(const RigidTransform& first) const;
  bool is_proper_rotation(double tol = 1e-9) const;
};

struct RenderedView {
  static constexpr std::size_t kResolution = 128;

  std::vector<double> pixels = std::vector<double>(kResolution * kResolution, 0.0);
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;

  double at(std::size_t row, std::size_t col) const { return pixels[row * kResolution + col]; }
};

// ---------------------------------------------------------------------------
// Nearest neighbours

/// Brute-force nearest neighbours in both directions between two flat [N×3]
/// arrays. Ties resolve to the lowest index.
struct NearestPairs {
  std::vector<std::size_t> a_to_b;
  std::vector<double> a_dist2;
  std::vector<std::size_t> b_to_a;
  std::vector<double> b_dist2;
};

NearestPairs mutual_nearest(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Sampling and normalization

/// Greedy farthest point sampling seeded at candidate 0.
PointCloud farthest_point_sample(const PointCloud& candidates, std::size_t k);
/// FPS over 100·k area-uniform candidates drawn from the mesh surface.
PointCloud farthest_point_sample(const TriangleMesh& mesh, std::size_t k, std::uint64_t seed);

/// Area-weighted, barycentric-uniform surface samples. Deterministic per seed.
PointCloud sample_mesh_uniform(const TriangleMesh& mesh, std::size_t m, std::uint64_t seed);

/// `count` distinct points drawn uniformly without replacement.
PointCloud random_subset(const PointCloud& cloud, std::size_t count, std::uint64_t seed);

/// Centers the axis-aligned bounding box at the origin and scales uniformly so
/// the longest side is exactly 1.
PointCloud renormalize_unit_box(const PointCloud& cloud);

// ---------------------------------------------------------------------------
// ICP

struct IcpResult {
  RigidTransform transform;
  PointCloud aligned;
  std::size_t iterations = 0;
  /// Mean squared nearest-neighbour distance (both directions, each side
  /// averaged) before the first and after every accepted iteration.
  std::vector<double> error_history;
};

/// Rigid ICP. Each iteration pairs every source point with its nearest target
/// point and every target point with its nearest source point, then solves the
/// weighted Procrustes problem by SVD of the cross-covariance (with reflection
/// correction). An iteration that would increase the error is rejected and
/// ends the loop; the loop also ends once the improvement drops below `tol`.
IcpResult icp_align(const PointCloud& source, const PointCloud& target, std::size_t max_iters = 50,
                    double tol = 1e-12);

/// Weighted least-squares rigid transform mapping `from[i]` onto `to[i]`.
RigidTransform fit_rigid(std::span<const Vec3> from, std::span<const Vec3> to,
                         std::span<const double> weights);

// ---------------------------------------------------------------------------
// Procedural shapes
//
// Parameter ranges accepted by generate_primitive (raw units, the mesh is
// re-centered and scaled to a longest extent of 1 afterwards, except the
// sphere which is built directly with radius 0.5):
//   box:       sides in [0.05, 1]
//   cylinder:  radius in [0.05, 0.5], height in [0.05, 1], segments 8..128
//   chairlike: seat width/depth in [0.3, 0.7], seat height in [0.3, 0.6],
//              seat thickness and leg thickness in [0.02, 0.1], legs 3 or 4,
//              back height in [0.2, 0.7], arm height in [0.08, 0.3]
//   tablelike: top width/depth in [0.4, 1], top thickness in [0.02, 0.1],
//              height in [0.3, 0.8], leg thickness in [0.02, 0.12], legs 3 or 4

enum class PrimitiveKind { sphere, box, cylinder, chairlike, tablelike };

struct SphereParams {
  std::size_t triangle_budget = 2000;
};

struct BoxParams {
  double size_x = 1.0;
  double size_y = 1.0;
  double size_z = 1.0;
};

struct CylinderParams {
  double radius = 0.5;
  double height = 1.0;
  std::size_t segments = 24;
};

struct ChairParams {
  double seat_width = 0.5;
  double seat_depth = 0.5;
  double seat_height = 0.45;
  double seat_thickness = 0.05;
  double leg_thickness = 0.05;
  int legs = 4;
  bool backrest = true;
  double back_height = 0.5;
  bool armrests = false;
  double arm_height = 0.2;
};

struct TableParams {
  double top_width = 0.8;
  double top_depth = 0.6;
  double top_thickness = 0.05;
  double height = 0.6;
  double leg_thickness = 0.06;
  int legs = 4;
  bool pedestal = false;
};

using PrimitiveParams = std::variant<SphereParams, BoxParams, CylinderParams, ChairParams, TableParams>;

PrimitiveKind kind_of(const PrimitiveParams& params);
const char* to_string(PrimitiveKind kind);

/// Throws std::invalid_argument when a parameter is outside its range.
TriangleMesh generate_primitive(const PrimitiveParams& params);
/// Draws parameters for `kind` from `seed`, then builds the mesh.
TriangleMesh generate_primitive(PrimitiveKind kind, std::uint64_t seed);
PrimitiveParams random_primitive_params(PrimitiveKind kind, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Rendering

/// Orthographic depth rendering at 128×128. The view covers [-0.75, 0.75] in
/// both image axes; a pixel stores (0.9 - depth) / 1.8 of the nearest surface
/// (clamped to [1e-3, 1]) and background pixels are exactly 0.
RenderedView render_view(const TriangleMesh& mesh, double azimuth_deg, double elevation_deg);

/// Unit vector from the object towards the camera.
Vec3 view_direction(double azimuth_deg, double elevation_deg);

}  // namespace lmnet
