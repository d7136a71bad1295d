#pragma once

// Procedural datasets: shape populations per category, ground-truth clouds,
// multi-azimuth renders, a seeded per-category train/test split and the
// manifest that ties them to files on disk.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lmnet/geometry.hpp"

namespace lmnet {

enum class Category { box_family, chairlike, tablelike, cylinder_family };

const char* to_string(Category c);
/// Accepts the names produced by to_string; throws std::invalid_argument.
Category category_from_string(std::string_view name);
PrimitiveKind primitive_kind(Category c);

enum class Split { train, test };
const char* to_string(Split s);

struct DatasetSpec {
  std::vector<std::pair<Category, std::size_t>> counts;
  std::uint64_t seed = 0;
  std::size_t gt_points = 2048;
  /// Dense pre-sample is oversample × gt_points points before FPS.
  std::size_t oversample = 16;
  double elevation_deg = 20.0;
  std::size_t azimuth_count = 24;

  /// Four categories with `per_category` shapes each.
  static DatasetSpec uniform(std::size_t per_category, std::uint64_t seed);
  void validate() const;
};

struct ManifestEntry {
  std::string shape_id;
  Category category = Category::box_family;
  std::string params;  // generator parameters, human readable
  std::uint64_t seed = 0;
  std::vector<double> azimuths;
  double elevation_deg = 20.0;
  std::string cloud_file;                // relative to the dataset root
  std::vector<std::string> view_files;  // one per azimuth, same order
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::size_t count(Category c) const;
  std::size_t count(Split s) const;
};

/// One shape in memory: its ground-truth cloud (FPS order, so any prefix is
/// itself a farthest-point subsample) and its renders.
struct ShapeSample {
  std::string id;
  Category category = Category::box_family;
  PointCloud cloud;
  std::vector<RenderedView> views;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<ShapeSample> shapes;  // parallel to manifest.entries

  std::vector<ShapeSample> subset(Split s) const;
  std::vector<ShapeSample> subset(Split s, Category c) const;
};

/// Builds every shape: generator → dense uniform sample → FPS to gt_points →
/// unit-box renormalization → renders at every azimuth. Clouds and views are
/// rounded exactly as their file formats would round them, so a stored and
/// reloaded dataset equals the in-memory one. Split tags come from split().
Dataset build_dataset(const DatasetSpec& spec);

/// Per-category 80/20 partition by seeded shuffle; sets the split tags and
/// returns (train ids, test ids). A category with fewer than 5 shapes is an
/// error.
std::pair<std::vector<std::string>, std::vector<std::string>> split(DatasetManifest& manifest, std::uint64_t seed);

void save_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

std::string manifest_to_tsv(const DatasetManifest& manifest);
DatasetManifest manifest_from_tsv(std::string_view text);

}  // namespace lmnet
