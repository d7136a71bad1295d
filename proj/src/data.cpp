#include "lmnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lmnet/io.hpp"
#include "lmnet/random.hpp"

namespace lmnet {

namespace fs = std::filesystem;

const char* to_string(Category c) {
  switch (c) {
    case Category::box_family: return "box-family";
    case Category::chairlike: return "chairlike";
    case Category::tablelike: return "tablelike";
    case Category::cylinder_family: return "cylinder-family";
  }
  return "unknown";
}

Category category_from_string(std::string_view name) {
  for (auto c : {Category::box_family, Category::chairlike, Category::tablelike, Category::cylinder_family})
    if (name == to_string(c)) return c;
  throw std::invalid_argument("unknown category '" + std::string(name) +
                              "' (expected box-family, chairlike, tablelike or cylinder-family)");
}

PrimitiveKind primitive_kind(Category c) {
  switch (c) {
    case Category::box_family: return PrimitiveKind::box;
    case Category::chairlike: return PrimitiveKind::chairlike;
    case Category::tablelike: return PrimitiveKind::tablelike;
    case Category::cylinder_family: return PrimitiveKind::cylinder;
  }
  throw std::invalid_argument("unknown category");
}

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

DatasetSpec DatasetSpec::uniform(std::size_t per_category, std::uint64_t seed) {
  DatasetSpec spec;
  spec.seed = seed;
  for (auto c : {Category::box_family, Category::chairlike, Category::tablelike, Category::cylinder_family})
    spec.counts.emplace_back(c, per_category);
  return spec;
}

void DatasetSpec::validate() const {
  if (counts.empty()) throw std::invalid_argument("dataset spec: no categories");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i].second < 5)
      throw std::invalid_argument(std::string("dataset spec: category ") + to_string(counts[i].first) + " has " +
                                  std::to_string(counts[i].second) + " shapes, at least 5 are required");
    for (std::size_t j = 0; j < i; ++j)
      if (counts[j].first == counts[i].first)
        throw std::invalid_argument(std::string("dataset spec: category ") + to_string(counts[i].first) +
                                    " listed twice");
  }
  if (gt_points == 0 || oversample == 0 || azimuth_count == 0)
    throw std::invalid_argument("dataset spec: gt_points, oversample and azimuth_count must be positive");
  if (elevation_deg < -90.0 || elevation_deg > 90.0)
    throw std::invalid_argument("dataset spec: elevation outside [-90, 90]");
}

std::size_t DatasetManifest::count(Category c) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.category == c; }));
}

std::size_t DatasetManifest::count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == s; }));
}

std::vector<ShapeSample> Dataset::subset(Split s) const {
  std::vector<ShapeSample> out;
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (manifest.entries[i].split == s) out.push_back(shapes[i]);
  return out;
}

std::vector<ShapeSample> Dataset::subset(Split s, Category c) const {
  std::vector<ShapeSample> out;
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (manifest.entries[i].split == s && manifest.entries[i].category == c) out.push_back(shapes[i]);
  return out;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct Describe {
  std::string operator()(const SphereParams& p) const { return "triangle_budget=" + std::to_string(p.triangle_budget); }
  std::string operator()(const BoxParams& p) const {
    return "size_x=" + num(p.size_x) + " size_y=" + num(p.size_y) + " size_z=" + num(p.size_z);
  }
  std::string operator()(const CylinderParams& p) const {
    return "radius=" + num(p.radius) + " height=" + num(p.height) + " segments=" + std::to_string(p.segments);
  }
  std::string operator()(const ChairParams& p) const {
    return "seat_width=" + num(p.seat_width) + " seat_depth=" + num(p.seat_depth) + " seat_height=" +
           num(p.seat_height) + " legs=" + std::to_string(p.legs) + " backrest=" + (p.backrest ? "1" : "0") +
           " back_height=" + num(p.back_height) + " armrests=" + (p.armrests ? "1" : "0");
  }
  std::string operator()(const TableParams& p) const {
    return "top_width=" + num(p.top_width) + " top_depth=" + num(p.top_depth) + " height=" + num(p.height) +
           " legs=" + std::to_string(p.legs) + " pedestal=" + (p.pedestal ? "1" : "0");
  }
};

std::string azimuth_tag(double az) {
  char buf[32];
  if (az == std::floor(az))
    std::snprintf(buf, sizeof buf, "az%03d", static_cast<int>(az));
  else
    std::snprintf(buf, sizeof buf, "az%07.3f", az);
  return buf;
}

}  // namespace

Dataset build_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  std::vector<std::string> failures;
  std::size_t total = 0, index = 0;
  for (const auto& [category, count] : spec.counts) {
    for (std::size_t j = 0; j < count; ++j, ++index) {
      ++total;
      ManifestEntry e;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%04zu", to_string(category), j);
      e.shape_id = id;
      e.category = category;
      e.seed = derive_seed(spec.seed, index);
      e.elevation_deg = spec.elevation_deg;
      try {
        const PrimitiveParams params = random_primitive_params(primitive_kind(category), derive_seed(e.seed, 0));
        e.params = std::visit(Describe{}, params);
        const TriangleMesh mesh = generate_primitive(params);
        const PointCloud dense = sample_mesh_uniform(mesh, spec.oversample * spec.gt_points, derive_seed(e.seed, 1));
        PointCloud cloud = renormalize_unit_box(farthest_point_sample(dense, spec.gt_points));
        for (auto& p : cloud.points)
          for (int c = 0; c < 3; ++c) p[c] = xyz_round(p[c]);
        ShapeSample s{e.shape_id, category, std::move(cloud), {}};
        e.cloud_file = "clouds/" + e.shape_id + ".xyz";
        for (std::size_t a = 0; a < spec.azimuth_count; ++a) {
          const double az = 360.0 * static_cast<double>(a) / static_cast<double>(spec.azimuth_count);
          RenderedView v = render_view(mesh, az, spec.elevation_deg);
          for (double& px : v.pixels) px = pgm_round(px);
          e.azimuths.push_back(az);
          e.view_files.push_back("views/" + e.shape_id + "_" + azimuth_tag(az) + ".pgm");
          s.views.push_back(std::move(v));
        }
        ds.manifest.entries.push_back(std::move(e));
        ds.shapes.push_back(std::move(s));
      } catch (const std::exception& ex) {
        failures.push_back(e.shape_id + ": " + ex.what());
      }
    }
  }
  if (!failures.empty() && failures.size() * 100 > total) {
    std::string msg = std::to_string(failures.size()) + " of " + std::to_string(total) + " shapes failed to generate:";
    for (const auto& f : failures) msg += "\n  " + f;
    throw std::runtime_error(msg);
  }
  split(ds.manifest, spec.seed);
  return ds;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split(DatasetManifest& manifest, std::uint64_t seed) {
  std::pair<std::vector<std::string>, std::vector<std::string>> out;
  for (auto c : {Category::box_family, Category::chairlike, Category::tablelike, Category::cylinder_family}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
      if (manifest.entries[i].category == c) idx.push_back(i);
    if (idx.empty()) continue;
    if (idx.size() < 5)
      throw std::invalid_argument(std::string("split: category ") + to_string(c) + " has only " +
                                  std::to_string(idx.size()) + " shapes (need at least 5)");
    std::mt19937_64 rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(c)));
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_train = (4 * idx.size() + 2) / 5;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      ManifestEntry& e = manifest.entries[idx[k]];
      e.split = k < n_train ? Split::train : Split::test;
      (k < n_train ? out.first : out.second).push_back(e.shape_id);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest and storage

namespace {

const std::vector<std::string> kManifestColumns{"shape_id", "category",   "split",      "seed",  "elevation_deg",
                                                "azimuths", "cloud_file", "view_files", "params"};

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? std::string(1, sep) : "") + parts[i];
  return out;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

std::string shortest(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double to_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw FormatError("manifest: bad " + what + " '" + s + "'");
  return v;
}

}  // namespace

std::string manifest_to_tsv(const DatasetManifest& manifest) {
  TsvTable t;
  t.header = kManifestColumns;
  for (const auto& e : manifest.entries) {
    std::vector<std::string> az;
    for (double a : e.azimuths) az.push_back(shortest(a));
    t.rows.push_back({e.shape_id, to_string(e.category), to_string(e.split), std::to_string(e.seed),
                      shortest(e.elevation_deg), join(az, ','), e.cloud_file, join(e.view_files, ','), e.params});
  }
  return t.to_string();
}

DatasetManifest manifest_from_tsv(std::string_view text) {
  const TsvTable t = TsvTable::parse(text);
  if (t.header != kManifestColumns) throw FormatError("manifest: unexpected columns");
  DatasetManifest m;
  for (const auto& r : t.rows) {
    ManifestEntry e;
    e.shape_id = r[0];
    e.category = category_from_string(r[1]);
    if (r[2] != "train" && r[2] != "test") throw FormatError("manifest: bad split '" + r[2] + "'");
    e.split = r[2] == "train" ? Split::train : Split::test;
    e.seed = std::stoull(r[3]);
    e.elevation_deg = to_double(r[4], "elevation");
    for (const auto& a : split_on(r[5], ',')) e.azimuths.push_back(to_double(a, "azimuth"));
    e.cloud_file = r[6];
    e.view_files = split_on(r[7], ',');
    e.params = r[8];
    if (e.view_files.size() != e.azimuths.size())
      throw FormatError("manifest: " + e.shape_id + " lists " + std::to_string(e.view_files.size()) + " views for " +
                        std::to_string(e.azimuths.size()) + " azimuths");
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_dataset(const Dataset& dataset, const fs::path& root) {
  if (dataset.shapes.size() != dataset.manifest.entries.size())
    throw std::invalid_argument("save_dataset: manifest and shapes differ in length");
  for (std::size_t i = 0; i < dataset.shapes.size(); ++i) {
    const auto& e = dataset.manifest.entries[i];
    const auto& s = dataset.shapes[i];
    write_xyz(root / e.cloud_file, s.cloud);
    for (std::size_t v = 0; v < s.views.size(); ++v) write_pgm(root / e.view_files[v], s.views[v]);
  }
  write_file_atomic(root / "manifest.tsv", manifest_to_tsv(dataset.manifest));
}

Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  ds.manifest = manifest_from_tsv(read_file(root / "manifest.tsv"));
  for (const auto& e : ds.manifest.entries) {
    ShapeSample s{e.shape_id, e.category, read_xyz(root / e.cloud_file), {}};
    for (const auto& f : e.view_files) s.views.push_back(read_pgm(root / f));
    ds.shapes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace lmnet
