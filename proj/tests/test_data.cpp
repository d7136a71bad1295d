#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <unistd.h>

#include "lmnet/data.hpp"
#include "lmnet/io.hpp"

namespace lmnet {
namespace {

namespace fs = std::filesystem;

DatasetSpec small_spec(std::size_t per_category, std::uint64_t seed) {
  DatasetSpec spec = DatasetSpec::uniform(per_category, seed);
  spec.gt_points = 256;
  spec.oversample = 4;
  return spec;
}

// Built once; the full-size build is exercised by the arithmetic test below.
const Dataset& shared_dataset() {
  static const Dataset ds = build_dataset(small_spec(10, 7));
  return ds;
}

TEST(Dataset, CountsViewsAndClouds) {
  const Dataset ds = build_dataset(DatasetSpec::uniform(10, 3));
  ASSERT_EQ(ds.shapes.size(), 40u);
  std::size_t views = 0;
  for (const auto& s : ds.shapes) {
    views += s.views.size();
    EXPECT_EQ(s.cloud.size(), 2048u);
    Vec3 lo = s.cloud.points[0], hi = lo;
    for (const auto& p : s.cloud.points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    EXPECT_NEAR((hi - lo).maxCoeff(), 1.0, 1e-8) << s.id;
    EXPECT_NEAR(((hi + lo) / 2).norm(), 0.0, 1e-8) << s.id;
  }
  EXPECT_EQ(views, 960u);
  for (auto c : {Category::box_family, Category::chairlike, Category::tablelike, Category::cylinder_family})
    EXPECT_EQ(ds.manifest.count(c), 10u);
}

TEST(Dataset, AzimuthsAreMultiplesOf15AtFixedElevation) {
  for (const auto& e : shared_dataset().manifest.entries) {
    ASSERT_EQ(e.azimuths.size(), 24u);
    for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(e.azimuths[i], 15.0 * static_cast<double>(i));
    EXPECT_EQ(e.elevation_deg, 20.0);
  }
  for (const auto& s : shared_dataset().shapes)
    for (std::size_t i = 0; i < s.views.size(); ++i) EXPECT_EQ(s.views[i].azimuth_deg, 15.0 * static_cast<double>(i));
}

TEST(Dataset, RebuildIsBitIdentical) {
  const Dataset a = build_dataset(small_spec(5, 11));
  const Dataset b = build_dataset(small_spec(5, 11));
  EXPECT_EQ(manifest_to_tsv(a.manifest), manifest_to_tsv(b.manifest));
  ASSERT_EQ(a.shapes.size(), b.shapes.size());
  for (std::size_t i = 0; i < a.shapes.size(); ++i) {
    EXPECT_EQ(format_xyz(a.shapes[i].cloud), format_xyz(b.shapes[i].cloud));
    for (std::size_t v = 0; v < a.shapes[i].views.size(); ++v)
      EXPECT_EQ(a.shapes[i].views[v].pixels, b.shapes[i].views[v].pixels);
  }
}

TEST(Dataset, EntryDependsOnlyOnSpecSeedAndIndex) {
  // Adding shapes to a later category leaves earlier entries untouched.
  DatasetSpec small = small_spec(5, 11);
  DatasetSpec more = small;
  more.counts.back().second = 7;
  const Dataset a = build_dataset(small);
  const Dataset b = build_dataset(more);
  for (std::size_t i = 0; i < a.shapes.size(); ++i) {
    EXPECT_EQ(a.manifest.entries[i].seed, b.manifest.entries[i].seed);
    EXPECT_EQ(a.manifest.entries[i].params, b.manifest.entries[i].params);
    EXPECT_EQ(format_xyz(a.shapes[i].cloud), format_xyz(b.shapes[i].cloud));
  }
}

TEST(Dataset, RejectsTinyCategories) {
  EXPECT_THROW(build_dataset(small_spec(4, 1)), std::invalid_argument);
}

TEST(Split, EightyTwentyPerCategoryWithoutLeakage) {
  DatasetManifest m = shared_dataset().manifest;
  const auto [train, test] = split(m, 7);
  EXPECT_EQ(train.size(), 32u);
  EXPECT_EQ(test.size(), 8u);
  for (auto c : {Category::box_family, Category::chairlike, Category::tablelike, Category::cylinder_family}) {
    std::size_t tr = 0, te = 0;
    for (const auto& e : m.entries)
      if (e.category == c) (e.split == Split::train ? tr : te)++;
    EXPECT_EQ(tr, 8u);
    EXPECT_EQ(te, 2u);
  }
  std::set<std::string> a(train.begin(), train.end());
  for (const auto& id : test) EXPECT_EQ(a.count(id), 0u) << id;
  // Views travel with their shape: every view file of an entry carries its id.
  for (const auto& e : m.entries)
    for (const auto& f : e.view_files) EXPECT_NE(f.find(e.shape_id + "_"), std::string::npos);
  DatasetManifest again = shared_dataset().manifest;
  EXPECT_EQ(split(again, 7), split(m, 7));
}

TEST(Split, DifferentSeedsGiveDifferentPartitions) {
  DatasetManifest m;
  for (int i = 0; i < 20; ++i) m.entries.push_back({"s" + std::to_string(i), Category::chairlike});
  const auto a = split(m, 1);
  const auto b = split(m, 2);
  EXPECT_EQ(a.second.size(), 4u);
  std::set<std::string> sa(a.second.begin(), a.second.end()), sb(b.second.begin(), b.second.end());
  EXPECT_NE(sa, sb);
}

TEST(Split, TooFewShapesIsAnError) {
  DatasetManifest m;
  for (int i = 0; i < 4; ++i) m.entries.push_back({"s" + std::to_string(i), Category::tablelike});
  EXPECT_THROW(split(m, 1), std::invalid_argument);
}

TEST(Storage, SaveThenLoadEqualsInMemory) {
  const fs::path dir = fs::temp_directory_path() / ("lmnet_test_data_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  const Dataset& ds = shared_dataset();
  save_dataset(ds, dir);
  EXPECT_TRUE(fs::exists(dir / "manifest.tsv"));
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(manifest_to_tsv(back.manifest), manifest_to_tsv(ds.manifest));
  ASSERT_EQ(back.shapes.size(), ds.shapes.size());
  for (std::size_t i = 0; i < ds.shapes.size(); ++i) {
    EXPECT_EQ(back.shapes[i].id, ds.shapes[i].id);
    EXPECT_EQ(back.shapes[i].category, ds.shapes[i].category);
    ASSERT_EQ(back.shapes[i].cloud.size(), ds.shapes[i].cloud.size());
    for (std::size_t p = 0; p < ds.shapes[i].cloud.size(); ++p)
      EXPECT_EQ(back.shapes[i].cloud.points[p], ds.shapes[i].cloud.points[p]);
    for (std::size_t v = 0; v < ds.shapes[i].views.size(); ++v) {
      EXPECT_EQ(back.shapes[i].views[v].pixels, ds.shapes[i].views[v].pixels);
      EXPECT_EQ(back.shapes[i].views[v].azimuth_deg, ds.shapes[i].views[v].azimuth_deg);
    }
  }
  fs::remove_all(dir);
}

TEST(Manifest, TsvRoundTripAndErrors) {
  const std::string tsv = manifest_to_tsv(shared_dataset().manifest);
  EXPECT_EQ(manifest_to_tsv(manifest_from_tsv(tsv)), tsv);
  EXPECT_EQ(tsv.substr(0, tsv.find('\n')),
            "shape_id\tcategory\tsplit\tseed\televation_deg\tazimuths\tcloud_file\tview_files\tparams");
  EXPECT_THROW(manifest_from_tsv("a\tb\n"), FormatError);
  EXPECT_THROW(category_from_string("sofa"), std::invalid_argument);
}

TEST(Subset, FiltersBySplitAndCategory) {
  const Dataset& ds = shared_dataset();
  EXPECT_EQ(ds.subset(Split::train).size(), 32u);
  EXPECT_EQ(ds.subset(Split::test, Category::chairlike).size(), 2u);
  for (const auto& s : ds.subset(Split::test, Category::chairlike)) EXPECT_EQ(s.category, Category::chairlike);
}

}  // namespace
}  // namespace lmnet
