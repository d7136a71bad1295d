#include "lmnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include "lmnet/io.hpp"
#include "lmnet/metrics.hpp"
#include "lmnet/random.hpp"
#include "lmnet/training.hpp"

namespace lmnet {

namespace {

constexpr std::size_t kChunk = 16;

const std::vector<std::string> kTableColumns{"variant", "category", "chamfer", "emd", "latent_l1", "latent_l2",
                                             "count"};

std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<PointCloud> split_clouds(const Tensor& flat, std::size_t batch) {
  std::vector<PointCloud> out;
  const std::size_t len = flat.size() / batch;
  for (std::size_t b = 0; b < batch; ++b)
    out.push_back(PointCloud::from_flat(std::span<const double>(flat.values).subspan(b * len, len)));
  return out;
}

std::vector<LatentCode> split_codes(const Tensor& flat, std::size_t batch) {
  std::vector<LatentCode> out;
  const std::size_t k = flat.size() / batch;
  for (std::size_t b = 0; b < batch; ++b)
    out.push_back({std::vector<double>(flat.values.begin() + static_cast<std::ptrdiff_t>(b * k),
                                       flat.values.begin() + static_cast<std::ptrdiff_t>((b + 1) * k))});
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tables

const BenchmarkRow& BenchmarkTable::row(std::string_view variant, std::string_view category) const {
  for (const auto& r : rows)
    if (r.variant == variant && r.category == category) return r;
  throw std::invalid_argument("benchmark table has no row for " + std::string(variant) + " / " +
                              std::string(category));
}

std::string BenchmarkTable::to_tsv() const {
  TsvTable t;
  t.header = kTableColumns;
  for (const auto& r : rows)
    t.rows.push_back({r.variant, r.category, format_number(r.chamfer), format_number(r.emd),
                      format_number(r.latent_l1), format_number(r.latent_l2), std::to_string(r.count)});
  return t.to_string();
}

BenchmarkTable BenchmarkTable::from_tsv(std::string_view text) {
  const TsvTable t = TsvTable::parse(text);
  if (t.header != kTableColumns) throw FormatError("benchmark table: unexpected columns");
  BenchmarkTable out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    try {
      out.rows.push_back({r[0], r[1], std::stod(r[2]), std::stod(r[3]), std::stod(r[4]), std::stod(r[5]),
                          static_cast<std::size_t>(std::stoull(r[6]))});
    } catch (const std::logic_error&) {
      throw FormatError("benchmark table: bad number", i + 2);
    }
  }
  return out;
}

void BenchmarkTable::append(const BenchmarkTable& other) {
  if (!rows.empty() && !other.rows.empty() && test_set_key != other.test_set_key)
    throw std::invalid_argument("benchmark tables were computed on different test sets");
  if (rows.empty()) test_set_key = other.test_set_key;
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<EvalItem> cloud_items(std::span<const ShapeSample> shapes) {
  std::vector<EvalItem> out;
  for (const auto& s : shapes) out.push_back({&s, -1});
  return out;
}

std::vector<EvalItem> view_items(std::span<const ShapeSample> shapes, std::size_t view_stride) {
  if (view_stride == 0) throw std::invalid_argument("view_stride must be >= 1");
  std::vector<EvalItem> out;
  for (const auto& s : shapes)
    for (std::size_t v = 0; v < s.views.size(); v += view_stride) out.push_back({&s, static_cast<int>(v)});
  return out;
}

Evaluation evaluate_model(const std::string& variant, std::span<const EvalItem> items, const Predictor& predict,
                          const std::vector<const LatentCode*>& targets, const EvalConfig& cfg) {
  if (items.empty()) throw std::invalid_argument("evaluate_model: no test samples");
  if (!targets.empty() && targets.size() != items.size())
    throw std::invalid_argument("evaluate_model: latent targets do not match the items");
  if (!predict) throw std::invalid_argument("evaluate_model: no model supplied");
  Evaluation ev;
  std::uint64_t key = fnv1a(14695981039346656037ull, std::to_string(cfg.seed) + "/" +
                                                          std::to_string(cfg.eval_points) + (cfg.icp ? "/icp" : "/raw"));
  EvaluateOptions opts;
  opts.apply_icp = cfg.icp;
  opts.compute_emd = cfg.emd;
  opts.eval_points = cfg.eval_points;

  for (std::size_t start = 0; start < items.size(); start += kChunk) {
    const auto chunk = items.subspan(start, std::min(kChunk, items.size() - start));
    const std::vector<Prediction> preds = predict(chunk);
    if (preds.size() != chunk.size()) throw std::runtime_error("evaluate_model: predictor returned a wrong count");
    for (std::size_t j = 0; j < chunk.size(); ++j) {
      const std::size_t i = start + j;
      const EvalItem& item = chunk[j];
      SampleResult s;
      s.shape_id = item.shape->id;
      s.category = item.shape->category;
      s.view = item.view;
      s.azimuth_deg = item.view >= 0 ? item.shape->views.at(static_cast<std::size_t>(item.view)).azimuth_deg : 0.0;
      const MetricReport m = evaluate_pair(preds[j].cloud, item.shape->cloud, derive_seed(cfg.seed, i), opts);
      s.chamfer = m.chamfer_scaled;
      s.emd = m.emd_scaled;
      if (preds[j].latent && !targets.empty() && targets[i]) {
        s.latent_l1 = latent_loss(preds[j].latent->values, targets[i]->values, LatentNorm::l1);
        s.latent_l2 = latent_loss(preds[j].latent->values, targets[i]->values, LatentNorm::l2);
      }
      ev.samples.push_back(std::move(s));
    }
  }
  // Keyed by the evaluated shapes, not the views, so point-cloud and image
  // models on one split compare.
  std::vector<std::string> seen;
  for (const auto& smp : ev.samples)
    if (seen.empty() || seen.back() != smp.shape_id) {
      seen.push_back(smp.shape_id);
      key = fnv1a(key, smp.shape_id + ";");
    }
  ev.table.test_set_key = hex(key);

  std::vector<std::string> order;
  std::map<std::string, BenchmarkRow> acc;
  BenchmarkRow overall{variant, BenchmarkTable::kOverall};
  for (const auto& s : ev.samples) {
    const std::string cat = to_string(s.category);
    if (!acc.count(cat)) {
      order.push_back(cat);
      acc[cat] = BenchmarkRow{variant, cat};
    }
    for (BenchmarkRow* r : {&acc[cat], &overall}) {
      r->chamfer += s.chamfer;
      r->emd += s.emd;
      r->latent_l1 += s.latent_l1;
      r->latent_l2 += s.latent_l2;
      ++r->count;
    }
  }
  auto finish = [](BenchmarkRow r) {
    const double n = static_cast<double>(r.count);
    r.chamfer /= n;
    r.emd /= n;
    r.latent_l1 /= n;
    r.latent_l2 /= n;
    return r;
  };
  for (const auto& c : order) ev.table.rows.push_back(finish(acc[c]));
  ev.table.rows.push_back(finish(overall));
  return ev;
}

Evaluation evaluate_autoencoder(const std::string& variant, const PointEncoder& encoder,
                                const PointDecoder& decoder, std::span<const ShapeSample> shapes,
                                const EvalConfig& cfg) {
  const std::size_t n = decoder.num_points();
  const std::vector<EvalItem> items = cloud_items(shapes);
  Predictor predict = [&](std::span<const EvalItem> chunk) {
    std::vector<PointCloud> inputs;
    for (const auto& it : chunk) inputs.push_back(cloud_prefix(it.shape->cloud, n));
    Graph g;
    Var y = decoder.infer(g, encoder.infer(g, g.input(stack_clouds(inputs)), inputs.size()));
    std::vector<Prediction> out;
    for (auto& c : split_clouds(g.value(y), chunk.size())) out.push_back({std::move(c), std::nullopt});
    return out;
  };
  return evaluate_model(variant, items, predict, {}, cfg);
}

Evaluation evaluate_image_model(const std::string& variant, const ImageEncoder& image,
                                const PointEncoder& encoder, const PointDecoder& decoder,
                                std::span<const ShapeSample> shapes, const EvalConfig& cfg) {
  const std::size_t n = decoder.num_points();
  std::vector<PointCloud> clouds;
  for (const auto& s : shapes) clouds.push_back(s.cloud);
  const std::vector<LatentCode> codes = encode_clouds(encoder, clouds, n);
  const std::vector<EvalItem> items = view_items(shapes, cfg.view_stride);
  std::vector<const LatentCode*> targets;
  for (const auto& it : items) targets.push_back(&codes[static_cast<std::size_t>(it.shape - shapes.data())]);

  Predictor predict = [&](std::span<const EvalItem> chunk) {
    std::vector<const RenderedView*> views;
    for (const auto& it : chunk) views.push_back(&it.shape->views.at(static_cast<std::size_t>(it.view)));
    Graph g;
    Var mu = image.infer(g, g.input(stack_views(views))).mu;
    Var y = decoder.infer(g, mu);
    auto clouds_out = split_clouds(g.value(y), chunk.size());
    auto latents = split_codes(g.value(mu), chunk.size());
    std::vector<Prediction> out;
    for (std::size_t b = 0; b < chunk.size(); ++b) out.push_back({std::move(clouds_out[b]), std::move(latents[b])});
    return out;
  };
  return evaluate_model(variant, items, predict, targets, cfg);
}

// ---------------------------------------------------------------------------
// Comparison

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::inconclusive: return "inconclusive";
    case Verdict::indistinguishable: return "indistinguishable";
  }
  return "?";
}

std::string Comparison::to_tsv() const {
  TsvTable t;
  t.header = {"check", "better", "worse", "better_chamfer", "worse_chamfer", "relative_margin", "verdict"};
  for (const auto& c : checks)
    t.rows.push_back({c.better + " <= " + c.worse, c.better, c.worse, format_number(c.better_value),
                      format_number(c.worse_value), format_number(c.relative_margin), to_string(c.verdict)});
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  };
  t.rows.push_back({"rank_agreement", join(rank_by_latent), join(rank_by_chamfer), "", "", "",
                    rank_agreement ? "pass" : "fail"});
  t.rows.push_back({"overall", "", "", "", "", "", to_string(overall)});
  return t.to_string();
}

Comparison compare_variants(const std::vector<BenchmarkTable>& tables, double margin) {
  if (tables.empty()) throw std::invalid_argument("compare_variants: no tables");
  for (const auto& t : tables)
    if (t.test_set_key != tables[0].test_set_key)
      throw std::invalid_argument("compare_variants: tables were evaluated on different test sets or seeds");
  auto overall = [&](const char* variant) -> const BenchmarkRow& {
    for (const auto& t : tables)
      for (const auto& r : t.rows)
        if (r.variant == variant && r.category == BenchmarkTable::kOverall) return r;
    throw std::invalid_argument(std::string("compare_variants: no results for ") + variant);
  };
  const char* names[] = {kVariantAE, kVariantL1, kVariantL2, kVariantChamfer};
  for (const char* n : {kVariantL2, kVariantChamfer})
    if (overall(n).count != overall(kVariantL1).count)
      throw std::invalid_argument("compare_variants: variants were evaluated on different sample counts");

  Comparison c;
  auto check = [&](const char* better, const char* worse) {
    OrderingCheck k;
    k.better = better;
    k.worse = worse;
    k.better_value = overall(better).chamfer;
    k.worse_value = overall(worse).chamfer;
    if (k.better_value == k.worse_value) {
      k.relative_margin = 0.0;
      k.verdict = Verdict::inconclusive;
    } else {
      k.relative_margin = (k.worse_value - k.better_value) / std::max(k.worse_value, k.better_value);
      k.verdict = k.relative_margin >= margin ? Verdict::pass
                  : k.relative_margin <= -margin ? Verdict::fail
                                                 : Verdict::inconclusive;
    }
    c.checks.push_back(k);
  };
  check(kVariantAE, kVariantL1);
  check(kVariantAE, kVariantL2);
  check(kVariantL1, kVariantChamfer);

  std::vector<std::string> lm{kVariantL1, kVariantL2, kVariantChamfer};
  c.rank_by_latent = lm;
  c.rank_by_chamfer = lm;
  std::stable_sort(c.rank_by_latent.begin(), c.rank_by_latent.end(), [&](const auto& a, const auto& b) {
    return overall(a.c_str()).latent_l1 < overall(b.c_str()).latent_l1;
  });
  std::stable_sort(c.rank_by_chamfer.begin(), c.rank_by_chamfer.end(), [&](const auto& a, const auto& b) {
    return overall(a.c_str()).chamfer < overall(b.c_str()).chamfer;
  });
  c.rank_agreement = c.rank_by_latent == c.rank_by_chamfer;

  bool identical = true;
  for (const char* n : names) identical = identical && overall(n).chamfer == overall(kVariantAE).chamfer;
  for (const char* n : {kVariantL2, kVariantChamfer})
    identical = identical && overall(n).latent_l1 == overall(kVariantL1).latent_l1;
  if (identical) {
    for (auto& k : c.checks) k.verdict = Verdict::indistinguishable;
    c.overall = Verdict::indistinguishable;
    return c;
  }
  c.overall = Verdict::pass;
  for (const auto& k : c.checks) {
    if (k.verdict == Verdict::fail) c.overall = Verdict::fail;
    if (k.verdict == Verdict::inconclusive && c.overall == Verdict::pass) c.overall = Verdict::inconclusive;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Diversity

double DiversityReport::mean_spread(double azimuth_deg) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : records)
    if (r.azimuth_deg == azimuth_deg) {
      s += r.spread;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

double DiversityReport::mean_sigma(double azimuth_deg) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : records)
    if (r.azimuth_deg == azimuth_deg) {
      s += r.mean_sigma;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

std::string DiversityReport::to_tsv() const {
  TsvTable t;
  t.header = {"shape_id", "azimuth", "mean_sigma", "spread"};
  for (const auto& r : records)
    t.rows.push_back({r.shape_id, format_number(r.azimuth_deg), format_number(r.mean_sigma), format_number(r.spread)});
  return t.to_string();
}

std::vector<std::vector<double>> draw_epsilons(std::size_t count, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> out(count, std::vector<double>(k));
  for (auto& e : out)
    for (double& v : e) v = normal(rng);
  return out;
}

DiversityReport diversity_sweep(const ImageEncoder& image, const PointDecoder& decoder,
                                std::span<const ShapeSample> shapes, std::span<const double> azimuths_deg,
                                const std::vector<std::vector<double>>& epsilons) {
  if (image.head() != ImageHead::probabilistic)
    throw std::invalid_argument("diversity_sweep: needs a probabilistic image encoder");
  if (epsilons.empty()) throw std::invalid_argument("diversity_sweep: no epsilon samples");
  const std::size_t k = image.latent_dim();
  for (const auto& e : epsilons)
    if (e.size() != k) throw std::invalid_argument("diversity_sweep: epsilon length differs from the latent size");
  DiversityReport report;
  for (const auto& shape : shapes) {
    for (double az : azimuths_deg) {
      const auto it = std::find_if(shape.views.begin(), shape.views.end(),
                                   [&](const RenderedView& v) { return v.azimuth_deg == az; });
      if (it == shape.views.end())
        throw std::invalid_argument("diversity_sweep: shape " + shape.id + " has no view at azimuth " +
                                    format_number(az));
      const GaussianLatent gl = encode_image_probabilistic(image, *it);
      Tensor z({epsilons.size(), k});
      for (std::size_t j = 0; j < epsilons.size(); ++j) {
        const LatentCode zj = reparameterize(gl, epsilons[j]);
        std::copy(zj.values.begin(), zj.values.end(), z.values.begin() + static_cast<std::ptrdiff_t>(j * k));
      }
      Graph g;
      const auto recon = split_clouds(g.value(decoder.infer(g, g.input(std::move(z)))), epsilons.size());
      double spread = 0.0;
      std::size_t pairs = 0;
      for (std::size_t a = 0; a < recon.size(); ++a)
        for (std::size_t b = a + 1; b < recon.size(); ++b) {
          spread += chamfer_mean(recon[a], recon[b]) * 100.0;
          ++pairs;
        }
      DiversityRecord r;
      r.shape_id = shape.id;
      r.azimuth_deg = az;
      double ms = 0.0;
      for (double s : gl.sigma) ms += s;
      r.mean_sigma = ms / static_cast<double>(gl.sigma.size());
      r.spread = pairs ? spread / static_cast<double>(pairs) : 0.0;
      report.records.push_back(std::move(r));
    }
  }
  return report;
}

}  // namespace lmnet
