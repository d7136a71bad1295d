#include "lmnet/pipeline.hpp"

#include <cstdio>
#include <stdexcept>

#include "lmnet/random.hpp"

namespace lmnet {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDiversityStream = 500;

void add_all(Checkpoint& ck, const ConstNamedTensors& t) { ck.add(t); }

NamedTensors concat(std::initializer_list<NamedTensors> parts) {
  NamedTensors out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

bool has_prefix(const Checkpoint& ck, std::string_view prefix) {
  for (const auto& b : ck.blocks)
    if (std::string_view(b.name).substr(0, prefix.size()) == prefix) return true;
  return false;
}

Dataset require_dataset(const Paths& paths) {
  if (!fs::exists(paths.data / "manifest.tsv"))
    throw std::runtime_error("no dataset at " + paths.data.string() + " (run gen-data first)");
  return load_dataset(paths.data);
}

std::vector<ShapeSample> select(const Dataset& ds, Split split, const std::string& category) {
  if (category == "all") return ds.subset(split);
  return ds.subset(split, category_from_string(category));
}

void require_shapes(const std::vector<ShapeSample>& shapes, const std::string& what) {
  if (shapes.empty()) throw std::runtime_error("no shapes for " + what);
}

ProgressFn progress_to(std::ostream& log, const std::string& stage, std::size_t epochs) {
  return [&log, stage, epochs](const EpochRecord& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "[%s] epoch %zu/%zu loss %.6f grad %.4f (%.1fs)", stage.c_str(), e.epoch + 1,
                  epochs, e.loss, e.grad_norm, e.seconds);
    log << buf << '\n' << std::flush;
  };
}

void write_log(const Paths& paths, const std::string& name, const TrainLog& log) {
  write_file_atomic(paths.logs / (name + ".tsv"), log.to_tsv());
}

LoadedModel stage_one(const fs::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (!has_prefix(ck, "encoder.") || !has_prefix(ck, "decoder."))
    throw CheckpointError(CheckpointErrorCode::stage, path.string() + " (stage " + ck.stage +
                                                          ") lacks the auto-encoder blocks Stage II needs");
  LoadedModel m = load_model(ck);
  return m;
}

}  // namespace

Paths::Paths(const RunConfig& cfg, const fs::path& out_dir)
    : out(out_dir),
      data(fs::path(cfg.data_dir).is_absolute() ? fs::path(cfg.data_dir) : out_dir / cfg.data_dir),
      checkpoints(out_dir / "checkpoints"),
      logs(out_dir / "logs"),
      reports(out_dir / "reports") {}

fs::path Paths::checkpoint(const std::string& stage) const {
  std::string name;
  for (char c : stage) name += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return checkpoints / (name + ".ckpt");
}

std::string lm_stage(LmVariant v) { return std::string("LM-") + to_string(v); }

Checkpoint make_checkpoint(const std::string& stage, const RunConfig& cfg, const PointEncoder& encoder,
                           const PointDecoder& decoder, const ImageEncoder* image) {
  Checkpoint ck;
  ck.stage = stage;
  ck.config = cfg.to_text();
  add_all(ck, encoder.state());
  add_all(ck, decoder.state());
  if (image) add_all(ck, image->state());
  return ck;
}

LoadedModel load_model(const Checkpoint& ck) {
  LoadedModel m;
  m.stage = ck.stage;
  try {
    m.config = RunConfig::parse(ck.config);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointErrorCode::stage, std::string("checkpoint config echo is invalid: ") + e.what());
  }
  const ModelConfig model = m.config.model_config();
  m.encoder = PointEncoder(model, 0);
  m.decoder = PointDecoder(model, 0);
  const bool is_ae = ck.stage == kVariantAE;
  const bool is_lm = ck.stage == kVariantL1 || ck.stage == kVariantL2 || ck.stage == kVariantChamfer;
  const bool is_prob = ck.stage == kVariantProb;
  if (!is_ae && !is_lm && !is_prob)
    throw CheckpointError(CheckpointErrorCode::stage, "unknown checkpoint stage '" + ck.stage + "'");
  if (!has_prefix(ck, "encoder.") || !has_prefix(ck, "decoder."))
    throw CheckpointError(CheckpointErrorCode::stage,
                          "stage " + ck.stage + " checkpoint lacks the auto-encoder (encoder/decoder) blocks");
  if (!is_ae && !has_prefix(ck, "image."))
    throw CheckpointError(CheckpointErrorCode::stage, "stage " + ck.stage + " checkpoint lacks the image encoder");
  NamedTensors targets = concat({m.encoder.state(), m.decoder.state()});
  if (!is_ae) {
    m.image.emplace(model, is_prob ? ImageHead::probabilistic : ImageHead::deterministic, 0);
    const auto img = m.image->state();
    targets.insert(targets.end(), img.begin(), img.end());
  }
  restore(ck, targets);
  return m;
}

LoadedModel load_model(const fs::path& path) { return load_model(load_checkpoint(path)); }

Dataset run_gen_data(const RunConfig& cfg, const Paths& paths, std::ostream& log) {
  const DatasetSpec spec = cfg.dataset_spec();
  log << "[gen-data] building " << spec.counts.size() * cfg.per_category << " shapes\n" << std::flush;
  Dataset ds = build_dataset(spec);
  save_dataset(ds, paths.data);
  log << "[gen-data] wrote " << ds.shapes.size() << " shapes (" << ds.manifest.count(Split::train) << " train, "
      << ds.manifest.count(Split::test) << " test) to " << paths.data.string() << '\n';
  return ds;
}

fs::path run_train_ae(const RunConfig& cfg, const Paths& paths, std::ostream& log) {
  const Dataset ds = require_dataset(paths);
  std::vector<PointCloud> clouds;
  for (const auto& s : ds.subset(Split::train)) clouds.push_back(s.cloud);
  if (clouds.empty()) throw std::runtime_error("no training shapes");
  const TrainConfig tc = cfg.train_config(Stage::ae);
  const auto r = train_autoencoder(clouds, cfg.model_config(), tc, progress_to(log, "train-ae", tc.epochs));
  const fs::path out = paths.checkpoint(kVariantAE);
  save_checkpoint(out, make_checkpoint(kVariantAE, cfg, r.encoder, r.decoder, nullptr));
  write_log(paths, "ae", r.log);
  log << "[train-ae] wrote " << out.string() << '\n';
  return out;
}

namespace {

// Stage II trains against the auto-encoder's architecture; the run config
// only contributes training settings.
RunConfig stage_two_config(const RunConfig& cfg, const LoadedModel& ae) {
  RunConfig c = cfg;
  c.num_points = ae.config.num_points;
  c.latent_dim = ae.config.latent_dim;
  c.encoder_widths = ae.config.encoder_widths;
  c.decoder_widths = ae.config.decoder_widths;
  return c;
}

}  // namespace

fs::path run_train_lm(const RunConfig& cfg, const Paths& paths, LmVariant variant, const fs::path& stage_one_path,
                      std::ostream& log) {
  const LoadedModel ae = stage_one(stage_one_path);
  const RunConfig c = stage_two_config(cfg, ae);
  const Dataset ds = require_dataset(paths);
  const auto shapes = select(ds, Split::train, c.lm_category);
  require_shapes(shapes, "latent matching");
  const std::string stage = lm_stage(variant);
  const TrainConfig tc = c.train_config(Stage::lm, variant);
  const auto r = train_latent_matching(shapes, ae.encoder, ae.decoder, c.model_config(), tc,
                                       progress_to(log, "train-lm " + std::string(to_string(variant)), tc.epochs));
  const fs::path out = paths.checkpoint(stage);
  save_checkpoint(out, make_checkpoint(stage, c, ae.encoder, ae.decoder, &r.encoder));
  write_log(paths, "lm-" + std::string(to_string(variant)), r.log);
  log << "[train-lm] wrote " << out.string() << '\n';
  return out;
}

fs::path run_train_prob(const RunConfig& cfg, const Paths& paths, const fs::path& stage_one_path, std::ostream& log) {
  const LoadedModel ae = stage_one(stage_one_path);
  const RunConfig c = stage_two_config(cfg, ae);
  const Dataset ds = require_dataset(paths);
  const auto shapes = select(ds, Split::train, c.prob_category);
  require_shapes(shapes, "probabilistic training");
  const TrainConfig tc = c.train_config(Stage::prob);
  const auto r = train_probabilistic(shapes, ae.encoder, c.model_config(), tc, progress_to(log, "train-prob", tc.epochs));
  const fs::path out = paths.checkpoint(kVariantProb);
  save_checkpoint(out, make_checkpoint(kVariantProb, c, ae.encoder, ae.decoder, &r.encoder));
  write_log(paths, "prob", r.log);
  log << "[train-prob] wrote " << out.string() << '\n';
  return out;
}

BenchmarkTable run_eval(const RunConfig& cfg, const Paths& paths, const std::vector<fs::path>& checkpoints,
                        std::ostream& log) {
  if (checkpoints.empty()) throw std::invalid_argument("eval: no checkpoints given");
  const Dataset ds = require_dataset(paths);
  const auto test = ds.subset(Split::test);
  require_shapes(test, "evaluation");
  const EvalConfig ec = cfg.eval_config();
  BenchmarkTable all;
  for (const auto& path : checkpoints) {
    const LoadedModel m = load_model(path);
    log << "[eval] " << m.stage << " from " << path.string() << '\n' << std::flush;
    const Evaluation ev = m.image ? evaluate_image_model(m.stage, *m.image, m.encoder, m.decoder, test, ec)
                                  : evaluate_autoencoder(m.stage, m.encoder, m.decoder, test, ec);
    all.append(ev.table);
  }
  write_file_atomic(paths.reports / "benchmark.tsv", all.to_tsv());
  auto present = [&](const char* v) {
    for (const auto& r : all.rows)
      if (r.variant == v) return true;
    return false;
  };
  if (present(kVariantAE) && present(kVariantL1) && present(kVariantL2) && present(kVariantChamfer)) {
    const Comparison c = compare_variants({all});
    write_file_atomic(paths.reports / "comparison.tsv", c.to_tsv());
    log << "[eval] ordering verdict: " << to_string(c.overall)
        << ", rank agreement: " << (c.rank_agreement ? "yes" : "no") << '\n';
  }
  log << "[eval] wrote " << (paths.reports / "benchmark.tsv").string() << '\n';
  return all;
}

PointCloud run_reconstruct(const fs::path& checkpoint, const fs::path& image, const fs::path& output,
                           std::ostream& log) {
  const LoadedModel m = load_model(checkpoint);
  if (!m.image) throw std::invalid_argument("reconstruct: checkpoint stage " + m.stage + " has no image encoder");
  const RenderedView view = read_pgm(image);
  const LatentCode z = m.image->head() == ImageHead::probabilistic
                           ? LatentCode{encode_image_probabilistic(*m.image, view).mu}
                           : encode_image_deterministic(*m.image, view);
  const PointCloud cloud = decode(m.decoder, z);
  write_ply(output, cloud);
  log << "[reconstruct] wrote " << cloud.size() << " points to " << output.string() << '\n';
  return cloud;
}

DiversityReport run_diversity(const RunConfig& cfg, const Paths& paths, const fs::path& checkpoint,
                              std::size_t samples, std::ostream& log) {
  if (samples < 2) throw std::invalid_argument("diversity: need at least 2 samples");
  const LoadedModel m = load_model(checkpoint);
  if (!m.image || m.image->head() != ImageHead::probabilistic)
    throw std::invalid_argument("diversity: checkpoint stage " + m.stage + " is not probabilistic");
  const Dataset ds = require_dataset(paths);
  const auto shapes = select(ds, Split::test, cfg.prob_category);
  require_shapes(shapes, "the diversity sweep");
  std::vector<double> azimuths;
  for (std::size_t v = 0; v < shapes[0].views.size(); v += cfg.view_stride)
    azimuths.push_back(shapes[0].views[v].azimuth_deg);
  const auto eps = draw_epsilons(samples, m.image->latent_dim(), derive_seed(cfg.seed, kDiversityStream));
  const DiversityReport report = diversity_sweep(*m.image, m.decoder, shapes, azimuths, eps);
  write_file_atomic(paths.reports / "diversity.tsv", report.to_tsv());
  log << "[diversity] wrote " << (paths.reports / "diversity.tsv").string() << '\n';
  return report;
}

}  // namespace lmnet
