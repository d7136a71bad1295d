#pragma once

// The stages behind the command-line tool. Every function reads and writes
// under one output directory:
//
//   <out>/data/            manifest.tsv, clouds/*.xyz, views/*.pgm
//   <out>/checkpoints/     ae.ckpt, lm-l1.ckpt, lm-l2.ckpt, lm-chamfer.ckpt, prob.ckpt
//   <out>/logs/            per-stage training logs (TSV)
//   <out>/reports/         benchmark.tsv, comparison.tsv, diversity.tsv
//
// Model architecture travels inside each checkpoint (its config echo), so a
// checkpoint is usable without the config that produced it.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lmnet/config.hpp"
#include "lmnet/evaluation.hpp"
#include "lmnet/io.hpp"

namespace lmnet {

struct Paths {
  std::filesystem::path out;
  std::filesystem::path data;
  std::filesystem::path checkpoints;
  std::filesystem::path logs;
  std::filesystem::path reports;

  Paths(const RunConfig& cfg, const std::filesystem::path& out);
  std::filesystem::path checkpoint(const std::string& stage) const;
};

/// Stage tag of a latent-matching checkpoint, e.g. "LM-l1".
std::string lm_stage(LmVariant v);

struct LoadedModel {
  std::string stage;
  RunConfig config;
  PointEncoder encoder;
  PointDecoder decoder;
  std::optional<ImageEncoder> image;
};

Checkpoint make_checkpoint(const std::string& stage, const RunConfig& cfg, const PointEncoder& encoder,
                           const PointDecoder& decoder, const ImageEncoder* image);
/// Restores every network the stage tag requires. A checkpoint whose stage
/// needs blocks it does not carry raises CheckpointErrorCode::stage.
LoadedModel load_model(const Checkpoint& ckpt);
LoadedModel load_model(const std::filesystem::path& path);

Dataset run_gen_data(const RunConfig& cfg, const Paths& paths, std::ostream& log);
std::filesystem::path run_train_ae(const RunConfig& cfg, const Paths& paths, std::ostream& log);
/// `stage_one` must hold complete encoder and decoder blocks.
std::filesystem::path run_train_lm(const RunConfig& cfg, const Paths& paths, LmVariant variant,
                                   const std::filesystem::path& stage_one, std::ostream& log);
std::filesystem::path run_train_prob(const RunConfig& cfg, const Paths& paths,
                                     const std::filesystem::path& stage_one, std::ostream& log);
/// Evaluates each checkpoint on the test split. Writes benchmark.tsv and,
/// when AE and all three latent-matching variants are present,
/// comparison.tsv.
BenchmarkTable run_eval(const RunConfig& cfg, const Paths& paths,
                        const std::vector<std::filesystem::path>& checkpoints, std::ostream& log);
/// Reconstructs one view (probabilistic models at ε = 0) and writes a PLY.
PointCloud run_reconstruct(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                           const std::filesystem::path& output, std::ostream& log);
/// ε sweep on the test shapes of prob_category at every view_stride-th
/// azimuth; writes diversity.tsv.
DiversityReport run_diversity(const RunConfig& cfg, const Paths& paths, const std::filesystem::path& checkpoint,
                              std::size_t samples, std::ostream& log);

}  // namespace lmnet
