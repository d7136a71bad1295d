// Command-line front end: dataset generation, the three training stages,
// evaluation, single-view reconstruction and the diversity sweep.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <malloc.h>

#include <CLI11.hpp>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lmnet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lmnet;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "lmnet-out";
};

RunConfig effective_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig::paper() : RunConfig::load(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step; keep them
  // in the heap instead of mapping fresh pages each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);

  CLI::App app{"lmnet: single-view point-cloud reconstruction through latent matching"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);

  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "key = value run configuration file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed_value, "master seed (overrides the config)");
  app.add_option("--out", g.out, "output directory")->capture_default_str();

  std::optional<std::size_t> epochs;
  std::string variant, icp, image, output;
  std::string ae_path;
  std::vector<std::string> checkpoints;
  std::size_t samples = 0;

  auto* gen = app.add_subcommand("gen-data", "generate the procedural dataset");
  auto* ae = app.add_subcommand("train-ae", "Stage I: train the point-cloud auto-encoder");
  ae->add_option("--epochs", epochs, "override ae_epochs");
  auto* lm = app.add_subcommand("train-lm", "Stage II: latent matching of the image encoder");
  lm->add_option("--variant", variant, "loss variant")->required()->check(CLI::IsMember({"chamfer", "l1", "l2"}));
  lm->add_option("--epochs", epochs, "override lm_epochs");
  lm->add_option("--ae", ae_path, "Stage I checkpoint (default <out>/checkpoints/ae.ckpt)");
  auto* prob = app.add_subcommand("train-prob", "train the probabilistic image encoder");
  prob->add_option("--epochs", epochs, "override prob_epochs");
  prob->add_option("--ae", ae_path, "Stage I checkpoint (default <out>/checkpoints/ae.ckpt)");
  auto* ev = app.add_subcommand("eval", "evaluate checkpoints on the test split");
  ev->add_option("--checkpoint", checkpoints, "checkpoint to evaluate (repeatable)")->required();
  ev->add_option("--icp", icp, "align predictions before scoring")->check(CLI::IsMember({"on", "off"}));
  auto* rec = app.add_subcommand("reconstruct", "reconstruct one view and write a PLY");
  rec->add_option("--checkpoint", checkpoints, "image-model checkpoint")->required()->expected(1);
  rec->add_option("--image", image, "16-bit PGM view")->required()->check(CLI::ExistingFile);
  rec->add_option("--output", output, "PLY path (default <out>/reconstruction.ply)");
  auto* div = app.add_subcommand("diversity", "sweep epsilon samples of a probabilistic model");
  div->add_option("--checkpoint", checkpoints, "probabilistic checkpoint")->required()->expected(1);
  div->add_option("--samples", samples, "epsilon samples per view (default diversity_samples)");
  auto* show = app.add_subcommand("show-config", "print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cout, std::cerr);
    return e.get_exit_code() == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    RunConfig cfg = effective_config(g);
    const Paths paths(cfg, g.out);
    const fs::path stage_one = ae_path.empty() ? paths.checkpoint(kVariantAE) : fs::path(ae_path);
    if (*gen) {
      run_gen_data(cfg, paths, std::cerr);
    } else if (*ae) {
      if (epochs) cfg.ae_epochs = *epochs;
      cfg.validate();
      run_train_ae(cfg, paths, std::cerr);
    } else if (*lm) {
      if (epochs) cfg.lm_epochs = *epochs;
      cfg.validate();
      run_train_lm(cfg, paths, variant_from_string(variant), stage_one, std::cerr);
    } else if (*prob) {
      if (epochs) cfg.prob_epochs = *epochs;
      cfg.validate();
      run_train_prob(cfg, paths, stage_one, std::cerr);
    } else if (*ev) {
      if (!icp.empty()) cfg.eval_icp = icp == "on";
      std::vector<fs::path> paths_in(checkpoints.begin(), checkpoints.end());
      const BenchmarkTable t = run_eval(cfg, paths, paths_in, std::cerr);
      std::cout << t.to_tsv();
    } else if (*rec) {
      run_reconstruct(checkpoints.at(0), image, output.empty() ? paths.out / "reconstruction.ply" : fs::path(output),
                      std::cerr);
    } else if (*div) {
      const DiversityReport r =
          run_diversity(cfg, paths, checkpoints.at(0), samples ? samples : cfg.diversity_samples, std::cerr);
      std::cout << r.to_tsv();
    } else if (*show) {
      std::cout << cfg.to_text();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
