#pragma once

// Run configuration: plain-text "key = value" lines, '#' starts a comment.
// Unknown keys are an error. `preset = paper|desk` selects the defaults the
// remaining keys override, wherever it appears in the file.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lmnet/data.hpp"
#include "lmnet/evaluation.hpp"
#include "lmnet/models.hpp"
#include "lmnet/training.hpp"

namespace lmnet {

struct RunConfig {
  std::string preset = "paper";
  std::uint64_t seed = 0;

  // Dataset
  std::string data_dir = "data";  // relative paths resolve against --out
  std::vector<Category> categories{Category::box_family, Category::chairlike, Category::tablelike,
                                   Category::cylinder_family};
  std::size_t per_category = 25;
  std::size_t gt_points = 2048;
  std::size_t oversample = 16;
  double elevation_deg = 20.0;
  std::size_t azimuth_count = 24;

  // Model
  std::size_t num_points = 2048;
  std::size_t latent_dim = 512;
  std::vector<std::size_t> encoder_widths{64, 128, 128, 256, 512};
  std::vector<std::size_t> decoder_widths{256, 256};
  std::size_t image_channel_divisor = 1;
  bool image_batch_norm = true;

  // Training
  std::size_t batch_size = 32;
  std::size_t ae_epochs = 100;
  double ae_learning_rate = 5e-5;
  std::size_t lm_epochs = 50;
  double lm_learning_rate = 5e-5;
  std::size_t prob_epochs = 50;
  double prob_learning_rate = 5e-5;
  double lambda_div = 1.0;
  double eta = 1.0;
  double phi_o_deg = 180.0;
  double delta_deg = 20.0;
  bool wrap_angles = true;
  bool shared_epsilon = false;
  std::size_t views_per_shape = 0;
  std::string lm_category = "all";
  std::string prob_category = "chairlike";

  // Evaluation
  bool eval_icp = true;
  bool eval_emd = true;
  std::size_t eval_points = 1024;
  std::size_t view_stride = 1;
  std::size_t diversity_samples = 8;

  /// Full-size architecture and protocol.
  static RunConfig paper();
  /// Reduced sizes that train on one CPU core within the acceptance budget.
  static RunConfig desk();
  static RunConfig from_preset(std::string_view name);

  /// Parses `text` over the preset it names (paper when absent). Errors carry
  /// the 1-based line number.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);
  /// Sets one key; throws std::invalid_argument for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  /// Every key in a fixed order; parse(to_text()) reproduces the config.
  std::string to_text() const;
  /// Documented keys with their meaning.
  static std::vector<std::pair<std::string, std::string>> documentation();

  void validate() const;

  DatasetSpec dataset_spec() const;
  ModelConfig model_config() const;
  TrainConfig train_config(Stage stage, LmVariant variant = LmVariant::l1) const;
  EvalConfig eval_config() const;
};

}  // namespace lmnet
