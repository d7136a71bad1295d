#include "lmnet/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "lmnet/io.hpp"

namespace lmnet {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    const std::string item = trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::uint64_t parse_uint(std::string_view v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

double parse_real(std::string_view v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out))
    throw std::invalid_argument("expected a finite number, got '" + std::string(v) + "'");
  return out;
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

std::string real_text(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string size_list_text(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Key {
  const char* name;
  const char* doc;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define LMNET_SIZE(field, doc)                                                                      \
  Key {                                                                                             \
    #field, doc, [](RunConfig& c, std::string_view v) { c.field = static_cast<std::size_t>(parse_uint(v)); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                                  \
  }
#define LMNET_REAL(field, doc)                                                                 \
  Key {                                                                                        \
    #field, doc, [](RunConfig& c, std::string_view v) { c.field = parse_real(v); },            \
        [](const RunConfig& c) { return real_text(c.field); }                                  \
  }
#define LMNET_BOOL(field, doc)                                                                 \
  Key {                                                                                        \
    #field, doc, [](RunConfig& c, std::string_view v) { c.field = parse_bool(v); },            \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }             \
  }
#define LMNET_STRING(field, doc)                                                               \
  Key {                                                                                        \
    #field, doc, [](RunConfig& c, std::string_view v) { c.field = std::string(v); },           \
        [](const RunConfig& c) { return c.field; }                                             \
  }
#define LMNET_SIZES(field, doc)                                                                \
  Key {                                                                                        \
    #field, doc,                                                                               \
        [](RunConfig& c, std::string_view v) {                                                 \
          c.field.clear();                                                                     \
          for (const auto& s : split_list(v)) c.field.push_back(static_cast<std::size_t>(parse_uint(s))); \
        },                                                                                     \
        [](const RunConfig& c) { return size_list_text(c.field); }                             \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> k{
      LMNET_STRING(preset, "paper or desk; selects the defaults for every other key"),
      Key{"seed", "master seed; every random stream derives from it",
          [](RunConfig& c, std::string_view v) { c.seed = parse_uint(v); },
          [](const RunConfig& c) { return std::to_string(c.seed); }},
      LMNET_STRING(data_dir, "dataset directory, relative to --out unless absolute"),
      Key{"categories", "comma-separated categories: box-family, chairlike, tablelike, cylinder-family",
          [](RunConfig& c, std::string_view v) {
            c.categories.clear();
            for (const auto& s : split_list(v)) c.categories.push_back(category_from_string(s));
          },
          [](const RunConfig& c) {
            std::string s;
            for (std::size_t i = 0; i < c.categories.size(); ++i) s += (i ? "," : "") + std::string(to_string(c.categories[i]));
            return s;
          }},
      LMNET_SIZE(per_category, "shapes generated per category (>= 5)"),
      LMNET_SIZE(gt_points, "ground-truth points per shape after farthest point sampling"),
      LMNET_SIZE(oversample, "dense surface sample = oversample x gt_points before FPS"),
      LMNET_REAL(elevation_deg, "render elevation in degrees"),
      LMNET_SIZE(azimuth_count, "renders per shape, evenly spaced in azimuth"),
      LMNET_SIZE(num_points, "points reconstructed by the decoder (first num_points ground-truth points are the target)"),
      LMNET_SIZE(latent_dim, "latent code length k"),
      LMNET_SIZES(encoder_widths, "per-point layer widths of the point encoder; the last equals latent_dim"),
      LMNET_SIZES(decoder_widths, "hidden widths of the decoder"),
      LMNET_SIZE(image_channel_divisor, "divides every channel count of the image encoder"),
      LMNET_BOOL(image_batch_norm, "batch normalization in the image encoder"),
      LMNET_SIZE(batch_size, "minibatch size (>= 2)"),
      LMNET_SIZE(ae_epochs, "auto-encoder epochs"),
      LMNET_REAL(ae_learning_rate, "auto-encoder Adam learning rate"),
      LMNET_SIZE(lm_epochs, "latent-matching epochs"),
      LMNET_REAL(lm_learning_rate, "latent-matching Adam learning rate"),
      LMNET_SIZE(prob_epochs, "probabilistic-stage epochs"),
      LMNET_REAL(prob_learning_rate, "probabilistic-stage Adam learning rate"),
      LMNET_REAL(lambda_div, "weight of the diversity loss"),
      LMNET_REAL(eta, "peak of the sigma target"),
      LMNET_REAL(phi_o_deg, "azimuth of maximum occlusion"),
      LMNET_REAL(delta_deg, "width of the sigma target in degrees"),
      LMNET_BOOL(wrap_angles, "wrap azimuth differences into [-180, 180]"),
      LMNET_BOOL(shared_epsilon, "one epsilon scalar per sample instead of one per latent dimension"),
      LMNET_SIZE(views_per_shape, "views drawn per shape and epoch in the image stages (0 = all)"),
      LMNET_STRING(lm_category, "category used for latent matching, or all"),
      LMNET_STRING(prob_category, "category used for the probabilistic stage and the diversity sweep, or all"),
      LMNET_BOOL(eval_icp, "rigidly align predictions to ground truth before scoring"),
      LMNET_BOOL(eval_emd, "compute the earth mover's distance column"),
      LMNET_SIZE(eval_points, "points sampled from each cloud for scoring"),
      LMNET_SIZE(view_stride, "evaluate every view_stride-th view of each test shape"),
      LMNET_SIZE(diversity_samples, "epsilon samples per view in the diversity sweep"),
  };
  return k;
}

const Key& find_key(std::string_view name) {
  for (const auto& k : keys())
    if (name == k.name) return k;
  throw std::invalid_argument("unknown config key '" + std::string(name) + "'");
}

}  // namespace

RunConfig RunConfig::paper() { return RunConfig{}; }

RunConfig RunConfig::desk() {
  RunConfig c;
  c.preset = "desk";
  c.num_points = 1024;
  c.latent_dim = 128;
  c.encoder_widths = {64, 128, 128, 128};
  c.decoder_widths = {256, 256};
  c.image_channel_divisor = 4;
  c.batch_size = 16;
  c.ae_epochs = 150;
  c.ae_learning_rate = 1e-3;
  c.lm_epochs = 60;
  c.lm_learning_rate = 1e-3;
  c.prob_epochs = 300;
  c.prob_learning_rate = 1e-3;
  c.views_per_shape = 6;
  c.view_stride = 1;
  c.eval_emd = false;
  return c;
}

RunConfig RunConfig::from_preset(std::string_view name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw std::invalid_argument("unknown preset '" + std::string(name) + "' (expected paper or desk)");
}

namespace {

struct Line {
  std::size_t number;
  std::string key;
  std::string value;
};

std::vector<Line> parse_lines(std::string_view text) {
  std::vector<Line> out;
  std::size_t pos = 0, number = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    ++number;
    std::string_view raw = text.substr(pos, end - pos);
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("expected 'key = value'", number);
      Line l{number, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1))};
      if (l.key.empty()) throw FormatError("missing key before '='", number);
      for (const auto& prev : out)
        if (prev.key == l.key) throw FormatError("key '" + l.key + "' repeated", number);
      out.push_back(std::move(l));
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  return out;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text) {
  const auto lines = parse_lines(text);
  RunConfig c;
  for (const auto& l : lines)
    if (l.key == "preset") {
      try {
        c = from_preset(l.value);
      } catch (const std::invalid_argument& e) {
        throw FormatError(e.what(), l.number);
      }
    }
  for (const auto& l : lines) {
    if (l.key == "preset") continue;
    try {
      c.set(l.key, l.value);
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), l.number);
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) { return parse(read_file(path)); }

void RunConfig::set(std::string_view key, std::string_view value) {
  const Key& k = find_key(key);
  try {
    k.set(*this, value);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string(k.name) + ": " + e.what());
  }
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& k : keys()) s += std::string(k.name) + " = " + k.get(*this) + "\n";
  return s;
}

std::vector<std::pair<std::string, std::string>> RunConfig::documentation() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.doc);
  return out;
}

void RunConfig::validate() const {
  dataset_spec().validate();
  model_config().validate();
  for (Stage s : {Stage::ae, Stage::lm, Stage::prob}) train_config(s).validate();
  if (num_points > gt_points)
    throw std::invalid_argument("config: num_points (" + std::to_string(num_points) + ") exceeds gt_points (" +
                                std::to_string(gt_points) + ")");
  if (eval_points > gt_points || eval_points > num_points)
    throw std::invalid_argument("config: eval_points exceeds num_points or gt_points");
  if (view_stride == 0) throw std::invalid_argument("config: view_stride must be >= 1");
  if (diversity_samples < 2) throw std::invalid_argument("config: diversity_samples must be >= 2");
  for (const auto& c : {lm_category, prob_category})
    if (c != "all") category_from_string(c);
}

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec s;
  for (auto c : categories) s.counts.emplace_back(c, per_category);
  s.seed = seed;
  s.gt_points = gt_points;
  s.oversample = oversample;
  s.elevation_deg = elevation_deg;
  s.azimuth_count = azimuth_count;
  return s;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.num_points = num_points;
  m.latent_dim = latent_dim;
  m.encoder_widths = encoder_widths;
  m.decoder_widths = decoder_widths;
  m.image_layers = ModelConfig::scaled_image_layers(image_channel_divisor);
  m.image_batch_norm = image_batch_norm;
  return m;
}

TrainConfig RunConfig::train_config(Stage stage, LmVariant variant) const {
  TrainConfig t;
  t.stage = stage;
  t.lm_variant = variant;
  t.batch_size = batch_size;
  t.seed = seed;
  t.lambda_div = lambda_div;
  t.eta = eta;
  t.phi_o_deg = phi_o_deg;
  t.delta_deg = delta_deg;
  t.wrap_angles = wrap_angles;
  t.shared_epsilon = shared_epsilon;
  t.views_per_shape = views_per_shape;
  switch (stage) {
    case Stage::ae:
      t.epochs = ae_epochs;
      t.learning_rate = ae_learning_rate;
      break;
    case Stage::lm:
      t.epochs = lm_epochs;
      t.learning_rate = lm_learning_rate;
      break;
    case Stage::prob:
      t.epochs = prob_epochs;
      t.learning_rate = prob_learning_rate;
      break;
  }
  return t;
}

EvalConfig RunConfig::eval_config() const {
  EvalConfig e;
  e.icp = eval_icp;
  e.emd = eval_emd;
  e.eval_points = eval_points;
  e.view_stride = view_stride;
  e.seed = seed;
  return e;
}

}  // namespace lmnet
