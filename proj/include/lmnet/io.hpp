#pragma once

// On-disk formats: XYZ text clouds, binary PLY export, 16-bit PGM views, the
// "LMN1" checkpoint container and tab-separated tables. Every writer goes
// through a temporary file that is renamed over the destination.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lmnet/autodiff.hpp"
#include "lmnet/geometry.hpp"

namespace lmnet {

/// Malformed file content. `line()` is 1-based, 0 when not line-oriented.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Writes `contents` to `path` atomically (temporary sibling + rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// XYZ: one "x y z" line per point, 9 significant digits.

std::string format_xyz(const PointCloud& cloud);
/// Throws FormatError naming the first bad line; an empty input is an error.
PointCloud parse_xyz(std::string_view text);
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_xyz(const std::filesystem::path& path);
/// The value a coordinate takes after a round trip through the XYZ format.
double xyz_round(double v);

// ---------------------------------------------------------------------------
// PLY (binary little endian): float x, y, z and optional uchar red, green, blue.

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

std::string format_ply(const PointCloud& cloud, const std::vector<Rgb>* colors = nullptr);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
               const std::vector<Rgb>* colors = nullptr);

// ---------------------------------------------------------------------------
// Views as binary 16-bit PGM (P5, maxval 65535). Azimuth and elevation travel
// in a header comment.

std::string format_pgm(const RenderedView& view);
RenderedView parse_pgm(std::string_view data);
void write_pgm(const std::filesystem::path& path, const RenderedView& view);
RenderedView read_pgm(const std::filesystem::path& path);
/// The value a pixel takes after a round trip through the PGM format.
double pgm_round(double v);

// ---------------------------------------------------------------------------
// Checkpoints

enum class CheckpointErrorCode { io, magic, version, checksum, stage, missing_block, extra_block, shape };
const char* to_string(CheckpointErrorCode code);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& what);
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

struct CheckpointBlock {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Layout (little endian): "LMN1", u32 version, string stage, string config,
/// u32 block count, then per block: string name, u32 rank, u64 dims, f32
/// payload; finally a u32 CRC-32 of every preceding byte. Strings are a u32
/// byte length followed by the bytes.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string stage;
  std::string config;
  std::vector<CheckpointBlock> blocks;

  /// Appends one block per tensor, values cast to float.
  void add(const ConstNamedTensors& tensors);
  bool has(std::string_view name) const;
  const CheckpointBlock* find(std::string_view name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies blocks into `tensors`. The block set must match the tensor set
/// exactly: a tensor without a block raises missing_block, a block without a
/// tensor raises extra_block, a shape difference raises shape.
void restore(const Checkpoint& ckpt, const NamedTensors& tensors);

// ---------------------------------------------------------------------------
// Tab-separated tables

struct TsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_string() const;
  static TsvTable parse(std::string_view text);
  std::size_t column(std::string_view name) const;
};

/// Fixed-precision rendering used in every report (%.6f).
std::string format_number(double v);

}  // namespace lmnet
