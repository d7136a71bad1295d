#include "lmnet/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>
#include <unistd.h>

namespace lmnet {

namespace fs = std::filesystem;

FormatError::FormatError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::string to_chars_string(double v, int precision) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, precision);
  return std::string(buf.data(), res.ptr);
}

std::string shortest(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

bool parse_double(std::string_view token, double& out) {
  if (token.empty()) return false;
  if (token.front() == '+') token.remove_prefix(1);
  auto res = std::from_chars(token.data(), token.data() + token.size(), out);
  return res.ec == std::errc() && res.ptr == token.data() + token.size() && std::isfinite(out);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// XYZ

double xyz_round(double v) {
  double out = 0.0;
  const std::string s = to_chars_string(v, 9);
  std::from_chars(s.data(), s.data() + s.size(), out);
  return out;
}

std::string format_xyz(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 48);
  for (const auto& p : cloud.points) {
    out += to_chars_string(p.x(), 9);
    out += ' ';
    out += to_chars_string(p.y(), 9);
    out += ' ';
    out += to_chars_string(p.z(), 9);
    out += '\n';
  }
  return out;
}

PointCloud parse_xyz(std::string_view text) {
  PointCloud cloud;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 3)
      throw FormatError("expected 3 coordinates, found " + std::to_string(tokens.size()), line_no);
    Vec3 p;
    for (int c = 0; c < 3; ++c)
      if (!parse_double(tokens[c], p[c]))
        throw FormatError("not a finite number: '" + std::string(tokens[c]) + "'", line_no);
    cloud.points.push_back(p);
  }
  if (cloud.empty()) throw FormatError("no points in XYZ input");
  return cloud;
}

void write_xyz(const fs::path& path, const PointCloud& cloud) {
  cloud.validate();
  write_file_atomic(path, format_xyz(cloud));
}

PointCloud read_xyz(const fs::path& path) {
  try {
    return parse_xyz(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.line());
  }
}

// ---------------------------------------------------------------------------
// PLY

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

}  // namespace

std::string format_ply(const PointCloud& cloud, const std::vector<Rgb>* colors) {
  cloud.validate();
  if (colors && colors->size() != cloud.size())
    throw std::invalid_argument("format_ply: " + std::to_string(colors->size()) + " colors for " +
                                std::to_string(cloud.size()) + " points");
  std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(cloud.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\n";
  if (colors) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int c = 0; c < 3; ++c) put_le(out, static_cast<float>(cloud.points[i][c]));
    if (colors) {
      out += static_cast<char>((*colors)[i].r);
      out += static_cast<char>((*colors)[i].g);
      out += static_cast<char>((*colors)[i].b);
    }
  }
  return out;
}

void write_ply(const fs::path& path, const PointCloud& cloud, const std::vector<Rgb>* colors) {
  write_file_atomic(path, format_ply(cloud, colors));
}

// ---------------------------------------------------------------------------
// PGM

double pgm_round(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0; }

std::string format_pgm(const RenderedView& view) {
  constexpr std::size_t r = RenderedView::kResolution;
  if (view.pixels.size() != r * r) throw std::invalid_argument("format_pgm: view is not 128x128");
  std::string out = "P5\n# azimuth " + shortest(view.azimuth_deg) + " elevation " + shortest(view.elevation_deg) +
                    "\n" + std::to_string(r) + " " + std::to_string(r) + "\n65535\n";
  for (double v : view.pixels) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
    out += static_cast<char>(q >> 8);
    out += static_cast<char>(q & 0xff);
  }
  return out;
}

RenderedView parse_pgm(std::string_view data) {
  RenderedView view;
  std::size_t pos = 0;
  bool have_angles = false;
  auto next_token = [&]() -> std::string_view {
    while (pos < data.size()) {
      const char c = data[pos];
      if (c == '#') {
        const std::size_t end = data.find('\n', pos);
        const auto tokens = split_ws(data.substr(pos + 1, (end == std::string_view::npos ? data.size() : end) - pos - 1));
        if (tokens.size() == 4 && tokens[0] == "azimuth" && tokens[2] == "elevation" &&
            parse_double(tokens[1], view.azimuth_deg) && parse_double(tokens[3], view.elevation_deg))
          have_angles = true;
        pos = end == std::string_view::npos ? data.size() : end + 1;
      } else if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  if (next_token() != "P5") throw FormatError("PGM: expected P5 magic");
  const auto w = next_token(), h = next_token(), maxval = next_token();
  const std::string dims = std::string(w) + "x" + std::string(h);
  if (w != "128" || h != "128") throw FormatError("PGM: expected 128x128, got " + dims);
  if (maxval != "65535") throw FormatError("PGM: expected maxval 65535");
  if (!have_angles) throw FormatError("PGM: missing azimuth/elevation comment");
  ++pos;  // single whitespace before the raster
  constexpr std::size_t n = RenderedView::kResolution * RenderedView::kResolution;
  if (data.size() - std::min(pos, data.size()) != 2 * n)
    throw FormatError("PGM: raster has " + std::to_string(data.size() - std::min(pos, data.size())) +
                      " bytes, expected " + std::to_string(2 * n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto hi = static_cast<unsigned char>(data[pos + 2 * i]);
    const auto lo = static_cast<unsigned char>(data[pos + 2 * i + 1]);
    view.pixels[i] = static_cast<double>((hi << 8) | lo) / 65535.0;
  }
  return view;
}

void write_pgm(const fs::path& path, const RenderedView& view) { write_file_atomic(path, format_pgm(view)); }

RenderedView read_pgm(const fs::path& path) {
  try {
    return parse_pgm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

const char* to_string(CheckpointErrorCode code) {
  switch (code) {
    case CheckpointErrorCode::io: return "io";
    case CheckpointErrorCode::magic: return "magic";
    case CheckpointErrorCode::version: return "version";
    case CheckpointErrorCode::checksum: return "checksum";
    case CheckpointErrorCode::stage: return "stage";
    case CheckpointErrorCode::missing_block: return "missing_block";
    case CheckpointErrorCode::extra_block: return "extra_block";
    case CheckpointErrorCode::shape: return "shape";
  }
  return "unknown";
}

CheckpointError::CheckpointError(CheckpointErrorCode code, const std::string& what)
    : std::runtime_error(std::string("checkpoint ") + lmnet::to_string(code) + " error: " + what), code_(code) {}

void Checkpoint::add(const ConstNamedTensors& tensors) {
  for (const auto& [name, t] : tensors) {
    if (has(name)) throw std::invalid_argument("checkpoint: duplicate block " + name);
    CheckpointBlock b{name, t->shape, {}};
    b.values.reserve(t->size());
    for (double v : t->values) b.values.push_back(static_cast<float>(v));
    blocks.push_back(std::move(b));
  }
}

bool Checkpoint::has(std::string_view name) const { return find(name) != nullptr; }

const CheckpointBlock* Checkpoint::find(std::string_view name) const {
  for (const auto& b : blocks)
    if (b.name == name) return &b;
  return nullptr;
}

namespace {

void put_string(std::string& out, std::string_view s) {
  put_le(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    char buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError(CheckpointErrorCode::checksum, "unexpected end of data");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = "LMN1";
  put_le(out, Checkpoint::kVersion);
  put_string(out, ckpt.stage);
  put_string(out, ckpt.config);
  put_le(out, static_cast<std::uint32_t>(ckpt.blocks.size()));
  for (const auto& b : ckpt.blocks) {
    if (shape_size(b.shape) != b.values.size())
      throw std::invalid_argument("checkpoint block " + b.name + ": shape " + shape_string(b.shape) +
                                  " does not match " + std::to_string(b.values.size()) + " values");
    put_string(out, b.name);
    put_le(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto d : b.shape) put_le(out, static_cast<std::uint64_t>(d));
    for (float v : b.values) put_le(out, v);
  }
  put_le(out, crc_of(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "LMN1")
    throw CheckpointError(CheckpointErrorCode::magic, "missing LMN1 header");
  if (bytes.size() < 12) throw CheckpointError(CheckpointErrorCode::checksum, "file too short");
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  Reader tail(bytes.substr(bytes.size() - 4));
  if (tail.get<std::uint32_t>() != crc_of(body))
    throw CheckpointError(CheckpointErrorCode::checksum, "CRC-32 mismatch (truncated or corrupted file)");
  Reader r(body.substr(4));
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion)
    throw CheckpointError(CheckpointErrorCode::version, "format version " + std::to_string(version) +
                                                             " is not supported (expected " +
                                                             std::to_string(Checkpoint::kVersion) + ")");
  Checkpoint ckpt;
  ckpt.stage = r.get_string();
  ckpt.config = r.get_string();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointBlock b;
    b.name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) b.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    const std::size_t n = shape_size(b.shape);
    if (n > r.remaining() / 4) throw CheckpointError(CheckpointErrorCode::checksum, "block " + b.name + " overruns");
    b.values.resize(n);
    for (auto& v : b.values) v = r.get<float>();
    ckpt.blocks.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw CheckpointError(CheckpointErrorCode::checksum, "trailing bytes after last block");
  return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  try {
    write_file_atomic(path, serialize_checkpoint(ckpt));
  } catch (const fs::filesystem_error& e) {
    throw CheckpointError(CheckpointErrorCode::io, e.what());
  } catch (const std::runtime_error& e) {
    throw CheckpointError(CheckpointErrorCode::io, e.what());
  }
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(CheckpointErrorCode::io, e.what());
  }
  return deserialize_checkpoint(bytes);
}

void restore(const Checkpoint& ckpt, const NamedTensors& tensors) {
  std::set<std::string> wanted;
  for (const auto& [name, t] : tensors) {
    wanted.insert(name);
    const CheckpointBlock* b = ckpt.find(name);
    if (!b) throw CheckpointError(CheckpointErrorCode::missing_block, "no block named " + name);
    if (b->shape != t->shape)
      throw CheckpointError(CheckpointErrorCode::shape, name + " is " + shape_string(b->shape) + " in the file but " +
                                                            shape_string(t->shape) + " in the model");
  }
  for (const auto& b : ckpt.blocks)
    if (!wanted.count(b.name)) throw CheckpointError(CheckpointErrorCode::extra_block, "unexpected block " + b.name);
  for (const auto& [name, t] : tensors) {
    const CheckpointBlock* b = ckpt.find(name);
    for (std::size_t i = 0; i < t->size(); ++i) t->values[i] = static_cast<double>(b->values[i]);
  }
}

// ---------------------------------------------------------------------------
// TSV

std::string TsvTable::to_string() const {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].find_first_of("\t\n") != std::string::npos)
        throw std::invalid_argument("TSV cell contains a tab or newline: " + cells[i]);
      out += (i ? "\t" : "") + cells[i];
    }
    out += '\n';
  };
  line(header);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw std::invalid_argument("TSV row width differs from header");
    line(r);
  }
  return out;
}

TsvTable TsvTable::parse(std::string_view text) {
  TsvTable t;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      cells.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size())
        throw FormatError("expected " + std::to_string(t.header.size()) + " columns, found " +
                              std::to_string(cells.size()),
                          line_no);
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw FormatError("empty table");
  return t;
}

std::size_t TsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw std::invalid_argument("no column named " + std::string(name));
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace lmnet
