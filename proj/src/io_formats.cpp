#include "vsparse/io_formats.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_set>

#include "vsparse/params.hpp"

namespace vsparse {

const char* format_error_name(FormatErrorCode code) {
  switch (code) {
    case FormatErrorCode::bad_magic: return "bad magic";
    case FormatErrorCode::truncated: return "truncated";
    case FormatErrorCode::trailing_data: return "trailing data";
    case FormatErrorCode::bad_header: return "bad header";
    case FormatErrorCode::unsorted: return "unsorted coordinates";
    case FormatErrorCode::out_of_range: return "out-of-range coordinates";
    case FormatErrorCode::empty_latent: return "empty latent";
    case FormatErrorCode::non_finite: return "non-finite value";
    case FormatErrorCode::shape_mismatch: return "shape mismatch";
    case FormatErrorCode::duplicate_name: return "duplicate name";
    case FormatErrorCode::too_large: return "too large";
    case FormatErrorCode::bad_config: return "bad config";
    case FormatErrorCode::io_error: return "io error";
  }
  return "unknown";
}

namespace {

constexpr char kSvoxMagic[6] = {'S', 'V', 'O', 'X', '1', '\0'};
constexpr char kLatentMagic[6] = {'S', 'V', 'L', 'Z', '1', '\0'};
constexpr char kCheckpointMagic[6] = {'S', 'V', 'C', 'K', '1', '\0'};

[[noreturn]] void fail(FormatErrorCode code, const char* kind, const std::string& detail) {
  throw FormatError(code, std::string(format_error_name(code)) + " " + kind + ": " + detail);
}

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  Bytes take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, const char* kind) : b_(bytes), kind_(kind) {}

  std::size_t remaining() const { return b_.size() - pos_; }
  void need(std::uint64_t n, const char* what) const {
    if (n > remaining()) {
      fail(FormatErrorCode::truncated, kind_,
           std::string(what) + " needs " + std::to_string(n) + " bytes, " +
               std::to_string(remaining()) + " left");
    }
  }
  void magic(const char (&m)[6]) {
    if (remaining() < 6 || std::memcmp(b_.data(), m, 6) != 0) {
      fail(FormatErrorCode::bad_magic, kind_, "expected " + std::string(m, 5));
    }
    pos_ += 6;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(le(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  std::uint64_t u64(const char* what) { return le(8, what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void finish() const {
    if (remaining() != 0) {
      fail(FormatErrorCode::trailing_data, kind_, std::to_string(remaining()) + " unexpected bytes");
    }
  }
  const char* kind() const { return kind_; }

 private:
  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::uint64_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
  const char* kind_;
};

void write_coords(Writer& w, std::span<const Coord> coords) {
  for (const Coord& c : coords) {
    w.u32(c.x);
    w.u32(c.y);
    w.u32(c.z);
  }
}

std::vector<Coord> read_coords(Reader& r, std::uint64_t n, Dims bounds) {
  if (n > r.remaining() / 12) r.need(std::numeric_limits<std::uint64_t>::max(), "coordinates");
  std::vector<Coord> coords;
  coords.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    Coord c{r.u32("x"), r.u32("y"), r.u32("z")};
    if (c.x >= bounds.h || c.y >= bounds.w || c.z >= bounds.d) {
      fail(FormatErrorCode::out_of_range, r.kind(),
           "coordinate " + to_string(c) + " at index " + std::to_string(i));
    }
    if (!coords.empty() && !(coords.back() < c)) {
      fail(FormatErrorCode::unsorted, r.kind(),
           "coordinate " + to_string(c) + " at index " + std::to_string(i) +
               " does not follow " + to_string(coords.back()));
    }
    coords.push_back(c);
  }
  return coords;
}

void check_sorted_for_write(std::span<const Coord> coords, Dims bounds, const char* kind) {
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Coord& c = coords[i];
    if (c.x >= bounds.h || c.y >= bounds.w || c.z >= bounds.d) {
      throw std::invalid_argument(std::string(kind) + ": coordinate out of range " + to_string(c));
    }
    if (i > 0 && !(coords[i - 1] < c)) {
      throw std::invalid_argument(std::string(kind) + ": coordinates not strictly increasing");
    }
  }
}

Matrix read_floats(Reader& r, std::uint64_t rows, std::uint64_t cols, const char* what) {
  r.need(rows * cols * 4, what);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float v = r.f32(what);
    if (!std::isfinite(v)) {
      fail(FormatErrorCode::non_finite, r.kind(), std::string(what) + " entry " + std::to_string(i));
    }
    m.data()[i] = v;
  }
  return m;
}

}  // namespace

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorCode::io_error, "io error: cannot open " + path.string());
  Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(FormatErrorCode::io_error, "io error: read failed " + path.string());
  return b;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::io_error, "io error: cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatErrorCode::io_error, "io error: write failed " + path.string());
}

Bytes encode_svox(Dims dims, std::span<const Coord> coords) {
  check_sorted_for_write(coords, dims, "write_svox");
  Writer w;
  w.raw(kSvoxMagic, 6);
  w.u32(dims.h);
  w.u32(dims.w);
  w.u32(dims.d);
  if (coords.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("write_svox: more than 2^32-1 coordinates");
  }
  w.u32(static_cast<std::uint32_t>(coords.size()));
  write_coords(w, coords);
  return w.take();
}

SvoxData decode_svox(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "svox");
  r.magic(kSvoxMagic);
  SvoxData out;
  out.dims.h = r.u32("H");
  out.dims.w = r.u32("W");
  out.dims.d = r.u32("D");
  const std::uint64_t n = r.u32("N");
  out.coords = read_coords(r, n, out.dims);
  r.finish();
  return out;
}

VoxelGrid svox_to_grid(const SvoxData& data) {
  if (data.dims.volume() > (std::uint64_t{1} << 31)) {
    fail(FormatErrorCode::too_large, "svox", "grid of " + std::to_string(data.dims.volume()) + " voxels");
  }
  return occupancy_grid(data.coords, data.dims);
}

void write_svox(const std::filesystem::path& path, const VoxelGrid& grid) {
  const std::vector<Coord> coords = active_coords(grid);
  write_file(path, encode_svox(grid.dims(), coords));
}

void write_svox(const std::filesystem::path& path, Dims dims, std::span<const Coord> coords) {
  write_file(path, encode_svox(dims, coords));
}

SvoxData read_svox(const std::filesystem::path& path) { return decode_svox(read_file(path)); }

VoxelGrid read_svox_grid(const std::filesystem::path& path) { return svox_to_grid(read_svox(path)); }

Bytes encode_latent(const LatentFile& latent) {
  const LatentPosterior& p = latent.posterior;
  const auto n = static_cast<Eigen::Index>(p.coords.size());
  if (n == 0) throw std::invalid_argument("write_latent: empty latent");
  const Eigen::Index c = p.mu.cols();
  if (c < 1 || p.mu.rows() != n || p.logvar.rows() != n || p.logvar.cols() != c ||
      latent.z.rows() != n || latent.z.cols() != c) {
    throw std::invalid_argument("write_latent: matrix shapes disagree with coordinate count");
  }
  check_sorted_for_write(p.coords, lattice_dims(p.dims, p.stride), "write_latent");
  Writer w;
  w.raw(kLatentMagic, 6);
  w.u32(p.dims.h);
  w.u32(p.dims.w);
  w.u32(p.dims.d);
  w.u32(p.stride);
  w.u32(static_cast<std::uint32_t>(c));
  w.u64(static_cast<std::uint64_t>(n));
  write_coords(w, p.coords);
  for (const Matrix* m : {&p.mu, &p.logvar, &latent.z}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      if (!std::isfinite(m->data()[i])) throw std::invalid_argument("write_latent: non-finite value");
      w.f32(m->data()[i]);
    }
  }
  return w.take();
}

LatentFile decode_latent(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "latent");
  r.magic(kLatentMagic);
  LatentFile out;
  LatentPosterior& p = out.posterior;
  p.dims.h = r.u32("H");
  p.dims.w = r.u32("W");
  p.dims.d = r.u32("D");
  p.stride = r.u32("stride");
  const std::uint32_t c = r.u32("c");
  const std::uint64_t n = r.u64("N");
  if (p.stride != ModelConfig::kLatentStride) {
    fail(FormatErrorCode::bad_header, "latent", "stride " + std::to_string(p.stride) + " != 8");
  }
  if (c == 0) fail(FormatErrorCode::bad_header, "latent", "zero channels");
  if (n == 0) fail(FormatErrorCode::empty_latent, "latent", "N = 0");
  p.coords = read_coords(r, n, lattice_dims(p.dims, p.stride));
  if (c > r.remaining() / (n * 12)) r.need(std::numeric_limits<std::uint64_t>::max(), "float payload");
  p.mu = read_floats(r, n, c, "mu");
  p.logvar = read_floats(r, n, c, "logvar");
  out.z = read_floats(r, n, c, "z");
  r.finish();
  return out;
}

void write_latent(const std::filesystem::path& path, const LatentFile& latent) {
  write_file(path, encode_latent(latent));
}

LatentFile read_latent(const std::filesystem::path& path) { return decode_latent(read_file(path)); }

Bytes encode_checkpoint(const CheckpointFile& ck) {
  Writer w;
  w.raw(kCheckpointMagic, 6);
  w.u32(static_cast<std::uint32_t>(ck.entries.size()));
  std::unordered_set<std::string> seen;
  for (const CheckpointEntry& e : ck.entries) {
    if (e.name.empty() || e.name.size() > 0xFFFF) {
      throw std::invalid_argument("write_checkpoint: bad entry name length");
    }
    if (!seen.insert(e.name).second) throw std::invalid_argument("write_checkpoint: duplicate " + e.name);
    if (e.shape.empty() || e.shape.size() > 255) {
      throw std::invalid_argument("write_checkpoint: bad rank for " + e.name);
    }
    const auto [rows, cols] = storage_shape(e.shape);
    if (e.value.rows() != rows || e.value.cols() != cols) {
      throw std::invalid_argument("write_checkpoint: value shape mismatch for " + e.name);
    }
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.raw(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (std::uint32_t d : e.shape) w.u32(d);
    for (Eigen::Index i = 0; i < e.value.size(); ++i) w.f32(e.value.data()[i]);
  }
  w.u32(static_cast<std::uint32_t>(ck.config_text.size()));
  w.raw(ck.config_text.data(), ck.config_text.size());
  return w.take();
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "checkpoint");
  r.magic(kCheckpointMagic);
  CheckpointFile ck;
  const std::uint32_t count = r.u32("entry count");
  // Each entry takes at least 2 + 1 + 1 + 4 bytes.
  r.need(static_cast<std::uint64_t>(count) * 8 + 4, "entry table");
  std::unordered_set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    const std::uint16_t len = r.u16("name length");
    if (len == 0) fail(FormatErrorCode::bad_header, "checkpoint", "empty name at entry " + std::to_string(k));
    e.name = r.str(len, "name");
    if (!seen.insert(e.name).second) fail(FormatErrorCode::duplicate_name, "checkpoint", e.name);
    const std::uint8_t rank = r.u8("rank");
    if (rank == 0) fail(FormatErrorCode::bad_header, "checkpoint", "rank 0 for " + e.name);
    std::uint64_t elems = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("dim");
      e.shape.push_back(d);
      elems *= d;
      if (elems > std::numeric_limits<std::uint32_t>::max()) {
        fail(FormatErrorCode::too_large, "checkpoint", "tensor " + e.name);
      }
    }
    const auto [rows, cols] = storage_shape(e.shape);
    e.value = read_floats(r, static_cast<std::uint64_t>(rows), static_cast<std::uint64_t>(cols), "tensor data");
    ck.entries.push_back(std::move(e));
  }
  const std::uint32_t clen = r.u32("config length");
  ck.config_text = r.str(clen, "config text");
  r.finish();
  return ck;
}

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& ck) {
  write_file(path, encode_checkpoint(ck));
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

FileKind sniff_kind(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6) return FileKind::unknown;
  if (std::memcmp(bytes.data(), kSvoxMagic, 6) == 0) return FileKind::svox;
  if (std::memcmp(bytes.data(), kLatentMagic, 6) == 0) return FileKind::latent;
  if (std::memcmp(bytes.data(), kCheckpointMagic, 6) == 0) return FileKind::checkpoint;
  return FileKind::unknown;
}

}  // namespace vsparse
