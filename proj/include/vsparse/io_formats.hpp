#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsparse/vae_model.hpp"
#include "vsparse/voxel_core.hpp"

namespace vsparse {

enum class FormatErrorCode {
  bad_magic,
  truncated,
  trailing_data,
  bad_header,
  unsorted,
  out_of_range,
  empty_latent,
  non_finite,
  shape_mismatch,
  duplicate_name,
  too_large,
  bad_config,
  io_error,
};

const char* format_error_name(FormatErrorCode code);

/// Rejection of a malformed or unreadable file. what() starts with the
/// error name, e.g. "truncated checkpoint: ...".
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  FormatErrorCode code() const { return code_; }

 private:
  FormatErrorCode code_;
};

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// SVOX: "SVOX1\0", u32 H W D, u32 N, N x (u32 x, y, z) strictly increasing.
inline constexpr std::size_t kSvoxHeaderBytes = 22;

struct SvoxData {
  Dims dims;
  std::vector<Coord> coords;
};

Bytes encode_svox(Dims dims, std::span<const Coord> coords);
SvoxData decode_svox(std::span<const std::uint8_t> bytes);
/// Dense grid from decoded coordinates; rejects volumes above 2^31 voxels.
VoxelGrid svox_to_grid(const SvoxData& data);

void write_svox(const std::filesystem::path& path, const VoxelGrid& grid);
void write_svox(const std::filesystem::path& path, Dims dims, std::span<const Coord> coords);
SvoxData read_svox(const std::filesystem::path& path);
VoxelGrid read_svox_grid(const std::filesystem::path& path);

// SVLZ: "SVLZ1\0", u32 H W D stride c, u64 N, N coords (latent units),
// then mu, logvar, z as N x c little-endian f32 each.
inline constexpr std::size_t kLatentHeaderBytes = 34;

struct LatentFile {
  LatentPosterior posterior;
  Matrix z;
};

Bytes encode_latent(const LatentFile& latent);
LatentFile decode_latent(std::span<const std::uint8_t> bytes);
void write_latent(const std::filesystem::path& path, const LatentFile& latent);
LatentFile read_latent(const std::filesystem::path& path);

// SVCK: "SVCK1\0", u32 count, per entry (u16 name length, name, u8 rank,
// rank x u32 dims, f32 data), then u32 config length + config text.
struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> shape;
  Matrix value;  // storage_shape(shape)
};

struct CheckpointFile {
  std::vector<CheckpointEntry> entries;
  std::string config_text;
};

Bytes encode_checkpoint(const CheckpointFile& ck);
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& ck);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

enum class FileKind { svox, latent, checkpoint, unknown };
/// Classification by magic bytes only.
FileKind sniff_kind(std::span<const std::uint8_t> bytes);

}  // namespace vsparse
