#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vsparse/voxel_core.hpp"

namespace vsparse {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  bool operator==(const Vec3&) const = default;
};

struct TreeParams {
  Dims dims{64, 64, 64};
  double root_radius = 2.5;
  double radius_decay = 0.8;
  double segment_min = 8.0;
  double segment_max = 16.0;
  double branch_probability = 0.6;
  int max_depth = 4;
  double jitter = 0.5;  // radians
  /// Bridges two branch points with a radius-1 tube, creating a loop.
  bool add_loop = false;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class SampleLabel { healthy, aneurysm, stenosis };
enum class AnomalyKind { aneurysm, stenosis };

const char* label_name(SampleLabel label);
SampleLabel parse_label(const std::string& name);

struct Segment {
  Vec3 a;
  Vec3 b;
  double radius = 1.0;
  int depth = 0;
};

struct AnomalyRecord {
  AnomalyKind kind = AnomalyKind::aneurysm;
  std::size_t segment = 0;
  Vec3 center;
  double radius = 0.0;
};

struct VesselSample {
  VoxelGrid mask;
  std::vector<Segment> segments;
  SampleLabel label = SampleLabel::healthy;
  std::optional<AnomalyRecord> anomaly;
};

/// Voxels whose centres lie within `radius` of segment ab, clipped to dims,
/// in canonical order.
std::vector<Coord> rasterize_tube(const Vec3& a, const Vec3& b, double radius, Dims dims);
void rasterize_tube_into(VoxelGrid& grid, const Vec3& a, const Vec3& b, double radius);

/// Squared distance from p to segment ab.
double segment_distance2(const Vec3& p, const Vec3& a, const Vec3& b);

VesselSample generate_tree(const TreeParams& params);

/// Throws std::runtime_error when no valid stenosis site is found in 10
/// attempts.
VesselSample add_anomaly(const VesselSample& sample, AnomalyKind kind, std::uint64_t seed);

struct ManifestEntry {
  std::string filename;
  SampleLabel label = SampleLabel::healthy;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Healthy and aneurysm samples in alternating order, labels attached.
std::vector<VesselSample> classification_set(std::size_t per_class, const TreeParams& base,
                                             std::uint64_t seed);

}  // namespace vsparse
