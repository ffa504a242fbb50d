#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsparse/voxel_core.hpp"

namespace vsparse {

struct BettiTriple {
  std::int64_t b0 = 0;
  std::int64_t b1 = 0;
  std::int64_t b2 = 0;
  bool operator==(const BettiTriple&) const = default;
};

/// 2|A n B| / (|A| + |B|), 1 when both are empty.
double dice(const VoxelGrid& a, const VoxelGrid& b);

struct Components {
  /// 0 for background, 1..count otherwise; numbered by each component's
  /// lexicographically smallest voxel.
  std::vector<std::int32_t> labels;
  std::size_t count = 0;
};

/// Foreground components under 6- or 26-adjacency.
Components connected_components(const VoxelGrid& g, int connectivity);

/// V - E + F - C of the union of closed unit cubes at foreground voxels.
std::int64_t euler_characteristic(const VoxelGrid& g);

/// b0 from 26-connected foreground, b2 from 6-connected background on the
/// padded grid, b1 from the Euler characteristic.
BettiTriple betti_numbers(const VoxelGrid& g);

/// (26, 6) simple-point test on a 3x3x3 neighbourhood, x-major with the
/// centre at index 13 (the centre value is ignored).
bool is_simple_point(const std::uint8_t (&nb)[27]);

/// Sequential thinning over the six face directions in fixed order; voxels
/// with fewer than two 26-neighbours are kept as curve ends.
VoxelGrid skeletonize(const VoxelGrid& g);

double cl_dice(const VoxelGrid& pred, const VoxelGrid& gt);

struct BettiErrors {
  std::int64_t d_beta0 = 0;
  std::int64_t d_beta1 = 0;
  bool operator==(const BettiErrors&) const = default;
};

BettiErrors betti_errors(const VoxelGrid& pred, const VoxelGrid& gt);

struct EvalRow {
  std::string sample;
  double dice = 0.0;
  double cldice = 0.0;
  std::int64_t d_beta0 = 0;
  std::int64_t d_beta1 = 0;
};

EvalRow evaluate_pair(const std::string& sample, const VoxelGrid& pred, const VoxelGrid& gt);

/// `sample, dice, cldice, d_beta0, d_beta1` rows followed by a `mean` row.
std::string format_eval_report(const std::vector<EvalRow>& rows);

}  // namespace vsparse
