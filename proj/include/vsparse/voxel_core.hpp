#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace vsparse {

/// Row-major dense matrix. Feature matrices are token-major: one row per
/// active coordinate.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = Mat<float>;

struct Dims {
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::uint32_t d = 0;

  std::uint64_t volume() const {
    return static_cast<std::uint64_t>(h) * w * d;
  }
  auto operator<=>(const Dims&) const = default;
};

/// Lattice coordinate in units of the owning tensor's stride. Ordering is
/// lexicographic on (x, y, z).
struct Coord {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t z = 0;

  auto operator<=>(const Coord&) const = default;
};

std::string to_string(const Coord& c);

/// Dense binary occupancy volume, x fastest, then y, then z.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  explicit VoxelGrid(Dims dims);
  VoxelGrid(Dims dims, std::vector<std::uint8_t> data);

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    return x + static_cast<std::size_t>(dims_.h) * (y + static_cast<std::size_t>(dims_.w) * z);
  }
  bool in_bounds(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < dims_.h && y < dims_.w && z < dims_.d;
  }

  std::uint8_t at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    return data_[index(x, y, z)];
  }
  std::uint8_t at(const Coord& c) const { return at(c.x, c.y, c.z); }
  /// Out-of-bounds reads return 0.
  std::uint8_t get(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return in_bounds(x, y, z) ? at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                                   static_cast<std::uint32_t>(z))
                              : 0;
  }
  void set(std::uint32_t x, std::uint32_t y, std::uint32_t z, bool v) {
    data_[index(x, y, z)] = v ? 1 : 0;
  }
  void set(const Coord& c, bool v) { set(c.x, c.y, c.z, v); }

  std::span<const std::uint8_t> data() const { return data_; }
  std::size_t count() const;

  /// Copy with one empty voxel added on every side.
  VoxelGrid padded(std::uint32_t border = 1) const;

  bool operator==(const VoxelGrid&) const = default;

 private:
  Dims dims_;
  std::vector<std::uint8_t> data_;
};

/// Coordinate list + feature matrix at a power-of-two stride. Coordinates
/// are distinct and sorted ascending.
template <typename T>
struct SparseTensor {
  std::vector<Coord> coords;
  Mat<T> features;
  std::uint32_t stride = 1;
  Dims dims;

  std::size_t size() const { return coords.size(); }
  Eigen::Index channels() const { return features.cols(); }
};

/// Exact coordinate -> row map, open addressing with linear probing.
class CoordIndex {
 public:
  CoordIndex() = default;
  explicit CoordIndex(std::span<const Coord> coords);

  std::optional<std::uint32_t> find(const Coord& c) const;
  /// Signed lookup; negative components are always absent.
  std::optional<std::uint32_t> find(std::int64_t x, std::int64_t y, std::int64_t z) const;
  std::size_t size() const { return count_; }

 private:
  static constexpr std::uint32_t kEmpty = 0xFFFFFFFFu;
  std::vector<Coord> keys_;
  std::vector<std::uint32_t> rows_;
  std::size_t mask_ = 0;
  std::size_t count_ = 0;
};

std::uint64_t hash_coord(const Coord& c);

struct WindowGroup {
  Coord key;
  std::vector<std::uint32_t> rows;
};

struct WindowGroups {
  std::uint32_t window_extent = 1;
  std::vector<WindowGroup> groups;
};

template <typename T>
SparseTensor<T> to_sparse(const VoxelGrid& grid);

/// Coordinates of all active voxels in canonical order.
std::vector<Coord> active_coords(const VoxelGrid& grid);

/// Dense field over the lattice (dims / stride, rounded up), x fastest.
template <typename T>
std::vector<T> to_dense(const SparseTensor<T>& st, Eigen::Index channel);

/// Binary grid from the coordinate set of a stride-1 tensor.
VoxelGrid occupancy_grid(std::span<const Coord> coords, Dims dims);

template <typename T>
SparseTensor<T> canonical_sort(SparseTensor<T> st);

/// True when coordinates are strictly increasing (sorted and distinct).
bool is_canonical(std::span<const Coord> coords);

CoordIndex build_index(std::span<const Coord> coords);

template <typename T>
CoordIndex build_index(const SparseTensor<T>& st) {
  return build_index(std::span<const Coord>(st.coords));
}

WindowGroups window_partition(std::span<const Coord> coords, std::uint32_t window_extent);

/// Lattice extent (ceil(dim / stride)) along each axis.
Dims lattice_dims(Dims dims, std::uint32_t stride);

}  // namespace vsparse
