#include "vsparse/voxel_core.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <numeric>

namespace vsparse {

std::string to_string(const Coord& c) {
  return "(" + std::to_string(c.x) + "," + std::to_string(c.y) + "," + std::to_string(c.z) + ")";
}

VoxelGrid::VoxelGrid(Dims dims) : dims_(dims), data_(dims.volume(), 0) {}

VoxelGrid::VoxelGrid(Dims dims, std::vector<std::uint8_t> data)
    : dims_(dims), data_(std::move(data)) {
  if (data_.size() != dims_.volume()) {
    throw std::invalid_argument("voxel grid: data length " + std::to_string(data_.size()) +
                                " does not match dims volume " +
                                std::to_string(dims_.volume()));
  }
  for (auto v : data_) {
    if (v > 1) throw std::invalid_argument("voxel grid: occupancy values must be 0 or 1");
  }
}

std::size_t VoxelGrid::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

VoxelGrid VoxelGrid::padded(std::uint32_t border) const {
  VoxelGrid out(Dims{dims_.h + 2 * border, dims_.w + 2 * border, dims_.d + 2 * border});
  for (std::uint32_t z = 0; z < dims_.d; ++z)
    for (std::uint32_t y = 0; y < dims_.w; ++y)
      for (std::uint32_t x = 0; x < dims_.h; ++x)
        if (at(x, y, z)) out.set(x + border, y + border, z + border, true);
  return out;
}

std::uint64_t hash_coord(const Coord& c) {
  // splitmix64 finalizer over a 3-lane multiply-xor mix
  std::uint64_t h = static_cast<std::uint64_t>(c.x) * 0x9E3779B97F4A7C15ull;
  h ^= static_cast<std::uint64_t>(c.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
  h ^= static_cast<std::uint64_t>(c.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
  h ^= h >> 30;
  h *= 0xBF58476D1CE4E5B9ull;
  h ^= h >> 27;
  h *= 0x94D049BB133111EBull;
  h ^= h >> 31;
  return h;
}

CoordIndex::CoordIndex(std::span<const Coord> coords) {
  const std::size_t cap = std::bit_ceil(std::max<std::size_t>(16, coords.size() * 2));
  keys_.assign(cap, Coord{});
  rows_.assign(cap, kEmpty);
  mask_ = cap - 1;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    std::size_t slot = hash_coord(coords[i]) & mask_;
    while (rows_[slot] != kEmpty) {
      if (keys_[slot] == coords[i]) {
        throw std::invalid_argument("coord index: duplicate coordinate " + to_string(coords[i]));
      }
      slot = (slot + 1) & mask_;
    }
    keys_[slot] = coords[i];
    rows_[slot] = static_cast<std::uint32_t>(i);
  }
  count_ = coords.size();
}

std::optional<std::uint32_t> CoordIndex::find(const Coord& c) const {
  if (count_ == 0) return std::nullopt;
  std::size_t slot = hash_coord(c) & mask_;
  while (rows_[slot] != kEmpty) {
    if (keys_[slot] == c) return rows_[slot];
    slot = (slot + 1) & mask_;
  }
  return std::nullopt;
}

std::optional<std::uint32_t> CoordIndex::find(std::int64_t x, std::int64_t y,
                                              std::int64_t z) const {
  constexpr std::int64_t kMax = 0xFFFFFFFFll;
  if (x < 0 || y < 0 || z < 0 || x > kMax || y > kMax || z > kMax) return std::nullopt;
  return find(Coord{static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                    static_cast<std::uint32_t>(z)});
}

std::vector<Coord> active_coords(const VoxelGrid& grid) {
  // Scanning x-outermost yields lexicographic (x, y, z) order directly.
  std::vector<Coord> out;
  const Dims& d = grid.dims();
  for (std::uint32_t x = 0; x < d.h; ++x)
    for (std::uint32_t y = 0; y < d.w; ++y)
      for (std::uint32_t z = 0; z < d.d; ++z)
        if (grid.at(x, y, z)) out.push_back({x, y, z});
  return out;
}

template <typename T>
SparseTensor<T> to_sparse(const VoxelGrid& grid) {
  SparseTensor<T> st;
  st.coords = active_coords(grid);
  st.features = Mat<T>::Ones(static_cast<Eigen::Index>(st.coords.size()), 1);
  st.stride = 1;
  st.dims = grid.dims();
  return st;
}

Dims lattice_dims(Dims dims, std::uint32_t stride) {
  auto up = [stride](std::uint32_t v) { return (v + stride - 1) / stride; };
  return {up(dims.h), up(dims.w), up(dims.d)};
}

template <typename T>
std::vector<T> to_dense(const SparseTensor<T>& st, Eigen::Index channel) {
  if (channel < 0 || channel >= st.features.cols()) {
    throw std::out_of_range("to_dense: channel " + std::to_string(channel) +
                            " out of range for " + std::to_string(st.features.cols()) +
                            " channels");
  }
  const Dims lat = lattice_dims(st.dims, st.stride);
  std::vector<T> field(lat.volume(), T(0));
  for (std::size_t i = 0; i < st.coords.size(); ++i) {
    const Coord& c = st.coords[i];
    if (c.x >= lat.h || c.y >= lat.w || c.z >= lat.d) {
      throw std::out_of_range("to_dense: coordinate " + to_string(c) + " outside lattice");
    }
    field[c.x + static_cast<std::size_t>(lat.h) * (c.y + static_cast<std::size_t>(lat.w) * c.z)] =
        st.features(static_cast<Eigen::Index>(i), channel);
  }
  return field;
}

VoxelGrid occupancy_grid(std::span<const Coord> coords, Dims dims) {
  VoxelGrid g(dims);
  for (const Coord& c : coords) {
    if (!g.in_bounds(c.x, c.y, c.z)) {
      throw std::out_of_range("occupancy_grid: coordinate " + to_string(c) + " outside grid");
    }
    g.set(c, true);
  }
  return g;
}

bool is_canonical(std::span<const Coord> coords) {
  for (std::size_t i = 1; i < coords.size(); ++i) {
    if (!(coords[i - 1] < coords[i])) return false;
  }
  return true;
}

template <typename T>
SparseTensor<T> canonical_sort(SparseTensor<T> st) {
  if (static_cast<std::size_t>(st.features.rows()) != st.coords.size()) {
    throw std::invalid_argument("canonical_sort: feature rows do not match coordinate count");
  }
  if (is_canonical(st.coords)) return st;
  std::vector<std::uint32_t> perm(st.coords.size());
  std::iota(perm.begin(), perm.end(), 0u);
  std::stable_sort(perm.begin(), perm.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return st.coords[a] < st.coords[b]; });
  SparseTensor<T> out;
  out.stride = st.stride;
  out.dims = st.dims;
  out.coords.reserve(perm.size());
  out.features.resize(st.features.rows(), st.features.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (i > 0 && st.coords[perm[i]] == st.coords[perm[i - 1]]) {
      throw std::invalid_argument("canonical_sort: duplicate coordinate " +
                                  to_string(st.coords[perm[i]]));
    }
    out.coords.push_back(st.coords[perm[i]]);
    out.features.row(static_cast<Eigen::Index>(i)) = st.features.row(perm[i]);
  }
  return out;
}

CoordIndex build_index(std::span<const Coord> coords) { return CoordIndex(coords); }

WindowGroups window_partition(std::span<const Coord> coords, std::uint32_t window_extent) {
  if (window_extent == 0) throw std::invalid_argument("window_partition: window_extent must be >= 1");
  std::map<Coord, std::vector<std::uint32_t>> buckets;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Coord& c = coords[i];
    buckets[Coord{c.x / window_extent, c.y / window_extent, c.z / window_extent}].push_back(
        static_cast<std::uint32_t>(i));
  }
  WindowGroups wg;
  wg.window_extent = window_extent;
  wg.groups.reserve(buckets.size());
  for (auto& [key, rows] : buckets) wg.groups.push_back({key, std::move(rows)});
  return wg;
}

template SparseTensor<float> to_sparse<float>(const VoxelGrid&);
template SparseTensor<double> to_sparse<double>(const VoxelGrid&);
template std::vector<float> to_dense<float>(const SparseTensor<float>&, Eigen::Index);
template std::vector<double> to_dense<double>(const SparseTensor<double>&, Eigen::Index);
template SparseTensor<float> canonical_sort<float>(SparseTensor<float>);
template SparseTensor<double> canonical_sort<double>(SparseTensor<double>);

}  // namespace vsparse
