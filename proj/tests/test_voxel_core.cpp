#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "vsparse/voxel_core.hpp"

using namespace vsparse;

TEST_CASE("to_sparse on empty and singleton grids") {
  const auto empty = to_sparse<float>(VoxelGrid({4, 4, 4}));
  CHECK(empty.size() == 0);
  CHECK(empty.stride == 1);

  VoxelGrid g({4, 4, 4});
  g.set(1, 2, 3, true);
  const auto st = to_sparse<float>(g);
  REQUIRE(st.size() == 1);
  CHECK(st.coords[0] == Coord{1, 2, 3});
  CHECK(st.features(0, 0) == 1.0f);
}

TEST_CASE("dense layout is x fastest") {
  VoxelGrid g({3, 4, 5});
  g.set(2, 1, 3, true);
  CHECK(g.index(2, 1, 3) == 2 + 3 * (1 + 4 * 3));
  CHECK(g.data()[g.index(2, 1, 3)] == 1);
  CHECK(g.count() == 1);
}

TEST_CASE("to_dense of to_sparse reproduces random grids") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const VoxelGrid g = oracle::random_grid(rng, {8, 8, 8}, 20);
    const auto st = to_sparse<double>(g);
    const std::vector<double> dense = to_dense(st, 0);
    REQUIRE(dense.size() == g.size());
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(dense[i] == static_cast<double>(g.data()[i]));
    CHECK(occupancy_grid(st.coords, g.dims()) == g);
  }
}

TEST_CASE("to_dense places a single feature") {
  SparseTensor<float> st;
  st.dims = {4, 4, 4};
  st.coords = {{1, 1, 2}};
  st.features = Matrix::Constant(1, 1, 2.5f);
  const auto dense = to_dense(st, 0);
  CHECK(std::count(dense.begin(), dense.end(), 0.0f) == 63);
  CHECK(dense[1 + 4 * (1 + 4 * 2)] == 2.5f);
  CHECK_THROWS(to_dense(st, 1));

  SparseTensor<float> none;
  none.dims = {2, 2, 2};
  none.features = Matrix(0, 1);
  const auto zeros = to_dense(none, 0);
  CHECK(std::all_of(zeros.begin(), zeros.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("to_dense at a coarse stride uses the rounded-up lattice") {
  SparseTensor<float> st;
  st.dims = {9, 8, 8};
  st.stride = 8;
  st.coords = {{1, 0, 0}};
  st.features = Matrix::Constant(1, 1, 3.0f);
  const auto dense = to_dense(st, 0);
  CHECK(dense.size() == 2);
  CHECK(dense[1] == 3.0f);
  CHECK(lattice_dims({9, 8, 17}, 8) == Dims{2, 1, 3});
}

TEST_CASE("canonical_sort swaps, is idempotent and permutation invariant") {
  SparseTensor<float> st;
  st.coords = {{1, 0, 0}, {0, 0, 0}};
  st.features.resize(2, 1);
  st.features << 5.0f, 7.0f;
  const auto s = canonical_sort(st);
  CHECK(s.coords == std::vector<Coord>{{0, 0, 0}, {1, 0, 0}});
  CHECK(s.features(0, 0) == 7.0f);
  CHECK(s.features(1, 0) == 5.0f);
  const auto again = canonical_sort(s);
  CHECK(again.coords == s.coords);
  CHECK(again.features == s.features);

  std::mt19937_64 rng(3);
  const auto coords = oracle::random_coords(rng, {6, 6, 6}, 30);
  SparseTensor<float> base;
  base.coords = coords;
  base.features.resize(30, 2);
  for (int i = 0; i < 30; ++i) {
    base.features(i, 0) = static_cast<float>(i);
    base.features(i, 1) = static_cast<float>(-i);
  }
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 100; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    SparseTensor<float> p;
    p.features.resize(30, 2);
    for (std::size_t i = 0; i < 30; ++i) {
      p.coords.push_back(coords[perm[i]]);
      p.features.row(static_cast<Eigen::Index>(i)) = base.features.row(static_cast<Eigen::Index>(perm[i]));
    }
    const auto sorted = canonical_sort(p);
    REQUIRE(sorted.coords == base.coords);
    REQUIRE(sorted.features == base.features);
  }
}

TEST_CASE("canonical_sort names a duplicate coordinate") {
  SparseTensor<float> st;
  st.coords = {{2, 3, 4}, {0, 0, 0}, {2, 3, 4}};
  st.features = Matrix::Zero(3, 1);
  try {
    (void)canonical_sort(st);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("(2,3,4)") != std::string::npos);
  }
  const std::vector<Coord> dup{{1, 1, 1}, {1, 1, 1}};
  CHECK_FALSE(is_canonical(dup));
}

TEST_CASE("CoordIndex lookups") {
  const CoordIndex none(std::vector<Coord>{});
  CHECK_FALSE(none.find(Coord{0, 0, 0}).has_value());

  const std::vector<Coord> two{{0, 0, 0}, {0, 0, 1}};
  const CoordIndex idx(two);
  CHECK(idx.find(Coord{0, 0, 0}) == 0u);
  CHECK(idx.find(Coord{0, 0, 1}) == 1u);
  CHECK_FALSE(idx.find(Coord{1, 0, 0}).has_value());
  CHECK_FALSE(idx.find(-1, 0, 0).has_value());

  std::mt19937_64 rng(5);
  const auto coords = oracle::random_coords(rng, {40, 40, 40}, 500);
  const CoordIndex big(coords);
  CHECK(big.size() == 500);
  std::uniform_int_distribution<std::uint32_t> u(0, 41);
  for (int q = 0; q < 5000; ++q) {
    const Coord c{u(rng), u(rng), u(rng)};
    std::optional<std::uint32_t> expect;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      if (coords[i] == c) expect = static_cast<std::uint32_t>(i);
    }
    REQUIRE(big.find(c) == expect);
  }
  for (std::size_t i = 0; i < coords.size(); ++i) REQUIRE(big.find(coords[i]) == static_cast<std::uint32_t>(i));
}

TEST_CASE("window_partition") {
  const std::vector<Coord> three{{0, 0, 0}, {1, 1, 1}, {8, 0, 0}};
  const WindowGroups w = window_partition(three, 8);
  REQUIRE(w.groups.size() == 2);
  CHECK(w.groups[0].key == Coord{0, 0, 0});
  CHECK(w.groups[0].rows == std::vector<std::uint32_t>{0, 1});
  CHECK(w.groups[1].key == Coord{1, 0, 0});
  CHECK(w.groups[1].rows == std::vector<std::uint32_t>{2});

  const WindowGroups ones = window_partition(three, 1);
  CHECK(ones.groups.size() == 3);
  CHECK_THROWS(window_partition(three, 0));
  CHECK(window_partition(std::vector<Coord>{}, 4).groups.empty());

  std::mt19937_64 rng(9);
  for (std::uint32_t extent : {2u, 3u, 5u}) {
    const auto coords = oracle::random_coords(rng, {20, 20, 20}, 200);
    const WindowGroups g = window_partition(coords, extent);
    std::map<Coord, std::vector<std::uint32_t>> expect;
    for (std::size_t i = 0; i < coords.size(); ++i) {
      expect[{coords[i].x / extent, coords[i].y / extent, coords[i].z / extent}].push_back(static_cast<std::uint32_t>(i));
    }
    REQUIRE(g.groups.size() == expect.size());
    std::size_t k = 0;
    for (const auto& [key, rows] : expect) {
      CHECK(g.groups[k].key == key);
      CHECK(g.groups[k].rows == rows);
      ++k;
    }
  }
}

TEST_CASE("padded adds an empty border") {
  VoxelGrid g({2, 2, 2});
  g.set(0, 0, 0, true);
  const VoxelGrid p = g.padded();
  CHECK(p.dims() == Dims{4, 4, 4});
  CHECK(p.count() == 1);
  CHECK(p.at(1, 1, 1) == 1);
  CHECK(g.get(-1, 0, 0) == 0);
}
