#include "vsparse/topo_metrics.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <stdexcept>

namespace vsparse {

namespace {

void require_same_dims(const VoxelGrid& a, const VoxelGrid& b, const char* what) {
  if (a.dims() != b.dims()) throw std::invalid_argument(std::string(what) + ": dims mismatch");
}

std::size_t intersection_count(const VoxelGrid& a, const VoxelGrid& b) {
  std::size_t n = 0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) n += (da[i] & db[i]);
  return n;
}

struct Step {
  int dx, dy, dz;
};

std::vector<Step> neighbour_steps(int connectivity) {
  std::vector<Step> s;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) {
        const int l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (l1 == 0) continue;
        if (connectivity == 6 && l1 != 1) continue;
        s.push_back({dx, dy, dz});
      }
  return s;
}

/// Labels cells where value(cell) == target.
Components label_cells(const VoxelGrid& g, std::uint8_t target, int connectivity) {
  if (connectivity != 6 && connectivity != 26) {
    throw std::invalid_argument("connected_components: connectivity must be 6 or 26, got " +
                                std::to_string(connectivity));
  }
  const Dims& d = g.dims();
  const std::vector<Step> steps = neighbour_steps(connectivity);
  Components out;
  out.labels.assign(g.size(), 0);
  std::deque<Coord> queue;
  // x outermost so components are found in lexicographic order.
  for (std::uint32_t x = 0; x < d.h; ++x)
    for (std::uint32_t y = 0; y < d.w; ++y)
      for (std::uint32_t z = 0; z < d.d; ++z) {
        const std::size_t i0 = g.index(x, y, z);
        if (g.at(x, y, z) != target || out.labels[i0] != 0) continue;
        const auto label = static_cast<std::int32_t>(++out.count);
        out.labels[i0] = label;
        queue.push_back({x, y, z});
        while (!queue.empty()) {
          const Coord c = queue.front();
          queue.pop_front();
          for (const Step& s : steps) {
            const std::int64_t nx = std::int64_t{c.x} + s.dx;
            const std::int64_t ny = std::int64_t{c.y} + s.dy;
            const std::int64_t nz = std::int64_t{c.z} + s.dz;
            if (!g.in_bounds(nx, ny, nz)) continue;
            const Coord n{static_cast<std::uint32_t>(nx), static_cast<std::uint32_t>(ny),
                          static_cast<std::uint32_t>(nz)};
            const std::size_t ni = g.index(n.x, n.y, n.z);
            if (g.at(n) != target || out.labels[ni] != 0) continue;
            out.labels[ni] = label;
            queue.push_back(n);
          }
        }
      }
  return out;
}

}  // namespace

double dice(const VoxelGrid& a, const VoxelGrid& b) {
  require_same_dims(a, b, "dice");
  const std::size_t na = a.count();
  const std::size_t nb = b.count();
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(intersection_count(a, b)) / static_cast<double>(na + nb);
}

Components connected_components(const VoxelGrid& g, int connectivity) {
  return label_cells(g, 1, connectivity);
}

std::int64_t euler_characteristic(const VoxelGrid& g) {
  const Dims& d = g.dims();
  // Cells of the doubled lattice; dimension = number of odd coordinates.
  const std::uint64_t sy = 2ull * d.h + 1;
  const std::uint64_t sz = sy * (2ull * d.w + 1);
  std::vector<std::uint64_t> cells;
  cells.reserve(g.count() * 27);
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.w; ++y)
      for (std::uint32_t x = 0; x < d.h; ++x) {
        if (!g.at(x, y, z)) continue;
        for (std::uint64_t c = 0; c < 3; ++c)
          for (std::uint64_t b = 0; b < 3; ++b)
            for (std::uint64_t a = 0; a < 3; ++a) {
              cells.push_back((2ull * x + a) + sy * (2ull * y + b) + sz * (2ull * z + c));
            }
      }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  std::int64_t chi = 0;
  for (std::uint64_t key : cells) {
    const std::uint64_t cz = key / sz;
    const std::uint64_t cy = (key % sz) / sy;
    const std::uint64_t cx = key % sy;
    const int dim = static_cast<int>((cx & 1) + (cy & 1) + (cz & 1));
    chi += (dim % 2 == 0) ? 1 : -1;
  }
  return chi;
}

BettiTriple betti_numbers(const VoxelGrid& g) {
  const VoxelGrid p = g.padded(1);
  BettiTriple b;
  b.b0 = static_cast<std::int64_t>(connected_components(p, 26).count);
  const std::size_t background = label_cells(p, 0, 6).count;
  b.b2 = static_cast<std::int64_t>(background) - 1;
  b.b1 = b.b0 + b.b2 - euler_characteristic(p);
  return b;
}

namespace {

struct NeighbourTables {
  // Cells of the 3x3x3 cube adjacent under 26- and 6-adjacency.
  std::array<std::vector<int>, 27> adj26;
  std::array<std::vector<int>, 27> adj6;
  std::array<bool, 27> in_n18{};
  std::array<bool, 27> face{};

  NeighbourTables() {
    auto off = [](int i) { return std::array<int, 3>{i / 9 - 1, (i / 3) % 3 - 1, i % 3 - 1}; };
    for (int i = 0; i < 27; ++i) {
      const auto a = off(i);
      const int l1 = std::abs(a[0]) + std::abs(a[1]) + std::abs(a[2]);
      in_n18[i] = l1 >= 1 && l1 <= 2;
      face[i] = l1 == 1;
      for (int j = 0; j < 27; ++j) {
        if (i == j) continue;
        const auto b = off(j);
        const int dx = std::abs(a[0] - b[0]);
        const int dy = std::abs(a[1] - b[1]);
        const int dz = std::abs(a[2] - b[2]);
        if (std::max({dx, dy, dz}) == 1) adj26[i].push_back(j);
        if (dx + dy + dz == 1) adj6[i].push_back(j);
      }
    }
  }
};

const NeighbourTables& tables() {
  static const NeighbourTables t;
  return t;
}

}  // namespace

bool is_simple_point(const std::uint8_t (&nb)[27]) {
  const NeighbourTables& t = tables();
  constexpr int kCentre = 13;
  int stack[27];

  // Foreground components in N26*(p).
  bool seen[27] = {};
  int fg_components = 0;
  for (int s = 0; s < 27; ++s) {
    if (s == kCentre || !nb[s] || seen[s]) continue;
    if (++fg_components > 1) return false;
    int top = 0;
    stack[top++] = s;
    seen[s] = true;
    while (top) {
      const int c = stack[--top];
      for (int n : t.adj26[c]) {
        if (n != kCentre && nb[n] && !seen[n]) {
          seen[n] = true;
          stack[top++] = n;
        }
      }
    }
  }
  if (fg_components != 1) return false;

  // Background 6-components in N18(p) that touch a face neighbour of p.
  bool seen_bg[27] = {};
  int bg_components = 0;
  for (int s = 0; s < 27; ++s) {
    if (!t.face[s] || nb[s] || seen_bg[s]) continue;
    if (++bg_components > 1) return false;
    int top = 0;
    stack[top++] = s;
    seen_bg[s] = true;
    while (top) {
      const int c = stack[--top];
      for (int n : t.adj6[c]) {
        if (t.in_n18[n] && !nb[n] && !seen_bg[n]) {
          seen_bg[n] = true;
          stack[top++] = n;
        }
      }
    }
  }
  return bg_components == 1;
}

namespace {

void gather_neighbourhood(const VoxelGrid& g, std::uint32_t x, std::uint32_t y, std::uint32_t z,
                          std::uint8_t (&nb)[27]) {
  int i = 0;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) {
        nb[i++] = g.get(std::int64_t{x} + dx, std::int64_t{y} + dy, std::int64_t{z} + dz);
      }
}

int fg_neighbours(const std::uint8_t (&nb)[27]) {
  int n = 0;
  for (int i = 0; i < 27; ++i) n += (i != 13 && nb[i]) ? 1 : 0;
  return n;
}

}  // namespace

VoxelGrid skeletonize(const VoxelGrid& g) {
  VoxelGrid s = g;
  static constexpr Step kDirections[6] = {{0, 0, 1}, {0, 0, -1}, {0, 1, 0},
                                          {0, -1, 0}, {1, 0, 0}, {-1, 0, 0}};
  std::vector<Coord> fg = active_coords(s);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const Step& dir : kDirections) {
      std::vector<Coord> candidates;
      for (const Coord& c : fg) {
        if (s.get(std::int64_t{c.x} + dir.dx, std::int64_t{c.y} + dir.dy, std::int64_t{c.z} + dir.dz)) continue;
        candidates.push_back(c);
      }
      for (const Coord& c : candidates) {
        std::uint8_t nb[27];
        gather_neighbourhood(s, c.x, c.y, c.z, nb);
        if (fg_neighbours(nb) < 2) continue;
        if (!is_simple_point(nb)) continue;
        s.set(c, false);
        changed = true;
      }
      if (changed) {
        std::erase_if(fg, [&s](const Coord& c) { return !s.at(c); });
      }
    }
  }
  return s;
}

double cl_dice(const VoxelGrid& pred, const VoxelGrid& gt) {
  require_same_dims(pred, gt, "cl_dice");
  const std::size_t np = pred.count();
  const std::size_t ng = gt.count();
  if (np == 0 && ng == 0) return 1.0;
  const VoxelGrid sp = skeletonize(pred);
  const VoxelGrid sg = skeletonize(gt);
  const std::size_t nsp = sp.count();
  const std::size_t nsg = sg.count();
  if (nsp == 0 || nsg == 0) return 0.0;
  const double tprec = static_cast<double>(intersection_count(sp, gt)) / static_cast<double>(nsp);
  const double tsens = static_cast<double>(intersection_count(sg, pred)) / static_cast<double>(nsg);
  if (tprec + tsens == 0.0) return 0.0;
  return 2.0 * tprec * tsens / (tprec + tsens);
}

BettiErrors betti_errors(const VoxelGrid& pred, const VoxelGrid& gt) {
  require_same_dims(pred, gt, "betti_errors");
  const BettiTriple a = betti_numbers(pred);
  const BettiTriple b = betti_numbers(gt);
  return {std::abs(a.b0 - b.b0), std::abs(a.b1 - b.b1)};
}

EvalRow evaluate_pair(const std::string& sample, const VoxelGrid& pred, const VoxelGrid& gt) {
  EvalRow r;
  r.sample = sample;
  r.dice = dice(pred, gt);
  r.cldice = cl_dice(pred, gt);
  const BettiErrors e = betti_errors(pred, gt);
  r.d_beta0 = e.d_beta0;
  r.d_beta1 = e.d_beta1;
  return r;
}

std::string format_eval_report(const std::vector<EvalRow>& rows) {
  std::string out = "sample, dice, cldice, d_beta0, d_beta1\n";
  char buf[256];
  double sd = 0, sc = 0, s0 = 0, s1 = 0;
  for (const EvalRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s, %.6f, %.6f, %lld, %lld\n", r.sample.c_str(), r.dice, r.cldice,
                  static_cast<long long>(r.d_beta0), static_cast<long long>(r.d_beta1));
    out += buf;
    sd += r.dice;
    sc += r.cldice;
    s0 += static_cast<double>(r.d_beta0);
    s1 += static_cast<double>(r.d_beta1);
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    std::snprintf(buf, sizeof buf, "mean, %.6f, %.6f, %.4f, %.4f\n", sd / n, sc / n, s0 / n, s1 / n);
    out += buf;
  }
  return out;
}

}  // namespace vsparse
