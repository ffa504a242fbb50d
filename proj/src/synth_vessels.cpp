#include "vsparse/synth_vessels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "vsparse/rng.hpp"
#include "vsparse/topo_metrics.hpp"

namespace vsparse {

namespace {

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(const Vec3& a) { return (1.0 / norm(a)) * a; }

double& axis(Vec3& v, int k) { return k == 0 ? v.x : (k == 1 ? v.y : v.z); }
std::uint32_t extent(Dims d, int k) { return k == 0 ? d.h : (k == 1 ? d.w : d.d); }

/// Unit vector perpendicular to `dir` at a uniformly random angle.
Vec3 random_perpendicular(const Vec3& dir, std::mt19937_64& rng) {
  const Vec3 helper = std::abs(dir.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 e1 = normalized(cross(dir, helper));
  const Vec3 e2 = cross(dir, e1);
  const double phi = uniform(rng, 0.0, 6.283185307179586);
  return std::cos(phi) * e1 + std::sin(phi) * e2;
}

Vec3 rotate_towards(const Vec3& dir, const Vec3& perp, double angle) {
  return normalized(std::cos(angle) * dir + std::sin(angle) * perp);
}

Vec3 jittered(const Vec3& dir, double max_angle, std::mt19937_64& rng) {
  const Vec3 u = random_perpendicular(dir, rng);
  return rotate_towards(dir, u, uniform(rng, 0.0, max_angle));
}

struct Grower {
  const TreeParams& p;
  std::mt19937_64 rng;
  std::vector<Segment> segments;

  void grow(const Vec3& start, Vec3 dir, double radius, int depth) {
    const double len = uniform(rng, p.segment_min, p.segment_max);
    Vec3 end = start + len * dir;
    for (int k = 0; k < 3; ++k) {
      const double hi = static_cast<double>(extent(p.dims, k) - 1);
      double& c = axis(end, k);
      if (c < 0.0 || c > hi) {
        c = std::clamp(c, 0.0, hi);
        axis(dir, k) = -axis(dir, k);
      }
    }
    if (norm(end - start) < 1.0) return;
    segments.push_back({start, end, radius, depth});
    if (depth + 1 >= p.max_depth) return;
    dir = normalized(dir);
    if (uniform01(rng) < p.branch_probability) {
      const Vec3 u = random_perpendicular(dir, rng);
      const double a1 = uniform(rng, 0.25, 0.75);
      const double a2 = uniform(rng, 0.25, 0.75);
      const Vec3 d1 = jittered(rotate_towards(dir, u, a1), p.jitter * 0.5, rng);
      const Vec3 d2 = jittered(rotate_towards(dir, -1.0 * u, a2), p.jitter * 0.5, rng);
      const double r = std::max(1.0, radius * p.radius_decay);
      grow(end, d1, r, depth + 1);
      grow(end, d2, r, depth + 1);
    } else {
      grow(end, jittered(dir, p.jitter, rng), radius, depth + 1);
    }
  }
};

VoxelGrid rasterize_all(Dims dims, const std::vector<Segment>& segments) {
  VoxelGrid g(dims);
  for (const Segment& s : segments) rasterize_tube_into(g, s.a, s.b, s.radius);
  return g;
}

}  // namespace

void TreeParams::validate() const {
  if (dims.volume() == 0 || dims.h % 8 || dims.w % 8 || dims.d % 8) {
    throw std::invalid_argument("tree params: dims must be non-zero multiples of 8");
  }
  if (!(root_radius >= 1.0)) throw std::invalid_argument("tree params: root radius must be >= 1");
  const double smallest = std::min({dims.h, dims.w, dims.d});
  if (2.0 * root_radius + 1.0 > smallest) {
    throw std::invalid_argument("tree params: root radius too large for the grid");
  }
  if (!(radius_decay > 0.0 && radius_decay <= 1.0)) {
    throw std::invalid_argument("tree params: radius decay must be in (0, 1]");
  }
  if (!(segment_min >= 1.0) || !(segment_max >= segment_min)) {
    throw std::invalid_argument("tree params: segment length range must satisfy 1 <= min <= max");
  }
  if (!(branch_probability >= 0.0 && branch_probability <= 1.0)) {
    throw std::invalid_argument("tree params: branch probability must be in [0, 1]");
  }
  if (max_depth < 1) throw std::invalid_argument("tree params: max depth must be >= 1");
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw std::invalid_argument("tree params: bad jitter");
}

const char* label_name(SampleLabel label) {
  switch (label) {
    case SampleLabel::healthy: return "healthy";
    case SampleLabel::aneurysm: return "aneurysm";
    case SampleLabel::stenosis: return "stenosis";
  }
  return "healthy";
}

SampleLabel parse_label(const std::string& name) {
  if (name == "healthy") return SampleLabel::healthy;
  if (name == "aneurysm") return SampleLabel::aneurysm;
  if (name == "stenosis") return SampleLabel::stenosis;
  throw std::invalid_argument("unknown label '" + name + "'");
}

double segment_distance2(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const Vec3 d = p - (a + t * ab);
  return dot(d, d);
}

std::vector<Coord> rasterize_tube(const Vec3& a, const Vec3& b, double radius, Dims dims) {
  if (!(radius >= 1.0)) throw std::invalid_argument("rasterize_tube: radius must be >= 1");
  std::vector<Coord> out;
  std::int64_t lo[3];
  std::int64_t hi[3];
  const double av[3] = {a.x, a.y, a.z};
  const double bv[3] = {b.x, b.y, b.z};
  for (int k = 0; k < 3; ++k) {
    lo[k] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(av[k], bv[k]) - radius)));
    hi[k] = std::min<std::int64_t>(static_cast<std::int64_t>(extent(dims, k)) - 1,
                                   static_cast<std::int64_t>(std::ceil(std::max(av[k], bv[k]) + radius)));
  }
  const double r2 = radius * radius;
  for (std::int64_t x = lo[0]; x <= hi[0]; ++x)
    for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
      for (std::int64_t z = lo[2]; z <= hi[2]; ++z) {
        const Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        if (segment_distance2(p, a, b) <= r2) {
          out.push_back({static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                         static_cast<std::uint32_t>(z)});
        }
      }
  return out;
}

void rasterize_tube_into(VoxelGrid& grid, const Vec3& a, const Vec3& b, double radius) {
  for (const Coord& c : rasterize_tube(a, b, radius, grid.dims())) grid.set(c, true);
}

VesselSample generate_tree(const TreeParams& params) {
  params.validate();
  Grower g{params, std::mt19937_64(params.seed), {}};
  const int face = static_cast<int>(uniform_index(g.rng, 6));
  const int ax = face / 2;
  const bool far_side = face % 2 == 1;
  Vec3 root;
  Vec3 dir;
  for (int k = 0; k < 3; ++k) {
    const double hi = static_cast<double>(extent(params.dims, k) - 1);
    if (k == ax) {
      axis(root, k) = far_side ? hi : 0.0;
      axis(dir, k) = far_side ? -1.0 : 1.0;
    } else {
      const double margin = std::min(params.root_radius + 1.0, hi / 2.0);
      axis(root, k) = uniform(g.rng, margin, hi - margin);
    }
  }
  dir = jittered(dir, params.jitter, g.rng);
  g.grow(root, dir, params.root_radius, 0);

  if (params.add_loop && g.segments.size() >= 3) {
    // Bridge the ends of two segments that do not share an endpoint.
    for (int attempt = 0; attempt < 16; ++attempt) {
      const auto i = static_cast<std::size_t>(uniform_index(g.rng, g.segments.size()));
      const auto j = static_cast<std::size_t>(uniform_index(g.rng, g.segments.size()));
      const Segment& si = g.segments[i];
      const Segment& sj = g.segments[j];
      if (i == j || si.a == sj.b || sj.a == si.b || si.a == sj.a) continue;
      if (norm(si.b - sj.b) < 4.0 * std::max(si.radius, sj.radius)) continue;
      g.segments.push_back({si.b, sj.b, 1.0, std::max(si.depth, sj.depth)});
      break;
    }
  }

  VesselSample s;
  s.segments = std::move(g.segments);
  s.mask = rasterize_all(params.dims, s.segments);
  s.label = SampleLabel::healthy;
  return s;
}

VesselSample add_anomaly(const VesselSample& sample, AnomalyKind kind, std::uint64_t seed) {
  if (sample.segments.empty()) throw std::invalid_argument("add_anomaly: sample has no segments");
  std::mt19937_64 rng(seed);
  const Dims dims = sample.mask.dims();
  const std::size_t before = sample.mask.count();

  if (kind == AnomalyKind::aneurysm) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      const auto si = static_cast<std::size_t>(uniform_index(rng, sample.segments.size()));
      const Segment& seg = sample.segments[si];
      const double t = uniform01(rng);
      const Vec3 c = seg.a + t * (seg.b - seg.a);
      const double r = uniform(rng, 2.0, 3.0) * seg.radius;
      VesselSample out = sample;
      rasterize_tube_into(out.mask, c, c, r);
      if (out.mask.count() <= before) continue;
      out.label = SampleLabel::aneurysm;
      out.anomaly = AnomalyRecord{kind, si, c, r};
      return out;
    }
    throw std::runtime_error("add_anomaly: aneurysm adds no voxels after 10 attempts");
  }

  std::vector<std::size_t> wide;
  for (std::size_t i = 0; i < sample.segments.size(); ++i) {
    if (sample.segments[i].radius >= 2.0) wide.push_back(i);
  }
  if (wide.empty()) {
    for (std::size_t i = 0; i < sample.segments.size(); ++i) wide.push_back(i);
  }
  for (int attempt = 0; attempt < 10; ++attempt) {
    const std::size_t si = wide[static_cast<std::size_t>(uniform_index(rng, wide.size()))];
    const Segment& seg = sample.segments[si];
    const double t = uniform(rng, 0.3, 0.7);
    const Vec3 ab = seg.b - seg.a;
    const double len = norm(ab);
    const Vec3 c = seg.a + t * ab;
    const double half_window = std::max(2.0, seg.radius);
    const double keep = std::max(seg.radius / 2.0, 1.0);
    VesselSample out = sample;
    const double reach = half_window + seg.radius + 1.0;
    for (const Coord& v : rasterize_tube(c, c, reach, dims)) {
      if (!out.mask.at(v)) continue;
      const Vec3 p{static_cast<double>(v.x), static_cast<double>(v.y), static_cast<double>(v.z)};
      const double along = len > 0.0 ? dot(p - seg.a, ab) / len : 0.0;
      if (std::abs(along - t * len) > half_window) continue;
      if (segment_distance2(p, seg.a, seg.b) <= keep * keep) continue;
      bool other = false;
      for (std::size_t k = 0; k < sample.segments.size() && !other; ++k) {
        if (k == si) continue;
        const Segment& o = sample.segments[k];
        other = segment_distance2(p, o.a, o.b) <= o.radius * o.radius;
      }
      if (!other) out.mask.set(v, false);
    }
    if (out.mask.count() >= before) continue;
    if (connected_components(out.mask, 26).count != 1) continue;
    out.label = SampleLabel::stenosis;
    out.anomaly = AnomalyRecord{kind, si, c, keep};
    return out;
  }
  throw std::runtime_error("add_anomaly: no stenosis site keeps the mask connected after 10 attempts");
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot create manifest " + path.string());
  for (const ManifestEntry& e : entries) out << e.filename << ',' << label_name(e.label) << '\n';
  if (!out) throw std::runtime_error("write failed for manifest " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0) {
      throw std::runtime_error("manifest " + path.string() + ": line " + std::to_string(line_no) +
                               " is not 'filename,label'");
    }
    try {
      entries.push_back({line.substr(0, comma), parse_label(line.substr(comma + 1))});
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("manifest " + path.string() + ": line " + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  return entries;
}

std::vector<VesselSample> classification_set(std::size_t per_class, const TreeParams& base,
                                             std::uint64_t seed) {
  std::vector<VesselSample> out;
  out.reserve(2 * per_class);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    TreeParams p = base;
    p.seed = derive_seed(seed, i);
    VesselSample s = generate_tree(p);
    if (i % 2 == 1) s = add_anomaly(s, AnomalyKind::aneurysm, derive_seed(seed, 0x10000000 + i));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace vsparse
