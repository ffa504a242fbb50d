#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "fuzz.hpp"
#include "oracles.hpp"
#include "vsparse/latent_analysis.hpp"
#include "vsparse/optim_train.hpp"
#include "vsparse/sparse_attention.hpp"
#include "vsparse/sparse_conv.hpp"
#include "vsparse/synth_vessels.hpp"
#include "vsparse/topo_metrics.hpp"
#include "vsparse/vae_model.hpp"

using namespace vsparse;
using MatD = Mat<double>;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

MatD rand_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

VoxelGrid box(Dims dims, Coord lo, Coord hi) {
  VoxelGrid g(dims);
  for (std::uint32_t x = lo.x; x <= hi.x; ++x)
    for (std::uint32_t y = lo.y; y <= hi.y; ++y)
      for (std::uint32_t z = lo.z; z <= hi.z; ++z) g.set(x, y, z, true);
  return g;
}

VoxelGrid dilate26(const VoxelGrid& g) {
  VoxelGrid out(g.dims());
  for (const Coord& c : active_coords(g))
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          const std::int64_t x = std::int64_t{c.x} + dx, y = std::int64_t{c.y} + dy, z = std::int64_t{c.z} + dz;
          if (g.in_bounds(x, y, z)) {
            out.set(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), static_cast<std::uint32_t>(z), true);
          }
        }
  return out;
}

// Sparse/dense convolution equivalence.
Verdict ac1() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::uint32_t> side(2, 16), half(1, 8);
  double worst[3] = {0, 0, 0};
  for (int trial = 0; trial < 100; ++trial) {
    const int cin = 1 + static_cast<int>(rng() % 4), cout = 1 + static_cast<int>(rng() % 4);
    auto conv_params = [&](int k) {
      ConvParams<float> p;
      p.kernel_volume = k;
      p.weight = rand_mat(rng, k * cin, cout).cast<float>();
      p.bias = rand_mat(rng, 1, cout).cast<float>();
      return p;
    };
    auto tensor = [&](Dims lattice, std::uint32_t stride) {
      SparseTensor<float> st;
      st.coords = oracle::random_coords(rng, lattice, 1 + rng() % 64);
      st.features = rand_mat(rng, static_cast<Eigen::Index>(st.coords.size()), cin).cast<float>();
      st.stride = stride;
      st.dims = {lattice.h * stride, lattice.w * stride, lattice.d * stride};
      return st;
    };
    auto diff = [](const SparseTensor<float>& got, const oracle::DenseResult& want) {
      if (got.coords != want.coords) return std::numeric_limits<double>::infinity();
      double m = 0.0;
      for (std::size_t i = 0; i < want.rows.size(); ++i)
        for (std::size_t c = 0; c < want.rows[i].size(); ++c) {
          m = std::max(m, std::abs(double{got.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c))} -
                                   want.rows[i][c]));
        }
      return m;
    };
    {
      const Dims lat{side(rng), side(rng), side(rng)};
      const auto st = tensor(lat, 1);
      const auto p = conv_params(27);
      worst[0] = std::max(worst[0], diff(submanifold_conv(st, p),
                                         oracle::dense_submanifold(oracle::densify(st.coords, st.features, lat),
                                                                   p.weight, p.bias)));
    }
    {
      const Dims lat{2 * half(rng), 2 * half(rng), 2 * half(rng)};
      const auto st = tensor(lat, 1);
      const auto p = conv_params(8);
      worst[1] = std::max(worst[1], diff(down_conv(st, p), oracle::dense_down(oracle::densify(st.coords, st.features, lat),
                                                                              p.weight, p.bias)));
    }
    {
      const Dims lat{half(rng), half(rng), half(rng)};
      const auto st = tensor(lat, 2);
      const auto p = conv_params(8);
      worst[2] = std::max(worst[2], diff(up_conv(st, p), oracle::dense_up(oracle::densify(st.coords, st.features, lat),
                                                                          p.weight, p.bias,
                                                                          {2 * lat.h, 2 * lat.w, 2 * lat.d})));
    }
  }
  const double m = std::max({worst[0], worst[1], worst[2]});
  return {m <= 1e-5, fmt("max abs diff submanifold %.2e, down %.2e, up %.2e over 100 instances each", worst[0],
                         worst[1], worst[2])};
}

// Gradient correctness: every parameterized op plus the full graph.
Verdict ac2() {
  std::mt19937_64 rng(202);
  std::vector<std::pair<std::string, double>> errs;
  auto probe = [&](ad::Tape<double>& t, ad::Var out, std::uint64_t seed) {
    std::mt19937_64 r(seed);
    const MatD& v = t.value(out);
    return ad::sum(t, ad::mul(t, out, t.leaf(rand_mat(r, v.rows(), v.cols(), 0.5, 1.5))));
  };

  const auto coords = oracle::random_coords(rng, {6, 6, 6}, 14);
  const auto sub = std::make_shared<const KernelMap>(build_kernel_map(coords, coords, cube_offsets(3), StrideRatio::Same));
  const auto down_c = downsample_coords(coords);
  const auto down = std::make_shared<const KernelMap>(build_kernel_map(coords, down_c, cube_offsets(2), StrideRatio::Down));
  const auto up_c = upsample_coords(down_c, 1, {12, 12, 12});
  const auto up = std::make_shared<const KernelMap>(build_kernel_map(down_c, up_c, cube_offsets(2), StrideRatio::Up));
  const auto nd = static_cast<Eigen::Index>(down_c.size());

  errs.emplace_back("submanifold_conv", ad::grad_check([&](auto& t, auto in) {
    return probe(t, sparse_conv(t, in[0], in[1], in[2], sub), 1);
  }, {rand_mat(rng, 14, 3), rand_mat(rng, 27 * 3, 2), rand_mat(rng, 1, 2)}).max_rel_error);
  errs.emplace_back("down_conv", ad::grad_check([&](auto& t, auto in) {
    return probe(t, sparse_conv(t, in[0], in[1], in[2], down), 2);
  }, {rand_mat(rng, 14, 3), rand_mat(rng, 8 * 3, 2), rand_mat(rng, 1, 2)}).max_rel_error);
  errs.emplace_back("up_conv", ad::grad_check([&](auto& t, auto in) {
    return probe(t, sparse_conv(t, in[0], in[1], in[2], up), 3);
  }, {rand_mat(rng, nd, 3), rand_mat(rng, 8 * 3, 2), rand_mat(rng, 1, 2)}).max_rel_error);
  errs.emplace_back("res_block", ad::grad_check([&](auto& t, auto in) {
    ResBlockVars v{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9], in[10], 2};
    return probe(t, res_block(t, in[0], v, sub), 4);
  }, {rand_mat(rng, 14, 2), rand_mat(rng, 27 * 2, 4), rand_mat(rng, 1, 4), rand_mat(rng, 1, 4, 0.5, 1.5),
      rand_mat(rng, 1, 4), rand_mat(rng, 27 * 4, 4), rand_mat(rng, 1, 4), rand_mat(rng, 1, 4, 0.5, 1.5),
      rand_mat(rng, 1, 4), rand_mat(rng, 2, 4), rand_mat(rng, 1, 4)}).max_rel_error);
  errs.emplace_back("layer_norm", ad::grad_check([&](auto& t, auto in) {
    return probe(t, ad::layer_norm_rows(t, in[0], in[1], in[2]), 5);
  }, {rand_mat(rng, 5, 6), rand_mat(rng, 1, 6), rand_mat(rng, 1, 6)}).max_rel_error);
  {
    const std::vector<Coord> toks{{0, 0, 0}, {1, 0, 0}, {2, 1, 0}, {4, 0, 0}, {5, 1, 1}};
    const WindowGroups w = window_partition(toks, 4);
    AttnParams<double> p = init_attn_params<double>(6, 2, rng);
    p.ln1_gain = rand_mat(rng, 1, 6, 0.5, 1.5);
    p.ln1_bias = rand_mat(rng, 1, 6);
    p.ln2_gain = rand_mat(rng, 1, 6, 0.5, 1.5);
    p.ln2_bias = rand_mat(rng, 1, 6);
    p.b1 = rand_mat(rng, 1, 24, -0.3, 0.3);
    p.b2 = rand_mat(rng, 1, 6, -0.3, 0.3);
    errs.emplace_back("window_attention", ad::grad_check([&](auto& t, auto in) {
      AttnVars v{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9], in[10], in[11], in[12], 2};
      return probe(t, window_attention(t, in[0], w, v), 6);
    }, {rand_mat(rng, 5, 6), p.wq, p.wk, p.wv, p.wo, p.w1, p.b1, p.w2, p.b2, p.ln1_gain, p.ln1_bias, p.ln2_gain,
        p.ln2_bias}).max_rel_error);
  }
  {
    // posterior heads -> reparameterization -> KL
    const MatD eps = rand_mat(rng, 4, 2);
    errs.emplace_back("heads_reparam_kl", ad::grad_check([&](auto& t, auto in) {
      const ad::Var mu = ad::add_row(t, ad::matmul(t, in[0], in[1]), in[2]);
      const ad::Var lv = ad::clamp(t, ad::add_row(t, ad::matmul(t, in[0], in[3]), in[4]), kLogvarMin, kLogvarMax);
      const ad::Var z = ad::add(t, mu, ad::mul(t, ad::exp(t, ad::scale(t, lv, 0.5)), t.leaf(eps)));
      const ad::Var kl = ad::scale(
          t, ad::sum(t, ad::sub(t, ad::add(t, ad::mul(t, mu, mu), ad::exp(t, lv)), ad::add_scalar(t, lv, 1.0))), 0.5);
      return ad::add(t, probe(t, z, 7), kl);
    }, {rand_mat(rng, 4, 6), rand_mat(rng, 6, 2), rand_mat(rng, 1, 2), rand_mat(rng, 6, 2), rand_mat(rng, 1, 2)})
                                               .max_rel_error);
  }
  {
    std::mt19937_64 support(100);
    const Dims dims{16, 8, 8};
    const auto voxels = fixture::random_support(support, dims, 10);
    errs.emplace_back("full_graph", fixture::full_graph_grad_check(fixture::tiny_config(), voxels, dims, 40).max_rel_error);
  }
  double worst = 0.0;
  std::string detail = "max rel error";
  for (const auto& [name, e] : errs) {
    worst = std::max(worst, e);
    detail += fmt(" %s %.1e", name.c_str(), e);
  }
  return {worst <= 1e-4, detail};
}

struct OverfitResult {
  VoxelGrid input;
  TrainState state;
  EvalRow eval;
};

const OverfitResult& overfit_model() {
  static std::optional<OverfitResult> cached;
  if (!cached) {
    TreeParams tp;
    tp.seed = 1;
    TrainConfig tc;
    tc.seed = 1;
    tc.max_steps = 500;
    tc.lr = 1e-3;
    tc.eval_every = 100000;
    OverfitResult r;
    r.input = generate_tree(tp).mask;
    r.state = TrainState::fresh(ModelConfig::desk(), tc);
    const std::vector<VoxelGrid> data{r.input};
    train(tc, r.state, data);
    const VoxelGrid rec = binarize(decode(posterior_mean(encode(r.input, r.state.model)), r.state.model));
    r.eval = evaluate_pair("tree", rec, r.input);
    cached = std::move(r);
  }
  return *cached;
}

// Overfit sanity on one 64^3 tree with the desk config.
Verdict ac3() {
  const OverfitResult& r = overfit_model();
  const bool ok = r.eval.dice >= 0.95 && r.eval.cldice >= 0.90 && std::abs(r.eval.d_beta0) <= 1;
  return {ok, fmt("%zu voxels, 500 steps: dice %.4f, cldice %.4f, |d_beta0| %lld", r.input.count(), r.eval.dice,
                  r.eval.cldice, static_cast<long long>(std::abs(r.eval.d_beta0)))};
}

// Support laws on 50 random masks.
Verdict ac4() {
  const auto model = VaeModel<float>::init(ModelConfig::desk(), 4);
  std::mt19937_64 rng(404);
  std::size_t latent_violations = 0, cover_violations = 0, voxels = 0;
  for (int trial = 0; trial < 50; ++trial) {
    VoxelGrid x;
    if (trial % 2 == 0) {
      TreeParams tp;
      tp.dims = {32, 40, 48};
      tp.seed = 1000 + static_cast<std::uint64_t>(trial);
      tp.add_loop = trial % 4 == 0;
      x = generate_tree(tp).mask;
    } else {
      const Dims dims{8u * (1 + static_cast<std::uint32_t>(rng() % 4)), 8u * (1 + static_cast<std::uint32_t>(rng() % 4)),
                      8u * (1 + static_cast<std::uint32_t>(rng() % 4))};
      x = oracle::random_grid(rng, dims, 1 + rng() % 300);
    }
    const auto coords = active_coords(x);
    voxels += coords.size();
    std::set<Coord> brute;
    for (const Coord& c : coords) brute.insert({c.x / 8, c.y / 8, c.z / 8});
    const LatentPosterior post = encode(x, model);
    if (post.coords != std::vector<Coord>(brute.begin(), brute.end())) ++latent_violations;
    const SparseRecon rec = decode(posterior_mean(post), model);
    const CoordIndex idx(rec.coords);
    for (const Coord& c : coords) cover_violations += idx.find(c) ? 0 : 1;
  }
  return {latent_violations == 0 && cover_violations == 0,
          fmt("%zu voxels: latent-support violations %zu, decoder-coverage violations %zu", voxels, latent_violations,
              cover_violations)};
}

// Compression accounting for a 640x640x832 header.
Verdict ac5() {
  const Dims dims{640, 640, 832};
  const std::vector<Coord> coords{{0, 0, 0}, {320, 17, 400}, {639, 639, 831}};
  ModelConfig cfg = fixture::tiny_config();
  cfg.latent_channels = 2;
  const LatentPosterior post = encode(coords, dims, VaeModel<float>::init(cfg, 5));
  const CompressionReport r = compression_report(dims, coords.size(), post.coords.size(), 2);
  const bool ok = r.spatial_ratio == 8 && r.volumetric_ratio == 256.0 && r.latent_dims == Dims{80, 80, 104} &&
                  post.coords.size() == 3;
  return {ok, fmt("r_s %ux%ux%u, r %g, latent %ux%ux%u x c=%d", r.spatial_ratio, r.spatial_ratio, r.spatial_ratio,
                  r.volumetric_ratio, r.latent_dims.h, r.latent_dims.w, r.latent_dims.d, r.latent_channels)};
}

// Topology metrics on canonical and random shapes.
Verdict ac6() {
  const BettiTriple block = betti_numbers(box({6, 6, 6}, {1, 1, 1}, {4, 4, 4}));
  VoxelGrid ring = box({7, 7, 3}, {1, 1, 1}, {5, 5, 1});
  for (std::uint32_t x = 2; x <= 4; ++x)
    for (std::uint32_t y = 2; y <= 4; ++y) ring.set(x, y, 1, false);
  VoxelGrid shell = box({7, 7, 7}, {1, 1, 1}, {5, 5, 5});
  for (std::uint32_t x = 2; x <= 4; ++x)
    for (std::uint32_t y = 2; y <= 4; ++y)
      for (std::uint32_t z = 2; z <= 4; ++z) shell.set(x, y, z, false);
  const BettiTriple br = betti_numbers(ring), bs = betti_numbers(shell);
  std::mt19937_64 rng(606);
  int identity_fail = 0, oracle_fail = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::bernoulli_distribution b(0.25 + 0.01 * trial);
    VoxelGrid g({6, 6, 5});
    for (std::uint32_t z = 0; z < 5; ++z)
      for (std::uint32_t y = 0; y < 6; ++y)
        for (std::uint32_t x = 0; x < 6; ++x) g.set(x, y, z, b(rng));
    const BettiTriple t = betti_numbers(g);
    if (t.b0 - t.b1 + t.b2 != euler_characteristic(g)) ++identity_fail;
    const auto h = oracle::homology(oracle::voxel_complex(g));
    if (t != BettiTriple{h[0], h[1], h[2]}) ++oracle_fail;
  }
  const bool ok = block == BettiTriple{1, 0, 0} && br.b1 == 1 && br.b0 == 1 && bs.b2 == 1 && bs.b0 == 1 &&
                  identity_fail == 0 && oracle_fail == 0;
  return {ok, fmt("block (%lld,%lld,%lld), ring b1=%lld, shell b2=%lld; Euler-Poincare failures %d/50, homology "
                  "oracle mismatches %d/50",
                  static_cast<long long>(block.b0), static_cast<long long>(block.b1), static_cast<long long>(block.b2),
                  static_cast<long long>(br.b1), static_cast<long long>(bs.b2), identity_fail, oracle_fail)};
}

// clDice identity and dilation invariance.
Verdict ac7() {
  TreeParams tp;
  tp.seed = 7;
  const VoxelGrid tree = generate_tree(tp).mask;
  const double ident = cl_dice(tree, tree);
  VoxelGrid tube({32, 16, 16});
  rasterize_tube_into(tube, {-1.0, 8.0, 8.0}, {33.0, 8.0, 8.0}, 2.0);
  const VoxelGrid fat = dilate26(tube);
  const double cl = cl_dice(fat, tube), d = dice(fat, tube);
  const bool ok = std::abs(ident - 1.0) <= 1e-9 && std::abs(cl - 1.0) <= 1e-9 && d < 1.0;
  return {ok, fmt("identity clDice %.12f; dilated tube clDice %.12f, Dice %.4f", ident, cl, d)};
}

// Bitwise determinism of training and of resume.
Verdict ac8() {
  std::vector<VoxelGrid> data;
  for (std::uint64_t s : {11, 12, 13}) {
    TreeParams tp;
    tp.dims = {32, 32, 32};
    tp.seed = s;
    data.push_back(generate_tree(tp).mask);
  }
  TrainConfig tc;
  tc.seed = 8;
  tc.max_steps = 12;
  tc.batch_size = 2;
  tc.eval_every = 4;
  tc.checkpoint_every = 6;
  Bytes mid;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const TrainState& s) {
    if (s.step == 6) mid = encode_checkpoint(to_checkpoint(s));
  };
  TrainState a = TrainState::fresh(ModelConfig::desk(), tc);
  train(tc, a, data, &data[0], hooks);
  TrainState b = TrainState::fresh(ModelConfig::desk(), tc);
  train(tc, b, data, &data[0]);
  const Bytes ca = encode_checkpoint(to_checkpoint(a)), cb = encode_checkpoint(to_checkpoint(b));
  TrainState c = from_checkpoint(decode_checkpoint(mid));
  train(tc, c, data, &data[0]);
  const Bytes cc = encode_checkpoint(to_checkpoint(c));
  return {ca == cb && ca == cc && !mid.empty() && c.step == 12,
          fmt("checkpoint %zu bytes; run A == run B: %s; resume from step 6 == uninterrupted: %s", ca.size(),
              ca == cb ? "yes" : "no", ca == cc ? "yes" : "no")};
}

// Encoder cost at a fixed active set when the grid grows.
Verdict ac9() {
  TreeParams tp;
  VoxelGrid forest(tp.dims);
  for (tp.seed = 0; forest.count() < 5000; ++tp.seed) {
    for (const Coord& c : active_coords(generate_tree(tp).mask)) forest.set(c.x, c.y, c.z, true);
  }
  std::vector<Coord> tree = active_coords(forest);
  std::mt19937_64 rng(909);
  std::shuffle(tree.begin(), tree.end(), rng);
  std::vector<Coord> small(tree.begin(), tree.begin() + 5000);
  std::sort(small.begin(), small.end());
  std::vector<Coord> large;
  for (const Coord& c : small) large.push_back({c.x + 32, c.y + 32, c.z + 32});

  const auto model = VaeModel<float>::init(ModelConfig::desk(), 9);
  auto time_encode = [&](const std::vector<Coord>& coords, Dims dims) {
    encode(coords, dims, model);  // warm-up
    std::vector<double> t;
    for (int rep = 0; rep < 7; ++rep) {
      const auto t0 = Clock::now();
      encode(coords, dims, model);
      t.push_back(seconds_since(t0));
    }
    std::sort(t.begin(), t.end());
    return t[t.size() / 2];
  };
  const double t64 = time_encode(small, {64, 64, 64});
  const double t128 = time_encode(large, {128, 128, 128});
  const double ratio = t128 / t64;
  return {ratio < 2.0, fmt("5000 voxels: median encode %.1f ms at 64^3, %.1f ms at 128^3, ratio %.2f", 1e3 * t64,
                           1e3 * t128, ratio)};
}

// Downstream classification with the overfit model.
Verdict ac10() {
  const OverfitResult& r = overfit_model();
  const auto set = classification_set(60, TreeParams{}, 7);
  Eigen::MatrixXd x;
  std::vector<int> y;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Eigen::VectorXd d = latent_descriptor(encode(set[i].mask, r.state.model));
    if (i == 0) x.resize(static_cast<Eigen::Index>(set.size()), d.size());
    x.row(static_cast<Eigen::Index>(i)) = d.transpose();
    y.push_back(static_cast<int>(set[i].label));
  }
  PipelineConfig cfg;
  cfg.mlp.seed = 10;
  const ClassificationReport rep = cross_validate(x, y, cfg, 3);
  std::string folds;
  for (const FoldResult& f : rep.folds) folds += fmt(" %.3f", f.scores.balanced_accuracy);
  return {rep.mean_balanced_accuracy >= 0.80,
          fmt("60 healthy + 60 aneurysm, PCA(15) -> MLP, 3-fold: mean balanced accuracy %.3f (folds%s), macro-F1 %.3f",
              rep.mean_balanced_accuracy, folds.c_str(), rep.mean_macro_f1)};
}

// Format robustness under mutation.
Verdict ac11() {
  const fuzz::Outcome o = fuzz::run(1000, 1111);
  std::string first = o.unnamed.empty() ? "" : "; first unnamed: " + o.unnamed.front();
  return {o.unnamed.empty() && o.rejected > 0,
          fmt("1000 mutants x 3 readers: %zu rejected with named errors, %zu accepted, %zu unnamed%s", o.rejected,
              o.accepted, o.unnamed.size(), first.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"sparse/dense convolution equivalence", ac1},
      {"gradient correctness", ac2},
      {"overfit sanity", ac3},
      {"support laws", ac4},
      {"compression accounting", ac5},
      {"topology metrics", ac6},
      {"clDice properties", ac7},
      {"determinism and resume", ac8},
      {"sparsity scaling", ac9},
      {"downstream classification", ac10},
      {"format robustness", ac11},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::printf("AC%-2d %s  %s: %s (%.1f s)\n", id, v.pass ? "PASS" : "FAIL", criteria[i].first, v.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
