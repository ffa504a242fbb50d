#include "vsparse/vae_model.hpp"

#include <algorithm>
#include <cmath>

#include "vsparse/rng.hpp"
#include "vsparse/sparse_attention.hpp"

namespace vsparse {

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.widths = {64, 128, 256};
  c.d_model = 384;
  c.heads = 8;
  c.attn_blocks = 3;
  c.latent_channels = 2;
  return c;
}

void ModelConfig::validate() const {
  for (int w : widths) {
    if (w <= 0) throw std::invalid_argument("model config: stage widths must be positive");
    if (w % clamp_groups(gn_groups, w) != 0) {
      throw std::invalid_argument("model config: width " + std::to_string(w) +
                                  " not divisible by its group count");
    }
  }
  if (gn_groups <= 0) throw std::invalid_argument("model config: gn_groups must be positive");
  if (d_model <= 0 || d_model % 6 != 0) {
    throw std::invalid_argument("model config: d_model must be a positive multiple of 6");
  }
  if (heads <= 0 || d_model % heads != 0) {
    throw std::invalid_argument("model config: d_model must be divisible by heads");
  }
  if (attn_blocks < 0) throw std::invalid_argument("model config: attn_blocks must be >= 0");
  if (latent_channels < 1) throw std::invalid_argument("model config: latent channels must be >= 1");
  if (window_extent < 1) throw std::invalid_argument("model config: window_extent must be >= 1");
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw std::invalid_argument("model config: beta must be finite and >= 0");
  }
}

double ModelConfig::parameter_count() const {
  const double d = d_model, c = latent_channels;
  auto conv = [](double k, double in, double out) { return k * in * out + out; };
  auto res = [&](double w) { return 2.0 * conv(27, w, w) + 4.0 * w; };
  const double attn = 4.0 * d * d + 8.0 * d * d + 5.0 * d + 4.0 * d;
  double n = conv(1, 1, widths[0]);
  for (int l = 0; l < 3; ++l) n += res(widths[l]) + conv(8, widths[l], l < 2 ? widths[l + 1] : d_model);
  n += 2.0 * attn_blocks * attn;
  n += 2.0 * (d * c + c) + (c * d + d);
  for (int i = 0; i < 3; ++i) n += conv(8, i == 0 ? d_model : widths[3 - i], widths[2 - i]) + res(widths[2 - i]);
  return n + conv(1, widths[0], 1);
}

namespace {

using Shape = std::vector<std::uint32_t>;

Shape shp(std::initializer_list<int> dims) {
  Shape s;
  for (int d : dims) s.push_back(static_cast<std::uint32_t>(d));
  return s;
}

template <typename T>
void add_conv(ParamStore<T>& s, const std::string& name, int k, int cin, int cout,
              std::mt19937_64& rng) {
  ConvParams<T> p = init_conv<T>(k, cin, cout, rng);
  s.add(name + ".w", shp({k, cin, cout}), std::move(p.weight));
  s.add(name + ".b", shp({cout}), std::move(p.bias));
}

template <typename T>
void add_linear(ParamStore<T>& s, const std::string& name, int in, int out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  s.add(name + ".w", shp({in, out}), uniform_matrix<T>(in, out, bound, rng));
  s.add(name + ".b", shp({out}), Mat<T>::Zero(1, out));
}

template <typename T>
void add_norm(ParamStore<T>& s, const std::string& name, int c) {
  s.add(name + ".g", shp({c}), Mat<T>::Ones(1, c));
  s.add(name + ".b", shp({c}), Mat<T>::Zero(1, c));
}

template <typename T>
void add_res(ParamStore<T>& s, const std::string& name, int w, std::mt19937_64& rng) {
  add_conv(s, name + ".conv1", 27, w, w, rng);
  add_norm(s, name + ".gn1", w);
  add_conv(s, name + ".conv2", 27, w, w, rng);
  add_norm(s, name + ".gn2", w);
}

template <typename T>
void add_attn(ParamStore<T>& s, const std::string& name, int d, int heads, std::mt19937_64& rng) {
  AttnParams<T> p = init_attn_params<T>(d, heads, rng);
  s.add(name + ".wq", shp({d, d}), std::move(p.wq));
  s.add(name + ".wk", shp({d, d}), std::move(p.wk));
  s.add(name + ".wv", shp({d, d}), std::move(p.wv));
  s.add(name + ".wo", shp({d, d}), std::move(p.wo));
  s.add(name + ".mlp1.w", shp({d, 4 * d}), std::move(p.w1));
  s.add(name + ".mlp1.b", shp({4 * d}), std::move(p.b1));
  s.add(name + ".mlp2.w", shp({4 * d, d}), std::move(p.w2));
  s.add(name + ".mlp2.b", shp({d}), std::move(p.b2));
  s.add(name + ".ln1.g", shp({d}), std::move(p.ln1_gain));
  s.add(name + ".ln1.b", shp({d}), std::move(p.ln1_bias));
  s.add(name + ".ln2.g", shp({d}), std::move(p.ln2_gain));
  s.add(name + ".ln2.b", shp({d}), std::move(p.ln2_bias));
}

ResBlockVars res_vars(const ParamFn& param, const std::string& name, int groups) {
  ResBlockVars v;
  v.w1 = param(name + ".conv1.w");
  v.b1 = param(name + ".conv1.b");
  v.g1 = param(name + ".gn1.g");
  v.beta1 = param(name + ".gn1.b");
  v.w2 = param(name + ".conv2.w");
  v.b2 = param(name + ".conv2.b");
  v.g2 = param(name + ".gn2.g");
  v.beta2 = param(name + ".gn2.b");
  v.groups = groups;
  return v;
}

AttnVars attn_vars(const ParamFn& param, const std::string& name, int heads) {
  AttnVars v;
  v.heads = heads;
  v.wq = param(name + ".wq");
  v.wk = param(name + ".wk");
  v.wv = param(name + ".wv");
  v.wo = param(name + ".wo");
  v.w1 = param(name + ".mlp1.w");
  v.b1 = param(name + ".mlp1.b");
  v.w2 = param(name + ".mlp2.w");
  v.b2 = param(name + ".mlp2.b");
  v.ln1_gain = param(name + ".ln1.g");
  v.ln1_bias = param(name + ".ln1.b");
  v.ln2_gain = param(name + ".ln2.g");
  v.ln2_bias = param(name + ".ln2.b");
  return v;
}

template <typename T>
ad::Var linear(ad::Tape<T>& t, const ParamFn& param, const std::string& name, ad::Var x) {
  return ad::add_row(t, ad::matmul(t, x, param(name + ".w")), param(name + ".b"));
}

std::shared_ptr<const KernelMap> share(KernelMap km) {
  return std::make_shared<const KernelMap>(std::move(km));
}

}  // namespace

template <typename T>
VaeModel<T> VaeModel<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  VaeModel<T> m;
  m.config = cfg;
  std::mt19937_64 rng(seed);
  auto& s = m.params;
  const auto& w = cfg.widths;
  const int d = cfg.d_model;
  const int c = cfg.latent_channels;

  add_conv(s, "enc.stem", 1, 1, w[0], rng);
  for (int l = 0; l < 3; ++l) {
    add_res(s, "enc.res" + std::to_string(l), w[static_cast<std::size_t>(l)], rng);
    const int next = l < 2 ? w[static_cast<std::size_t>(l + 1)] : d;
    add_conv(s, "enc.down" + std::to_string(l), 8, w[static_cast<std::size_t>(l)], next, rng);
  }
  for (int b = 0; b < cfg.attn_blocks; ++b) add_attn(s, "enc.attn" + std::to_string(b), d, cfg.heads, rng);
  add_linear(s, "enc.mu", d, c, rng);
  add_linear(s, "enc.logvar", d, c, rng);

  add_linear(s, "dec.lift", c, d, rng);
  for (int b = 0; b < cfg.attn_blocks; ++b) add_attn(s, "dec.attn" + std::to_string(b), d, cfg.heads, rng);
  for (int i = 0; i < 3; ++i) {
    const int out = w[static_cast<std::size_t>(2 - i)];
    const int in = i == 0 ? d : w[static_cast<std::size_t>(3 - i)];
    add_conv(s, "dec.up" + std::to_string(i), 8, in, out, rng);
    add_res(s, "dec.res" + std::to_string(i), out, rng);
  }
  add_conv(s, "dec.head", 1, w[0], 1, rng);
  return m;
}

EncoderGeometry build_encoder_geometry(std::vector<Coord> input, Dims dims,
                                       const ModelConfig& cfg) {
  if (input.empty()) throw std::invalid_argument("encode: empty mask");
  if (!is_canonical(input)) {
    throw std::invalid_argument("encode: input coordinates must be sorted and distinct");
  }
  EncoderGeometry g;
  g.dims = dims;
  g.levels[0] = std::move(input);
  for (std::size_t l = 0; l < 3; ++l) {
    g.levels[l + 1] = downsample_coords(g.levels[l]);
    const CoordIndex idx(g.levels[l]);
    g.sub[l] = share(build_kernel_map(g.levels[l], idx, g.levels[l], cube_offsets(3), StrideRatio::Same));
    g.down[l] = share(build_kernel_map(g.levels[l], idx, g.levels[l + 1], cube_offsets(2), StrideRatio::Down));
  }
  g.windows = window_partition(g.levels[3], cfg.window_extent);
  return g;
}

DecoderGeometry build_decoder_geometry(std::vector<Coord> latent, Dims dims,
                                       const ModelConfig& cfg) {
  if (latent.empty()) throw std::invalid_argument("decode: empty latent");
  if (!is_canonical(latent)) {
    throw std::invalid_argument("decode: latent coordinates must be sorted and distinct");
  }
  DecoderGeometry g;
  g.dims = dims;
  g.levels[0] = std::move(latent);
  for (std::size_t i = 0; i < 3; ++i) {
    const std::uint32_t out_stride = ModelConfig::kLatentStride >> (i + 1);
    g.levels[i + 1] = upsample_coords(g.levels[i], out_stride, dims);
    g.up[i] = share(build_kernel_map(g.levels[i], g.levels[i + 1], cube_offsets(2), StrideRatio::Up));
    g.sub[i] = share(build_kernel_map(g.levels[i + 1], g.levels[i + 1], cube_offsets(3), StrideRatio::Same));
  }
  g.windows = window_partition(g.levels[0], cfg.window_extent);
  return g;
}

template <typename T>
EncoderVars<T> encoder_forward(ad::Tape<T>& t, const ParamFn& param, const ModelConfig& cfg,
                               const EncoderGeometry& geo) {
  const auto n = static_cast<Eigen::Index>(geo.levels[0].size());
  ad::Var h = t.leaf(Mat<T>::Ones(n, 1));
  h = linear(t, param, "enc.stem", h);
  for (std::size_t l = 0; l < 3; ++l) {
    const std::string sl = std::to_string(l);
    const int groups = clamp_groups(cfg.gn_groups, cfg.widths[l]);
    h = res_block(t, h, res_vars(param, "enc.res" + sl, groups), geo.sub[l]);
    h = sparse_conv(t, h, param("enc.down" + sl + ".w"), param("enc.down" + sl + ".b"), geo.down[l]);
  }
  ad::Var tokens = ad::add(t, h, t.leaf(positional_encoding<T>(geo.levels[3], cfg.d_model)));
  for (int b = 0; b < cfg.attn_blocks; ++b) {
    tokens = window_attention(t, tokens, geo.windows,
                              attn_vars(param, "enc.attn" + std::to_string(b), cfg.heads));
  }
  EncoderVars<T> out;
  out.mu = linear(t, param, "enc.mu", tokens);
  out.logvar = ad::clamp(t, linear(t, param, "enc.logvar", tokens), T(kLogvarMin), T(kLogvarMax));
  return out;
}

template <typename T>
ad::Var decoder_forward(ad::Tape<T>& t, const ParamFn& param, const ModelConfig& cfg,
                        const DecoderGeometry& geo, ad::Var z) {
  if (static_cast<std::size_t>(t.value(z).rows()) != geo.levels[0].size() ||
      t.value(z).cols() != cfg.latent_channels) {
    throw ad::ShapeError("decode: latent matrix shape does not match coordinates/channels");
  }
  ad::Var u = linear(t, param, "dec.lift", z);
  u = ad::add(t, u, t.leaf(positional_encoding<T>(geo.levels[0], cfg.d_model)));
  for (int b = 0; b < cfg.attn_blocks; ++b) {
    u = window_attention(t, u, geo.windows,
                         attn_vars(param, "dec.attn" + std::to_string(b), cfg.heads));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string si = std::to_string(i);
    u = sparse_conv(t, u, param("dec.up" + si + ".w"), param("dec.up" + si + ".b"), geo.up[i]);
    const int groups = clamp_groups(cfg.gn_groups, cfg.widths[2 - i]);
    u = res_block(t, u, res_vars(param, "dec.res" + si, groups), geo.sub[i]);
  }
  return linear(t, param, "dec.head", u);
}

template <typename T>
ad::Var reparameterize(ad::Tape<T>& t, ad::Var mu, ad::Var logvar, const Mat<T>& noise) {
  ad::Var sigma = ad::exp(t, ad::scale(t, logvar, T(0.5)));
  return ad::add(t, mu, ad::mul(t, sigma, t.leaf(noise)));
}

namespace {

/// Targets on the support and the number of truth voxels it misses; both
/// inputs sorted.
template <typename T>
std::pair<Mat<T>, std::size_t> support_targets(std::span<const Coord> support,
                                               std::span<const Coord> truth) {
  Mat<T> targets = Mat<T>::Zero(static_cast<Eigen::Index>(support.size()), 1);
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t missed = 0;
  while (j < truth.size()) {
    if (i < support.size() && support[i] < truth[j]) {
      ++i;
    } else if (i < support.size() && support[i] == truth[j]) {
      targets(static_cast<Eigen::Index>(i), 0) = T(1);
      ++i;
      ++j;
    } else {
      ++missed;
      ++j;
    }
  }
  return {std::move(targets), missed};
}

}  // namespace

template <typename T>
ad::Var recon_loss(ad::Tape<T>& t, ad::Var logits, std::span<const Coord> support,
                   std::span<const Coord> truth, bool sum_semantics) {
  if (static_cast<std::size_t>(t.value(logits).rows()) != support.size()) {
    throw ad::ShapeError("recon_loss: logits rows do not match support size");
  }
  auto [targets, missed] = support_targets<T>(support, truth);
  const std::size_t omega = support.size() + missed;
  if (omega == 0) throw std::invalid_argument("recon_loss: empty loss support");
  ad::Var total = ad::sum(t, ad::bce_with_logits(t, logits, std::move(targets)));
  if (missed > 0) {
    total = ad::add_scalar(t, total, static_cast<T>(-std::log(kMissedVoxelProbability) * missed));
  }
  if (sum_semantics) return total;
  return ad::scale(t, total, T(1) / static_cast<T>(omega));
}

template <typename T>
ad::Var kl_loss(ad::Tape<T>& t, ad::Var mu, ad::Var logvar) {
  const Eigen::Index n = t.value(mu).rows();
  if (n == 0) throw std::invalid_argument("kl_loss: empty posterior");
  ad::Var terms = ad::sub(t, ad::add(t, ad::mul(t, mu, mu), ad::exp(t, logvar)), logvar);
  terms = ad::add_scalar(t, terms, T(-1));
  return ad::scale(t, ad::sum(t, terms), T(0.5) / static_cast<T>(n));
}

template <typename T>
ObjectiveVars vae_objective(ad::Tape<T>& t, const ParamFn& param, const ModelConfig& cfg,
                            const EncoderGeometry& enc, const DecoderGeometry& dec,
                            const Mat<T>& noise) {
  EncoderVars<T> e = encoder_forward(t, param, cfg, enc);
  ad::Var z = reparameterize(t, e.mu, e.logvar, noise);
  ad::Var logits = decoder_forward(t, param, cfg, dec, z);
  ObjectiveVars out;
  out.rec = recon_loss(t, logits, dec.levels[3], enc.levels[0], cfg.recon_sum);
  out.kl = kl_loss(t, e.mu, e.logvar);
  out.total = ad::add(t, out.rec, ad::scale(t, out.kl, static_cast<T>(cfg.beta)));
  out.support_covers_input = std::includes(dec.levels[3].begin(), dec.levels[3].end(),
                                           enc.levels[0].begin(), enc.levels[0].end());
  return out;
}

template <typename T>
Mat<T> sample_noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  NormalSampler normal(seed);
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal());
  return m;
}

template <typename T>
LatentPosterior encode(std::vector<Coord> coords, Dims dims, const VaeModel<T>& model) {
  const EncoderGeometry geo = build_encoder_geometry(std::move(coords), dims, model.config);
  ad::Tape<T> t;
  BoundParams<T> bp(t, model.params, false);
  ParamFn param = [&bp](const std::string& n) { return bp(n); };
  EncoderVars<T> e = encoder_forward(t, param, model.config, geo);
  LatentPosterior post;
  post.coords = geo.levels[3];
  post.mu = t.value(e.mu).template cast<float>();
  post.logvar = t.value(e.logvar).template cast<float>();
  post.dims = dims;
  return post;
}

template <typename T>
LatentPosterior encode(const VoxelGrid& x, const VaeModel<T>& model) {
  return encode(active_coords(x), x.dims(), model);
}

LatentCode reparameterize(const LatentPosterior& post, std::uint64_t seed) {
  const Mat<double> noise = sample_noise<double>(post.mu.rows(), post.mu.cols(), seed);
  LatentCode code;
  code.coords = post.coords;
  code.dims = post.dims;
  code.stride = post.stride;
  code.z.resize(post.mu.rows(), post.mu.cols());
  for (Eigen::Index i = 0; i < post.mu.size(); ++i) {
    const double lv = std::clamp(static_cast<double>(post.logvar.data()[i]), kLogvarMin, kLogvarMax);
    code.z.data()[i] =
        static_cast<float>(post.mu.data()[i] + std::exp(0.5 * lv) * noise.data()[i]);
  }
  return code;
}

LatentCode posterior_mean(const LatentPosterior& post) {
  LatentCode code;
  code.coords = post.coords;
  code.dims = post.dims;
  code.stride = post.stride;
  code.z = post.mu;
  return code;
}

template <typename T>
SparseRecon decode(const LatentCode& code, const VaeModel<T>& model) {
  if (code.stride != ModelConfig::kLatentStride) {
    throw std::invalid_argument("decode: latent stride " + std::to_string(code.stride) +
                                " != " + std::to_string(ModelConfig::kLatentStride));
  }
  const DecoderGeometry geo = build_decoder_geometry(code.coords, code.dims, model.config);
  ad::Tape<T> t;
  BoundParams<T> bp(t, model.params, false);
  ParamFn param = [&bp](const std::string& n) { return bp(n); };
  ad::Var logits = decoder_forward(t, param, model.config, geo, t.leaf(code.z.template cast<T>()));
  SparseRecon r;
  r.coords = geo.levels[3];
  r.dims = code.dims;
  const Mat<T>& l = t.value(logits);
  r.probs.resize(static_cast<std::size_t>(l.rows()));
  const double lo = kMissedVoxelProbability;
  const double hi = 1.0 - kMissedVoxelProbability;
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(l(i, 0))));
    r.probs[static_cast<std::size_t>(i)] = static_cast<float>(std::clamp(s, lo, hi));
  }
  return r;
}

double recon_loss(const VoxelGrid& x, const SparseRecon& recon, bool sum_semantics) {
  if (x.dims() != recon.dims) throw std::invalid_argument("recon_loss: dims mismatch");
  if (recon.probs.size() != recon.coords.size()) {
    throw std::invalid_argument("recon_loss: probability count does not match support");
  }
  double total = 0.0;
  std::size_t omega = 0;
  VoxelGrid covered(x.dims());
  for (std::size_t i = 0; i < recon.coords.size(); ++i) {
    const Coord& c = recon.coords[i];
    if (!x.in_bounds(c.x, c.y, c.z)) throw std::out_of_range("recon_loss: support outside grid");
    const double p = recon.probs[i];
    total -= x.at(c) ? std::log(p) : std::log(1.0 - p);
    covered.set(c, true);
    ++omega;
  }
  const Dims& d = x.dims();
  for (std::uint32_t z = 0; z < d.d; ++z)
    for (std::uint32_t y = 0; y < d.w; ++y)
      for (std::uint32_t xx = 0; xx < d.h; ++xx)
        if (x.at(xx, y, z) && !covered.at(xx, y, z)) {
          total -= std::log(kMissedVoxelProbability);
          ++omega;
        }
  if (omega == 0) throw std::invalid_argument("recon_loss: empty loss support");
  return sum_semantics ? total : total / static_cast<double>(omega);
}

double kl_loss(const LatentPosterior& post) {
  if (post.mu.rows() == 0) throw std::invalid_argument("kl_loss: empty posterior");
  double s = 0.0;
  for (Eigen::Index i = 0; i < post.mu.size(); ++i) {
    const double m = post.mu.data()[i];
    const double lv = post.logvar.data()[i];
    s += 0.5 * (m * m + std::exp(lv) - lv - 1.0);
  }
  return s / static_cast<double>(post.mu.rows());
}

double total_loss(const VoxelGrid& x, const SparseRecon& recon, const LatentPosterior& post,
                  double beta) {
  const double rec = recon_loss(x, recon);
  const double kl = kl_loss(post);
  if (!std::isfinite(rec) || !std::isfinite(kl)) throw std::runtime_error("total_loss: non-finite term");
  return rec + beta * kl;
}

CompressionReport compression_report(Dims dims, std::size_t active_voxels,
                                     std::size_t active_tokens, int latent_channels) {
  constexpr std::uint32_t s = ModelConfig::kLatentStride;
  if (dims.h % s || dims.w % s || dims.d % s || dims.volume() == 0) {
    throw std::invalid_argument("compression_report: dims must be non-zero multiples of 8 (pad first)");
  }
  if (latent_channels < 1) throw std::invalid_argument("compression_report: channels must be >= 1");
  CompressionReport r;
  r.spatial_ratio = s;
  r.latent_dims = {dims.h / s, dims.w / s, dims.d / s};
  r.latent_channels = latent_channels;
  r.volumetric_ratio = static_cast<double>(dims.volume()) /
                       (static_cast<double>(r.latent_dims.volume()) * latent_channels);
  r.active_voxels = active_voxels;
  r.active_tokens = active_tokens;
  return r;
}

CompressionReport compression_report(const VoxelGrid& x, const LatentPosterior& post) {
  if (x.dims() != post.dims) throw std::invalid_argument("compression_report: dims mismatch");
  return compression_report(x.dims(), x.count(), post.coords.size(),
                            static_cast<int>(post.mu.cols()));
}

VoxelGrid binarize(const SparseRecon& recon, double threshold) {
  VoxelGrid g(recon.dims);
  for (std::size_t i = 0; i < recon.coords.size(); ++i) {
    if (recon.probs[i] > threshold) g.set(recon.coords[i], true);
  }
  return g;
}

std::vector<Coord> latent_support(std::span<const Coord> coords) {
  std::vector<Coord> out;
  out.reserve(coords.size());
  for (const Coord& c : coords) out.push_back({c.x / 8, c.y / 8, c.z / 8});
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

#define VSPARSE_VAE_INSTANTIATE(T)                                                             \
  template struct VaeModel<T>;                                                                 \
  template EncoderVars<T> encoder_forward<T>(ad::Tape<T>&, const ParamFn&, const ModelConfig&, \
                                             const EncoderGeometry&);                          \
  template ad::Var decoder_forward<T>(ad::Tape<T>&, const ParamFn&, const ModelConfig&,        \
                                      const DecoderGeometry&, ad::Var);                        \
  template ad::Var reparameterize<T>(ad::Tape<T>&, ad::Var, ad::Var, const Mat<T>&);           \
  template ad::Var recon_loss<T>(ad::Tape<T>&, ad::Var, std::span<const Coord>,                \
                                 std::span<const Coord>, bool);                                \
  template ad::Var kl_loss<T>(ad::Tape<T>&, ad::Var, ad::Var);                                 \
  template ObjectiveVars vae_objective<T>(ad::Tape<T>&, const ParamFn&, const ModelConfig&,    \
                                          const EncoderGeometry&, const DecoderGeometry&,      \
                                          const Mat<T>&);                                      \
  template Mat<T> sample_noise<T>(Eigen::Index, Eigen::Index, std::uint64_t);                  \
  template LatentPosterior encode<T>(const VoxelGrid&, const VaeModel<T>&);                    \
  template LatentPosterior encode<T>(std::vector<Coord>, Dims, const VaeModel<T>&);            \
  template SparseRecon decode<T>(const LatentCode&, const VaeModel<T>&);

VSPARSE_VAE_INSTANTIATE(float)
VSPARSE_VAE_INSTANTIATE(double)

#undef VSPARSE_VAE_INSTANTIATE

}  // namespace vsparse
