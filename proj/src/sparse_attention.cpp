#include "vsparse/sparse_attention.hpp"

#include <cmath>

#include "vsparse/params.hpp"

namespace vsparse {

template <typename T>
Mat<T> positional_encoding(std::span<const Coord> coords, int d_model) {
  if (d_model <= 0 || d_model % 6 != 0) {
    throw std::invalid_argument("positional_encoding: d_model " + std::to_string(d_model) +
                                " must be a positive multiple of 6");
  }
  const int m = d_model / 3;
  Mat<T> pe(static_cast<Eigen::Index>(coords.size()), d_model);
  std::vector<double> inv_freq(static_cast<std::size_t>(m / 2));
  for (int i = 0; i < m / 2; ++i) {
    inv_freq[static_cast<std::size_t>(i)] = 1.0 / std::pow(10000.0, 2.0 * i / m);
  }
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const double axis[3] = {static_cast<double>(coords[n].x), static_cast<double>(coords[n].y),
                            static_cast<double>(coords[n].z)};
    for (int a = 0; a < 3; ++a) {
      for (int i = 0; i < m / 2; ++i) {
        const double angle = axis[a] * inv_freq[static_cast<std::size_t>(i)];
        const Eigen::Index col = a * m + 2 * i;
        pe(static_cast<Eigen::Index>(n), col) = static_cast<T>(std::sin(angle));
        pe(static_cast<Eigen::Index>(n), col + 1) = static_cast<T>(std::cos(angle));
      }
    }
  }
  return pe;
}

template <typename T>
AttnParams<T> init_attn_params(int d_model, int heads, std::mt19937_64& rng) {
  if (heads <= 0 || d_model % heads != 0) {
    throw std::invalid_argument("attention: d_model " + std::to_string(d_model) +
                                " not divisible by heads " + std::to_string(heads));
  }
  AttnParams<T> p;
  p.heads = heads;
  const double b = 1.0 / std::sqrt(static_cast<double>(d_model));
  const double b4 = 1.0 / std::sqrt(4.0 * d_model);
  p.wq = uniform_matrix<T>(d_model, d_model, b, rng);
  p.wk = uniform_matrix<T>(d_model, d_model, b, rng);
  p.wv = uniform_matrix<T>(d_model, d_model, b, rng);
  p.wo = uniform_matrix<T>(d_model, d_model, b, rng);
  p.w1 = uniform_matrix<T>(d_model, 4 * d_model, b, rng);
  p.b1 = Mat<T>::Zero(1, 4 * d_model);
  p.w2 = uniform_matrix<T>(4 * d_model, d_model, b4, rng);
  p.b2 = Mat<T>::Zero(1, d_model);
  p.ln1_gain = Mat<T>::Ones(1, d_model);
  p.ln1_bias = Mat<T>::Zero(1, d_model);
  p.ln2_gain = Mat<T>::Ones(1, d_model);
  p.ln2_bias = Mat<T>::Zero(1, d_model);
  return p;
}

template <typename T>
ad::Var window_attention(ad::Tape<T>& t, ad::Var tokens, const WindowGroups& windows,
                         const AttnVars& p, std::vector<Mat<T>>* weights_out) {
  const Eigen::Index n = t.value(tokens).rows();
  const Eigen::Index d = t.value(tokens).cols();
  if (t.value(p.wq).rows() != d) {
    throw ad::ShapeError("window_attention: tokens have width " + std::to_string(d) +
                         ", parameters expect " + std::to_string(t.value(p.wq).rows()));
  }
  if (p.heads <= 0 || d % p.heads != 0) {
    throw ad::ShapeError("window_attention: width not divisible by heads");
  }
  const Eigen::Index dh = d / p.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  ad::Var ln = ad::layer_norm_rows(t, tokens, p.ln1_gain, p.ln1_bias);
  ad::Var q = ad::matmul(t, ln, p.wq);
  ad::Var k = ad::matmul(t, ln, p.wk);
  ad::Var v = ad::matmul(t, ln, p.wv);

  std::vector<ad::Var> window_outputs;
  std::vector<std::uint32_t> order;
  order.reserve(static_cast<std::size_t>(n));
  window_outputs.reserve(windows.groups.size());
  for (const WindowGroup& g : windows.groups) {
    ad::Var qg = ad::gather_rows(t, q, g.rows);
    ad::Var kg = ad::gather_rows(t, k, g.rows);
    ad::Var vg = ad::gather_rows(t, v, g.rows);
    std::vector<ad::Var> heads;
    heads.reserve(static_cast<std::size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
      ad::Var qh = ad::slice_cols(t, qg, h * dh, dh);
      ad::Var kh = ad::slice_cols(t, kg, h * dh, dh);
      ad::Var vh = ad::slice_cols(t, vg, h * dh, dh);
      ad::Var scores = ad::scale(t, ad::matmul(t, qh, ad::transpose(t, kh)), scale);
      ad::Var attn = ad::softmax_rows(t, scores);
      if (weights_out) weights_out->push_back(t.value(attn));
      heads.push_back(ad::matmul(t, attn, vh));
    }
    window_outputs.push_back(ad::concat_cols<T>(t, heads));
    order.insert(order.end(), g.rows.begin(), g.rows.end());
  }
  if (static_cast<Eigen::Index>(order.size()) != n) {
    throw ad::ShapeError("window_attention: window groups do not cover all tokens");
  }
  ad::Var mixed = ad::scatter_add_rows(t, ad::concat_rows<T>(t, window_outputs), order, n);
  ad::Var h = ad::add(t, tokens, ad::matmul(t, mixed, p.wo));

  ad::Var ln2 = ad::layer_norm_rows(t, h, p.ln2_gain, p.ln2_bias);
  ad::Var hidden = ad::gelu(t, ad::add_row(t, ad::matmul(t, ln2, p.w1), p.b1));
  ad::Var mlp = ad::add_row(t, ad::matmul(t, hidden, p.w2), p.b2);
  return ad::add(t, h, mlp);
}

template <typename T>
Mat<T> window_attention_block(const Mat<T>& tokens, std::span<const Coord> coords,
                              const AttnParams<T>& params, std::uint32_t window_extent,
                              std::vector<Mat<T>>* weights_out) {
  if (static_cast<std::size_t>(tokens.rows()) != coords.size()) {
    throw ad::ShapeError("window_attention_block: token rows do not match coordinate count");
  }
  if (tokens.cols() != params.d_model()) {
    throw ad::ShapeError("window_attention_block: token width " + std::to_string(tokens.cols()) +
                         " != d_model " + std::to_string(params.d_model()));
  }
  ad::Tape<T> t;
  AttnVars v;
  v.heads = params.heads;
  v.wq = t.leaf(params.wq);
  v.wk = t.leaf(params.wk);
  v.wv = t.leaf(params.wv);
  v.wo = t.leaf(params.wo);
  v.w1 = t.leaf(params.w1);
  v.b1 = t.leaf(params.b1);
  v.w2 = t.leaf(params.w2);
  v.b2 = t.leaf(params.b2);
  v.ln1_gain = t.leaf(params.ln1_gain);
  v.ln1_bias = t.leaf(params.ln1_bias);
  v.ln2_gain = t.leaf(params.ln2_gain);
  v.ln2_bias = t.leaf(params.ln2_bias);
  const WindowGroups wg = window_partition(coords, window_extent);
  ad::Var out = window_attention(t, t.leaf(tokens), wg, v, weights_out);
  return t.value(out);
}

#define VSPARSE_ATTN_INSTANTIATE(T)                                                       \
  template Mat<T> positional_encoding<T>(std::span<const Coord>, int);                    \
  template AttnParams<T> init_attn_params<T>(int, int, std::mt19937_64&);                 \
  template ad::Var window_attention<T>(ad::Tape<T>&, ad::Var, const WindowGroups&,        \
                                       const AttnVars&, std::vector<Mat<T>>*);            \
  template Mat<T> window_attention_block<T>(const Mat<T>&, std::span<const Coord>,        \
                                            const AttnParams<T>&, std::uint32_t,          \
                                            std::vector<Mat<T>>*);

VSPARSE_ATTN_INSTANTIATE(float)
VSPARSE_ATTN_INSTANTIATE(double)

#undef VSPARSE_ATTN_INSTANTIATE

}  // namespace vsparse
