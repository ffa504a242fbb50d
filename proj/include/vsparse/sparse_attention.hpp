#pragma once

#include <random>
#include <span>
#include <vector>

#include "vsparse/autodiff.hpp"
#include "vsparse/voxel_core.hpp"

namespace vsparse {

/// Sinusoidal 3-axis encoding. Channels split into x|y|z blocks of size
/// m = d_model / 3; within a block, entry 2i = sin(a / 10000^(2i/m)) and
/// entry 2i+1 = cos(a / 10000^(2i/m)).
template <typename T>
Mat<T> positional_encoding(std::span<const Coord> coords, int d_model);

/// Pre-norm transformer block weights. Projections are bias-free.
template <typename T>
struct AttnParams {
  int heads = 8;
  Mat<T> wq, wk, wv, wo;  // d x d
  Mat<T> w1, b1;          // d x 4d, 1 x 4d
  Mat<T> w2, b2;          // 4d x d, 1 x d
  Mat<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;

  int d_model() const { return static_cast<int>(wq.rows()); }
};

template <typename T>
AttnParams<T> init_attn_params(int d_model, int heads, std::mt19937_64& rng);

struct AttnVars {
  ad::Var wq, wk, wv, wo, w1, b1, w2, b2, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  int heads = 8;
};

/// h = x + MHSA(LN(x)) with softmax restricted to each window group,
/// out = h + MLP(LN(h)). When `weights_out` is given it receives the
/// attention matrix of every (window, head) pair in window-major order.
template <typename T>
ad::Var window_attention(ad::Tape<T>& tape, ad::Var tokens, const WindowGroups& windows,
                         const AttnVars& p, std::vector<Mat<T>>* weights_out = nullptr);

template <typename T>
Mat<T> window_attention_block(const Mat<T>& tokens, std::span<const Coord> coords,
                              const AttnParams<T>& params, std::uint32_t window_extent,
                              std::vector<Mat<T>>* weights_out = nullptr);

}  // namespace vsparse
