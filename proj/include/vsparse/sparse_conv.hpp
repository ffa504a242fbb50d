#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "vsparse/autodiff.hpp"
#include "vsparse/voxel_core.hpp"

namespace vsparse {

struct Offset {
  std::int32_t dx = 0;
  std::int32_t dy = 0;
  std::int32_t dz = 0;
  auto operator<=>(const Offset&) const = default;
};

/// Same: kernel-3 submanifold neighbourhood on one lattice.
/// Down: kernel 2, stride 2, input = 2 * out + offset.
/// Up: transposed kernel 2, stride 2, out = 2 * in + offset.
enum class StrideRatio { Same, Down, Up };

struct KernelMapEntry {
  std::uint32_t in_row = 0;
  std::uint32_t out_row = 0;
  std::uint32_t offset = 0;
  auto operator<=>(const KernelMapEntry&) const = default;
};

/// Explicit (input, output, offset) contribution list. Triples are sorted by
/// (out_row, offset, in_row); the per-offset views hold the same pairs in
/// ascending output order and drive the gather-GEMM-scatter kernels.
struct KernelMap {
  std::vector<Offset> offsets;
  std::vector<KernelMapEntry> triples;
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::vector<std::vector<std::uint32_t>> in_rows_by_offset;
  std::vector<std::vector<std::uint32_t>> out_rows_by_offset;
};

/// All offsets of a cubic kernel, x-major: kernel 3 -> {-1,0,1}^3,
/// kernel 2 -> {0,1}^3, kernel 1 -> {0}.
std::vector<Offset> cube_offsets(int kernel);

KernelMap build_kernel_map(std::span<const Coord> in, const CoordIndex& in_index,
                           std::span<const Coord> out, std::vector<Offset> offsets,
                           StrideRatio ratio);
KernelMap build_kernel_map(std::span<const Coord> in, std::span<const Coord> out,
                           std::vector<Offset> offsets, StrideRatio ratio);

/// Unique floor(p / 2), canonical.
std::vector<Coord> downsample_coords(std::span<const Coord> coords);
/// {2q + o : o in {0,1}^3}, canonical, dropped where (2q + o) * out_stride
/// falls outside dims.
std::vector<Coord> upsample_coords(std::span<const Coord> coords, std::uint32_t out_stride,
                                   Dims dims);

template <typename T>
struct ConvParams {
  Mat<T> weight;  // (K * Cin) x Cout, offset-major
  Mat<T> bias;    // 1 x Cout
  int kernel_volume = 1;

  Eigen::Index in_channels() const { return weight.rows() / kernel_volume; }
  Eigen::Index out_channels() const { return weight.cols(); }
};

/// Kaiming-style uniform(+-1/sqrt(K*Cin)) weights, zero bias.
template <typename T>
ConvParams<T> init_conv(int kernel_volume, Eigen::Index cin, Eigen::Index cout,
                        std::mt19937_64& rng);

/// out[j] = bias + sum over (i, j, k) of x[i] * W[k], accumulated per output
/// row in increasing offset order.
template <typename T>
Mat<T> conv_forward(const Mat<T>& x, const Mat<T>& weight, const Mat<T>& bias,
                    const KernelMap& km);

template <typename T>
void conv_backward(const Mat<T>& x, const Mat<T>& weight, const KernelMap& km,
                   const Mat<T>& grad_out, Mat<T>* grad_x, Mat<T>* grad_w, Mat<T>* grad_b);

/// Differentiable sparse convolution on a tape.
template <typename T>
ad::Var sparse_conv(ad::Tape<T>& tape, ad::Var x, ad::Var weight, ad::Var bias,
                    std::shared_ptr<const KernelMap> km);

template <typename T>
SparseTensor<T> submanifold_conv(const SparseTensor<T>& st, const ConvParams<T>& params);
template <typename T>
SparseTensor<T> down_conv(const SparseTensor<T>& st, const ConvParams<T>& params);
template <typename T>
SparseTensor<T> up_conv(const SparseTensor<T>& st, const ConvParams<T>& params);

/// Groups used for a width: min(default_groups, channels).
int clamp_groups(int default_groups, Eigen::Index channels);

/// Per-sample group normalization over active voxels, then affine. N = 0
/// returns the input unchanged.
template <typename T>
SparseTensor<T> group_norm(const SparseTensor<T>& st, const Mat<T>& gain, const Mat<T>& bias,
                           int groups);

template <typename T>
struct ResBlockParams {
  ConvParams<T> conv1;
  ConvParams<T> conv2;
  Mat<T> gn1_gain, gn1_bias;
  Mat<T> gn2_gain, gn2_bias;
  std::optional<ConvParams<T>> proj;  // 1x1x1 when widths differ
  int groups = 8;
};

template <typename T>
ResBlockParams<T> init_res_block(Eigen::Index cin, Eigen::Index cout, int groups,
                                 std::mt19937_64& rng);

/// Tape handles for one residual block.
struct ResBlockVars {
  ad::Var w1, b1, g1, beta1;
  ad::Var w2, b2, g2, beta2;
  ad::Var proj_w, proj_b;  // invalid when the skip is the identity
  int groups = 8;
};

/// out = ReLU(skip(x) + GN(conv3(ReLU(GN(conv3(x)))))) on a fixed site set;
/// `sub_map` is the kernel-3 submanifold map of those sites.
template <typename T>
ad::Var res_block(ad::Tape<T>& tape, ad::Var x, const ResBlockVars& p,
                  const std::shared_ptr<const KernelMap>& sub_map);

template <typename T>
SparseTensor<T> res_sparse_block(const SparseTensor<T>& st, const ResBlockParams<T>& params);

}  // namespace vsparse
