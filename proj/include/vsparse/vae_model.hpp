#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vsparse/autodiff.hpp"
#include "vsparse/params.hpp"
#include "vsparse/sparse_conv.hpp"
#include "vsparse/voxel_core.hpp"

namespace vsparse {

/// Architecture hyperparameters. Three stride-2 stages are fixed, so the
/// latent lattice is always 8x coarser per axis.
struct ModelConfig {
  std::array<int, 3> widths{16, 32, 64};
  int d_model = 48;
  int heads = 8;
  int attn_blocks = 3;  // per side
  int latent_channels = 2;
  double beta = 1e-4;
  std::uint32_t window_extent = 8;
  int gn_groups = 8;
  /// Reconstruction term summed over the loss support; false averages it.
  bool recon_sum = true;

  static constexpr std::uint32_t kLatentStride = 8;

  static ModelConfig desk() { return {}; }
  static ModelConfig paper_scale();

  void validate() const;
  /// Scalar count of all parameters VaeModel::init creates; double so that
  /// absurd configs do not overflow.
  double parameter_count() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Lower bound applied to a predicted probability for ground-truth voxels the
/// decoder never evaluated.
inline constexpr double kMissedVoxelProbability = 1e-7;
inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

struct LatentPosterior {
  std::vector<Coord> coords;  // latent lattice units
  Matrix mu;                  // N x c
  Matrix logvar;              // N x c, clamped
  Dims dims;                  // full-resolution grid
  std::uint32_t stride = ModelConfig::kLatentStride;
};

struct LatentCode {
  std::vector<Coord> coords;
  Matrix z;
  Dims dims;
  std::uint32_t stride = ModelConfig::kLatentStride;
};

struct SparseRecon {
  std::vector<Coord> coords;  // stride 1
  std::vector<float> probs;   // strictly inside (0, 1)
  Dims dims;
};

struct CompressionReport {
  std::uint32_t spatial_ratio = ModelConfig::kLatentStride;
  double volumetric_ratio = 0.0;
  Dims latent_dims;
  int latent_channels = 0;
  std::size_t active_voxels = 0;
  std::size_t active_tokens = 0;
};

template <typename T>
struct VaeModel {
  ModelConfig config;
  ParamStore<T> params;

  static VaeModel init(const ModelConfig& config, std::uint64_t seed);
};

/// Coordinate sets and kernel maps of the encoder for one input support.
struct EncoderGeometry {
  Dims dims;
  std::array<std::vector<Coord>, 4> levels;  // strides 1, 2, 4, 8
  std::array<std::shared_ptr<const KernelMap>, 3> sub;
  std::array<std::shared_ptr<const KernelMap>, 3> down;
  WindowGroups windows;
};

/// Coordinate sets and kernel maps of the decoder for one latent support.
struct DecoderGeometry {
  Dims dims;
  std::array<std::vector<Coord>, 4> levels;  // strides 8, 4, 2, 1
  std::array<std::shared_ptr<const KernelMap>, 3> up;
  std::array<std::shared_ptr<const KernelMap>, 3> sub;
  WindowGroups windows;
};

EncoderGeometry build_encoder_geometry(std::vector<Coord> input, Dims dims,
                                       const ModelConfig& cfg);
DecoderGeometry build_decoder_geometry(std::vector<Coord> latent, Dims dims,
                                       const ModelConfig& cfg);

/// Parameter lookup by name on the tape being built.
using ParamFn = std::function<ad::Var(const std::string&)>;

template <typename T>
struct EncoderVars {
  ad::Var mu;
  ad::Var logvar;
};

template <typename T>
EncoderVars<T> encoder_forward(ad::Tape<T>& tape, const ParamFn& param, const ModelConfig& cfg,
                               const EncoderGeometry& geo);

/// Returns stride-1 occupancy logits (N x 1) on geo.levels[3].
template <typename T>
ad::Var decoder_forward(ad::Tape<T>& tape, const ParamFn& param, const ModelConfig& cfg,
                        const DecoderGeometry& geo, ad::Var z);

template <typename T>
ad::Var reparameterize(ad::Tape<T>& tape, ad::Var mu, ad::Var logvar, const Mat<T>& noise);

/// Reconstruction term over the union of the decoder support and the
/// ground-truth coordinates.
template <typename T>
ad::Var recon_loss(ad::Tape<T>& tape, ad::Var logits, std::span<const Coord> support,
                   std::span<const Coord> truth, bool sum_semantics = false);

/// Mean over tokens of the per-token KL to a standard normal.
template <typename T>
ad::Var kl_loss(ad::Tape<T>& tape, ad::Var mu, ad::Var logvar);

struct ObjectiveVars {
  ad::Var rec;
  ad::Var kl;
  ad::Var total;
  /// Decoder support contains every ground-truth voxel.
  bool support_covers_input = true;
};

/// encode -> reparameterize -> decode -> rec + beta * kl on one sample.
template <typename T>
ObjectiveVars vae_objective(ad::Tape<T>& tape, const ParamFn& param, const ModelConfig& cfg,
                            const EncoderGeometry& enc, const DecoderGeometry& dec,
                            const Mat<T>& noise);

/// Standard-normal noise for the given token count, row-major draw order.
template <typename T>
Mat<T> sample_noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

template <typename T>
LatentPosterior encode(const VoxelGrid& x, const VaeModel<T>& model);
template <typename T>
LatentPosterior encode(std::vector<Coord> coords, Dims dims, const VaeModel<T>& model);

LatentCode reparameterize(const LatentPosterior& post, std::uint64_t seed);
/// z = mu, the deterministic code used for reconstruction.
LatentCode posterior_mean(const LatentPosterior& post);

template <typename T>
SparseRecon decode(const LatentCode& code, const VaeModel<T>& model);

double recon_loss(const VoxelGrid& x, const SparseRecon& recon, bool sum_semantics = false);
double kl_loss(const LatentPosterior& post);
double total_loss(const VoxelGrid& x, const SparseRecon& recon, const LatentPosterior& post,
                  double beta);

CompressionReport compression_report(Dims dims, std::size_t active_voxels,
                                     std::size_t active_tokens, int latent_channels);
CompressionReport compression_report(const VoxelGrid& x, const LatentPosterior& post);

VoxelGrid binarize(const SparseRecon& recon, double threshold = 0.5);

/// Unique floor(p / 8).
std::vector<Coord> latent_support(std::span<const Coord> coords);

}  // namespace vsparse
