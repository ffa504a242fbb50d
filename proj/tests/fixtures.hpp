#pragma once

#include <algorithm>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vsparse/autodiff.hpp"
#include "vsparse/vae_model.hpp"

namespace vsparse::fixture {

/// Narrow model small enough for central differences over every parameter.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.widths = {4, 4, 6};
  c.gn_groups = 2;
  c.d_model = 6;
  c.heads = 2;
  c.attn_blocks = 1;
  c.latent_channels = 2;
  c.beta = 0.5;
  c.window_extent = 2;
  c.recon_sum = false;
  return c;
}

/// Central-difference check of encode -> reparameterize -> decode -> total
/// loss with respect to every model parameter (double precision).
inline ad::GradCheckResult full_graph_grad_check(const ModelConfig& cfg, std::vector<Coord> coords,
                                                 Dims dims, std::uint64_t seed,
                                                 double eps = 1e-3) {
  const auto model = VaeModel<double>::init(cfg, seed);
  const EncoderGeometry enc = build_encoder_geometry(std::move(coords), dims, cfg);
  const DecoderGeometry dec = build_decoder_geometry(enc.levels[3], dims, cfg);
  const Mat<double> noise = sample_noise<double>(static_cast<Eigen::Index>(enc.levels[3].size()),
                                                 cfg.latent_channels, seed + 1);
  std::vector<Mat<double>> inputs;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& e : model.params.entries()) {
    slot[e.name] = inputs.size();
    inputs.push_back(e.value);
  }
  return ad::grad_check(
      [&](ad::Tape<double>& t, std::span<const ad::Var> in) {
        const ParamFn param = [&](const std::string& name) { return in[slot.at(name)]; };
        return vae_objective(t, param, cfg, enc, dec, noise).total;
      },
      std::move(inputs), eps);
}

inline std::vector<Coord> random_support(std::mt19937_64& rng, Dims dims, std::size_t n) {
  std::uniform_int_distribution<std::uint32_t> ux(0, dims.h - 1), uy(0, dims.w - 1), uz(0, dims.d - 1);
  std::vector<Coord> out;
  while (out.size() < n) {
    const Coord c{ux(rng), uy(rng), uz(rng)};
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace vsparse::fixture
