#include "vsparse/optim_train.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "vsparse/rng.hpp"
#include "vsparse/topo_metrics.hpp"

namespace vsparse {

template <typename T>
OptimState<T> OptimState<T>::zeros_like(const ParamStore<T>& params, AdamWHyper hyper) {
  OptimState s;
  s.hyper = hyper;
  for (const auto& e : params.entries()) {
    s.m.push_back(Mat<T>::Zero(e.value.rows(), e.value.cols()));
    s.v.push_back(Mat<T>::Zero(e.value.rows(), e.value.cols()));
  }
  return s;
}

template <typename T>
void adamw_step(ParamStore<T>& params, std::span<const Mat<T>> grads, OptimState<T>& st) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || st.m.size() != entries.size() || st.v.size() != entries.size()) {
    throw std::invalid_argument("adamw_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Mat<T>& g = grads[i];
    const Mat<T>& p = entries[i].value;
    if (g.rows() != p.rows() || g.cols() != p.cols() || st.m[i].rows() != p.rows() ||
        st.m[i].cols() != p.cols() || st.v[i].rows() != p.rows() || st.v[i].cols() != p.cols()) {
      throw std::invalid_argument("adamw_step: shape mismatch for " + entries[i].name);
    }
    if (!g.allFinite()) throw NonFiniteError("adamw_step: non-finite gradient for " + entries[i].name);
  }
  const AdamWHyper& h = st.hyper;
  ++st.t;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    T* theta = entries[i].value.data();
    T* m = st.m[i].data();
    T* v = st.v[i].data();
    const T* g = grads[i].data();
    const Eigen::Index n = entries[i].value.size();
    for (Eigen::Index k = 0; k < n; ++k) {
      const double gk = g[k];
      const double mk = h.beta1 * m[k] + (1.0 - h.beta1) * gk;
      const double vk = h.beta2 * v[k] + (1.0 - h.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      const double th = theta[k];
      theta[k] = static_cast<T>(th - h.lr * mhat / (std::sqrt(vhat) + h.eps) - h.lr * h.weight_decay * th);
    }
  }
}

void TrainConfig::validate() const {
  if (!seed) throw std::invalid_argument("train config: seed is required");
  if (epochs < 1 && max_steps == 0) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train config: lr must be >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw std::invalid_argument("train config: weight_decay must be >= 0");
  }
}

std::uint64_t TrainConfig::total_steps(std::size_t dataset_size) const {
  if (max_steps > 0) return max_steps;
  const std::uint64_t per_epoch = (dataset_size + static_cast<std::size_t>(batch_size) - 1) /
                                  static_cast<std::size_t>(batch_size);
  return per_epoch * static_cast<std::uint64_t>(epochs);
}

TrainState TrainState::fresh(const ModelConfig& model_cfg, const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.model = VaeModel<float>::init(model_cfg, derive_seed(*cfg.seed, 0x1417));
  AdamWHyper h;
  h.lr = cfg.lr;
  h.weight_decay = cfg.weight_decay;
  s.optim = OptimState<float>::zeros_like(s.model.params, h);
  return s;
}

std::string format_metric_line(const StepMetrics& m) {
  return std::to_string(m.step) + ", " + format_double(m.rec) + ", " + format_double(m.kl) + ", " +
         format_double(m.total) + ", " + (std::isnan(m.dice_val) ? std::string("nan") : format_double(m.dice_val));
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(derive_seed(seed, 0x5e9), epoch));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::uint64_t step_noise_seed(std::uint64_t seed, std::uint64_t step) {
  return derive_seed(derive_seed(seed, 0x2015e), step);
}

double reconstruction_dice(const VaeModel<float>& model, const VoxelGrid& x) {
  const LatentPosterior post = encode(x, model);
  return dice(binarize(decode(posterior_mean(post), model)), x);
}

namespace {

struct SampleGeometry {
  EncoderGeometry enc;
  DecoderGeometry dec;
};

SampleGeometry make_geometry(const VoxelGrid& x, const ModelConfig& cfg) {
  SampleGeometry g;
  g.enc = build_encoder_geometry(active_coords(x), x.dims(), cfg);
  g.dec = build_decoder_geometry(g.enc.levels[3], x.dims(), cfg);
  return g;
}

}  // namespace

std::vector<StepMetrics> train(const TrainConfig& cfg, TrainState& state,
                               std::span<const VoxelGrid> dataset, const VoxelGrid* validation,
                               const TrainHooks& hooks) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  constexpr std::uint32_t s8 = ModelConfig::kLatentStride;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Dims& d = dataset[i].dims();
    if (d.h % s8 || d.w % s8 || d.d % s8) {
      throw std::invalid_argument("train: sample " + std::to_string(i) +
                                  " dims not divisible by 8 (pad first)");
    }
    if (dataset[i].count() == 0) throw std::invalid_argument("train: sample " + std::to_string(i) + " is empty");
  }
  auto& model = state.model;
  const ModelConfig& mcfg = model.config;
  state.optim.hyper.lr = cfg.lr;
  state.optim.hyper.weight_decay = cfg.weight_decay;
  if (state.optim.m.size() != model.params.size()) {
    state.optim = OptimState<float>::zeros_like(model.params, state.optim.hyper);
  }

  const std::uint64_t seed = *cfg.seed;
  const std::uint64_t total = cfg.total_steps(dataset.size());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::uint64_t per_epoch = (dataset.size() + batch - 1) / batch;
  std::vector<std::optional<SampleGeometry>> cache(dataset.size());
  std::vector<StepMetrics> history;
  double last_dice = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t order_epoch = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::size_t> order;

  while (state.step < total) {
    const std::uint64_t s = state.step;
    const std::uint64_t epoch = s / per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(dataset.size(), seed, epoch);
      order_epoch = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(s % per_epoch) * batch;
    const std::size_t end = std::min(dataset.size(), begin + batch);

    std::vector<Matrix> grads;
    StepMetrics metrics;
    for (std::size_t b = begin; b < end; ++b) {
      const std::size_t idx = order[b];
      std::optional<SampleGeometry> local;
      const SampleGeometry* geo;
      if (cfg.cache_geometry) {
        if (!cache[idx]) cache[idx] = make_geometry(dataset[idx], mcfg);
        geo = &*cache[idx];
      } else {
        local = make_geometry(dataset[idx], mcfg);
        geo = &*local;
      }
      ad::Tape<float> tape;
      BoundParams<float> bp(tape, model.params, true);
      ParamFn param = [&bp](const std::string& n) { return bp(n); };
      const Matrix noise = sample_noise<float>(static_cast<Eigen::Index>(geo->enc.levels[3].size()),
                                               mcfg.latent_channels,
                                               derive_seed(step_noise_seed(seed, s), b - begin));
      const ObjectiveVars obj = vae_objective(tape, param, mcfg, geo->enc, geo->dec, noise);
      if (!obj.support_covers_input) {
        throw std::logic_error("train: decoder support misses ground-truth voxels at step " +
                               std::to_string(s));
      }
      const double total_v = tape.value(obj.total)(0, 0);
      if (!std::isfinite(total_v)) throw TrainError("train: non-finite loss at step " + std::to_string(s));
      metrics.rec += tape.value(obj.rec)(0, 0);
      metrics.kl += tape.value(obj.kl)(0, 0);
      metrics.total += total_v;
      tape.backward(obj.total);
      std::vector<Matrix> g = bp.gradients();
      if (grads.empty()) {
        grads = std::move(g);
      } else {
        for (std::size_t k = 0; k < grads.size(); ++k) grads[k] += g[k];
      }
    }
    const std::size_t count = end - begin;
    if (count > 1) {
      const float inv = 1.0f / static_cast<float>(count);
      for (Matrix& g : grads) g *= inv;
      metrics.rec /= static_cast<double>(count);
      metrics.kl /= static_cast<double>(count);
      metrics.total /= static_cast<double>(count);
    }
    try {
      adamw_step<float>(model.params, grads, state.optim);
    } catch (const NonFiniteError& e) {
      throw TrainError(std::string(e.what()) + " at step " + std::to_string(s));
    }
    ++state.step;

    metrics.step = state.step;
    const bool last = state.step == total;
    if (validation && (last || (cfg.eval_every > 0 && state.step % cfg.eval_every == 0))) {
      last_dice = reconstruction_dice(model, *validation);
    }
    metrics.dice_val = last_dice;
    history.push_back(metrics);
    if (hooks.on_step) hooks.on_step(metrics);
    if (hooks.on_checkpoint &&
        (last || (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0))) {
      hooks.on_checkpoint(state);
    }
  }
  return history;
}

void write_model_config(KeyValueText& kv, const ModelConfig& c) {
  kv.set("model.widths", std::to_string(c.widths[0]) + "," + std::to_string(c.widths[1]) + "," +
                             std::to_string(c.widths[2]));
  kv.set("model.d_model", c.d_model);
  kv.set("model.heads", c.heads);
  kv.set("model.attn_blocks", c.attn_blocks);
  kv.set("model.latent_channels", c.latent_channels);
  kv.set("model.beta", c.beta);
  kv.set("model.window_extent", c.window_extent);
  kv.set("model.gn_groups", c.gn_groups);
  kv.set("model.recon_sum", c.recon_sum);
}

namespace {

int narrow_int(const std::string& key, std::int64_t v) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError("config: value out of range for " + key);
  }
  return static_cast<int>(v);
}

}  // namespace

ModelConfig read_model_config(const KeyValueText& kv, ModelConfig c) {
  if (auto w = kv.get_int_list("model.widths")) {
    if (w->size() != 3) throw ConfigError("config: model.widths needs exactly 3 values");
    for (std::size_t i = 0; i < 3; ++i) c.widths[i] = narrow_int("model.widths", (*w)[i]);
  }
  if (auto v = kv.get_int("model.d_model")) c.d_model = narrow_int("model.d_model", *v);
  if (auto v = kv.get_int("model.heads")) c.heads = narrow_int("model.heads", *v);
  if (auto v = kv.get_int("model.attn_blocks")) c.attn_blocks = narrow_int("model.attn_blocks", *v);
  if (auto v = kv.get_int("model.latent_channels")) c.latent_channels = narrow_int("model.latent_channels", *v);
  if (auto v = kv.get_double("model.beta")) c.beta = *v;
  if (auto v = kv.get_uint("model.window_extent")) {
    if (*v > std::numeric_limits<std::uint32_t>::max()) throw ConfigError("config: model.window_extent too large");
    c.window_extent = static_cast<std::uint32_t>(*v);
  }
  if (auto v = kv.get_int("model.gn_groups")) c.gn_groups = narrow_int("model.gn_groups", *v);
  if (auto v = kv.get_bool("model.recon_sum")) c.recon_sum = *v;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

void write_train_config(KeyValueText& kv, const TrainConfig& c) {
  kv.set("train.epochs", c.epochs);
  kv.set("train.max_steps", c.max_steps);
  kv.set("train.lr", c.lr);
  kv.set("train.weight_decay", c.weight_decay);
  if (c.seed) kv.set("train.seed", *c.seed);
  kv.set("train.batch_size", c.batch_size);
  kv.set("train.checkpoint_every", c.checkpoint_every);
  kv.set("train.eval_every", c.eval_every);
}

TrainConfig read_train_config(const KeyValueText& kv, TrainConfig c) {
  if (auto v = kv.get_int("train.epochs")) c.epochs = narrow_int("train.epochs", *v);
  if (auto v = kv.get_uint("train.max_steps")) c.max_steps = *v;
  if (auto v = kv.get_double("train.lr")) c.lr = *v;
  if (auto v = kv.get_double("train.weight_decay")) c.weight_decay = *v;
  if (auto v = kv.get_uint("train.seed")) c.seed = *v;
  if (auto v = kv.get_int("train.batch_size")) c.batch_size = narrow_int("train.batch_size", *v);
  if (auto v = kv.get_uint("train.checkpoint_every")) c.checkpoint_every = *v;
  if (auto v = kv.get_uint("train.eval_every")) c.eval_every = *v;
  return c;
}

CheckpointFile to_checkpoint(const TrainState& state) {
  CheckpointFile ck;
  const auto& entries = state.model.params.entries();
  for (const auto& e : entries) ck.entries.push_back({e.name, e.shape, e.value});
  if (state.optim.m.size() == entries.size()) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      ck.entries.push_back({"opt.m." + entries[i].name, entries[i].shape, state.optim.m[i]});
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      ck.entries.push_back({"opt.v." + entries[i].name, entries[i].shape, state.optim.v[i]});
    }
  }
  KeyValueText kv;
  write_model_config(kv, state.model.config);
  kv.set("optim.lr", state.optim.hyper.lr);
  kv.set("optim.beta1", state.optim.hyper.beta1);
  kv.set("optim.beta2", state.optim.hyper.beta2);
  kv.set("optim.eps", state.optim.hyper.eps);
  kv.set("optim.weight_decay", state.optim.hyper.weight_decay);
  kv.set("optim.t", state.optim.t);
  kv.set("train.step", state.step);
  ck.config_text = kv.to_text();
  return ck;
}

TrainState from_checkpoint(const CheckpointFile& ck, const ModelConfig* expected) {
  TrainState s;
  ModelConfig file_cfg;
  KeyValueText kv;
  try {
    kv = KeyValueText::parse(ck.config_text);
    file_cfg = read_model_config(kv);
    s.optim.hyper.lr = kv.get_double("optim.lr").value_or(s.optim.hyper.lr);
    s.optim.hyper.beta1 = kv.get_double("optim.beta1").value_or(s.optim.hyper.beta1);
    s.optim.hyper.beta2 = kv.get_double("optim.beta2").value_or(s.optim.hyper.beta2);
    s.optim.hyper.eps = kv.get_double("optim.eps").value_or(s.optim.hyper.eps);
    s.optim.hyper.weight_decay = kv.get_double("optim.weight_decay").value_or(s.optim.hyper.weight_decay);
    s.optim.t = kv.get_uint("optim.t").value_or(0);
    s.step = kv.get_uint("train.step").value_or(0);
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorCode::bad_config, std::string("bad config checkpoint: ") + e.what());
  }

  const ModelConfig& ref_cfg = expected ? *expected : file_cfg;
  double stored = 0.0;
  for (const auto& e : ck.entries) stored += static_cast<double>(e.value.size());
  if (ref_cfg.parameter_count() > stored) {
    throw FormatError(FormatErrorCode::shape_mismatch,
                      "shape mismatch checkpoint: config needs more values than the file holds");
  }
  // Shapes only; values are replaced below.
  const VaeModel<float> ref = VaeModel<float>::init(ref_cfg, 0);

  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : ck.entries) by_name.emplace(e.name, &e);

  auto take = [&](const std::string& name, const std::vector<std::uint32_t>& shape) -> const CheckpointEntry* {
    auto it = by_name.find(name);
    if (it == by_name.end()) return nullptr;
    if (it->second->shape != shape) {
      throw FormatError(FormatErrorCode::shape_mismatch,
                        "shape mismatch checkpoint: tensor " + name + " disagrees with the model config");
    }
    const CheckpointEntry* e = it->second;
    by_name.erase(it);
    return e;
  };

  s.model.config = file_cfg;
  for (const auto& r : ref.params.entries()) {
    const CheckpointEntry* e = take(r.name, r.shape);
    if (!e) {
      throw FormatError(FormatErrorCode::shape_mismatch,
                        "shape mismatch checkpoint: missing tensor " + r.name);
    }
    s.model.params.add(r.name, r.shape, e->value);
  }
  std::size_t found = 0;
  s.optim.m.clear();
  s.optim.v.clear();
  for (const char* prefix : {"opt.m.", "opt.v."}) {
    for (const auto& r : ref.params.entries()) {
      const CheckpointEntry* e = take(prefix + r.name, r.shape);
      auto& dst = prefix[4] == 'm' ? s.optim.m : s.optim.v;
      if (e) {
        ++found;
        dst.push_back(e->value);
      } else {
        dst.push_back(Matrix::Zero(r.value.rows(), r.value.cols()));
      }
    }
  }
  if (found != 0 && found != 2 * ref.params.size()) {
    throw FormatError(FormatErrorCode::shape_mismatch, "shape mismatch checkpoint: incomplete optimizer state");
  }
  if (!by_name.empty()) {
    throw FormatError(FormatErrorCode::shape_mismatch,
                      "shape mismatch checkpoint: unexpected tensor " + by_name.begin()->first);
  }
  if (expected && !(expected->widths == file_cfg.widths && expected->d_model == file_cfg.d_model &&
                    expected->heads == file_cfg.heads && expected->attn_blocks == file_cfg.attn_blocks &&
                    expected->latent_channels == file_cfg.latent_channels &&
                    expected->window_extent == file_cfg.window_extent &&
                    expected->gn_groups == file_cfg.gn_groups)) {
    throw FormatError(FormatErrorCode::shape_mismatch,
                      "shape mismatch checkpoint: architecture differs from the provided config");
  }
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  write_checkpoint_file(path, to_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  return from_checkpoint(read_checkpoint_file(path), expected);
}

template struct OptimState<float>;
template struct OptimState<double>;
template void adamw_step<float>(ParamStore<float>&, std::span<const Mat<float>>, OptimState<float>&);
template void adamw_step<double>(ParamStore<double>&, std::span<const Mat<double>>, OptimState<double>&);

}  // namespace vsparse
