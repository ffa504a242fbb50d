#include "vsparse/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vsparse/config_text.hpp"
#include "vsparse/io_formats.hpp"
#include "vsparse/latent_analysis.hpp"
#include "vsparse/optim_train.hpp"
#include "vsparse/rng.hpp"
#include "vsparse/synth_vessels.hpp"
#include "vsparse/topo_metrics.hpp"
#include "vsparse/vae_model.hpp"

namespace fs = std::filesystem;

namespace vsparse {

namespace {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config;
  std::string out = ".";
  bool pad8 = false;
};

std::string dims_string(Dims d) {
  return std::to_string(d.h) + "x" + std::to_string(d.w) + "x" + std::to_string(d.d);
}

KeyValueText load_config(const Globals& g) {
  if (g.config.empty()) return {};
  std::ifstream in(g.config);
  if (!in) throw DataError("cannot open config " + g.config);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return KeyValueText::parse(ss.str());
  } catch (const ConfigError& e) {
    throw DataError(g.config + ": " + e.what());
  }
}

fs::path out_dir(const Globals& g) {
  fs::path p(g.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create output directory " + g.out + ": " + ec.message());
  return p;
}

Dims round_up8(Dims d) {
  auto r = [](std::uint32_t v) { return (v + 7u) / 8u * 8u; };
  return {r(d.h), r(d.w), r(d.d)};
}

/// Validates divisibility by 8, padding at the high end when allowed.
Dims model_dims(Dims d, bool pad8, const std::string& what) {
  if (d.volume() == 0) throw DataError(what + ": empty grid dims");
  if (d.h % 8 == 0 && d.w % 8 == 0 && d.d % 8 == 0) return d;
  if (!pad8) throw DataError(what + ": dims " + dims_string(d) + " not divisible by 8 (use --pad8)");
  return round_up8(d);
}

VoxelGrid pad_grid(const VoxelGrid& g, Dims to) {
  if (g.dims() == to) return g;
  VoxelGrid out(to);
  for (const Coord& c : active_coords(g)) out.set(c, true);
  return out;
}

std::vector<fs::path> collect_svox(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const std::string& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".svox") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(p);
    }
  }
  if (files.empty()) throw DataError("no .svox inputs found");
  return files;
}

TreeParams tree_params_from(const KeyValueText& kv) {
  TreeParams p;
  try {
    if (auto d = kv.get_int_list("synth.dims")) {
      if (d->size() == 1) d->assign(3, (*d)[0]);
      if (d->size() != 3) throw ConfigError("config: synth.dims needs 1 or 3 values");
      for (auto v : *d) {
        if (v <= 0 || v > 4096) throw ConfigError("config: synth.dims out of range");
      }
      p.dims = {static_cast<std::uint32_t>((*d)[0]), static_cast<std::uint32_t>((*d)[1]),
                static_cast<std::uint32_t>((*d)[2])};
    }
    p.root_radius = kv.get_double("synth.root_radius").value_or(p.root_radius);
    p.radius_decay = kv.get_double("synth.radius_decay").value_or(p.radius_decay);
    p.segment_min = kv.get_double("synth.segment_min").value_or(p.segment_min);
    p.segment_max = kv.get_double("synth.segment_max").value_or(p.segment_max);
    p.branch_probability = kv.get_double("synth.branch_probability").value_or(p.branch_probability);
    p.max_depth = static_cast<int>(kv.get_int("synth.max_depth").value_or(p.max_depth));
    p.jitter = kv.get_double("synth.jitter").value_or(p.jitter);
    p.add_loop = kv.get_bool("synth.add_loop").value_or(p.add_loop);
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  return p;
}

TrainState load_model(const std::string& path) {
  return load_checkpoint(path);
}

void print_compression(std::ostream& out, const CompressionReport& r) {
  out << "latent dims: " << dims_string(r.latent_dims) << ", channels " << r.latent_channels << "\n";
  out << "spatial ratio r_s: " << r.spatial_ratio << "x" << r.spatial_ratio << "x" << r.spatial_ratio << "\n";
  out << "volumetric ratio r: " << format_double(r.volumetric_ratio) << "\n";
  out << "active voxels: " << r.active_voxels << ", latent tokens: " << r.active_tokens << "\n";
}

// ---- subcommands ---------------------------------------------------------

struct GenSynthArgs {
  std::size_t healthy = 8;
  std::size_t aneurysm = 0;
  std::size_t stenosis = 0;
  std::string dims;
  bool loops = false;
};

int cmd_gen_synth(const Globals& g, const GenSynthArgs& a, std::ostream& out) {
  KeyValueText kv = load_config(g);
  if (!a.dims.empty()) kv.set("synth.dims", a.dims);
  TreeParams base = tree_params_from(kv);
  if (a.loops) base.add_loop = true;
  try {
    base.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  const fs::path dir = out_dir(g);
  std::vector<ManifestEntry> manifest;
  const std::size_t total = a.healthy + a.aneurysm + a.stenosis;
  for (std::size_t i = 0; i < total; ++i) {
    TreeParams p = base;
    p.seed = derive_seed(g.seed, i);
    VesselSample s = generate_tree(p);
    if (i >= a.healthy + a.aneurysm) {
      s = add_anomaly(s, AnomalyKind::stenosis, derive_seed(g.seed, 0x100000000ull + i));
    } else if (i >= a.healthy) {
      s = add_anomaly(s, AnomalyKind::aneurysm, derive_seed(g.seed, 0x100000000ull + i));
    }
    char name[40];
    std::snprintf(name, sizeof name, "sample_%04zu.svox", i);
    write_svox(dir / name, s.mask);
    manifest.push_back({name, s.label});
  }
  write_manifest(dir / "manifest.csv", manifest);
  out << "wrote " << total << " masks (" << dims_string(base.dims) << ") and manifest.csv to " << dir.string()
      << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::vector<std::string> inputs;
  std::optional<std::uint64_t> steps;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<std::uint64_t> checkpoint_every;
  std::optional<std::uint64_t> eval_every;
  std::string val;
  std::string resume;
};

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
  const KeyValueText kv = load_config(g);
  ModelConfig mcfg;
  TrainConfig tcfg;
  try {
    mcfg = read_model_config(kv);
    tcfg = read_train_config(kv);
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  if (g.seed_given) tcfg.seed = g.seed;
  if (!tcfg.seed) throw UsageError("train needs --seed (or train.seed in the config)");
  if (a.steps) tcfg.max_steps = *a.steps;
  if (a.epochs) tcfg.epochs = *a.epochs;
  if (a.lr) tcfg.lr = *a.lr;
  if (a.batch_size) tcfg.batch_size = *a.batch_size;
  if (a.checkpoint_every) tcfg.checkpoint_every = *a.checkpoint_every;
  if (a.eval_every) tcfg.eval_every = *a.eval_every;
  try {
    tcfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  std::vector<VoxelGrid> data;
  for (const fs::path& p : collect_svox(a.inputs)) {
    VoxelGrid grid = read_svox_grid(p);
    data.push_back(pad_grid(grid, model_dims(grid.dims(), g.pad8, p.string())));
  }
  VoxelGrid val = data.front();
  if (!a.val.empty()) {
    VoxelGrid v = read_svox_grid(a.val);
    val = pad_grid(v, model_dims(v.dims(), g.pad8, a.val));
  }

  TrainState state = a.resume.empty() ? TrainState::fresh(mcfg, tcfg) : load_checkpoint(a.resume);
  const fs::path dir = out_dir(g);
  std::ofstream log(dir / "metrics.log", a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw DataError("cannot open metrics log in " + dir.string());
  double best = -1.0;
  TrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) {
    log << format_metric_line(m) << "\n";
    log.flush();
    if (!std::isnan(m.dice_val) && m.dice_val > best) {
      best = m.dice_val;
      save_checkpoint(dir / "best.svck", state);
    }
  };
  hooks.on_checkpoint = [&](const TrainState& s) {
    save_checkpoint(dir / ("ckpt_" + std::to_string(s.step) + ".svck"), s);
  };
  const std::vector<StepMetrics> hist = train(tcfg, state, data, &val, hooks);
  save_checkpoint(dir / "model.svck", state);
  if (!hist.empty()) out << "final: " << format_metric_line(hist.back()) << "\n";
  out << "wrote " << (dir / "model.svck").string() << " after step " << state.step << "\n";
  return kExitOk;
}

struct CodecArgs {
  std::string input;
  std::string checkpoint;
  std::string output;
  bool sample = false;
  double threshold = 0.5;
};

fs::path output_path(const Globals& g, const std::string& explicit_path, const std::string& input,
                     const char* ext) {
  if (explicit_path.empty()) return out_dir(g) / (fs::path(input).stem().string() + ext);
  const fs::path p(explicit_path);
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  if (ec) throw DataError("cannot create directory for " + explicit_path + ": " + ec.message());
  return p;
}

LatentFile encode_file(const Globals& g, const CodecArgs& a, const TrainState& model, std::ostream& out,
                       Dims* original) {
  const SvoxData in = read_svox(a.input);
  if (original) *original = in.dims;
  const Dims dims = model_dims(in.dims, g.pad8, a.input);
  if (dims != in.dims) out << "padded " << dims_string(in.dims) << " -> " << dims_string(dims) << "\n";
  if (in.coords.empty()) throw DataError(a.input + ": empty mask");
  LatentFile lf;
  lf.posterior = encode(in.coords, dims, model.model);
  lf.z = a.sample ? reparameterize(lf.posterior, derive_seed(g.seed, 0xe1c)).z : lf.posterior.mu;
  print_compression(out, compression_report(dims, in.coords.size(), lf.posterior.coords.size(),
                                            static_cast<int>(lf.posterior.mu.cols())));
  return lf;
}

int cmd_encode(const Globals& g, const CodecArgs& a, std::ostream& out) {
  const TrainState model = load_model(a.checkpoint);
  const LatentFile lf = encode_file(g, a, model, out, nullptr);
  const fs::path dst = output_path(g, a.output, a.input, ".svlz");
  write_latent(dst, lf);
  out << "wrote " << dst.string() << "\n";
  return kExitOk;
}

std::vector<Coord> decode_coords(const LatentFile& lf, const TrainState& model, double threshold, Dims crop) {
  LatentCode code;
  code.coords = lf.posterior.coords;
  code.z = lf.z;
  code.dims = lf.posterior.dims;
  code.stride = lf.posterior.stride;
  const SparseRecon r = decode(code, model.model);
  std::vector<Coord> out;
  for (std::size_t i = 0; i < r.coords.size(); ++i) {
    const Coord& c = r.coords[i];
    if (r.probs[i] > threshold && c.x < crop.h && c.y < crop.w && c.z < crop.d) out.push_back(c);
  }
  return out;
}

int cmd_decode(const Globals& g, const CodecArgs& a, std::ostream& out) {
  const TrainState model = load_model(a.checkpoint);
  const LatentFile lf = read_latent(a.input);
  if (lf.posterior.mu.cols() != model.model.config.latent_channels) {
    throw DataError(a.input + ": latent has " + std::to_string(lf.posterior.mu.cols()) +
                    " channels, model expects " + std::to_string(model.model.config.latent_channels));
  }
  const std::vector<Coord> coords = decode_coords(lf, model, a.threshold, lf.posterior.dims);
  const fs::path dst = output_path(g, a.output, a.input, ".svox");
  write_svox(dst, lf.posterior.dims, coords);
  out << "decoded " << coords.size() << " active voxels; wrote " << dst.string() << "\n";
  return kExitOk;
}

int cmd_reconstruct(const Globals& g, const CodecArgs& a, std::ostream& out) {
  const TrainState model = load_model(a.checkpoint);
  Dims original;
  const LatentFile lf = encode_file(g, a, model, out, &original);
  const std::vector<Coord> coords = decode_coords(lf, model, a.threshold, original);
  const fs::path dst = output_path(g, a.output, a.input, ".recon.svox");
  write_svox(dst, original, coords);
  out << "reconstructed " << coords.size() << " active voxels; wrote " << dst.string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string pred;
  std::string ref;
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(a.ref)) {
    for (const fs::path& r : collect_svox({a.ref})) {
      const fs::path p = fs::path(a.pred) / r.filename();
      if (!fs::exists(p)) throw DataError("no prediction for " + r.filename().string() + " in " + a.pred);
      pairs.emplace_back(p, r);
    }
  } else {
    pairs.emplace_back(a.pred, a.ref);
  }
  std::vector<EvalRow> rows;
  for (const auto& [p, r] : pairs) {
    const VoxelGrid pred = read_svox_grid(p);
    const VoxelGrid ref = read_svox_grid(r);
    if (pred.dims() != ref.dims()) {
      throw DataError("dims differ: " + p.string() + " vs " + r.string());
    }
    rows.push_back(evaluate_pair(r.filename().string(), pred, ref));
  }
  const std::string report = format_eval_report(rows);
  out << report;
  std::ofstream f(out_dir(g) / "eval.txt", std::ios::trunc);
  f << report;
  return kExitOk;
}

struct ClassifyArgs {
  std::string manifest;
  std::string checkpoint;
  std::string classifier;
  std::optional<int> folds;
  std::optional<int> epochs;
  std::optional<int> components;
};

struct LabelledDescriptors {
  std::vector<std::string> names;
  Eigen::MatrixXd x;
  std::vector<int> labels;
};

LabelledDescriptors describe_manifest(const Globals& g, const std::string& manifest, const TrainState& model,
                                      int grid) {
  const std::vector<ManifestEntry> entries = read_manifest(manifest);
  if (entries.empty()) throw DataError(manifest + ": empty manifest");
  const fs::path base = fs::path(manifest).parent_path();
  LabelledDescriptors out;
  for (const ManifestEntry& e : entries) {
    const fs::path p = base / e.filename;
    const SvoxData in = read_svox(p);
    if (in.coords.empty()) throw DataError(p.string() + ": empty mask");
    const Dims dims = model_dims(in.dims, g.pad8, p.string());
    const Eigen::VectorXd d = latent_descriptor(encode(in.coords, dims, model.model), grid);
    if (out.x.rows() == 0) out.x.resize(static_cast<Eigen::Index>(entries.size()), d.size());
    out.x.row(static_cast<Eigen::Index>(out.names.size())) = d.transpose();
    out.names.push_back(e.filename);
    out.labels.push_back(static_cast<int>(e.label));
  }
  return out;
}

PipelineConfig pipeline_config(const Globals& g, const ClassifyArgs& a) {
  const KeyValueText kv = load_config(g);
  PipelineConfig cfg;
  try {
    cfg.grid = static_cast<int>(kv.get_int("classify.grid").value_or(cfg.grid));
    cfg.pca_components = static_cast<int>(kv.get_int("classify.pca_components").value_or(cfg.pca_components));
    cfg.folds = static_cast<int>(kv.get_int("classify.folds").value_or(cfg.folds));
    cfg.mlp.hidden = static_cast<int>(kv.get_int("classify.hidden").value_or(cfg.mlp.hidden));
    cfg.mlp.epochs = static_cast<int>(kv.get_int("classify.epochs").value_or(cfg.mlp.epochs));
    cfg.mlp.lr = kv.get_double("classify.lr").value_or(cfg.mlp.lr);
    cfg.mlp.weight_decay = kv.get_double("classify.weight_decay").value_or(cfg.mlp.weight_decay);
    cfg.mlp.batch_size = static_cast<int>(kv.get_int("classify.batch_size").value_or(cfg.mlp.batch_size));
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  if (a.folds) cfg.folds = *a.folds;
  if (a.epochs) cfg.mlp.epochs = *a.epochs;
  if (a.components) cfg.pca_components = *a.components;
  if (cfg.grid < 1 || cfg.folds < 2 || cfg.mlp.epochs < 1 || cfg.mlp.hidden < 1 || cfg.mlp.batch_size < 1 ||
      cfg.pca_components < 1 || !(cfg.mlp.lr > 0.0)) {
    throw UsageError("invalid classifier settings");
  }
  cfg.mlp.seed = derive_seed(g.seed, 0xc1a55);
  return cfg;
}

int cmd_classify_train(const Globals& g, const ClassifyArgs& a, std::ostream& out) {
  const PipelineConfig cfg = pipeline_config(g, a);
  const TrainState model = load_model(a.checkpoint);
  const LabelledDescriptors data = describe_manifest(g, a.manifest, model, cfg.grid);
  const ClassificationReport report = cross_validate(data.x, data.labels, cfg, derive_seed(g.seed, 0xf01d));
  const std::string text = format_classification_report(report);
  out << text;
  const fs::path dir = out_dir(g);
  std::ofstream(dir / "classification.txt", std::ios::trunc) << text;
  const LatentClassifier clf = fit_pipeline(data.x, data.labels, cfg);
  write_checkpoint_file(dir / "classifier.svck", classifier_to_file(clf));
  out << "wrote " << (dir / "classifier.svck").string() << "\n";
  return kExitOk;
}

int cmd_classify_eval(const Globals& g, const ClassifyArgs& a, std::ostream& out) {
  const LatentClassifier clf = classifier_from_file(read_checkpoint_file(a.classifier));
  const TrainState model = load_model(a.checkpoint);
  const LabelledDescriptors data = describe_manifest(g, a.manifest, model, clf.grid);
  if (data.x.cols() != clf.pca.mean.size()) {
    throw DataError("descriptor length " + std::to_string(data.x.cols()) + " does not match classifier input " +
                    std::to_string(clf.pca.mean.size()));
  }
  const std::vector<int> preds = predict_pipeline(clf, data.x);
  std::ostringstream text;
  text << "sample, label, predicted\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    text << data.names[i] << ", " << label_name(static_cast<SampleLabel>(data.labels[i])) << ", "
         << label_name(static_cast<SampleLabel>(preds[i])) << "\n";
  }
  const ClassifierScores s = evaluate_classifier(preds, data.labels);
  text << "balanced_accuracy " << format_double(s.balanced_accuracy) << "\n";
  text << "macro_f1 " << format_double(s.macro_f1) << "\n";
  out << text.str();
  std::ofstream(out_dir(g) / "classify_eval.txt", std::ios::trunc) << text.str();
  return kExitOk;
}

int cmd_info(const std::vector<std::string>& files, std::ostream& out) {
  for (const std::string& f : files) {
    const Bytes bytes = read_file(f);
    out << f << ": ";
    switch (sniff_kind(bytes)) {
      case FileKind::svox: {
        const SvoxData d = decode_svox(bytes);
        const double occ = static_cast<double>(d.coords.size()) / static_cast<double>(d.dims.volume());
        out << "SVOX dims " << dims_string(d.dims) << ", N=" << d.coords.size() << ", occupancy "
            << format_double(occ) << "\n";
        break;
      }
      case FileKind::latent: {
        const LatentFile lf = decode_latent(bytes);
        const LatentPosterior& p = lf.posterior;
        out << "SVLZ dims " << dims_string(p.dims) << ", stride " << p.stride << ", channels " << p.mu.cols()
            << ", N=" << p.coords.size() << "\n";
        const Dims l = lattice_dims(p.dims, p.stride);
        out << "  latent lattice " << dims_string(l) << ", volumetric ratio r: "
            << format_double(static_cast<double>(p.dims.volume()) /
                             (static_cast<double>(l.volume()) * static_cast<double>(p.mu.cols())))
            << "\n";
        break;
      }
      case FileKind::checkpoint: {
        const CheckpointFile ck = decode_checkpoint(bytes);
        std::size_t scalars = 0;
        for (const auto& e : ck.entries) scalars += static_cast<std::size_t>(e.value.size());
        out << "SVCK " << ck.entries.size() << " tensors, " << scalars << " values\n";
        for (const auto& e : ck.entries) {
          out << "  " << e.name << " [";
          for (std::size_t i = 0; i < e.shape.size(); ++i) out << (i ? "," : "") << e.shape[i];
          out << "]\n";
        }
        std::istringstream cfg(ck.config_text);
        for (std::string line; std::getline(cfg, line);) {
          if (!line.empty()) out << "  " << line << "\n";
        }
        break;
      }
      case FileKind::unknown:
        throw FormatError(FormatErrorCode::bad_magic, "unrecognized file: " + f);
    }
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse 3D VAE for vessel masks", args.empty() ? "vsparse" : args.front()};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  CLI::Option* seed_opt = app.add_option("--seed", g.seed, "Master random seed")->default_val(0);
  app.add_option("--config", g.config, "key=value configuration file");
  app.add_option("--out", g.out, "Output directory")->default_val(".");
  app.add_flag("--pad8", g.pad8, "Zero-pad grids up to a multiple of 8");

  GenSynthArgs gen;
  CLI::App* c_gen = app.add_subcommand("gen-synth", "Generate synthetic vessel masks");
  c_gen->add_option("--healthy,--count", gen.healthy, "Healthy trees")->default_val(8);
  c_gen->add_option("--aneurysm", gen.aneurysm, "Trees with an aneurysm")->default_val(0);
  c_gen->add_option("--stenosis", gen.stenosis, "Trees with a stenosis")->default_val(0);
  c_gen->add_option("--dims", gen.dims, "Grid size, N or H,W,D");
  c_gen->add_flag("--loops", gen.loops, "Add a loop-forming bridge to every tree");

  TrainArgs tr;
  CLI::App* c_train = app.add_subcommand("train", "Train the VAE on SVOX masks");
  c_train->add_option("inputs", tr.inputs, "SVOX files or directories")->required();
  c_train->add_option("--steps", tr.steps, "Stop after this many optimizer steps");
  c_train->add_option("--epochs", tr.epochs, "Passes over the data");
  c_train->add_option("--lr", tr.lr, "Learning rate");
  c_train->add_option("--batch-size", tr.batch_size, "Samples per step");
  c_train->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint cadence in steps");
  c_train->add_option("--eval-every", tr.eval_every, "Validation cadence in steps");
  c_train->add_option("--val", tr.val, "Validation mask (defaults to the first input)");
  c_train->add_option("--resume", tr.resume, "Continue from a checkpoint");

  CodecArgs enc;
  CLI::App* c_enc = app.add_subcommand("encode", "Encode an SVOX mask to a latent file");
  c_enc->add_option("input", enc.input, "SVOX file")->required();
  c_enc->add_option("--checkpoint", enc.checkpoint, "Model checkpoint")->required();
  c_enc->add_option("-o,--output", enc.output, "Latent output path");
  c_enc->add_flag("--sample", enc.sample, "Store a sampled z instead of the mean");

  CodecArgs dec;
  CLI::App* c_dec = app.add_subcommand("decode", "Decode a latent file to an SVOX mask");
  c_dec->add_option("input", dec.input, "Latent file")->required();
  c_dec->add_option("--checkpoint", dec.checkpoint, "Model checkpoint")->required();
  c_dec->add_option("-o,--output", dec.output, "SVOX output path");
  c_dec->add_option("--threshold", dec.threshold, "Occupancy threshold")->default_val(0.5);

  CodecArgs rec;
  CLI::App* c_rec = app.add_subcommand("reconstruct", "Encode and decode an SVOX mask");
  c_rec->add_option("input", rec.input, "SVOX file")->required();
  c_rec->add_option("--checkpoint", rec.checkpoint, "Model checkpoint")->required();
  c_rec->add_option("-o,--output", rec.output, "SVOX output path");
  c_rec->add_option("--threshold", rec.threshold, "Occupancy threshold")->default_val(0.5);

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand("eval", "Dice, clDice and Betti errors");
  c_eval->add_option("--pred", ev.pred, "Predicted SVOX file or directory")->required();
  c_eval->add_option("--ref", ev.ref, "Reference SVOX file or directory")->required();

  ClassifyArgs ct;
  CLI::App* c_ct = app.add_subcommand("classify-train", "Cross-validate and fit the latent classifier");
  c_ct->add_option("--manifest,--data", ct.manifest, "Manifest CSV")->required();
  c_ct->add_option("--checkpoint", ct.checkpoint, "Model checkpoint")->required();
  c_ct->add_option("--folds", ct.folds, "Cross-validation folds");
  c_ct->add_option("--epochs", ct.epochs, "MLP epochs");
  c_ct->add_option("--components", ct.components, "PCA components");

  ClassifyArgs ce;
  CLI::App* c_ce = app.add_subcommand("classify-eval", "Apply a saved latent classifier");
  c_ce->add_option("--manifest,--data", ce.manifest, "Manifest CSV")->required();
  c_ce->add_option("--checkpoint", ce.checkpoint, "Model checkpoint")->required();
  c_ce->add_option("--classifier", ce.classifier, "Classifier file")->required();

  std::vector<std::string> files;
  CLI::App* c_info = app.add_subcommand("info", "Describe SVOX, latent or checkpoint files");
  c_info->add_option("files", files, "Files")->required();

  try {
    std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
    std::reverse(rev.begin(), rev.end());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*c_gen) return cmd_gen_synth(g, gen, out);
    if (*c_train) return cmd_train(g, tr, out);
    if (*c_enc) return cmd_encode(g, enc, out);
    if (*c_dec) return cmd_decode(g, dec, out);
    if (*c_rec) return cmd_reconstruct(g, rec, out);
    if (*c_eval) return cmd_eval(g, ev, out);
    if (*c_ct) return cmd_classify_train(g, ct, out);
    if (*c_ce) return cmd_classify_eval(g, ce, out);
    if (*c_info) return cmd_info(files, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) {
  return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace vsparse
