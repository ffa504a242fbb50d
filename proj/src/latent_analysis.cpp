#include "vsparse/latent_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "vsparse/config_text.hpp"
#include "vsparse/optim_train.hpp"
#include "vsparse/rng.hpp"

namespace vsparse {

Eigen::VectorXd latent_descriptor(const LatentPosterior& post, int grid) {
  const auto n = static_cast<Eigen::Index>(post.coords.size());
  if (n == 0) throw std::invalid_argument("latent_descriptor: empty posterior");
  if (grid < 1) throw std::invalid_argument("latent_descriptor: grid must be >= 1");
  if (post.mu.rows() != n) throw std::invalid_argument("latent_descriptor: mu rows != token count");
  const Eigen::Index c = post.mu.cols();
  const Dims ext = lattice_dims(post.dims, post.stride);
  const std::uint64_t g = static_cast<std::uint64_t>(grid);

  // Canonical token order keeps the floating-point sums order-invariant.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return post.coords[static_cast<std::size_t>(a)] < post.coords[static_cast<std::size_t>(b)];
  });

  Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * c + static_cast<Eigen::Index>(g * g * g));
  for (Eigen::Index k = 0; k < c; ++k) out(c + k) = -std::numeric_limits<double>::infinity();
  for (Eigen::Index r : order) {
    for (Eigen::Index k = 0; k < c; ++k) {
      const double v = post.mu(r, k);
      out(k) += v;
      out(c + k) = std::max(out(c + k), v);
    }
    const Coord& p = post.coords[static_cast<std::size_t>(r)];
    auto bin = [g](std::uint32_t coord, std::uint32_t extent) {
      const std::uint64_t b = extent ? static_cast<std::uint64_t>(coord) * g / extent : 0;
      return std::min<std::uint64_t>(b, g - 1);
    };
    const std::uint64_t idx = (bin(p.x, ext.h) * g + bin(p.y, ext.w)) * g + bin(p.z, ext.d);
    out(2 * c + static_cast<Eigen::Index>(idx)) += 1.0;
  }
  for (Eigen::Index k = 0; k < c; ++k) out(k) /= static_cast<double>(n);
  out.tail(static_cast<Eigen::Index>(g * g * g)) /= static_cast<double>(n);
  return out;
}

PCAModel pca_fit(const Eigen::MatrixXd& data, int k) {
  const Eigen::Index m = data.rows();
  const Eigen::Index len = data.cols();
  if (m < 2) throw std::invalid_argument("pca_fit: needs at least 2 samples");
  if (k < 1 || k > std::min(m, len)) {
    throw std::invalid_argument("pca_fit: k = " + std::to_string(k) + " exceeds min(M, len) = " +
                                std::to_string(std::min(m, len)));
  }
  PCAModel model;
  model.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd x = data.rowwise() - model.mean.transpose();
  const double denom = static_cast<double>(m - 1);

  Eigen::VectorXd evals;
  Eigen::MatrixXd vecs;  // columns are len-dim directions
  const bool gram = m < len;
  if (gram) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((x * x.transpose()) / denom);
    evals = es.eigenvalues().reverse();
    vecs = es.eigenvectors().rowwise().reverse();
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((x.transpose() * x) / denom);
    evals = es.eigenvalues().reverse();
    vecs = es.eigenvectors().rowwise().reverse();
  }
  const double trace = (x.array().square().sum()) / denom;
  const double tol = 1e-12 * std::max(trace, 1e-300);

  model.components = Eigen::MatrixXd::Zero(k, len);
  model.eigenvalues = Eigen::VectorXd::Zero(k);
  model.explained_variance_ratio = Eigen::VectorXd::Zero(k);
  for (int i = 0; i < k; ++i) {
    const double lambda = evals(i);
    if (!(lambda > tol) || trace <= 0.0) break;
    Eigen::VectorXd u = gram ? Eigen::VectorXd(x.transpose() * vecs.col(i)) : Eigen::VectorXd(vecs.col(i));
    u.normalize();
    Eigen::Index arg = 0;
    u.cwiseAbs().maxCoeff(&arg);
    if (u(arg) < 0) u = -u;
    model.components.row(i) = u.transpose();
    model.eigenvalues(i) = lambda;
    model.explained_variance_ratio(i) = lambda / trace;
    model.informative = i + 1;
  }
  return model;
}

Eigen::VectorXd pca_transform(const PCAModel& model, const Eigen::VectorXd& v) {
  if (v.size() != model.mean.size()) throw std::invalid_argument("pca_transform: length mismatch");
  return model.components * (v - model.mean);
}

Eigen::MatrixXd pca_transform_rows(const PCAModel& model, const Eigen::MatrixXd& data) {
  if (data.cols() != model.mean.size()) throw std::invalid_argument("pca_transform: length mismatch");
  return (data.rowwise() - model.mean.transpose()) * model.components.transpose();
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& data) {
  if (data.rows() == 0) throw std::invalid_argument("standardizer: no rows");
  Standardizer s;
  s.mean = data.colwise().mean().transpose();
  s.scale.resize(data.cols());
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const double var = (data.col(j).array() - s.mean(j)).square().mean();
    const double sd = std::sqrt(var);
    s.scale(j) = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& data) const {
  if (data.cols() != mean.size()) throw std::invalid_argument("standardizer: width mismatch");
  Eigen::MatrixXd out = data.rowwise() - mean.transpose();
  out.array().rowwise() /= scale.transpose().array();
  return out;
}

namespace {

ad::Var mlp_forward(ad::Tape<double>& t, BoundParams<double>& p, ad::Var x) {
  ad::Var h = ad::relu(t, ad::add_row(t, ad::matmul(t, x, p("fc1.w")), p("fc1.b")));
  h = ad::relu(t, ad::add_row(t, ad::matmul(t, h, p("fc2.w")), p("fc2.b")));
  return ad::add_row(t, ad::matmul(t, h, p("fc3.w")), p("fc3.b"));
}

Eigen::VectorXd mlp_logits(const MLPClassifier& clf, const Eigen::VectorXd& x) {
  const auto& P = clf.params;
  auto layer = [&](const Eigen::VectorXd& in, const char* n, bool relu) {
    const std::string name(n);
    Eigen::VectorXd out = P.get(name + ".w").transpose() * in + P.get(name + ".b").row(0).transpose();
    if (relu) out = out.cwiseMax(0.0);
    return out;
  };
  return layer(layer(layer(x, "fc1", true), "fc2", true), "fc3", false);
}

}  // namespace

MLPClassifier mlp_train(const Eigen::MatrixXd& x, const std::vector<int>& labels, const MlpConfig& cfg) {
  const Eigen::Index n = x.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("mlp_train: label count mismatch");
  if (n == 0) throw std::invalid_argument("mlp_train: no samples");
  if (cfg.hidden < 1 || cfg.epochs < 0 || cfg.batch_size < 1) throw std::invalid_argument("mlp_train: bad config");
  const std::set<int> present(labels.begin(), labels.end());
  if (*present.begin() < 0) throw std::invalid_argument("mlp_train: negative label");
  if (present.size() < 2) throw std::invalid_argument("mlp_train: training set has a single class");

  MLPClassifier clf;
  clf.inputs = static_cast<int>(x.cols());
  clf.classes = *present.rbegin() + 1;
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x3c9));
  auto add_layer = [&](const std::string& name, int in, int out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    clf.params.add(name + ".w", {static_cast<std::uint32_t>(in), static_cast<std::uint32_t>(out)},
                   uniform_matrix<double>(in, out, bound, rng));
    clf.params.add(name + ".b", {static_cast<std::uint32_t>(out)}, Mat<double>::Zero(1, out));
  };
  add_layer("fc1", clf.inputs, cfg.hidden);
  add_layer("fc2", cfg.hidden, cfg.hidden);
  add_layer("fc3", cfg.hidden, clf.classes);

  AdamWHyper h;
  h.lr = cfg.lr;
  h.weight_decay = cfg.weight_decay;
  OptimState<double> opt = OptimState<double>::zeros_like(clf.params, h);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(static_cast<std::size_t>(n), cfg.seed,
                                                       static_cast<std::uint64_t>(epoch));
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t e = std::min(order.size(), b + batch);
      const auto rows = static_cast<Eigen::Index>(e - b);
      Mat<double> xb(rows, x.cols());
      Mat<double> onehot = Mat<double>::Zero(rows, clf.classes);
      for (std::size_t i = b; i < e; ++i) {
        const auto r = static_cast<Eigen::Index>(i - b);
        xb.row(r) = x.row(static_cast<Eigen::Index>(order[i]));
        onehot(r, labels[order[i]]) = 1.0;
      }
      ad::Tape<double> t;
      BoundParams<double> p(t, clf.params, true);
      ad::Var logp = ad::log_softmax_rows(t, mlp_forward(t, p, t.leaf(std::move(xb))));
      ad::Var loss = ad::scale(t, ad::sum(t, ad::mul(t, logp, t.leaf(std::move(onehot)))),
                               -1.0 / static_cast<double>(rows));
      t.backward(loss);
      const std::vector<Mat<double>> grads = p.gradients();
      adamw_step<double>(clf.params, grads, opt);
    }
  }
  return clf;
}

Prediction mlp_predict(const MLPClassifier& clf, const Eigen::VectorXd& x) {
  if (x.size() != clf.inputs) throw std::invalid_argument("mlp_predict: input width mismatch");
  const Eigen::VectorXd logits = mlp_logits(clf, x);
  Prediction p;
  const double m = logits.maxCoeff();
  const Eigen::VectorXd e = (logits.array() - m).exp();
  const double s = e.sum();
  p.scores.resize(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index i = 0; i < logits.size(); ++i) p.scores[static_cast<std::size_t>(i)] = e(i) / s;
  p.label = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(p.label)) p.label = static_cast<int>(i);
  }
  return p;
}

std::vector<int> mlp_predict_rows(const MLPClassifier& clf, const Eigen::MatrixXd& x) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) out.push_back(mlp_predict(clf, x.row(r).transpose()).label);
  return out;
}

ClassifierScores evaluate_classifier(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw std::invalid_argument("evaluate_classifier: length mismatch");
  if (labels.empty()) throw std::invalid_argument("evaluate_classifier: no samples");
  const std::set<int> classes(labels.begin(), labels.end());
  ClassifierScores s;
  for (int c : classes) {
    std::size_t tp = 0, fn = 0, fp = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c && preds[i] == c) ++tp;
      else if (labels[i] == c) ++fn;
      else if (preds[i] == c) ++fp;
    }
    s.balanced_accuracy += static_cast<double>(tp) / static_cast<double>(tp + fn);
    s.macro_f1 += tp == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  }
  s.balanced_accuracy /= static_cast<double>(classes.size());
  s.macro_f1 /= static_cast<double>(classes.size());
  return s;
}

std::vector<std::vector<std::size_t>> kfold_split(const std::vector<int>& labels, int folds,
                                                  std::uint64_t seed) {
  if (folds < 2 || static_cast<std::size_t>(folds) > labels.size()) {
    throw std::invalid_argument("kfold_split: need 2 <= folds <= sample count");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
  std::size_t next = 0;
  for (auto& [label, members] : by_class) {
    const std::vector<std::size_t> perm =
        epoch_order(members.size(), derive_seed(seed, 0xf01d), static_cast<std::uint64_t>(label));
    for (std::size_t p : perm) {
      out[next % out.size()].push_back(members[p]);
      ++next;
    }
  }
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

LatentClassifier fit_pipeline(const Eigen::MatrixXd& descriptors, const std::vector<int>& labels,
                              const PipelineConfig& cfg) {
  LatentClassifier clf;
  clf.grid = cfg.grid;
  const Eigen::Index k = std::min<Eigen::Index>(cfg.pca_components, std::min(descriptors.rows(), descriptors.cols()));
  clf.pca = pca_fit(descriptors, static_cast<int>(k));
  const Eigen::MatrixXd scores = pca_transform_rows(clf.pca, descriptors);
  clf.scores = Standardizer::fit(scores);
  clf.mlp = mlp_train(clf.scores.apply(scores), labels, cfg.mlp);
  return clf;
}

std::vector<int> predict_pipeline(const LatentClassifier& clf, const Eigen::MatrixXd& descriptors) {
  const Eigen::MatrixXd scores = pca_transform_rows(clf.pca, descriptors);
  return mlp_predict_rows(clf.mlp, clf.scores.apply(scores));
}

ClassificationReport cross_validate(const Eigen::MatrixXd& descriptors, const std::vector<int>& labels,
                                    const PipelineConfig& cfg, std::uint64_t split_seed) {
  if (static_cast<std::size_t>(descriptors.rows()) != labels.size()) {
    throw std::invalid_argument("cross_validate: label count mismatch");
  }
  const auto folds = kfold_split(labels, cfg.folds, split_seed);
  ClassificationReport rep;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    auto take = [&](const std::vector<std::size_t>& idx, Eigen::MatrixXd& x, std::vector<int>& y) {
      x.resize(static_cast<Eigen::Index>(idx.size()), descriptors.cols());
      y.clear();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = descriptors.row(static_cast<Eigen::Index>(idx[i]));
        y.push_back(labels[idx[i]]);
      }
    };
    Eigen::MatrixXd xtr, xte;
    std::vector<int> ytr, yte;
    take(train_idx, xtr, ytr);
    take(folds[f], xte, yte);
    PipelineConfig fold_cfg = cfg;
    fold_cfg.mlp.seed = derive_seed(cfg.mlp.seed, f);
    const LatentClassifier clf = fit_pipeline(xtr, ytr, fold_cfg);
    FoldResult r;
    r.fold = static_cast<int>(f);
    r.scores = evaluate_classifier(predict_pipeline(clf, xte), yte);
    rep.folds.push_back(r);
    rep.mean_balanced_accuracy += r.scores.balanced_accuracy;
    rep.mean_macro_f1 += r.scores.macro_f1;
  }
  rep.mean_balanced_accuracy /= static_cast<double>(rep.folds.size());
  rep.mean_macro_f1 /= static_cast<double>(rep.folds.size());
  return rep;
}

std::string format_classification_report(const ClassificationReport& report) {
  std::string out = "fold, balanced_accuracy, macro_f1\n";
  char buf[128];
  for (const FoldResult& f : report.folds) {
    std::snprintf(buf, sizeof buf, "%d, %.6f, %.6f\n", f.fold, f.scores.balanced_accuracy, f.scores.macro_f1);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "mean, %.6f, %.6f\n", report.mean_balanced_accuracy, report.mean_macro_f1);
  out += buf;
  return out;
}

namespace {

CheckpointEntry vector_entry(const std::string& name, const Eigen::VectorXd& v) {
  CheckpointEntry e;
  e.name = name;
  e.shape = {static_cast<std::uint32_t>(v.size())};
  e.value = v.transpose().cast<float>();
  return e;
}

Eigen::VectorXd entry_vector(const std::map<std::string, const CheckpointEntry*>& m, const std::string& name,
                             Eigen::Index len) {
  auto it = m.find(name);
  if (it == m.end()) throw FormatError(FormatErrorCode::shape_mismatch, "shape mismatch classifier: missing " + name);
  const CheckpointEntry& e = *it->second;
  if (e.shape.size() != 1 || e.shape[0] != len) {
    throw FormatError(FormatErrorCode::shape_mismatch, "shape mismatch classifier: " + name);
  }
  return e.value.row(0).transpose().cast<double>();
}

}  // namespace

CheckpointFile classifier_to_file(const LatentClassifier& clf) {
  CheckpointFile f;
  f.entries.push_back(vector_entry("pca.mean", clf.pca.mean));
  CheckpointEntry comp;
  comp.name = "pca.components";
  comp.shape = {static_cast<std::uint32_t>(clf.pca.components.rows()),
                static_cast<std::uint32_t>(clf.pca.components.cols())};
  comp.value = clf.pca.components.cast<float>();
  f.entries.push_back(std::move(comp));
  f.entries.push_back(vector_entry("pca.eigenvalues", clf.pca.eigenvalues));
  f.entries.push_back(vector_entry("pca.explained", clf.pca.explained_variance_ratio));
  f.entries.push_back(vector_entry("score.mean", clf.scores.mean));
  f.entries.push_back(vector_entry("score.scale", clf.scores.scale));
  for (const auto& e : clf.mlp.params.entries()) {
    f.entries.push_back({"mlp." + e.name, e.shape, e.value.cast<float>()});
  }
  KeyValueText kv;
  kv.set("classifier.grid", clf.grid);
  kv.set("classifier.inputs", clf.mlp.inputs);
  kv.set("classifier.classes", clf.mlp.classes);
  kv.set("classifier.informative", clf.pca.informative);
  f.config_text = kv.to_text();
  return f;
}

LatentClassifier classifier_from_file(const CheckpointFile& file) {
  LatentClassifier clf;
  std::int64_t informative = 0;
  try {
    const KeyValueText kv = KeyValueText::parse(file.config_text);
    clf.grid = static_cast<int>(kv.get_int("classifier.grid").value_or(-1));
    clf.mlp.inputs = static_cast<int>(kv.get_int("classifier.inputs").value_or(-1));
    clf.mlp.classes = static_cast<int>(kv.get_int("classifier.classes").value_or(-1));
    informative = kv.get_int("classifier.informative").value_or(-1);
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorCode::bad_config, std::string("bad config classifier: ") + e.what());
  }
  if (clf.grid < 1 || clf.grid > 64 || clf.mlp.inputs < 1 || clf.mlp.classes < 2 || informative < 0) {
    throw FormatError(FormatErrorCode::bad_config, "bad config classifier: missing or invalid fields");
  }
  std::map<std::string, const CheckpointEntry*> m;
  for (const auto& e : file.entries) m.emplace(e.name, &e);
  auto comp = m.find("pca.components");
  if (comp == m.end() || comp->second->shape.size() != 2) {
    throw FormatError(FormatErrorCode::shape_mismatch, "shape mismatch classifier: pca.components");
  }
  const Eigen::Index k = comp->second->shape[0];
  const Eigen::Index len = comp->second->shape[1];
  if (k != clf.mlp.inputs || informative > k) {
    throw FormatError(FormatErrorCode::shape_mismatch, "shape mismatch classifier: PCA width vs MLP inputs");
  }
  clf.pca.mean = entry_vector(m, "pca.mean", len);
  clf.pca.components = comp->second->value.cast<double>();
  clf.pca.eigenvalues = entry_vector(m, "pca.eigenvalues", k);
  clf.pca.explained_variance_ratio = entry_vector(m, "pca.explained", k);
  clf.pca.informative = static_cast<int>(informative);
  clf.scores.mean = entry_vector(m, "score.mean", k);
  clf.scores.scale = entry_vector(m, "score.scale", k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(clf.scores.scale(i) > 0.0)) throw FormatError(FormatErrorCode::bad_config, "bad config classifier: non-positive scale");
  }
  // Rebuild the MLP layout, then copy stored values in.
  const std::pair<const char*, std::pair<Eigen::Index, Eigen::Index>> layers[] = {
      {"fc1", {k, -1}}, {"fc2", {-1, -1}}, {"fc3", {-1, clf.mlp.classes}}};
  auto w1 = m.find("mlp.fc1.w");
  if (w1 == m.end() || w1->second->shape.size() != 2) {
    throw FormatError(FormatErrorCode::shape_mismatch, "shape mismatch classifier: mlp.fc1.w");
  }
  const Eigen::Index hidden = w1->second->shape[1];
  for (const auto& [name, io] : layers) {
    const Eigen::Index in = io.first < 0 ? hidden : io.first;
    const Eigen::Index out = io.second < 0 ? hidden : io.second;
    const std::string n(name);
    auto w = m.find("mlp." + n + ".w");
    if (w == m.end() || w->second->shape != std::vector<std::uint32_t>{static_cast<std::uint32_t>(in),
                                                                          static_cast<std::uint32_t>(out)}) {
      throw FormatError(FormatErrorCode::shape_mismatch, "shape mismatch classifier: mlp." + n + ".w");
    }
    clf.mlp.params.add(n + ".w", w->second->shape, w->second->value.cast<double>());
    clf.mlp.params.add(n + ".b", {static_cast<std::uint32_t>(out)},
                       entry_vector(m, "mlp." + n + ".b", out).transpose());
  }
  return clf;
}

}  // namespace vsparse
