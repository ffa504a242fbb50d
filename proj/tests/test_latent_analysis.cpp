#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "vsparse/latent_analysis.hpp"

using namespace vsparse;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

LatentPosterior random_posterior(std::mt19937_64& rng, std::size_t n, int c, Dims dims) {
  const Dims ext = lattice_dims(dims, 8);
  std::uniform_int_distribution<std::uint32_t> ux(0, ext.h - 1), uy(0, ext.w - 1), uz(0, ext.d - 1);
  std::set<Coord> s;
  while (s.size() < n) s.insert({ux(rng), uy(rng), uz(rng)});
  LatentPosterior p;
  p.coords.assign(s.begin(), s.end());
  p.dims = dims;
  p.mu = Matrix::Random(static_cast<Eigen::Index>(n), c);
  p.logvar = Matrix::Zero(static_cast<Eigen::Index>(n), c);
  return p;
}

/// Eigen-free cyclic Jacobi eigensolver for symmetric matrices; returns
/// eigenvalues in descending order.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

}  // namespace

TEST_CASE("descriptor of simple posteriors") {
  LatentPosterior one;
  one.dims = {64, 64, 64};
  one.coords = {{7, 0, 3}};
  one.mu.resize(1, 2);
  one.mu << 0.5f, -2.0f;
  one.logvar = Matrix::Zero(1, 2);
  const VectorXd d = latent_descriptor(one);
  REQUIRE(d.size() == 4 + 216);
  CHECK(d(0) == 0.5);
  CHECK(d(1) == -2.0);
  CHECK(d(2) == 0.5);
  CHECK(d(3) == -2.0);
  // bins: 7*6/8 = 5, 0, 3*6/8 = 2
  CHECK(d(4 + (5 * 6 + 0) * 6 + 2) == 1.0);
  CHECK(d.tail(216).sum() == 1.0);

  LatentPosterior two = one;
  two.coords = {{0, 0, 0}, {7, 7, 7}};
  two.mu.resize(2, 2);
  two.mu << 1.0f, 2.0f, 1.0f, 2.0f;
  two.logvar = Matrix::Zero(2, 2);
  const VectorXd e = latent_descriptor(two);
  CHECK(e(0) == 1.0);
  CHECK(e(1) == 2.0);
  CHECK(e(2) == 1.0);
  CHECK(e(3) == 2.0);
  CHECK(e(4) == 0.5);
  CHECK(e(4 + 215) == 0.5);

  LatentPosterior empty = one;
  empty.coords.clear();
  empty.mu.resize(0, 2);
  CHECK_THROWS(latent_descriptor(empty));
}

TEST_CASE("descriptor matches recomputation and ignores token order") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Dims dims{64, 48, 80};
    const LatentPosterior p = random_posterior(rng, 1 + rng() % 40, 3, dims);
    const int g = 1 + static_cast<int>(trial % 6);
    const VectorXd d = latent_descriptor(p, g);
    const Eigen::Index n = p.mu.rows();
    VectorXd expect = VectorXd::Zero(6 + g * g * g);
    for (int k = 0; k < 3; ++k) {
      expect(k) = p.mu.col(k).cast<double>().mean();
      expect(3 + k) = p.mu.col(k).cast<double>().maxCoeff();
    }
    const std::uint32_t ext[3] = {8, 6, 10};
    for (const Coord& c : p.coords) {
      const std::uint32_t v[3] = {c.x, c.y, c.z};
      int b[3];
      for (int a = 0; a < 3; ++a) b[a] = static_cast<int>(v[a] * static_cast<std::uint32_t>(g) / ext[a]);
      expect(6 + (b[0] * g + b[1]) * g + b[2]) += 1.0 / static_cast<double>(n);
    }
    CHECK((d - expect).cwiseAbs().maxCoeff() <= 1e-12);

    std::vector<std::size_t> perm(p.coords.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    LatentPosterior q = p;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      q.coords[i] = p.coords[perm[i]];
      q.mu.row(static_cast<Eigen::Index>(i)) = p.mu.row(static_cast<Eigen::Index>(perm[i]));
    }
    CHECK(latent_descriptor(q, g) == d);
  }
}

TEST_CASE("PCA on rank-one data") {
  MatrixXd data(4, 3);
  data << 1, 0, 0, -1, 0, 0, 2, 0, 0, -2, 0, 0;
  const PCAModel m = pca_fit(data, 2);
  CHECK(m.components(0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(m.components(0, 1)) < 1e-12);
  CHECK(m.explained_variance_ratio(0) == doctest::Approx(1.0));
  CHECK(m.informative == 1);
  CHECK(m.components.row(1).norm() == 0.0);
  CHECK(pca_transform(m, m.mean).norm() < 1e-12);
  CHECK_THROWS(pca_fit(data, 4));
  CHECK_THROWS(pca_fit(data.topRows(1), 1));

  MatrixXd flipped = -data;
  const PCAModel f = pca_fit(flipped, 1);
  CHECK(f.components(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("PCA matches a Jacobi eigensolver") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const int rows = trial < 3 ? 20 : 6, cols = 10;
    MatrixXd data(rows, cols);
    for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = n(rng) * (1.0 + (i % cols));
    const int k = std::min(rows, cols) - (trial < 3 ? 0 : 1);
    const PCAModel m = pca_fit(data, k);

    const VectorXd mean = data.colwise().mean();
    std::vector<std::vector<double>> cov(cols, std::vector<double>(cols, 0.0));
    for (int r = 0; r < rows; ++r)
      for (int i = 0; i < cols; ++i)
        for (int j = 0; j < cols; ++j) cov[i][j] += (data(r, i) - mean(i)) * (data(r, j) - mean(j)) / (rows - 1);
    const auto ev = jacobi_eigenvalues(cov);
    for (int i = 0; i < m.informative; ++i) CHECK(m.eigenvalues(i) == doctest::Approx(ev[i]).epsilon(1e-8));

    const MatrixXd gram = m.components * m.components.transpose();
    for (int i = 0; i < m.informative; ++i)
      for (int j = 0; j < m.informative; ++j) CHECK(std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)) <= 1e-6);
    for (int i = 1; i < m.k(); ++i) CHECK(m.explained_variance_ratio(i) <= m.explained_variance_ratio(i - 1) + 1e-15);
    for (int i = 0; i < m.informative; ++i) {
      Eigen::Index arg;
      m.components.row(i).cwiseAbs().maxCoeff(&arg);
      CHECK(m.components(i, arg) > 0.0);
    }
    if (rows >= cols) {
      const MatrixXd scores = pca_transform_rows(m, data);
      const MatrixXd recon = (scores * m.components).rowwise() + m.mean.transpose();
      CHECK((recon - data).cwiseAbs().maxCoeff() <= 1e-6);
    }
  }
}

TEST_CASE("classifier metrics against a confusion-matrix oracle") {
  CHECK(evaluate_classifier({0, 1, 1, 0}, {0, 1, 1, 0}).balanced_accuracy == 1.0);
  CHECK(evaluate_classifier({0, 1, 1, 0}, {0, 1, 1, 0}).macro_f1 == 1.0);
  CHECK(evaluate_classifier({0, 0, 0, 0}, {0, 1, 0, 1}).balanced_accuracy == 0.5);
  CHECK_THROWS(evaluate_classifier({0, 1}, {0}));

  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 30; ++trial) {
    const int classes = 2 + trial % 3;
    std::vector<int> y, p;
    for (int i = 0; i < 40; ++i) {
      y.push_back(static_cast<int>(rng() % classes));
      p.push_back(static_cast<int>(rng() % (classes + (trial % 2))));
    }
    const int c = classes + 1;
    std::vector<std::vector<int>> conf(c, std::vector<int>(c, 0));
    for (std::size_t i = 0; i < y.size(); ++i) ++conf[y[i]][p[i]];
    double rec = 0.0, f1 = 0.0;
    int present = 0;
    for (int k = 0; k < c; ++k) {
      int tp = conf[k][k], fn = 0, fp = 0;
      for (int j = 0; j < c; ++j) {
        if (j != k) fn += conf[k][j], fp += conf[j][k];
      }
      if (tp + fn == 0) continue;
      ++present;
      rec += static_cast<double>(tp) / (tp + fn);
      f1 += tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
    }
    const ClassifierScores s = evaluate_classifier(p, y);
    CHECK(s.balanced_accuracy == doctest::Approx(rec / present).epsilon(1e-12));
    CHECK(s.macro_f1 == doctest::Approx(f1 / present).epsilon(1e-12));
    CHECK(s.balanced_accuracy >= 0.0);
    CHECK(s.macro_f1 <= 1.0);
  }
}

TEST_CASE("stratified k-fold split") {
  std::vector<int> labels;
  for (int i = 0; i < 31; ++i) labels.push_back(i % 3 == 0 ? 1 : 0);
  const auto folds = kfold_split(labels, 3, 7);
  REQUIRE(folds.size() == 3);
  std::vector<int> seen(labels.size(), 0);
  for (const auto& f : folds) {
    int ones = 0;
    for (std::size_t i : f) {
      ++seen[i];
      ones += labels[i];
    }
    CHECK(ones >= 3);
    CHECK(ones <= 4);
  }
  for (int s : seen) CHECK(s == 1);
  CHECK(kfold_split(labels, 3, 7) == folds);
  CHECK_THROWS(kfold_split(labels, 1, 7));
}

TEST_CASE("MLP fits a separable set and is deterministic") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.3);
  MatrixXd x(40, 5);
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    const int label = i % 2;
    y.push_back(label);
    for (int j = 0; j < 5; ++j) x(i, j) = n(rng) + (label ? 1.0 : -1.0) * (j == 0 ? 1.5 : 0.0);
  }
  MlpConfig cfg;
  cfg.seed = 3;
  const MLPClassifier clf = mlp_train(x, y, cfg);
  CHECK(clf.inputs == 5);
  CHECK(clf.classes == 2);
  CHECK(mlp_predict_rows(clf, x) == y);
  const Prediction p = mlp_predict(clf, x.row(1).transpose());
  CHECK(p.scores.size() == 2);
  CHECK(p.scores[0] + p.scores[1] == doctest::Approx(1.0));
  CHECK(mlp_train(x, y, cfg).params == clf.params);
  cfg.seed = 4;
  CHECK_FALSE(mlp_train(x, y, cfg).params == clf.params);
  CHECK_THROWS(mlp_train(x, std::vector<int>(40, 1), cfg));
}

TEST_CASE("pipeline, cross-validation and classifier files") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd x(30, 24);
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) {
    y.push_back(i % 2);
    for (int j = 0; j < 24; ++j) x(i, j) = n(rng) + (j < 3 && y.back() ? 3.0 : 0.0);
  }
  PipelineConfig cfg;
  cfg.pca_components = 5;
  cfg.mlp.seed = 1;
  const LatentClassifier clf = fit_pipeline(x, y, cfg);
  const auto preds = predict_pipeline(clf, x);
  CHECK(evaluate_classifier(preds, y).balanced_accuracy >= 0.9);

  const ClassificationReport rep = cross_validate(x, y, cfg, 11);
  REQUIRE(rep.folds.size() == 3);
  double mean = 0.0;
  for (const auto& f : rep.folds) mean += f.scores.balanced_accuracy / 3.0;
  CHECK(rep.mean_balanced_accuracy == doctest::Approx(mean));
  CHECK(rep.mean_balanced_accuracy >= 0.8);
  const std::string text = format_classification_report(rep);
  CHECK(text.rfind("fold, balanced_accuracy, macro_f1\n", 0) == 0);
  CHECK(text.find("\nmean, ") != std::string::npos);

  const CheckpointFile file = classifier_to_file(clf);
  const LatentClassifier back = classifier_from_file(decode_checkpoint(encode_checkpoint(file)));
  CHECK(predict_pipeline(back, x) == preds);
  CHECK(back.grid == clf.grid);
  CHECK(back.pca.k() == clf.pca.k());
}
