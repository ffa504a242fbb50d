#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vsparse/io_formats.hpp"
#include "vsparse/params.hpp"
#include "vsparse/vae_model.hpp"

namespace vsparse {

/// [mean_c(mu) | max_c(mu) | G^3 occupancy histogram / N]; histogram bin
/// per axis is floor(coord * G / latent extent), flattened x-major.
Eigen::VectorXd latent_descriptor(const LatentPosterior& post, int grid = 6);

struct PCAModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // k x len, orthonormal rows (zero rows past `informative`)
  Eigen::VectorXd eigenvalues;  // descending, length k
  Eigen::VectorXd explained_variance_ratio;
  int informative = 0;

  int k() const { return static_cast<int>(components.rows()); }
};

/// Rows are samples. Uses the M x M Gram matrix when M < len.
PCAModel pca_fit(const Eigen::MatrixXd& data, int k);
Eigen::VectorXd pca_transform(const PCAModel& model, const Eigen::VectorXd& v);
Eigen::MatrixXd pca_transform_rows(const PCAModel& model, const Eigen::MatrixXd& data);

/// Per-feature z-score fitted on a training split; zero-variance features
/// get scale 1.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& data);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& data) const;
};

struct MlpConfig {
  int hidden = 64;
  int epochs = 200;
  double lr = 3e-4;
  double weight_decay = 1e-2;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

struct MLPClassifier {
  ParamStore<double> params;  // fc1/fc2/fc3 .w and .b
  int inputs = 0;
  int classes = 0;
};

MLPClassifier mlp_train(const Eigen::MatrixXd& x, const std::vector<int>& labels, const MlpConfig& cfg);

struct Prediction {
  int label = 0;
  std::vector<double> scores;  // softmax
};

Prediction mlp_predict(const MLPClassifier& clf, const Eigen::VectorXd& x);
std::vector<int> mlp_predict_rows(const MLPClassifier& clf, const Eigen::MatrixXd& x);

struct ClassifierScores {
  double balanced_accuracy = 0.0;
  double macro_f1 = 0.0;
};

ClassifierScores evaluate_classifier(const std::vector<int>& preds, const std::vector<int>& labels);

/// Class-stratified k folds from a seeded shuffle; every index appears in
/// exactly one fold.
std::vector<std::vector<std::size_t>> kfold_split(const std::vector<int>& labels, int folds,
                                                  std::uint64_t seed);

struct PipelineConfig {
  int grid = 6;
  int pca_components = 15;
  int folds = 3;
  MlpConfig mlp;
};

/// Centered PCA of the raw descriptor -> standardize scores -> MLP.
struct LatentClassifier {
  PCAModel pca;
  Standardizer scores;
  MLPClassifier mlp;
  int grid = 6;
};

LatentClassifier fit_pipeline(const Eigen::MatrixXd& descriptors, const std::vector<int>& labels,
                              const PipelineConfig& cfg);
std::vector<int> predict_pipeline(const LatentClassifier& clf, const Eigen::MatrixXd& descriptors);

struct FoldResult {
  int fold = 0;
  ClassifierScores scores;
};

struct ClassificationReport {
  std::vector<FoldResult> folds;
  double mean_balanced_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
};

ClassificationReport cross_validate(const Eigen::MatrixXd& descriptors, const std::vector<int>& labels,
                                    const PipelineConfig& cfg, std::uint64_t split_seed);

/// `fold, balanced_accuracy, macro_f1` rows plus a `mean` row.
std::string format_classification_report(const ClassificationReport& report);

CheckpointFile classifier_to_file(const LatentClassifier& clf);
LatentClassifier classifier_from_file(const CheckpointFile& file);

}  // namespace vsparse
