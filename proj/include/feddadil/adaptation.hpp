#pragma once

// Target-domain classifiers built from a learned dictionary: reconstruction
// (train on the labeled barycenter) and ensembling (alpha-weighted mixture of
// per-atom classifiers), plus barycenter-based dataset summaries.

#include "feddadil/classifier.hpp"
#include "feddadil/dictionary.hpp"

namespace feddadil {

/// Labeled surrogate of the target: support and soft labels of B(alpha_N; P).
inline LabeledMeasure reconstruct_target(const Dictionary& dict,
                                         const BarycentricCoordinates& alpha_target,
                                         std::size_t support_size,
                                         const BarycenterConfig& config) {
  detail::require(alpha_target.size() == dict.num_atoms(), "alpha has ", alpha_target.size(),
                  " entries for K=", dict.num_atoms());
  BarycenterConfig c = config;
  c.support_size = support_size ? support_size : dict.support_size();
  return free_support_barycenter(dict.atoms(), alpha_target, c).support;
}

struct ErmConfig {
  std::size_t epochs = 200;
  double eta = 0.1;
  std::size_t batch_size = 0;  // 0: full batch
  bool hard_labels = false;    // train on argmax of soft labels
  std::uint64_t seed = 0;
};

inline SoftmaxClassifier train_erm(const LabeledMeasure& data, const ErmConfig& config,
                                   std::vector<double>* epoch_losses = nullptr) {
  detail::require<DomainError>(data.has_labels(), "ERM needs labeled data");
  Matrix y = data.labels();
  if (config.hard_labels) {
    std::vector<std::size_t> cls(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) cls[i] = argmax(y.row(static_cast<Eigen::Index>(i)));
    y = one_hot(cls, data.num_classes());
  }
  SoftmaxClassifier clf = SoftmaxClassifier::zeros(data.num_classes(), data.dim());
  Rng rng = substream(config.seed, "erm");
  const SgdConfig one_epoch{1, config.batch_size, config.eta};
  for (std::size_t e = 0; e < config.epochs; ++e) {
    train_softmax(clf, data.features(), y, one_epoch, rng);
    if (epoch_losses) epoch_losses->push_back(cross_entropy(clf, data.features(), y));
  }
  return clf;
}

/// alpha-weighted mixture of per-atom classifiers.
struct Ensemble {
  std::vector<SoftmaxClassifier> members;
  BarycentricCoordinates alpha;

  Matrix predict_proba(const Matrix& x) const {
    detail::require(members.size() == alpha.size(), "ensemble has ", members.size(),
                    " members but ", alpha.size(), " weights");
    Matrix out = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(members.front().num_classes()));
    for (std::size_t k = 0; k < members.size(); ++k) out += alpha[k] * members[k].predict_proba(x);
    return out;
  }
};

inline Ensemble train_ensemble(const Dictionary& dict, const BarycentricCoordinates& alpha_target,
                               const ErmConfig& config) {
  Ensemble ens{{}, alpha_target};
  for (std::size_t k = 0; k < dict.num_atoms(); ++k) {
    ErmConfig c = config;
    c.seed = detail::splitmix64(config.seed + k);
    ens.members.push_back(train_erm(dict.atom(k), c));
  }
  return ens;
}

inline RowVector ensemble_predict(const Ensemble& ens, const RowVector& z) {
  return ens.predict_proba(Matrix(z)).row(0);
}

/// Mean Shannon entropy (nats) of the label rows.
inline double mean_label_entropy(const LabeledMeasure& m) {
  const Matrix& y = m.labels();
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      if (y(i, c) > 0.0) total -= y(i, c) * std::log(y(i, c));
    }
  }
  return total / static_cast<double>(y.rows());
}

/// Barycenter summary of the target with spc points per class.
inline LabeledMeasure distill(const Dictionary& dict, const BarycentricCoordinates& alpha_target,
                              std::size_t spc, const BarycenterConfig& config) {
  detail::require<ConfigError>(spc >= 1, "samples per class must be positive");
  return reconstruct_target(dict, alpha_target, spc * dict.num_classes(), config);
}

/// Fraction of rows whose argmax prediction matches the argmax label; ties
/// go to the lowest class index.
inline double accuracy_from_proba(const Matrix& proba, const Matrix& labels) {
  detail::require(proba.rows() == labels.rows() && proba.cols() == labels.cols(),
                  "prediction and label shapes differ");
  detail::require<DomainError>(labels.rows() >= 1, "empty test set");
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    if (argmax(proba.row(i)) == argmax(labels.row(i))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.rows());
}

template <typename Model>
  requires requires(const Model& m, const Matrix& x) {
    { m.predict_proba(x) } -> std::convertible_to<Matrix>;
  }
double evaluate_accuracy(const Model& model, const LabeledMeasure& test) {
  detail::require<DomainError>(test.has_labels(), "accuracy needs labeled test data");
  return accuracy_from_proba(model.predict_proba(test.features()), test.labels());
}

}  // namespace feddadil
