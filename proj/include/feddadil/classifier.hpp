#pragma once

#include "feddadil/random.hpp"
#include "feddadil/types.hpp"

namespace feddadil {

/// Single-layer softmax classifier on feature vectors.
struct LinearClassifier {
  Matrix weights;  // n_c x d
  Vector bias;     // n_c

  static LinearClassifier zeros(std::size_t num_classes, std::size_t dim) {
    return {Matrix::Zero(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(dim)),
            Vector::Zero(static_cast<Eigen::Index>(num_classes))};
  }

  std::size_t num_classes() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }

  /// Row-wise class probabilities for the rows of `x`.
  Matrix predict_proba(const Matrix& x) const {
    detail::require(static_cast<std::size_t>(x.cols()) == dim(), "classifier expects d=", dim(),
                    ", got ", x.cols());
    Matrix logits = (x * weights.transpose()).rowwise() + bias.transpose();
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const double top = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - top).exp();
      logits.row(i) /= logits.row(i).sum();
    }
    return logits;
  }

  friend bool operator==(const LinearClassifier& a, const LinearClassifier& b) {
    return a.weights == b.weights && a.bias == b.bias;
  }
};

using SoftmaxClassifier = LinearClassifier;

/// Mean soft-target cross-entropy -1/n sum_i sum_c y_ic log p_ic.
inline double cross_entropy(const LinearClassifier& clf, const Matrix& x, const Matrix& y) {
  const Matrix p = clf.predict_proba(x);
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      if (y(i, c) > 0.0) total -= y(i, c) * std::log(std::max(p(i, c), 1e-300));
    }
  }
  return total / static_cast<double>(y.rows());
}

struct SgdConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 0;  // 0: full batch
  double eta = 0.1;
};

/// Mini-batch gradient descent on the soft-target cross-entropy, in place.
inline void train_softmax(LinearClassifier& clf, const Matrix& x, const Matrix& y,
                          const SgdConfig& config, Rng& rng) {
  detail::require(x.rows() == y.rows() && x.rows() >= 1, "training data is empty or ragged");
  detail::require(static_cast<std::size_t>(y.cols()) == clf.num_classes(),
                  "label width does not match the classifier");
  const auto n = static_cast<std::size_t>(x.rows());
  const std::size_t bs = config.batch_size == 0 ? n : std::min(config.batch_size, n);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    std::vector<std::size_t> order;
    if (bs < n) {
      order = shuffled_indices(n, rng);
    } else {
      order.resize(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
    }
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t stop = std::min(n, start + bs);
      const auto m = static_cast<Eigen::Index>(stop - start);
      Matrix xb(m, x.cols());
      Matrix yb(m, y.cols());
      for (Eigen::Index r = 0; r < m; ++r) {
        xb.row(r) = x.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(r)]));
        yb.row(r) = y.row(static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(r)]));
      }
      const Matrix residual = (clf.predict_proba(xb) - yb) / static_cast<double>(m);
      clf.weights.noalias() -= config.eta * residual.transpose() * xb;
      clf.bias.noalias() -= config.eta * residual.colwise().sum().transpose();
    }
  }
}

}  // namespace feddadil
