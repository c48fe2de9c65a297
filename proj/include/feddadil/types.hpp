#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace feddadil {

// Dense row-major storage is the interchange format between every module.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible matrix shapes, dimensions or counts.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid numeric input (non-finite entries, off-simplex weights, bad rates).
class DomainError : public Error {
 public:
  using Error::Error;
};

// User-facing configuration problems; the CLI maps these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

template <typename E = ShapeError, typename... Args>
void require(bool condition, Args&&... args) {
  if (!condition) throw E(concat(std::forward<Args>(args)...));
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace detail

/// True when every row of `rows` is a probability vector up to `tol`.
inline bool rows_on_simplex(const Matrix& rows, double tol) {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    if ((rows.row(i).array() < -tol).any()) return false;
    if (std::abs(rows.row(i).sum() - 1.0) > tol) return false;
  }
  return true;
}

/// Uniform-weight empirical distribution: n support points in R^d with
/// optional soft labels on the n_c-simplex. Every point carries mass 1/n.
class LabeledMeasure {
 public:
  static constexpr double kSimplexTolerance = 1e-9;

  // Skips the label-simplex check. Used for affine combinations of supports
  // and for payloads decoded from 32-bit floats.
  struct Unchecked {};

  explicit LabeledMeasure(Matrix features) : features_(std::move(features)) {
    check_shapes();
  }

  LabeledMeasure(Matrix features, Matrix labels)
      : features_(std::move(features)), labels_(std::move(labels)) {
    check_shapes();
    detail::require<DomainError>(rows_on_simplex(*labels_, kSimplexTolerance),
                                 "label rows must lie on the probability simplex");
  }

  LabeledMeasure(Matrix features, std::optional<Matrix> labels, Unchecked)
      : features_(std::move(features)), labels_(std::move(labels)) {
    check_shapes();
  }

  const Matrix& features() const { return features_; }
  bool has_labels() const { return labels_.has_value(); }
  const Matrix& labels() const {
    detail::require<DomainError>(labels_.has_value(), "measure carries no labels");
    return *labels_;
  }
  const std::optional<Matrix>& maybe_labels() const { return labels_; }

  std::size_t size() const { return static_cast<std::size_t>(features_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }
  std::size_t num_classes() const {
    return labels_ ? static_cast<std::size_t>(labels_->cols()) : 0;
  }

  /// Same measure without label access (the unlabeled view of a domain).
  LabeledMeasure without_labels() const { return LabeledMeasure(features_); }

  /// Rows selected by `indices`, in that order.
  LabeledMeasure subset(const std::vector<std::size_t>& indices) const {
    Matrix f(static_cast<Eigen::Index>(indices.size()), features_.cols());
    std::optional<Matrix> l;
    if (labels_) l = Matrix(f.rows(), labels_->cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      detail::require(indices[r] < size(), "subset index out of range");
      const auto src = static_cast<Eigen::Index>(indices[r]);
      f.row(static_cast<Eigen::Index>(r)) = features_.row(src);
      if (l) l->row(static_cast<Eigen::Index>(r)) = labels_->row(src);
    }
    return LabeledMeasure(std::move(f), std::move(l), Unchecked{});
  }

 private:
  void check_shapes() const {
    detail::require(features_.rows() >= 1, "measure needs at least one sample");
    detail::require(features_.cols() >= 1, "measure needs feature dimension >= 1");
    detail::require<DomainError>(features_.allFinite(), "non-finite feature entry");
    if (labels_) {
      detail::require(labels_->rows() == features_.rows(), "features have ",
                      features_.rows(), " rows but labels have ", labels_->rows());
      detail::require(labels_->cols() >= 1, "labels need at least one class");
      detail::require<DomainError>(labels_->allFinite(), "non-finite label entry");
    }
  }

  Matrix features_;
  std::optional<Matrix> labels_;
};

/// One-hot rows for integer class indices.
inline Matrix one_hot(const std::vector<std::size_t>& classes, std::size_t num_classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(classes.size()),
                          static_cast<Eigen::Index>(num_classes));
  for (std::size_t i = 0; i < classes.size(); ++i) {
    detail::require<DomainError>(classes[i] < num_classes, "class index ", classes[i],
                                 " out of range for ", num_classes, " classes");
    y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(classes[i])) = 1.0;
  }
  return y;
}

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(const Eigen::Ref<const RowVector>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c) {
    if (row(c) > row(best)) best = c;
  }
  return static_cast<std::size_t>(best);
}

}  // namespace feddadil
