#pragma once

// Free-support Wasserstein barycenters of labeled atoms.

#include <span>

#include "feddadil/ot.hpp"
#include "feddadil/random.hpp"

namespace feddadil {

/// Point on the K-simplex. Kept on the simplex by construction.
class BarycentricCoordinates {
 public:
  static constexpr double kTolerance = 1e-9;

  explicit BarycentricCoordinates(Vector weights) : weights_(std::move(weights)) {
    detail::require(weights_.size() >= 1, "barycentric coordinates need K >= 1");
    detail::require<DomainError>(weights_.allFinite() && (weights_.array() >= -kTolerance).all() &&
                                     std::abs(weights_.sum() - 1.0) <= kTolerance,
                                 "barycentric coordinates must lie on the simplex");
  }

  static BarycentricCoordinates uniform(std::size_t k) {
    return BarycentricCoordinates(Vector::Constant(static_cast<Eigen::Index>(k),
                                                   1.0 / static_cast<double>(k)));
  }
  static BarycentricCoordinates vertex(std::size_t k, std::size_t index) {
    Vector w = Vector::Zero(static_cast<Eigen::Index>(k));
    w(static_cast<Eigen::Index>(index)) = 1.0;
    return BarycentricCoordinates(std::move(w));
  }
  /// Simplex projection of an arbitrary vector.
  static BarycentricCoordinates projected(const Vector& v) {
    return BarycentricCoordinates(simplex_project(v));
  }

  const Vector& weights() const { return weights_; }
  std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }
  double operator[](std::size_t k) const { return weights_(static_cast<Eigen::Index>(k)); }

 private:
  Vector weights_;
};

struct BarycenterConfig {
  std::size_t support_size = 0;  // 0: use the atoms' size
  double beta = 1.0;
  std::size_t max_iter = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

struct BarycenterResult {
  LabeledMeasure support;
  std::vector<TransportPlan> plans;     // barycenter -> atom k
  std::vector<double> objective_trace;  // sum_k alpha_k <C_k, plan_k> per iteration
};

namespace detail {

inline void check_atoms(std::span<const LabeledMeasure> atoms) {
  require(!atoms.empty(), "barycenter needs at least one atom");
  for (const auto& a : atoms) {
    require<DomainError>(a.has_labels(), "atoms must carry labels");
    require(a.dim() == atoms[0].dim() && a.num_classes() == atoms[0].num_classes(),
            "atoms disagree on feature or label dimension");
  }
}

inline LabeledMeasure random_support(std::size_t n, std::size_t d, std::size_t nc,
                                     std::uint64_t seed) {
  Rng rng = substream(seed, "barycenter-init");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  Matrix y = Matrix::Constant(x.rows(), static_cast<Eigen::Index>(nc),
                              1.0 / static_cast<double>(nc));
  return LabeledMeasure(std::move(x), std::move(y));
}

// Support implied by the plans: n_B * sum_k alpha_k plan_k [Z_k | Y_k].
inline LabeledMeasure combine_support(std::span<const LabeledMeasure> atoms,
                                      const BarycentricCoordinates& alpha,
                                      const std::vector<TransportPlan>& plans) {
  const auto nb = static_cast<Eigen::Index>(plans.front().rows());
  Matrix x = Matrix::Zero(nb, static_cast<Eigen::Index>(atoms[0].dim()));
  Matrix y = Matrix::Zero(nb, static_cast<Eigen::Index>(atoms[0].num_classes()));
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    if (alpha[k] == 0.0) continue;
    const double w = alpha[k] * static_cast<double>(nb);
    x.noalias() += w * plans[k].entries() * atoms[k].features();
    y.noalias() += w * plans[k].entries() * atoms[k].labels();
  }
  for (Eigen::Index i = 0; i < nb; ++i) {
    y.row(i) = simplex_project(y.row(i).transpose()).transpose();
  }
  return LabeledMeasure(std::move(x), std::move(y), LabeledMeasure::Unchecked{});
}

}  // namespace detail

/// Fixed-point iteration: solve label-aware OT from the current support to
/// every atom, then move the support to the alpha-weighted barycentric
/// projections. `init` optionally warm-starts the support.
inline BarycenterResult free_support_barycenter(std::span<const LabeledMeasure> atoms,
                                                const BarycentricCoordinates& alpha,
                                                const BarycenterConfig& config,
                                                const LabeledMeasure* init = nullptr) {
  detail::check_atoms(atoms);
  detail::require(alpha.size() == atoms.size(), "alpha has ", alpha.size(), " entries for ",
                  atoms.size(), " atoms");
  detail::require<DomainError>(config.beta > 0.0, "beta must be positive");
  detail::require<DomainError>(config.max_iter >= 1, "max_iter must be positive");
  const std::size_t nb = config.support_size ? config.support_size : atoms[0].size();

  LabeledMeasure support = (init && init->size() == nb && init->has_labels())
                               ? *init
                               : detail::random_support(nb, atoms[0].dim(),
                                                        atoms[0].num_classes(), config.seed);
  detail::require(support.dim() == atoms[0].dim() &&
                      support.num_classes() == atoms[0].num_classes(),
                  "warm start does not match atom dimensions");

  std::vector<TransportPlan> plans;
  std::vector<double> trace;
  for (std::size_t it = 0; it < config.max_iter; ++it) {
    plans.clear();
    double objective = 0.0;
    for (std::size_t k = 0; k < atoms.size(); ++k) {
      const CostMatrix c = label_aware_cost(support, atoms[k], config.beta);
      plans.push_back(solve_exact_ot(c));
      objective += alpha[k] * transport_cost(c, plans.back());
    }
    trace.push_back(objective);
    support = detail::combine_support(atoms, alpha, plans);
    if (trace.size() >= 2) {
      const double prev = trace[trace.size() - 2];
      if (std::abs(prev - objective) <= config.tol * std::abs(prev)) break;
    }
  }
  return {std::move(support), std::move(plans), std::move(trace)};
}

/// Squared 2-Wasserstein distance (label-blind) between two point clouds.
inline double wasserstein2_squared(const LabeledMeasure& p, const LabeledMeasure& q) {
  const CostMatrix c = feature_cost(p, q);
  return transport_cost(c, solve_exact_ot(c));
}

}  // namespace feddadil
