#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's solvers.

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "feddadil/types.hpp"

namespace oracle {

using feddadil::Matrix;
using feddadil::Vector;

/// min over permutations sigma of (1/n) sum_i C(i, sigma(i)).
inline double assignment_brute_force(const Matrix& c) {
  const auto n = c.rows();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) total += c(i, perm[static_cast<std::size_t>(i)]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

/// Optimal uniform-marginal transport cost for a rectangular C: each row is
/// split into m/g unit atoms and each column into n/g, and the resulting
/// assignment problem is solved by enumeration.
inline double transport_brute_force(const Matrix& c) {
  const auto n = c.rows();
  const auto m = c.cols();
  const auto g = std::gcd(n, m);
  const auto rc = m / g;
  const auto cc = n / g;
  const auto size = n * rc;
  Matrix expanded(size, size);
  for (Eigen::Index i = 0; i < size; ++i) {
    for (Eigen::Index j = 0; j < size; ++j) expanded(i, j) = c(i / rc, j / cc);
  }
  return assignment_brute_force(expanded);
}

/// True when the residual graph of `plan` has a negative cycle, i.e. when
/// the plan is not optimal. Forward arcs i->j always exist with cost C_ij;
/// backward arcs j->i exist with cost -C_ij where plan_ij > 0.
inline bool has_negative_cycle(const Matrix& c, const Matrix& plan, double tol = 1e-9) {
  const auto n = c.rows();
  const auto m = c.cols();
  const auto v = static_cast<std::size_t>(n + m);
  std::vector<double> dist(v, 0.0);
  for (std::size_t pass = 0; pass <= v; ++pass) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto a = static_cast<std::size_t>(i);
        const auto b = static_cast<std::size_t>(n + j);
        if (dist[a] + c(i, j) < dist[b] - tol) {
          dist[b] = dist[a] + c(i, j);
          changed = true;
        }
        if (plan(i, j) > 0.0 && dist[b] - c(i, j) < dist[a] - tol) {
          dist[a] = dist[b] - c(i, j);
          changed = true;
        }
      }
    }
    if (!changed) return false;
  }
  return true;
}

/// Number of edges in the support graph and whether it is a forest.
inline bool support_is_forest(const Matrix& plan, double tol = 0.0) {
  const auto n = plan.rows();
  const auto m = plan.cols();
  std::vector<Eigen::Index> parent(static_cast<std::size_t>(n + m));
  std::iota(parent.begin(), parent.end(), Eigen::Index{0});
  auto find = [&](Eigen::Index x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
    return x;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (plan(i, j) <= tol) continue;
      const auto a = find(i);
      const auto b = find(n + j);
      if (a == b) return false;
      parent[static_cast<std::size_t>(a)] = b;
    }
  }
  return true;
}

/// Euclidean projection onto the simplex by KKT enumeration: the active set
/// S must satisfy v_i > tau on S and v_i <= tau off S with
/// tau = (sum_S v - 1) / |S|.
inline Vector simplex_kkt(const Vector& v) {
  const auto k = static_cast<unsigned>(v.size());
  for (unsigned mask = 1; mask < (1u << k); ++mask) {
    double sum = 0.0;
    int count = 0;
    for (unsigned i = 0; i < k; ++i) {
      if (mask & (1u << i)) {
        sum += v(i);
        ++count;
      }
    }
    const double tau = (sum - 1.0) / count;
    bool ok = true;
    for (unsigned i = 0; i < k && ok; ++i) {
      const bool in = mask & (1u << i);
      ok = in ? v(i) > tau : v(i) <= tau;
    }
    if (ok) return (v.array() - tau).max(0.0).matrix();
  }
  return Vector();
}

/// Pairwise squared distances by explicit loops.
inline Matrix sq_dist(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
      out(i, j) = s;
    }
  }
  return out;
}

/// Reconstruction loss with the barycenter support rebuilt from frozen plans,
///   x_B = n_B sum_k alpha_k P_k Z_k  (labels likewise),
/// then sum_ij pi_ij (|x_B,i - x_j|^2 + beta |y_B,i - y_j|^2), all by loops.
struct FrozenLoss {
  std::vector<Matrix> plans;  // barycenter -> atom k
  Matrix data_plan;           // barycenter -> data
  bool labeled = false;

  double operator()(const std::vector<Matrix>& z, const std::vector<Matrix>& y, const Vector& alpha,
                    const Matrix& x, const Matrix& labels, double beta) const {
    const auto nb = plans[0].rows();
    Matrix xb = Matrix::Zero(nb, z[0].cols());
    Matrix yb = Matrix::Zero(nb, y[0].cols());
    for (std::size_t k = 0; k < plans.size(); ++k) {
      const double w = static_cast<double>(nb) * alpha(static_cast<Eigen::Index>(k));
      for (Eigen::Index i = 0; i < nb; ++i) {
        for (Eigen::Index j = 0; j < plans[k].cols(); ++j) {
          xb.row(i) += w * plans[k](i, j) * z[k].row(j);
          yb.row(i) += w * plans[k](i, j) * y[k].row(j);
        }
      }
    }
    Matrix c = sq_dist(xb, x);
    if (labeled) c += beta * sq_dist(yb, labels);
    double total = 0.0;
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      for (Eigen::Index j = 0; j < c.cols(); ++j) total += c(i, j) * data_plan(i, j);
    }
    return total;
  }
};

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

/// Random rows on the simplex (normalised exponentials).
inline Matrix soft_labels(Eigen::Index rows, Eigen::Index classes, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  Matrix m(rows, classes);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index c = 0; c < classes; ++c) m(i, c) = e(rng);
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

}  // namespace oracle
