#pragma once

// Discrete optimal transport between uniform-weight empirical measures.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "feddadil/types.hpp"

namespace feddadil {

/// n x m matrix of nonnegative ground costs.
class CostMatrix {
 public:
  explicit CostMatrix(Matrix entries) : entries_(std::move(entries)) {
    detail::require(entries_.rows() >= 1 && entries_.cols() >= 1, "empty cost matrix");
  }
  const Matrix& entries() const { return entries_; }
  std::size_t rows() const { return static_cast<std::size_t>(entries_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(entries_.cols()); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return entries_(i, j); }

 private:
  Matrix entries_;
};

/// Coupling with uniform marginals: rows sum to 1/n and columns to 1/m.
class TransportPlan {
 public:
  static constexpr double kMarginalTolerance = 1e-8;

  explicit TransportPlan(Matrix entries) : entries_(std::move(entries)) {
    detail::require(entries_.rows() >= 1 && entries_.cols() >= 1, "empty transport plan");
    detail::require<DomainError>((entries_.array() >= 0.0).all(), "negative plan entry");
    const double n = static_cast<double>(entries_.rows());
    const double m = static_cast<double>(entries_.cols());
    detail::require<DomainError>(
        ((entries_.rowwise().sum().array() - 1.0 / n).abs() <= kMarginalTolerance).all() &&
            ((entries_.colwise().sum().array() - 1.0 / m).abs() <= kMarginalTolerance).all(),
        "plan marginals are not uniform");
  }
  const Matrix& entries() const { return entries_; }
  std::size_t rows() const { return static_cast<std::size_t>(entries_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(entries_.cols()); }

 private:
  Matrix entries_;
};

/// Pairwise squared Euclidean distances between the rows of `a` and `b`.
inline Matrix squared_distances(const Matrix& a, const Matrix& b) {
  detail::require(a.cols() == b.cols(), "dimension mismatch: ", a.cols(), " vs ", b.cols());
  Matrix out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      out(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    }
  }
  return out;
}

inline CostMatrix feature_cost(const LabeledMeasure& p, const LabeledMeasure& q) {
  detail::require(p.dim() == q.dim(), "feature dimension mismatch: ", p.dim(), " vs ", q.dim());
  return CostMatrix(squared_distances(p.features(), q.features()));
}

/// Feature distance plus `beta` times the squared distance between label rows.
inline CostMatrix label_aware_cost(const LabeledMeasure& p, const LabeledMeasure& q, double beta) {
  detail::require<DomainError>(p.has_labels() && q.has_labels(),
                               "supervised cost requires labels on both measures");
  detail::require<DomainError>(beta > 0.0 && std::isfinite(beta), "beta must be positive");
  detail::require(p.num_classes() == q.num_classes(), "label dimension mismatch: ",
                  p.num_classes(), " vs ", q.num_classes());
  detail::require(p.dim() == q.dim(), "feature dimension mismatch: ", p.dim(), " vs ", q.dim());
  Matrix c = squared_distances(p.features(), q.features());
  c += beta * squared_distances(p.labels(), q.labels());
  return CostMatrix(std::move(c));
}

namespace detail {

// Exact transportation solver. Masses are scaled to integers: each row
// supplies m/g units and each column demands n/g units, g = gcd(n, m). When
// the unit count is small the problem is solved as an assignment problem on
// copied rows/columns; otherwise by successive shortest paths over the
// residual bipartite graph with node potentials. A final pass cancels
// zero-cost cycles in the support so the returned flow is a basic (vertex)
// solution.
class TransportSolver {
 public:
  explicit TransportSolver(const Matrix& cost)
      : cost_(cost),
        n_(cost.rows()),
        m_(cost.cols()),
        g_(std::gcd(n_, m_)),
        flow_(static_cast<std::size_t>(n_ * m_), 0),
        excess_(static_cast<std::size_t>(n_), m_ / g_),
        deficit_(static_cast<std::size_t>(m_), n_ / g_),
        pot_(static_cast<std::size_t>(n_ + m_), 0.0),
        dist_(static_cast<std::size_t>(n_ + m_)),
        parent_(static_cast<std::size_t>(n_ + m_)),
        done_(static_cast<std::size_t>(n_ + m_)) {}

  Matrix solve() {
    const Eigen::Index copies = n_ * m_ / g_;
    if (copies <= kAssignmentFactor * std::max(n_, m_)) {
      solve_assignment(copies);
    } else {
      init_potentials();
      std::int64_t remaining = copies;
      while (remaining > 0) remaining -= augment();
    }
    make_basic();
    Matrix plan(n_, m_);
    const double total = static_cast<double>(n_ * m_ / g_);
    for (Eigen::Index i = 0; i < n_; ++i) {
      for (Eigen::Index j = 0; j < m_; ++j) {
        plan(i, j) = static_cast<double>(at(i, j)) / total;
      }
    }
    return plan;
  }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  static constexpr Eigen::Index kAssignmentFactor = 4;

  std::int64_t& at(Eigen::Index i, Eigen::Index j) {
    return flow_[static_cast<std::size_t>(i * m_ + j)];
  }

  // Hungarian method on the assignment problem obtained by copying each row
  // m/g times and each column n/g times (1-based, column 0 is a sentinel).
  void solve_assignment(Eigen::Index size) {
    const Eigen::Index row_copies = m_ / g_;
    const Eigen::Index col_copies = n_ / g_;
    const auto len = static_cast<std::size_t>(size + 1);
    std::vector<double> u(len, 0.0), v(len, 0.0), minv(len);
    std::vector<Eigen::Index> match(len, 0), way(len, 0);
    std::vector<char> used(len);
    for (Eigen::Index i = 1; i <= size; ++i) {
      match[0] = i;
      Eigen::Index j0 = 0;
      std::fill(minv.begin(), minv.end(), kInf);
      std::fill(used.begin(), used.end(), 0);
      do {
        used[static_cast<std::size_t>(j0)] = 1;
        const Eigen::Index i0 = match[static_cast<std::size_t>(j0)];
        const Eigen::Index row = (i0 - 1) / row_copies;
        double delta = kInf;
        Eigen::Index j1 = 0;
        for (Eigen::Index j = 1; j <= size; ++j) {
          const auto sj = static_cast<std::size_t>(j);
          if (used[sj]) continue;
          const double cur = cost_(row, (j - 1) / col_copies) - u[static_cast<std::size_t>(i0)] - v[sj];
          if (cur < minv[sj]) {
            minv[sj] = cur;
            way[sj] = j0;
          }
          if (minv[sj] < delta) {
            delta = minv[sj];
            j1 = j;
          }
        }
        for (std::size_t j = 0; j < len; ++j) {
          if (used[j]) {
            u[static_cast<std::size_t>(match[j])] += delta;
            v[j] -= delta;
          } else {
            minv[j] -= delta;
          }
        }
        j0 = j1;
      } while (match[static_cast<std::size_t>(j0)] != 0);
      do {
        const Eigen::Index j1 = way[static_cast<std::size_t>(j0)];
        match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
        j0 = j1;
      } while (j0 != 0);
    }
    for (Eigen::Index j = 1; j <= size; ++j) {
      ++at((match[static_cast<std::size_t>(j)] - 1) / row_copies, (j - 1) / col_copies);
    }
  }

  void init_potentials() {
    // Row potentials 0, column potentials min_i C_ij: every forward reduced
    // cost C_ij + pot_i - pot_j starts nonnegative, even for negative costs.
    for (Eigen::Index j = 0; j < m_; ++j) {
      pot_[static_cast<std::size_t>(n_ + j)] = cost_.col(j).minCoeff();
    }
  }

  // One Dijkstra pass from all rows with excess to the nearest column with
  // deficit; pushes the bottleneck amount along the path and returns it.
  std::int64_t augment() {
    const auto v_count = static_cast<std::size_t>(n_ + m_);
    auto& dist = dist_;
    auto& parent = parent_;
    auto& done = done_;
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (excess_[static_cast<std::size_t>(i)] > 0) dist[static_cast<std::size_t>(i)] = 0.0;
    }

    int target = -1;
    while (true) {
      int u = -1;
      double best = kInf;
      for (std::size_t v = 0; v < v_count; ++v) {
        if (!done[v] && dist[v] < best) {
          best = dist[v];
          u = static_cast<int>(v);
        }
      }
      if (u < 0) break;
      done[static_cast<std::size_t>(u)] = 1;
      if (u >= n_) {
        if (deficit_[static_cast<std::size_t>(u - n_)] > 0) {
          target = u;
          break;
        }
        // Reverse arcs col -> row exist where flow is positive.
        const Eigen::Index j = u - n_;
        for (Eigen::Index i = 0; i < n_; ++i) {
          if (done[static_cast<std::size_t>(i)] || at(i, j) == 0) continue;
          const double rc = std::max(0.0, -cost_(i, j) + pot_[static_cast<std::size_t>(u)] -
                                              pot_[static_cast<std::size_t>(i)]);
          const double nd = best + rc;
          if (nd < dist[static_cast<std::size_t>(i)]) {
            dist[static_cast<std::size_t>(i)] = nd;
            parent[static_cast<std::size_t>(i)] = u;
          }
        }
      } else {
        const Eigen::Index i = u;
        for (Eigen::Index j = 0; j < m_; ++j) {
          const auto v = static_cast<std::size_t>(n_ + j);
          if (done[v]) continue;
          const double rc =
              std::max(0.0, cost_(i, j) + pot_[static_cast<std::size_t>(i)] - pot_[v]);
          const double nd = best + rc;
          if (nd < dist[v]) {
            dist[v] = nd;
            parent[v] = u;
          }
        }
      }
    }
    require<Error>(target >= 0, "transport solver found no augmenting path");

    const double reach = dist[static_cast<std::size_t>(target)];
    for (std::size_t v = 0; v < v_count; ++v) pot_[v] += std::min(dist[v], reach);

    std::int64_t delta = deficit_[static_cast<std::size_t>(target - n_)];
    int v = target;
    while (parent[static_cast<std::size_t>(v)] >= 0) {
      const int p = parent[static_cast<std::size_t>(v)];
      if (p >= n_) delta = std::min(delta, at(v, p - n_));  // reverse arc col p -> row v
      v = p;
    }
    delta = std::min(delta, excess_[static_cast<std::size_t>(v)]);

    excess_[static_cast<std::size_t>(v)] -= delta;
    deficit_[static_cast<std::size_t>(target - n_)] -= delta;
    v = target;
    while (parent[static_cast<std::size_t>(v)] >= 0) {
      const int p = parent[static_cast<std::size_t>(v)];
      if (p < n_) {
        at(p, v - n_) += delta;
      } else {
        at(v, p - n_) -= delta;
      }
      v = p;
    }
    return delta;
  }

  // Removes cycles from the support graph. Each cycle alternates row->col
  // (+theta) and col->row (-theta) edges, which preserves both marginals; the
  // direction with the smaller cost change is taken, so optimality holds.
  void make_basic() {
    const auto v_count = static_cast<std::size_t>(n_ + m_);
    while (true) {
      std::vector<std::size_t> uf(v_count);
      std::iota(uf.begin(), uf.end(), std::size_t{0});
      auto find = [&](std::size_t x) {
        while (uf[x] != x) x = uf[x] = uf[uf[x]];
        return x;
      };
      std::vector<std::vector<int>> adj(v_count);
      bool changed = false;
      for (Eigen::Index i = 0; i < n_ && !changed; ++i) {
        for (Eigen::Index j = 0; j < m_; ++j) {
          if (at(i, j) == 0) continue;
          const auto a = static_cast<std::size_t>(i);
          const auto b = static_cast<std::size_t>(n_ + j);
          const std::size_t ra = find(a);
          const std::size_t rb = find(b);
          if (ra != rb) {
            uf[ra] = rb;
            adj[a].push_back(static_cast<int>(b));
            adj[b].push_back(static_cast<int>(a));
            continue;
          }
          cancel_cycle(adj, static_cast<int>(i), static_cast<int>(n_ + j));
          changed = true;
          break;
        }
      }
      if (!changed) return;
    }
  }

  void cancel_cycle(const std::vector<std::vector<int>>& adj, int row, int col) {
    // Forest path from col back to row.
    std::vector<int> prev(adj.size(), -2);
    std::vector<int> queue{col};
    prev[static_cast<std::size_t>(col)] = -1;
    for (std::size_t h = 0; h < queue.size(); ++h) {
      const int u = queue[h];
      if (u == row) break;
      for (int w : adj[static_cast<std::size_t>(u)]) {
        if (prev[static_cast<std::size_t>(w)] == -2) {
          prev[static_cast<std::size_t>(w)] = u;
          queue.push_back(w);
        }
      }
    }
    // Edges in traversal order row -> col -> ... -> row; `plus` marks row->col.
    struct Edge {
      Eigen::Index i, j;
      bool plus;
    };
    std::vector<Edge> cycle{{row, col - n_, true}};
    std::vector<int> path;
    for (int v = row; v != -1; v = prev[static_cast<std::size_t>(v)]) path.push_back(v);
    std::reverse(path.begin(), path.end());  // col ... row
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
      const int a = path[k];
      const int b = path[k + 1];
      if (a >= n_) {
        cycle.push_back({b, a - n_, false});
      } else {
        cycle.push_back({a, b - n_, true});
      }
    }
    double delta_cost = 0.0;
    std::int64_t min_plus = std::numeric_limits<std::int64_t>::max();
    std::int64_t min_minus = std::numeric_limits<std::int64_t>::max();
    for (const auto& e : cycle) {
      delta_cost += e.plus ? cost_(e.i, e.j) : -cost_(e.i, e.j);
      if (e.plus) {
        min_plus = std::min(min_plus, at(e.i, e.j));
      } else {
        min_minus = std::min(min_minus, at(e.i, e.j));
      }
    }
    const bool forward = delta_cost <= 0.0;
    const std::int64_t theta = forward ? min_minus : min_plus;
    for (const auto& e : cycle) {
      at(e.i, e.j) += (e.plus == forward) ? theta : -theta;
    }
  }

  const Matrix& cost_;
  Eigen::Index n_;
  Eigen::Index m_;
  Eigen::Index g_;
  std::vector<std::int64_t> flow_;
  std::vector<std::int64_t> excess_;
  std::vector<std::int64_t> deficit_;
  std::vector<double> pot_;
  std::vector<double> dist_;
  std::vector<int> parent_;
  std::vector<char> done_;
};

}  // namespace detail

/// Optimal coupling between uniform measures of sizes C.rows() and C.cols().
inline TransportPlan solve_exact_ot(const CostMatrix& c) {
  detail::require<DomainError>(c.entries().allFinite(), "cost matrix has non-finite entries");
  return TransportPlan(detail::TransportSolver(c.entries()).solve());
}

inline TransportPlan solve_exact_ot(const CostMatrix& c, std::size_t n, std::size_t m) {
  detail::require(c.rows() == n && c.cols() == m, "cost matrix is ", c.rows(), "x", c.cols(),
                  ", expected ", n, "x", m);
  return solve_exact_ot(c);
}

/// Frobenius product <plan, C>; equals W2^2 under the squared-Euclidean cost.
inline double transport_cost(const CostMatrix& c, const TransportPlan& plan) {
  detail::require(c.rows() == plan.rows() && c.cols() == plan.cols(),
                  "cost and plan shapes differ");
  return c.entries().cwiseProduct(plan.entries()).sum();
}

struct Projection {
  Matrix features;
  std::optional<Matrix> labels;
};

/// Pushes the rows of the plan's source onto `q`: n * plan * q.
inline Projection barycentric_projection(const TransportPlan& plan, const LabeledMeasure& q) {
  detail::require(plan.cols() == q.size(), "plan has ", plan.cols(), " columns, measure has ",
                  q.size(), " points");
  const double n = static_cast<double>(plan.rows());
  Projection out{n * plan.entries() * q.features(), std::nullopt};
  if (q.has_labels()) out.labels = n * plan.entries() * q.labels();
  return out;
}

/// Euclidean projection onto the probability simplex (sort and threshold).
inline Vector simplex_project(const Vector& v) {
  detail::require(v.size() >= 1, "cannot project an empty vector");
  detail::require<DomainError>(v.allFinite(), "simplex projection of non-finite vector");
  std::vector<double> sorted(v.data(), v.data() + v.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumulative += sorted[k];
    const double t = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - t > 0.0) theta = t;
  }
  Vector out = (v.array() - theta).max(0.0);
  // Renormalise away accumulated rounding in the threshold.
  const double s = out.sum();
  if (s > 0.0) out /= s;
  return out;
}

}  // namespace feddadil
