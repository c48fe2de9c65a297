#pragma once

// Dataset dictionary learning: atoms, per-client reconstruction losses,
// fixed-plan gradients and the client-side mini-batch update.

#include <cmath>
#include <span>
#include <utility>

#include "feddadil/barycenter.hpp"

namespace feddadil {

/// K labeled atoms with a common shape (n points, d features, n_c classes).
class Dictionary {
 public:
  explicit Dictionary(std::vector<LabeledMeasure> atoms) : atoms_(std::move(atoms)) {
    detail::require(!atoms_.empty(), "dictionary needs at least one atom");
    for (const auto& a : atoms_) {
      detail::require<DomainError>(a.has_labels(), "dictionary atoms must carry labels");
      detail::require(a.size() == atoms_[0].size() && a.dim() == atoms_[0].dim() &&
                          a.num_classes() == atoms_[0].num_classes(),
                      "dictionary atoms must share (n, d, n_c)");
    }
  }

  const std::vector<LabeledMeasure>& atoms() const { return atoms_; }
  const LabeledMeasure& atom(std::size_t k) const { return atoms_.at(k); }
  std::size_t num_atoms() const { return atoms_.size(); }
  std::size_t support_size() const { return atoms_[0].size(); }
  std::size_t dim() const { return atoms_[0].dim(); }
  std::size_t num_classes() const { return atoms_[0].num_classes(); }
  std::size_t parameter_count() const {
    return num_atoms() * support_size() * (dim() + num_classes());
  }

  bool same_shape(const Dictionary& other) const {
    return num_atoms() == other.num_atoms() && support_size() == other.support_size() &&
           dim() == other.dim() && num_classes() == other.num_classes();
  }

  bool labels_on_simplex(double tol = LabeledMeasure::kSimplexTolerance) const {
    for (const auto& a : atoms_) {
      if (!rows_on_simplex(a.labels(), tol)) return false;
    }
    return true;
  }

  friend bool operator==(const Dictionary& a, const Dictionary& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t k = 0; k < a.num_atoms(); ++k) {
      if (a.atoms_[k].features() != b.atoms_[k].features() ||
          a.atoms_[k].labels() != b.atoms_[k].labels()) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<LabeledMeasure> atoms_;
};

/// One participant. `alpha` never leaves the client; see federation.hpp.
struct ClientState {
  std::size_t id = 0;
  LabeledMeasure data;
  BarycentricCoordinates alpha;
  std::optional<Dictionary> local_dictionary;

  bool is_target() const { return !data.has_labels(); }
};

struct LossReport {
  double value = 0.0;
  std::vector<double> per_client;
};

struct ObjectiveConfig {
  double beta = 1.0;
  std::size_t barycenter_max_iter = 100;
  double barycenter_tol = 1e-6;
  std::uint64_t seed = 0;

  BarycenterConfig barycenter(std::size_t support_size = 0) const {
    return {support_size, beta, barycenter_max_iter, barycenter_tol, seed};
  }
};

/// Everything computed for one reconstruction loss: the barycenter, its plans
/// to the atoms and the plan from the barycenter to the client data.
struct LossEvaluation {
  double value = 0.0;
  BarycenterResult barycenter;
  TransportPlan data_plan;
  bool labeled = false;
};

namespace detail {

inline void check_client_vs_atoms(const LabeledMeasure& data,
                                  std::span<const LabeledMeasure> atoms,
                                  const BarycentricCoordinates& alpha) {
  require(!atoms.empty(), "empty dictionary");
  require(data.dim() == atoms[0].dim(), "client data has d=", data.dim(),
          " but atoms have d=", atoms[0].dim());
  if (data.has_labels()) {
    require(data.num_classes() == atoms[0].num_classes(), "client has ", data.num_classes(),
            " classes, atoms have ", atoms[0].num_classes());
  }
  require(alpha.size() == atoms.size(), "alpha length ", alpha.size(), " != K=", atoms.size());
}

inline CostMatrix client_cost(const LabeledMeasure& support, const LabeledMeasure& data,
                              double beta) {
  return data.has_labels() ? label_aware_cost(support, data, beta) : feature_cost(support, data);
}

}  // namespace detail

/// Reconstruction loss of `data` by the barycenter of `atoms` under `alpha`:
/// label-aware transport cost for labeled data, W2^2 otherwise.
inline LossEvaluation evaluate_loss(const LabeledMeasure& data,
                                    const BarycentricCoordinates& alpha,
                                    std::span<const LabeledMeasure> atoms,
                                    const ObjectiveConfig& config, std::size_t support_size = 0,
                                    const LabeledMeasure* warm_start = nullptr) {
  detail::check_client_vs_atoms(data, atoms, alpha);
  BarycenterResult bary =
      free_support_barycenter(atoms, alpha, config.barycenter(support_size), warm_start);
  const CostMatrix c = detail::client_cost(bary.support, data, config.beta);
  TransportPlan plan = solve_exact_ot(c);
  const double value = transport_cost(c, plan);
  return {value, std::move(bary), std::move(plan), data.has_labels()};
}

inline BarycenterResult barycenter_operator(const Dictionary& dict,
                                            const BarycentricCoordinates& alpha,
                                            const BarycenterConfig& config) {
  return free_support_barycenter(dict.atoms(), alpha, config);
}

inline double local_loss(const ClientState& client, const Dictionary& dict,
                         const ObjectiveConfig& config) {
  return evaluate_loss(client.data, client.alpha, dict.atoms(), config).value;
}

inline LossReport global_loss(std::span<const ClientState> clients, const Dictionary& dict,
                              const ObjectiveConfig& config) {
  detail::require(!clients.empty(), "global loss needs at least one client");
  LossReport report;
  for (const auto& c : clients) report.per_client.push_back(local_loss(c, dict, config));
  double sum = 0.0;
  for (double v : report.per_client) sum += v;
  report.value = sum / static_cast<double>(clients.size());
  return report;
}

struct Gradients {
  std::vector<Matrix> atom_features;  // K blocks, n x d
  std::vector<Matrix> atom_labels;    // K blocks, n x n_c
  Vector alpha;                       // K
};

/// Gradients of the reconstruction loss with every transport plan held at its
/// optimum. The barycenter support is treated as
///   z_B = n_B * sum_k alpha_k plan_k Z_k   (labels likewise),
/// so the loss is quadratic in (Z, Y) and bilinear in alpha.
inline Gradients fixed_plan_gradients(const LossEvaluation& eval,
                                      std::span<const LabeledMeasure> atoms,
                                      const BarycentricCoordinates& alpha,
                                      const LabeledMeasure& data, double beta) {
  detail::require(eval.barycenter.plans.size() == atoms.size(),
                  "plans not computed for every atom");
  const Matrix& pi = eval.data_plan.entries();
  const Matrix& xb = eval.barycenter.support.features();
  const Eigen::VectorXd mass = pi.rowwise().sum();
  const double nb = static_cast<double>(xb.rows());

  // d loss / d barycenter support.
  const Matrix g = 2.0 * (mass.asDiagonal() * xb - pi * data.features());
  Matrix h;
  if (eval.labeled) {
    h = 2.0 * beta * (mass.asDiagonal() * eval.barycenter.support.labels() - pi * data.labels());
  }

  Gradients out;
  out.alpha = Vector::Zero(static_cast<Eigen::Index>(atoms.size()));
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    const Matrix& plan = eval.barycenter.plans[k].entries();
    const double scale = nb * alpha[k];
    out.atom_features.push_back(scale * plan.transpose() * g);
    out.alpha(static_cast<Eigen::Index>(k)) = nb * (g.cwiseProduct(plan * atoms[k].features())).sum();
    if (eval.labeled) {
      out.atom_labels.push_back(scale * plan.transpose() * h);
      out.alpha(static_cast<Eigen::Index>(k)) +=
          nb * (h.cwiseProduct(plan * atoms[k].labels())).sum();
    } else {
      out.atom_labels.push_back(Matrix::Zero(atoms[k].labels().rows(), atoms[k].labels().cols()));
    }
  }
  return out;
}

inline Gradients loss_gradients(const ClientState& client, const Dictionary& dict,
                                const ObjectiveConfig& config) {
  const LossEvaluation eval = evaluate_loss(client.data, client.alpha, dict.atoms(), config);
  return fixed_plan_gradients(eval, dict.atoms(), client.alpha, client.data, config.beta);
}

/// Loss of `data` against the barycenter induced by `atoms` through frozen
/// plans (no OT is re-solved).
inline double frozen_plan_loss(const LossEvaluation& eval, std::span<const LabeledMeasure> atoms,
                               const BarycentricCoordinates& alpha, const LabeledMeasure& data,
                               double beta) {
  const auto nb = static_cast<Eigen::Index>(eval.barycenter.plans.front().rows());
  Matrix xb = Matrix::Zero(nb, static_cast<Eigen::Index>(atoms[0].dim()));
  Matrix yb = Matrix::Zero(nb, static_cast<Eigen::Index>(atoms[0].num_classes()));
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    const double w = static_cast<double>(nb) * alpha[k];
    xb.noalias() += w * eval.barycenter.plans[k].entries() * atoms[k].features();
    yb.noalias() += w * eval.barycenter.plans[k].entries() * atoms[k].labels();
  }
  Matrix c = squared_distances(xb, data.features());
  if (eval.labeled) c += beta * squared_distances(yb, data.labels());
  return c.cwiseProduct(eval.data_plan.entries()).sum();
}

/// Per-atom, per-row affine combination A + a * B of supports and labels.
/// Label rows are not re-projected.
inline Dictionary atom_combine(const Dictionary& a, const Dictionary& b, double scale) {
  detail::require(a.same_shape(b), "atom_combine: dictionary shapes differ");
  std::vector<LabeledMeasure> atoms;
  atoms.reserve(a.num_atoms());
  for (std::size_t k = 0; k < a.num_atoms(); ++k) {
    atoms.emplace_back(Matrix(a.atom(k).features() + scale * b.atom(k).features()),
                       Matrix(a.atom(k).labels() + scale * b.atom(k).labels()),
                       LabeledMeasure::Unchecked{});
  }
  return Dictionary(std::move(atoms));
}

struct UpdateConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double eta = 1.0;
  double alpha_eta = -1.0;  // negative: same step as the atoms
  bool project_atom_labels = true;
  ObjectiveConfig objective;
  std::uint64_t seed = 0;

  double alpha_step() const { return alpha_eta < 0.0 ? eta : alpha_eta; }
};

/// Local optimisation of (atoms, alpha) on one client's data. Each epoch
/// splits the atoms into ceil(n / n_b) contiguous slices of a shuffled row
/// order; every slice is paired with a fresh client mini-batch. Updates
/// client.alpha in place and returns the client's dictionary version.
inline Dictionary client_update(ClientState& client, const Dictionary& incoming,
                                const UpdateConfig& config,
                                std::vector<double>* batch_losses = nullptr) {
  const std::size_t n = incoming.support_size();
  const std::size_t nb = config.batch_size;
  detail::require<ConfigError>(nb >= 1 && nb <= n, "batch size n_b=", nb,
                               " must be in [1, n=", n, "]");
  detail::require<ConfigError>(config.eta >= 0.0 && std::isfinite(config.eta),
                               "learning rate must be nonnegative");
  detail::require<ConfigError>(config.alpha_step() >= 0.0, "alpha step must be nonnegative");
  detail::check_client_vs_atoms(client.data, incoming.atoms(), client.alpha);

  const std::size_t K = incoming.num_atoms();
  std::vector<Matrix> z;
  std::vector<Matrix> y;
  for (const auto& a : incoming.atoms()) {
    z.push_back(a.features());
    y.push_back(a.labels());
  }
  Vector alpha = client.alpha.weights();
  const std::size_t n_data = client.data.size();
  const std::size_t data_batch = std::min(nb, n_data);
  const std::size_t batches = (n + nb - 1) / nb;
  std::optional<LabeledMeasure> warm;

  Rng data_rng = substream(config.seed, "client-batches", client.id);
  std::vector<std::size_t> data_order = shuffled_indices(n_data, data_rng);
  std::size_t cursor = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng atom_rng = substream(config.seed, "atom-batches", client.id * 1'000'003ULL + epoch);
    const std::vector<std::size_t> order = shuffled_indices(n, atom_rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(b * nb),
                                          order.begin() +
                                              static_cast<std::ptrdiff_t>(std::min(n, (b + 1) * nb)));
      std::vector<LabeledMeasure> batch_atoms;
      for (std::size_t k = 0; k < K; ++k) {
        Matrix zb(static_cast<Eigen::Index>(rows.size()), z[k].cols());
        Matrix yb(static_cast<Eigen::Index>(rows.size()), y[k].cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          zb.row(static_cast<Eigen::Index>(r)) = z[k].row(static_cast<Eigen::Index>(rows[r]));
          yb.row(static_cast<Eigen::Index>(r)) = y[k].row(static_cast<Eigen::Index>(rows[r]));
        }
        batch_atoms.emplace_back(std::move(zb), std::move(yb), LabeledMeasure::Unchecked{});
      }

      std::vector<std::size_t> picked;
      while (picked.size() < data_batch) {
        if (cursor == n_data) {
          data_order = shuffled_indices(n_data, data_rng);
          cursor = 0;
        }
        picked.push_back(data_order[cursor++]);
      }
      const LabeledMeasure data = client.data.subset(picked);

      const BarycentricCoordinates coords(alpha);
      const LossEvaluation eval = evaluate_loss(data, coords, batch_atoms, config.objective,
                                                rows.size(), warm ? &*warm : nullptr);
      if (batch_losses) batch_losses->push_back(eval.value);
      const Gradients grad =
          fixed_plan_gradients(eval, batch_atoms, coords, data, config.objective.beta);
      warm = eval.barycenter.support;

      for (std::size_t k = 0; k < K && config.eta > 0.0; ++k) {
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const auto src = static_cast<Eigen::Index>(r);
          const auto dst = static_cast<Eigen::Index>(rows[r]);
          z[k].row(dst) -= config.eta * grad.atom_features[k].row(src);
          if (eval.labeled) {
            y[k].row(dst) -= config.eta * grad.atom_labels[k].row(src);
            if (config.project_atom_labels) {
              y[k].row(dst) = simplex_project(y[k].row(dst).transpose()).transpose();
            }
          }
        }
      }
      if (config.alpha_step() > 0.0) alpha = simplex_project(alpha - config.alpha_step() * grad.alpha);
    }
  }

  client.alpha = BarycentricCoordinates(alpha);
  std::vector<LabeledMeasure> atoms;
  for (std::size_t k = 0; k < K; ++k) {
    atoms.emplace_back(std::move(z[k]), std::move(y[k]), LabeledMeasure::Unchecked{});
  }
  Dictionary out(std::move(atoms));
  client.local_dictionary = out;
  return out;
}

/// Global loss along the segment (1 - t) A + t B.
inline std::vector<std::pair<double, double>> interpolate_loss_curve(
    const Dictionary& a, const Dictionary& b, std::span<const ClientState> clients,
    std::span<const double> ts, const ObjectiveConfig& config) {
  detail::require(a.same_shape(b), "interpolation endpoints differ in shape");
  std::vector<std::pair<double, double>> curve;
  for (double t : ts) {
    detail::require<DomainError>(t >= 0.0 && t <= 1.0, "interpolation t=", t,
                                 " outside [0, 1]");
    const Dictionary pt = atom_combine(atom_combine(a, a, -t), b, t);
    curve.emplace_back(t, global_loss(clients, pt, config).value);
  }
  return curve;
}

/// Every atom feature row shifted by the same vector.
inline Dictionary shift_features(const Dictionary& dict, const Vector& shift) {
  detail::require(static_cast<std::size_t>(shift.size()) == dict.dim(),
                  "shift has dimension ", shift.size(), ", atoms have ", dict.dim());
  std::vector<LabeledMeasure> atoms;
  for (const auto& a : dict.atoms()) {
    Matrix f = a.features().rowwise() + shift.transpose();
    atoms.emplace_back(std::move(f), a.maybe_labels(), LabeledMeasure::Unchecked{});
  }
  return Dictionary(std::move(atoms));
}

struct ProbeResult {
  double lhs = 0.0;       // loss of the shifted dictionary, plans frozen
  double rhs = 0.0;       // base + eps . grad + |eps|^2
  double residual = 0.0;  // |lhs - rhs|
  double base = 0.0;
  Vector gradient;        // d f / d(shift) at shift 0
};

/// Frozen-plan evaluations for every client, reused by the probes below.
inline std::vector<LossEvaluation> evaluate_clients(std::span<const ClientState> clients,
                                                    const Dictionary& dict,
                                                    const ObjectiveConfig& config) {
  detail::require(!clients.empty(), "probe needs at least one client");
  std::vector<LossEvaluation> evals;
  for (const auto& c : clients) evals.push_back(evaluate_loss(c.data, c.alpha, dict.atoms(), config));
  return evals;
}

inline double frozen_global_loss(std::span<const LossEvaluation> evals,
                                 std::span<const ClientState> clients, const Dictionary& dict,
                                 double beta) {
  double sum = 0.0;
  for (std::size_t l = 0; l < clients.size(); ++l) {
    sum += frozen_plan_loss(evals[l], dict.atoms(), clients[l].alpha, clients[l].data, beta);
  }
  return sum / static_cast<double>(clients.size());
}

/// Checks the quadratic expansion of the loss under a common shift `eps` of
/// all atom features, with every plan frozen at the unshifted optimum:
///   f(shifted) = f + eps . grad f + |eps|^2,  grad f = 2 sum pi (x_B - x_Q).
inline ProbeResult theorem_probe(const Dictionary& dict, std::span<const ClientState> clients,
                                 const Vector& eps, const ObjectiveConfig& config) {
  detail::require(static_cast<std::size_t>(eps.size()) == dict.dim(), "eps has dimension ",
                  eps.size(), ", atoms have ", dict.dim());
  const std::vector<LossEvaluation> evals = evaluate_clients(clients, dict, config);

  ProbeResult out;
  out.base = frozen_global_loss(evals, clients, dict, config.beta);
  out.gradient = Vector::Zero(eps.size());
  for (std::size_t l = 0; l < clients.size(); ++l) {
    const auto& eval = evals[l];
    const auto nb = static_cast<Eigen::Index>(eval.data_plan.rows());
    Matrix xb = Matrix::Zero(nb, static_cast<Eigen::Index>(dict.dim()));
    for (std::size_t k = 0; k < dict.num_atoms(); ++k) {
      xb.noalias() += static_cast<double>(nb) * clients[l].alpha[k] *
                      eval.barycenter.plans[k].entries() * dict.atom(k).features();
    }
    const Matrix& pi = eval.data_plan.entries();
    const Vector mass = pi.rowwise().sum();
    const RowVector g = 2.0 * ((mass.asDiagonal() * xb).colwise().sum() -
                               (pi * clients[l].data.features()).colwise().sum());
    out.gradient += g.transpose();
  }
  out.gradient /= static_cast<double>(clients.size());

  out.lhs = frozen_global_loss(evals, clients, shift_features(dict, eps), config.beta);
  out.rhs = out.base + eps.dot(out.gradient) + eps.squaredNorm();
  out.residual = std::abs(out.lhs - out.rhs);
  return out;
}

/// Loss over the grid shift = u * dir_u + v * dir_v of all atom features.
/// With `frozen` the plans of the unshifted dictionary are reused; otherwise
/// every grid point re-solves the barycenter and transport problems.
inline Matrix loss_landscape(const Dictionary& dict, std::span<const ClientState> clients,
                             const Vector& dir_u, const Vector& dir_v,
                             std::span<const double> us, std::span<const double> vs,
                             const ObjectiveConfig& config, bool frozen = true) {
  std::vector<LossEvaluation> evals;
  if (frozen) evals = evaluate_clients(clients, dict, config);
  Matrix grid(static_cast<Eigen::Index>(us.size()), static_cast<Eigen::Index>(vs.size()));
  for (std::size_t a = 0; a < us.size(); ++a) {
    for (std::size_t b = 0; b < vs.size(); ++b) {
      const Dictionary shifted = shift_features(dict, us[a] * dir_u + vs[b] * dir_v);
      grid(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          frozen ? frozen_global_loss(evals, clients, shifted, config.beta)
                 : global_loss(clients, shifted, config).value;
    }
  }
  return grid;
}

/// R^2 of the least-squares fit f ~ c0 + c1 u + c2 v + c3 u^2 + c4 uv + c5 v^2.
inline double quadratic_fit_r2(const Matrix& grid, std::span<const double> us,
                               std::span<const double> vs) {
  detail::require(static_cast<std::size_t>(grid.rows()) == us.size() &&
                      static_cast<std::size_t>(grid.cols()) == vs.size(),
                  "grid does not match its axes");
  const Eigen::Index rows = grid.size();
  Eigen::MatrixXd design(rows, 6);
  Eigen::VectorXd target(rows);
  Eigen::Index r = 0;
  for (std::size_t a = 0; a < us.size(); ++a) {
    for (std::size_t b = 0; b < vs.size(); ++b, ++r) {
      const double u = us[a];
      const double v = vs[b];
      design.row(r) << 1.0, u, v, u * u, u * v, v * v;
      target(r) = grid(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
  }
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(target);
  const double ss_res = (design * coef - target).squaredNorm();
  const double ss_tot = (target.array() - target.mean()).square().sum();
  return ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
}

}  // namespace feddadil
