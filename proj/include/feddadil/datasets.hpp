#pragma once

// Synthetic multi-domain benchmarks and feature CSV ingestion.

#include <charconv>
#include <fstream>
#include <numbers>
#include <string>
#include <string_view>

#include "feddadil/dictionary.hpp"
#include "feddadil/random.hpp"

namespace feddadil {

/// Gaussian class blobs pushed through an affine domain shift
///   x -> scale * R(rotation) x + translation,
/// where R rotates every coordinate plane (0,1), (2,3), ... by the same angle.
struct DomainSpec {
  std::size_t n_samples = 300;
  Matrix class_means;          // n_c x d
  double cov_scale = 1.0;      // per-class covariance cov_scale * I
  double rotation = 0.0;       // radians
  Vector translation;          // d, or empty for none
  double scale = 1.0;
  double label_noise = 0.0;    // probability of relabeling to another class
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return static_cast<std::size_t>(class_means.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(class_means.cols()); }
};

/// Applies the domain's affine shift to the rows of `x`.
inline Matrix apply_shift(const DomainSpec& spec, const Matrix& x) {
  Matrix out = x;
  const double c = std::cos(spec.rotation);
  const double s = std::sin(spec.rotation);
  for (Eigen::Index j = 0; j + 1 < out.cols(); j += 2) {
    const Eigen::VectorXd a = x.col(j);
    const Eigen::VectorXd b = x.col(j + 1);
    out.col(j) = c * a - s * b;
    out.col(j + 1) = s * a + c * b;
  }
  out *= spec.scale;
  if (spec.translation.size() > 0) out.rowwise() += spec.translation.transpose();
  return out;
}

/// N domains, one of which is the unlabeled target. The target's labels are
/// held back and exposed only through target_evaluation().
class Benchmark {
 public:
  Benchmark(std::vector<LabeledMeasure> sources, LabeledMeasure target, std::size_t target_index)
      : sources_(std::move(sources)),
        target_view_(target.without_labels()),
        target_eval_(std::move(target)),
        target_index_(target_index) {
    detail::require(!sources_.empty(), "benchmark needs at least one source");
    detail::require<DomainError>(target_eval_.has_labels(), "target evaluation needs labels");
    for (const auto& s : sources_) {
      detail::require<DomainError>(s.has_labels(), "source domains must be labeled");
      detail::require(s.dim() == target_view_.dim() && s.num_classes() == target_eval_.num_classes(),
                      "domains disagree on d or n_c");
    }
  }

  const std::vector<LabeledMeasure>& sources() const { return sources_; }
  const LabeledMeasure& target() const { return target_view_; }
  /// Labeled target, for computing accuracies only.
  const LabeledMeasure& target_evaluation() const { return target_eval_; }
  std::size_t target_index() const { return target_index_; }
  std::size_t num_domains() const { return sources_.size() + 1; }
  std::size_t dim() const { return target_view_.dim(); }
  std::size_t num_classes() const { return target_eval_.num_classes(); }

  /// Clients for the federation: sources in domain order, target last.
  std::vector<ClientState> make_clients(std::size_t num_atoms) const {
    std::vector<ClientState> clients;
    std::size_t id = 0;
    for (const auto& s : sources_) {
      clients.push_back({id++, s, BarycentricCoordinates::uniform(num_atoms), std::nullopt});
    }
    clients.push_back({id, target_view_, BarycentricCoordinates::uniform(num_atoms), std::nullopt});
    return clients;
  }

 private:
  std::vector<LabeledMeasure> sources_;
  LabeledMeasure target_view_;
  LabeledMeasure target_eval_;
  std::size_t target_index_;
};

/// Samples one domain: balanced classes, Gaussian blobs, affine shift.
inline LabeledMeasure sample_domain(const DomainSpec& spec, Rng& rng) {
  const std::size_t nc = spec.num_classes();
  detail::require<ConfigError>(nc >= 1 && spec.dim() >= 1, "domain spec needs class means");
  detail::require<ConfigError>(spec.n_samples >= nc, "n_samples must be >= n_classes");
  detail::require<ConfigError>(spec.cov_scale > 0.0, "covariance scale must be positive");
  detail::require<ConfigError>(spec.translation.size() == 0 ||
                                   static_cast<std::size_t>(spec.translation.size()) == spec.dim(),
                               "translation has the wrong dimension");
  detail::require<ConfigError>(spec.label_noise >= 0.0 && spec.label_noise <= 1.0,
                               "label noise must be a probability");

  std::vector<std::size_t> classes(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) classes[i] = i % nc;
  std::shuffle(classes.begin(), classes.end(), rng);

  std::normal_distribution<double> normal(0.0, std::sqrt(spec.cov_scale));
  Matrix x(static_cast<Eigen::Index>(spec.n_samples), static_cast<Eigen::Index>(spec.dim()));
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    for (std::size_t j = 0; j < spec.dim(); ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          spec.class_means(static_cast<Eigen::Index>(classes[i]), static_cast<Eigen::Index>(j)) +
          normal(rng);
    }
  }
  if (spec.label_noise > 0.0 && nc > 1) {
    std::bernoulli_distribution flip(spec.label_noise);
    std::uniform_int_distribution<std::size_t> other(1, nc - 1);
    for (auto& c : classes) {
      if (flip(rng)) c = (c + other(rng)) % nc;
    }
  }
  return LabeledMeasure(apply_shift(spec, x), one_hot(classes, nc));
}

inline Benchmark generate_benchmark(const std::vector<DomainSpec>& specs, std::size_t target_index,
                                    std::uint64_t seed) {
  detail::require<ConfigError>(specs.size() >= 2, "benchmark needs at least two domains");
  detail::require<ConfigError>(target_index < specs.size(), "target index out of range");
  for (const auto& s : specs) {
    detail::require<ConfigError>(s.dim() == specs[0].dim() && s.num_classes() == specs[0].num_classes(),
                                 "domain specs disagree on d or n_c");
  }
  std::vector<LabeledMeasure> sources;
  std::optional<LabeledMeasure> target;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Rng rng = substream(seed ^ detail::splitmix64(specs[i].seed), "domain", i);
    LabeledMeasure m = sample_domain(specs[i], rng);
    if (i == target_index) {
      target = std::move(m);
    } else {
      sources.push_back(std::move(m));
    }
  }
  return Benchmark(std::move(sources), std::move(*target), target_index);
}

struct SyntheticConfig {
  std::size_t dim = 16;
  std::size_t num_classes = 5;
  std::size_t samples_per_domain = 300;
  std::vector<double> rotations_deg{0.0, 15.0, 30.0, 45.0};
  double mean_scale = 1.0;    // class means ~ N(0, mean_scale^2 I)
  double cov_scale = 1.0;
  double translation = 4.0;   // length of each non-reference domain's translation
  double label_noise = 0.0;
  std::size_t target_index = 3;
};

/// Desk-scale default: rotated copies of one class layout, each domain but
/// the first translated along its own random direction.
inline std::vector<DomainSpec> synthetic_specs(const SyntheticConfig& cfg, std::uint64_t seed) {
  detail::require<ConfigError>(cfg.rotations_deg.size() >= 2, "need at least two domains");
  Rng rng = substream(seed, "class-layout");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(static_cast<Eigen::Index>(cfg.num_classes), static_cast<Eigen::Index>(cfg.dim));
  for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = cfg.mean_scale * normal(rng);
  std::vector<DomainSpec> specs;
  for (std::size_t i = 0; i < cfg.rotations_deg.size(); ++i) {
    DomainSpec s;
    s.n_samples = cfg.samples_per_domain;
    s.class_means = means;
    s.cov_scale = cfg.cov_scale;
    s.rotation = cfg.rotations_deg[i] * std::numbers::pi / 180.0;
    Vector direction(static_cast<Eigen::Index>(cfg.dim));
    for (Eigen::Index j = 0; j < direction.size(); ++j) direction(j) = normal(rng);
    s.translation = i == 0 ? Vector(Vector::Zero(direction.size())) : Vector(cfg.translation * direction.normalized());
    s.label_noise = cfg.label_noise;
    s.seed = i;
    specs.push_back(std::move(s));
  }
  return specs;
}

class CsvError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& c : cells) {
    while (!c.empty() && (c.front() == ' ' || c.front() == '\t')) c.remove_prefix(1);
    while (!c.empty() && (c.back() == ' ' || c.back() == '\t' || c.back() == '\r')) c.remove_suffix(1);
  }
  return cells;
}

inline double parse_cell(std::string_view cell, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || cell.empty()) {
    throw CsvError(concat("row ", line_no, ": non-numeric cell '", cell, "'"));
  }
  return v;
}

inline void append_number(std::string& out, double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

}  // namespace detail

/// Reads `f0,...,f{d-1}[,label | ,y0,...,y{nc-1}]`. Hard labels become
/// one-hot rows; `num_classes` bounds them (default: max label + 1).
inline LabeledMeasure load_features(const std::string& path,
                                    std::optional<std::size_t> num_classes = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw CsvError(path + ": missing header");
  const auto header = detail::split_commas(line);
  std::size_t d = 0;
  while (d < header.size() && header[d] == "f" + std::to_string(d)) ++d;
  if (d == 0) throw CsvError(path + ": header must start with f0");
  enum class Mode { none, hard, soft } mode = Mode::none;
  std::size_t nc_soft = 0;
  if (header.size() == d + 1 && header[d] == "label") {
    mode = Mode::hard;
  } else if (header.size() > d) {
    while (d + nc_soft < header.size() && header[d + nc_soft] == "y" + std::to_string(nc_soft)) ++nc_soft;
    if (nc_soft == 0 || d + nc_soft != header.size()) {
      throw CsvError(path + ": unrecognised header column '" + std::string(header[d]) + "'");
    }
    mode = Mode::soft;
  }
  const std::size_t width = header.size();

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != width) {
      throw CsvError(detail::concat("row ", line_no, ": expected ", width, " cells, found ",
                                    cells.size()));
    }
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(detail::parse_cell(c, line_no));
    if (mode == Mode::hard) {
      const double lab = row.back();
      if (lab < 0.0 || lab != std::floor(lab) || (num_classes && lab >= static_cast<double>(*num_classes))) {
        throw CsvError(detail::concat("row ", line_no, ": label ", lab, " out of range"));
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw CsvError(path + ": no data rows");

  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  if (mode == Mode::none) return LabeledMeasure(std::move(x));
  if (mode == Mode::hard) {
    std::vector<std::size_t> cls;
    std::size_t top = 0;
    for (const auto& r : rows) {
      cls.push_back(static_cast<std::size_t>(r.back()));
      top = std::max(top, cls.back());
    }
    return LabeledMeasure(std::move(x), one_hot(cls, num_classes.value_or(top + 1)));
  }
  Matrix y(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(nc_soft));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < nc_soft; ++c) y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][d + c];
  }
  if (!rows_on_simplex(y, 1e-6)) throw CsvError(path + ": soft label rows must be probability vectors");
  y = y.array().max(0.0);
  for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i) /= y.row(i).sum();
  return LabeledMeasure(std::move(x), std::move(y));
}

enum class LabelColumns { automatic, hard, soft };

/// Writes a measure in the layout read by load_features. `automatic` picks
/// hard labels when every label row is one-hot.
inline void write_features(const std::string& path, const LabeledMeasure& m,
                           LabelColumns columns = LabelColumns::automatic) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot open " + path + " for writing");
  bool hard = false;
  if (m.has_labels()) {
    hard = columns == LabelColumns::hard;
    if (columns == LabelColumns::automatic) {
      hard = ((m.labels().array() == 0.0) || (m.labels().array() == 1.0)).all();
    }
  }
  std::string text;
  for (std::size_t j = 0; j < m.dim(); ++j) text += (j ? ",f" : "f") + std::to_string(j);
  if (m.has_labels()) {
    if (hard) {
      text += ",label";
    } else {
      for (std::size_t c = 0; c < m.num_classes(); ++c) text += ",y" + std::to_string(c);
    }
  }
  text += '\n';
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(m.size()); ++i) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(m.dim()); ++j) {
      if (j) text += ',';
      detail::append_number(text, m.features()(i, j));
    }
    if (m.has_labels()) {
      if (hard) {
        text += ',' + std::to_string(argmax(m.labels().row(i)));
      } else {
        for (Eigen::Index c = 0; c < m.labels().cols(); ++c) {
          text += ',';
          detail::append_number(text, m.labels()(i, c));
        }
      }
    }
    text += '\n';
  }
  out << text;
}

}  // namespace feddadil
