#pragma once

// Experiment harness behind the command-line tool: configuration, benchmark
// files, full runs, parameter sweeps and distillation tables.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "feddadil/adaptation.hpp"
#include "feddadil/datasets.hpp"
#include "feddadil/federation.hpp"

namespace feddadil {

using Json = nlohmann::ordered_json;

struct ExperimentConfig {
  // Benchmark: a manifest written by generate_files, or the synthetic default.
  std::string manifest;
  SyntheticConfig synthetic;

  std::size_t num_atoms = 3;    // K
  std::size_t atom_size = 100;  // n
  std::size_t batch_size = 50;  // n_b
  std::size_t epochs = 1;       // E
  std::size_t rounds = 30;      // R
  double eta = 10.0;
  double alpha_eta = 0.01;
  double beta = 5.0;
  double init_scale = 1.0;
  std::size_t barycenter_max_iter = 20;
  double barycenter_tol = 1e-6;

  std::string mode = "both";  // R, E or both
  std::size_t erm_epochs = 300;
  double erm_eta = 0.1;
  bool hard_labels = false;

  bool fedavg = true;
  std::size_t fedavg_rounds = 20;
  std::size_t fedavg_epochs = 1;
  std::size_t fedavg_batch_size = 32;
  double fedavg_eta = 0.1;

  std::uint64_t reference_parameters = 25'600'000;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
};

/// Canonical JSON form. `with_output` adds the output directory, which never
/// influences results and is left out of the results echo and hash.
inline Json to_json(const ExperimentConfig& c, bool with_output = true) {
  const SyntheticConfig& s = c.synthetic;
  Json j{
      {"manifest", c.manifest},
      {"synthetic",
       {{"dim", s.dim},
        {"num_classes", s.num_classes},
        {"samples_per_domain", s.samples_per_domain},
        {"rotations_deg", s.rotations_deg},
        {"mean_scale", s.mean_scale},
        {"cov_scale", s.cov_scale},
        {"translation", s.translation},
        {"label_noise", s.label_noise},
        {"target_index", s.target_index}}},
      {"K", c.num_atoms},
      {"n", c.atom_size},
      {"n_b", c.batch_size},
      {"E", c.epochs},
      {"R", c.rounds},
      {"eta", c.eta},
      {"alpha_eta", c.alpha_eta},
      {"beta", c.beta},
      {"init_scale", c.init_scale},
      {"barycenter_max_iter", c.barycenter_max_iter},
      {"barycenter_tol", c.barycenter_tol},
      {"mode", c.mode},
      {"erm_epochs", c.erm_epochs},
      {"erm_eta", c.erm_eta},
      {"hard_labels", c.hard_labels},
      {"fedavg", c.fedavg},
      {"fedavg_rounds", c.fedavg_rounds},
      {"fedavg_epochs", c.fedavg_epochs},
      {"fedavg_batch_size", c.fedavg_batch_size},
      {"fedavg_eta", c.fedavg_eta},
      {"reference_parameters", c.reference_parameters},
      {"seed", c.seed},
  };
  if (with_output) j["output_dir"] = c.output_dir;
  return j;
}

namespace detail {

template <typename T>
void read_field(const Json& j, const char* key, T& out, std::vector<std::string>& errors) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    errors.push_back(concat("field '", key, "' has the wrong type"));
  }
}

}  // namespace detail

/// Lists every problem with the configuration; empty when it is valid.
inline std::vector<std::string> validate(const ExperimentConfig& c) {
  std::vector<std::string> errors;
  auto need = [&](bool ok, const std::string& message) {
    if (!ok) errors.push_back(message);
  };
  need(c.num_atoms >= 1, "K must be positive");
  need(c.atom_size >= 1, "n must be positive");
  need(c.batch_size >= 1, "n_b must be positive");
  need(c.batch_size <= c.atom_size, "n_b must not exceed n");
  need(c.epochs >= 1, "E must be positive");
  need(c.eta >= 0.0 && std::isfinite(c.eta), "eta must be nonnegative");
  need(c.alpha_eta >= 0.0 && std::isfinite(c.alpha_eta), "alpha_eta must be nonnegative");
  need(c.beta > 0.0 && std::isfinite(c.beta), "beta must be positive");
  need(c.init_scale > 0.0, "init_scale must be positive");
  need(c.barycenter_max_iter >= 1, "barycenter_max_iter must be positive");
  need(c.barycenter_tol >= 0.0, "barycenter_tol must be nonnegative");
  need(c.mode == "R" || c.mode == "E" || c.mode == "both", "mode must be R, E or both");
  need(c.erm_epochs >= 1, "erm_epochs must be positive");
  need(c.erm_eta > 0.0, "erm_eta must be positive");
  need(c.fedavg_rounds >= 1, "fedavg_rounds must be positive");
  need(c.fedavg_epochs >= 1, "fedavg_epochs must be positive");
  need(c.fedavg_batch_size >= 1, "fedavg_batch_size must be positive");
  need(c.fedavg_eta > 0.0, "fedavg_eta must be positive");
  need(c.reference_parameters >= 1, "reference_parameters must be positive");
  need(!c.output_dir.empty(), "output_dir must not be empty");
  if (c.manifest.empty()) {
    const SyntheticConfig& s = c.synthetic;
    need(s.dim >= 1, "synthetic.dim must be positive");
    need(s.num_classes >= 1, "synthetic.num_classes must be positive");
    need(s.samples_per_domain >= s.num_classes, "synthetic.samples_per_domain must be >= num_classes");
    need(s.rotations_deg.size() >= 2, "synthetic.rotations_deg needs at least two domains");
    need(s.target_index < s.rotations_deg.size(), "synthetic.target_index out of range");
    need(s.cov_scale > 0.0, "synthetic.cov_scale must be positive");
    need(s.label_noise >= 0.0 && s.label_noise <= 1.0, "synthetic.label_noise must be in [0, 1]");
  }
  return errors;
}

inline void require_valid(const ExperimentConfig& c) {
  const auto errors = validate(c);
  if (errors.empty()) return;
  std::string text = "invalid configuration:";
  for (const auto& e : errors) text += "\n  - " + e;
  throw ConfigError(text);
}

/// Reads a configuration object; missing keys keep their defaults. Unknown
/// keys and type errors are collected together with validation errors.
inline ExperimentConfig config_from_json(const Json& j) {
  std::vector<std::string> errors;
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  const Json known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) errors.push_back("unknown field '" + key + "'");
  }
  using detail::read_field;
  read_field(j, "manifest", c.manifest, errors);
  if (j.contains("synthetic")) {
    const Json& s = j.at("synthetic");
    if (!s.is_object()) {
      errors.push_back("field 'synthetic' must be an object");
    } else {
      for (const auto& [key, value] : s.items()) {
        if (!known.at("synthetic").contains(key)) errors.push_back("unknown field 'synthetic." + key + "'");
      }
      read_field(s, "dim", c.synthetic.dim, errors);
      read_field(s, "num_classes", c.synthetic.num_classes, errors);
      read_field(s, "samples_per_domain", c.synthetic.samples_per_domain, errors);
      read_field(s, "rotations_deg", c.synthetic.rotations_deg, errors);
      read_field(s, "mean_scale", c.synthetic.mean_scale, errors);
      read_field(s, "cov_scale", c.synthetic.cov_scale, errors);
      read_field(s, "translation", c.synthetic.translation, errors);
      read_field(s, "label_noise", c.synthetic.label_noise, errors);
      read_field(s, "target_index", c.synthetic.target_index, errors);
    }
  }
  read_field(j, "K", c.num_atoms, errors);
  read_field(j, "n", c.atom_size, errors);
  read_field(j, "n_b", c.batch_size, errors);
  read_field(j, "E", c.epochs, errors);
  read_field(j, "R", c.rounds, errors);
  read_field(j, "eta", c.eta, errors);
  read_field(j, "alpha_eta", c.alpha_eta, errors);
  read_field(j, "beta", c.beta, errors);
  read_field(j, "init_scale", c.init_scale, errors);
  read_field(j, "barycenter_max_iter", c.barycenter_max_iter, errors);
  read_field(j, "barycenter_tol", c.barycenter_tol, errors);
  read_field(j, "mode", c.mode, errors);
  read_field(j, "erm_epochs", c.erm_epochs, errors);
  read_field(j, "erm_eta", c.erm_eta, errors);
  read_field(j, "hard_labels", c.hard_labels, errors);
  read_field(j, "fedavg", c.fedavg, errors);
  read_field(j, "fedavg_rounds", c.fedavg_rounds, errors);
  read_field(j, "fedavg_epochs", c.fedavg_epochs, errors);
  read_field(j, "fedavg_batch_size", c.fedavg_batch_size, errors);
  read_field(j, "fedavg_eta", c.fedavg_eta, errors);
  read_field(j, "reference_parameters", c.reference_parameters, errors);
  read_field(j, "seed", c.seed, errors);
  read_field(j, "output_dir", c.output_dir, errors);
  for (auto& e : validate(c)) errors.push_back(std::move(e));
  if (!errors.empty()) {
    std::string text = "invalid configuration:";
    for (const auto& e : errors) text += "\n  - " + e;
    throw ConfigError(text);
  }
  return c;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// 16-hex-digit digest of the canonical configuration JSON.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string text = to_json(c, false).dump();
  return wire::content_hash(wire::Bytes(text.begin(), text.end()));
}

inline Benchmark load_benchmark(const std::string& manifest_path) {
  const Json m = read_json_file(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  try {
    const auto nc = m.at("num_classes").get<std::size_t>();
    const auto target_index = m.at("target_index").get<std::size_t>();
    const auto& domains = m.at("domains");
    detail::require<ConfigError>(target_index < domains.size(), "manifest target_index out of range");
    std::vector<LabeledMeasure> sources;
    for (std::size_t i = 0; i < domains.size(); ++i) {
      if (i == target_index) continue;
      sources.push_back(load_features((base / domains[i].get<std::string>()).string(), nc));
    }
    LabeledMeasure target =
        load_features((base / m.at("target_evaluation").get<std::string>()).string(), nc);
    return Benchmark(std::move(sources), std::move(target), target_index);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(manifest_path + ": malformed manifest: " + e.what());
  }
}

inline Benchmark make_benchmark(const ExperimentConfig& c) {
  if (!c.manifest.empty()) return load_benchmark(c.manifest);
  const std::uint64_t seed = derive_seed(c.seed, "data");
  return generate_benchmark(synthetic_specs(c.synthetic, seed), c.synthetic.target_index, seed);
}

inline FedConfig federation_config(const ExperimentConfig& c) {
  FedConfig f;
  f.rounds = c.rounds;
  f.num_atoms = c.num_atoms;
  f.atom_size = c.atom_size;
  f.init_scale = c.init_scale;
  f.update.epochs = c.epochs;
  f.update.batch_size = c.batch_size;
  f.update.eta = c.eta;
  f.update.alpha_eta = c.alpha_eta;
  f.update.objective.beta = c.beta;
  f.update.objective.barycenter_max_iter = c.barycenter_max_iter;
  f.update.objective.barycenter_tol = c.barycenter_tol;
  f.update.objective.seed = derive_seed(c.seed, "barycenter");
  f.seed = derive_seed(c.seed, "federation");
  return f;
}

inline ErmConfig erm_config(const ExperimentConfig& c) {
  return {c.erm_epochs, c.erm_eta, 0, c.hard_labels, derive_seed(c.seed, "erm")};
}

inline FedAvgConfig fedavg_config(const ExperimentConfig& c) {
  return {c.fedavg_rounds, {c.fedavg_epochs, c.fedavg_batch_size, c.fedavg_eta},
          derive_seed(c.seed, "fedavg")};
}

struct ExperimentResult {
  Json results;
  std::string transcript_jsonl;
  std::optional<Dictionary> dictionary;
  std::optional<BarycentricCoordinates> target_alpha;
};

/// Trains FedDaDiL and returns the clients (with their final coordinates).
inline std::pair<FedResult, std::vector<ClientState>> train_dictionary(const Benchmark& bench,
                                                                       const ExperimentConfig& c,
                                                                       bool record_loss = true) {
  std::vector<ClientState> clients = bench.make_clients(c.num_atoms);
  FedConfig f = federation_config(c);
  f.record_loss = record_loss;
  FedResult fed = run_feddadil(clients, f);
  return {std::move(fed), std::move(clients)};
}

struct AdaptationScores {
  std::optional<double> reconstruction;  // FedDaDiL-R
  std::optional<double> ensemble;        // FedDaDiL-E
};

inline AdaptationScores score_adaptation(const Benchmark& bench, const Dictionary& dict,
                                         const BarycentricCoordinates& alpha,
                                         const ExperimentConfig& c) {
  AdaptationScores s;
  const ErmConfig erm = erm_config(c);
  BarycenterConfig bc = federation_config(c).update.objective.barycenter();
  if (c.mode != "E") {
    const LabeledMeasure surrogate = reconstruct_target(dict, alpha, 0, bc);
    s.reconstruction = evaluate_accuracy(train_erm(surrogate, erm), bench.target_evaluation());
  }
  if (c.mode != "R") {
    s.ensemble = evaluate_accuracy(train_ensemble(dict, alpha, erm), bench.target_evaluation());
  }
  return s;
}

inline double fedavg_accuracy(const Benchmark& bench, const ExperimentConfig& c) {
  const FedAvgResult fa = fedavg_classifier(bench.sources(), fedavg_config(c));
  return evaluate_accuracy(fa.model, bench.target_evaluation());
}

/// Full run: FedAVG baseline, FedDaDiL training, R/E target accuracies,
/// per-round losses and communication accounting. R = 0 skips FedDaDiL.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  require_valid(c);
  const Benchmark bench = make_benchmark(c);
  ExperimentResult out;
  Json& r = out.results;
  r["config"] = to_json(c, false);
  r["config_hash"] = config_hash(c);
  r["benchmark"] = {{"domains", bench.num_domains()},
                    {"target_index", bench.target_index()},
                    {"dim", bench.dim()},
                    {"num_classes", bench.num_classes()},
                    {"target_samples", bench.target().size()}};
  if (c.fedavg || c.rounds == 0) r["fedavg_acc"] = fedavg_accuracy(bench, c);
  if (c.rounds == 0) {
    r["baseline_only"] = true;
    return out;
  }
  auto [fed, clients] = train_dictionary(bench, c);
  const BarycentricCoordinates& alpha = clients.back().alpha;
  const AdaptationScores scores = score_adaptation(bench, fed.final_dictionary, alpha, c);
  if (scores.reconstruction) r["dadil_r_acc"] = *scores.reconstruction;
  if (scores.ensemble) r["dadil_e_acc"] = *scores.ensemble;

  Json losses = Json::array();
  for (const auto& l : fed.history) losses.push_back(l.value);
  r["loss_history"] = losses;

  const CommunicationReport comm = communication_report(
      c.num_atoms, c.atom_size, bench.dim(), bench.num_classes(), c.reference_parameters);
  Json rounds = Json::array();
  std::uint64_t total_bytes = 0;
  for (const auto& t : fed.transcript.rounds()) {
    rounds.push_back({{"round", t.round},
                      {"messages", t.messages},
                      {"payload_bytes", t.payload_bytes},
                      {"scalar_bytes", t.scalar_bytes}});
    total_bytes += t.payload_bytes;
  }
  r["communication"] = {{"parameters_per_message", comm.parameters},
                        {"bits_per_message", comm.bits},
                        {"reference_parameters", comm.reference_parameters},
                        {"ratio", comm.ratio}};
  r["transcript"] = {{"messages", fed.transcript.messages().size()},
                     {"total_payload_bytes", total_bytes},
                     {"rounds", rounds}};
  out.transcript_jsonl = fed.transcript.to_jsonl();
  out.dictionary = std::move(fed.final_dictionary);
  out.target_alpha = alpha;
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

inline std::filesystem::path prepare_output_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw Error("cannot create output directory " + dir);
  return dir;
}

/// Writes results.json, transcript.jsonl and dictionary.fddl.
inline void write_experiment(const ExperimentResult& result, const std::string& dir) {
  const auto root = prepare_output_dir(dir);
  write_text(root / "results.json", result.results.dump(2) + "\n");
  if (result.dictionary) {
    write_text(root / "transcript.jsonl", result.transcript_jsonl);
    wire::write_file((root / "dictionary.fddl").string(), wire::encode_dictionary(*result.dictionary));
  }
}

/// One CSV per domain, the target's evaluation labels in a separate file, and
/// a manifest tying them together. Returns the manifest path.
inline std::string generate_files(const ExperimentConfig& c) {
  require_valid(c);
  const Benchmark bench = make_benchmark(c);
  const auto root = prepare_output_dir(c.output_dir);
  Json domains = Json::array();
  std::size_t source = 0;
  for (std::size_t i = 0; i < bench.num_domains(); ++i) {
    const std::string name = "domain_" + std::to_string(i) + ".csv";
    if (i == bench.target_index()) {
      write_features((root / name).string(), bench.target());
    } else {
      write_features((root / name).string(), bench.sources()[source++], LabelColumns::hard);
    }
    domains.push_back(name);
  }
  write_features((root / "target_evaluation.csv").string(), bench.target_evaluation(),
                 LabelColumns::hard);
  const Json manifest{{"domains", domains},
                      {"target_index", bench.target_index()},
                      {"target_evaluation", "target_evaluation.csv"},
                      {"dim", bench.dim()},
                      {"num_classes", bench.num_classes()},
                      {"seed", c.seed}};
  const auto path = root / "manifest.json";
  write_text(path, manifest.dump(2) + "\n");
  return path.string();
}

struct SweepAxis {
  std::string name;  // E, K, n or n_b
  std::vector<std::size_t> values;
};

struct SweepRow {
  std::map<std::string, std::size_t> setting;
  std::optional<double> dadil_r_acc;
  std::optional<double> dadil_e_acc;
  double wall_seconds = 0.0;
};

inline void set_axis(ExperimentConfig& c, const std::string& axis, std::size_t value) {
  if (axis == "E") {
    c.epochs = value;
  } else if (axis == "K") {
    c.num_atoms = value;
  } else if (axis == "n") {
    c.atom_size = value;
  } else if (axis == "n_b") {
    c.batch_size = value;
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "' (expected E, K, n or n_b)");
  }
}

/// Cross product of the axes; the benchmark is generated once and shared.
inline std::vector<SweepRow> sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& axes) {
  detail::require<ConfigError>(!axes.empty(), "sweep needs at least one axis");
  for (const auto& a : axes) {
    detail::require<ConfigError>(!a.values.empty(), "sweep axis ", a.name, " has no values");
    ExperimentConfig probe = base;
    set_axis(probe, a.name, a.values.front());
  }
  require_valid(base);
  detail::require<ConfigError>(base.rounds >= 1, "sweep needs R >= 1");
  const Benchmark bench = make_benchmark(base);

  std::vector<SweepRow> rows;
  std::vector<std::size_t> index(axes.size(), 0);
  while (true) {
    ExperimentConfig c = base;
    SweepRow row;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      set_axis(c, axes[a].name, axes[a].values[index[a]]);
      row.setting[axes[a].name] = axes[a].values[index[a]];
    }
    require_valid(c);
    const auto start = std::chrono::steady_clock::now();
    auto [fed, clients] = train_dictionary(bench, c, false);
    const AdaptationScores s = score_adaptation(bench, fed.final_dictionary, clients.back().alpha, c);
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.dadil_r_acc = s.reconstruction;
    row.dadil_e_acc = s.ensemble;
    rows.push_back(std::move(row));

    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++index[a] < axes[a].values.size()) break;
      index[a] = 0;
      if (a == 0) return rows;
    }
  }
}

inline std::string sweep_csv(const std::vector<SweepAxis>& axes, const std::vector<SweepRow>& rows) {
  std::string text;
  for (const auto& a : axes) text += a.name + ",";
  text += "dadil_r_acc,dadil_e_acc,wall_seconds\n";
  auto number = [](const std::optional<double>& v) { return v ? detail::concat(*v) : std::string(); };
  for (const auto& r : rows) {
    for (const auto& a : axes) text += std::to_string(r.setting.at(a.name)) + ",";
    text += number(r.dadil_r_acc) + "," + number(r.dadil_e_acc) + "," + detail::concat(r.wall_seconds) + "\n";
  }
  return text;
}

struct DistillRow {
  std::size_t spc = 0;
  std::size_t size = 0;
  double mean_entropy = 0.0;
  double accuracy = 0.0;
};

/// Trains one dictionary, then summarises the target at each SPC and scores
/// a classifier trained on each summary.
inline std::vector<DistillRow> distill_sweep(const ExperimentConfig& c, const std::vector<std::size_t>& spcs) {
  detail::require<ConfigError>(!spcs.empty(), "distill needs at least one SPC value");
  require_valid(c);
  detail::require<ConfigError>(c.rounds >= 1, "distill needs R >= 1");
  const Benchmark bench = make_benchmark(c);
  auto [fed, clients] = train_dictionary(bench, c, false);
  const BarycenterConfig bc = federation_config(c).update.objective.barycenter();
  const ErmConfig erm = erm_config(c);
  std::vector<DistillRow> rows;
  for (std::size_t spc : spcs) {
    const LabeledMeasure summary = distill(fed.final_dictionary, clients.back().alpha, spc, bc);
    rows.push_back({spc, summary.size(), mean_label_entropy(summary),
                    evaluate_accuracy(train_erm(summary, erm), bench.target_evaluation())});
  }
  return rows;
}

inline std::string distill_csv(const std::vector<DistillRow>& rows) {
  std::string text = "spc,size,mean_entropy,accuracy\n";
  for (const auto& r : rows) {
    text += detail::concat(r.spc, ",", r.size, ",", r.mean_entropy, ",", r.accuracy, "\n");
  }
  return text;
}

}  // namespace feddadil
