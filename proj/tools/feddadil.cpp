// Command-line driver: generate | run | sweep | distill.
// Exit codes: 0 success, 2 configuration error, 1 runtime failure.

#include <iostream>
#include <charconv>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "feddadil/experiment.hpp"

using namespace feddadil;

namespace {

// Flag values that override fields of the JSON configuration.
struct Overrides {
  std::string config_path;
  std::optional<std::string> manifest, mode, output_dir;
  std::optional<std::size_t> num_atoms, atom_size, batch_size, epochs, rounds, erm_epochs;
  std::optional<double> eta, alpha_eta, beta;
  std::optional<std::uint64_t> seed;
  bool no_fedavg = false;
  bool hard_labels = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON configuration file");
    app->add_option("--manifest", manifest, "benchmark manifest written by 'generate'");
    app->add_option("-K,--atoms", num_atoms, "number of atoms K");
    app->add_option("-n,--atom-size", atom_size, "support points per atom n");
    app->add_option("--batch-size", batch_size, "mini-batch size n_b");
    app->add_option("-E,--epochs", epochs, "local epochs per round E");
    app->add_option("-R,--rounds", rounds, "communication rounds R");
    app->add_option("--eta", eta, "atom learning rate");
    app->add_option("--alpha-eta", alpha_eta, "barycentric coordinate learning rate");
    app->add_option("--beta", beta, "label weight in the ground cost");
    app->add_option("--mode", mode, "adaptation mode: R, E or both");
    app->add_option("--erm-epochs", erm_epochs, "epochs for target classifiers");
    app->add_option("--seed", seed, "root seed");
    app->add_option("-o,--out", output_dir, "output directory");
    app->add_flag("--no-fedavg", no_fedavg, "skip the FedAVG baseline");
    app->add_flag("--hard-labels", hard_labels, "train on argmax labels");
  }

  ExperimentConfig resolve() const {
    Json j = config_path.empty() ? Json::object() : read_json_file(config_path);
    if (!j.is_object()) throw ConfigError(config_path + ": configuration must be a JSON object");
    auto set = [&](const char* key, const auto& value) {
      if (value) j[key] = *value;
    };
    set("manifest", manifest);
    set("mode", mode);
    set("output_dir", output_dir);
    set("K", num_atoms);
    set("n", atom_size);
    set("n_b", batch_size);
    set("E", epochs);
    set("R", rounds);
    set("erm_epochs", erm_epochs);
    set("eta", eta);
    set("alpha_eta", alpha_eta);
    set("beta", beta);
    set("seed", seed);
    if (no_fedavg) j["fedavg"] = false;
    if (hard_labels) j["hard_labels"] = true;
    return config_from_json(j);
  }
};

std::vector<std::size_t> parse_counts(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
    if (ec != std::errc{} || ptr != item.data() + item.size()) {
      throw ConfigError("'" + item + "' is not a nonnegative integer");
    }
    out.push_back(value);
  }
  if (out.empty()) throw ConfigError("empty value list");
  return out;
}

SweepAxis parse_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("axis '" + spec + "' must look like NAME=v1,v2,...");
  return {spec.substr(0, eq), parse_counts(spec.substr(eq + 1))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated dataset dictionary learning experiments"};
  app.require_subcommand(1);

  Overrides gen_flags, run_flags, sweep_flags, distill_flags;
  auto* gen = app.add_subcommand("generate", "write a synthetic benchmark as CSV files and a manifest");
  gen_flags.attach(gen);
  auto* run = app.add_subcommand("run", "train FedDaDiL and the FedAVG baseline, write results JSON");
  run_flags.attach(run);
  auto* sw = app.add_subcommand("sweep", "cross-product sweep over E, K, n, n_b; write a CSV table");
  sweep_flags.attach(sw);
  std::vector<std::string> axis_specs;
  sw->add_option("--axis", axis_specs, "NAME=v1,v2,... with NAME in {E, K, n, n_b}")->required();
  auto* dist = app.add_subcommand("distill", "summarise the target at several SPC values");
  distill_flags.attach(dist);
  std::string spc_text = "1,5,10,20";
  dist->add_option("--spc", spc_text, "comma-separated samples-per-class values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) {
      std::cout << generate_files(gen_flags.resolve()) << "\n";
    } else if (*run) {
      const ExperimentConfig config = run_flags.resolve();
      write_experiment(run_experiment(config), config.output_dir);
      std::cout << (std::filesystem::path(config.output_dir) / "results.json").string() << "\n";
    } else if (*sw) {
      const ExperimentConfig config = sweep_flags.resolve();
      std::vector<SweepAxis> axes;
      for (const auto& s : axis_specs) axes.push_back(parse_axis(s));
      const std::string csv = sweep_csv(axes, sweep(config, axes));
      write_text(prepare_output_dir(config.output_dir) / "sweep.csv", csv);
      std::cout << csv;
    } else if (*dist) {
      const ExperimentConfig config = distill_flags.resolve();
      const std::string csv = distill_csv(distill_sweep(config, parse_counts(spc_text)));
      write_text(prepare_output_dir(config.output_dir) / "distill.csv", csv);
      std::cout << csv;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
