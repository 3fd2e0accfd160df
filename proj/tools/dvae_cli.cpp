#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dvae/config.hpp"
#include "dvae/error.hpp"
#include "dvae/io.hpp"
#include "dvae/trainer.hpp"
#include "dvae/verification.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "experiment configuration (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "override the configured seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--override", c.overrides, "dot-path assignment into the config, e.g. objective.alpha=8");
}

json load_with_overrides(const Common& c) {
  json j = c.config.empty() ? json::object() : dvae::read_json_file(c.config);
  for (const auto& o : c.overrides) dvae::apply_override(j, o);
  if (c.seed) j["seed"] = *c.seed;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw dvae::IoError("cannot write '" + path.string() + "'");
  out << text;
}

int run_gen_data(const Common& c) {
  json j = load_with_overrides(c);
  const auto config = dvae::experiment_from_json(j);
  const dvae::Dataset d = dvae::load_dataset(config.dataset, config.seed);
  const fs::path dir = c.out.empty() ? fs::path("data") : fs::path(c.out);
  fs::create_directories(dir);
  dvae::write_npy(dir / "observations.npy", d.observations);
  if (!d.factors.empty()) {
    dvae::Tensor f(dvae::Shape{d.size(), d.num_factors()});
    for (std::size_t i = 0; i < d.factors.size(); ++i) f[i] = d.factors[i];
    dvae::write_npy(dir / "factors.npy", f, "<f8");
  }
  std::cout << "wrote " << d.size() << " x " << d.dim() << " observations (" << d.provenance << ") to " << dir.string()
            << "\n";
  return 0;
}

int run_train(const Common& c) {
  const auto config = dvae::experiment_from_json(load_with_overrides(c));
  const fs::path dir = c.out.empty() ? fs::path(config.output_dir) : fs::path(c.out);
  const auto result = dvae::train(config, dir);
  const auto& last = result.history.back();
  std::cout << "epoch " << last.epoch << " objective " << dvae::format_double(last.objective) << "\n";
  for (const auto& [name, value] : result.metrics) std::cout << name << " " << dvae::format_double(value) << "\n";
  std::cout << "run written to " << dir.string() << "\n";
  return 0;
}

int run_eval(const Common& c, const std::string& checkpoint) {
  const auto config = dvae::experiment_from_json(load_with_overrides(c));
  const auto ck = dvae::load_checkpoint(checkpoint);
  const dvae::Dataset data = dvae::load_dataset(config.dataset, config.seed);
  const auto metrics = dvae::compute_metrics(config, ck.model, data);
  const fs::path dir = c.out.empty() ? fs::path(config.output_dir) : fs::path(c.out);
  fs::create_directories(dir);
  dvae::write_metrics(dir / "metrics.csv", metrics);
  for (const auto& [name, value] : metrics) std::cout << name << " " << dvae::format_double(value) << "\n";
  return 0;
}

int run_verify(const Common& c) {
  const auto config = dvae::verify_from_json(load_with_overrides(c));
  const auto sweeps = dvae::run_verification(config.sweep);
  const fs::path dir = c.out.empty() ? fs::path(config.output_dir) : fs::path(c.out);
  write_text(dir / "verify.json", dvae::sweeps_to_json(sweeps) + "\n");
  const std::string text = dvae::sweeps_to_text(sweeps);
  write_text(dir / "verify.txt", text);
  std::cout << text;
  for (const auto& s : sweeps)
    if (!s.passed) return 2;
  return 0;
}

int run_bias(const Common& c) {
  const auto config = dvae::bias_from_json(load_with_overrides(c));
  const auto rows = dvae::bias_study(config.study);
  const fs::path dir = c.out.empty() ? fs::path(config.output_dir) : fs::path(c.out);
  write_text(dir / "bias.json", dvae::bias_rows_to_json(rows) + "\n");
  const std::string text = dvae::bias_rows_to_text(rows);
  write_text(dir / "bias.txt", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dvae: decomposition VAEs, verification harness and estimator studies"};
  app.require_subcommand(1);
  Common gen, tr, ev, ver, bias;
  std::string checkpoint;
  add_common(app.add_subcommand("gen-data", "write a configured dataset as NPY files"), gen, false);
  add_common(app.add_subcommand("train", "train a model and write its run directory"), tr, true);
  auto* eval_cmd = app.add_subcommand("eval", "recompute metrics from a checkpoint");
  add_common(eval_cmd, ev, true);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  add_common(app.add_subcommand("verify", "run the identity and invariance sweeps"), ver, false);
  add_common(app.add_subcommand("bias-study", "tabulate the minibatch entropy estimator against its oracle"), bias, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-data") return run_gen_data(gen);
    if (name == "train") return run_train(tr);
    if (name == "eval") return run_eval(ev, checkpoint);
    if (name == "verify") return run_verify(ver);
    return run_bias(bias);
  } catch (const dvae::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const dvae::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
