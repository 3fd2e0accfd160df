#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "dvae/datasets.hpp"
#include "dvae/distributions.hpp"
#include "dvae/models.hpp"
#include "dvae/objectives.hpp"
#include "dvae/verification.hpp"

namespace dvae {

inline constexpr int kConfigVersion = 1;

struct DatasetConfig {
  std::string source = "pinwheel";  // pinwheel | factor-images | npy | idx
  PinwheelOptions pinwheel;
  FactorImageOptions images;
  std::string path;         // npy / idx file
  std::size_t limit = 0;    // keep the first `limit` rows (0 keeps all)
  std::size_t resize = 0;   // idx: nearest-neighbour resize of square images (0 keeps the size)
};

struct ModelConfig {
  std::vector<std::size_t> encoder_hidden{100};
  std::vector<std::size_t> decoder_hidden{100};
  Activation hidden_activation = Activation::Relu;
  Activation decoder_output = Activation::Identity;
  std::size_t latent_dim = 2;
  LikelihoodSpec likelihood = GaussianFixedScale{};
};

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

struct MetricOptions {
  std::size_t inclusive_kl_samples = 2000;
  std::size_t mmd_samples = 1000;
  std::size_t disentanglement_batch = 64;
  std::size_t disentanglement_votes = 800;
  double collapse_threshold = 0.05;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  DatasetConfig dataset;
  ModelConfig model;
  PriorSpec prior = isotropic_prior(2);
  nlohmann::json prior_json;  // as given, so the dimension can follow latent_dim
  ObjectiveSpec objective;
  OptimizerConfig optimizer;
  std::size_t batch_size = 100;
  std::size_t epochs = 10;
  std::size_t divergence_samples = 0;  // prior draws per step for the divergence term; 0 means B
  std::uint64_t seed = 0;
  std::vector<std::string> metrics;
  MetricOptions metric_options;
  std::string output_dir = "run";

  void validate() const;
};

/// Applies a dot-path override "a.b.c=value"; the value is parsed as JSON and taken as a
/// string when that fails.
void apply_override(nlohmann::json& config, const std::string& assignment);

nlohmann::json read_json_file(const std::filesystem::path& path);

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

PriorSpec prior_from_json(const nlohmann::json& j, std::size_t dim);
nlohmann::json prior_to_json(const PriorSpec& prior);
LikelihoodSpec likelihood_from_json(const nlohmann::json& j);
nlohmann::json likelihood_to_json(const LikelihoodSpec& likelihood);
ObjectiveSpec objective_from_json(const nlohmann::json& j);
nlohmann::json objective_to_json(const ObjectiveSpec& objective);

struct VerifyRunConfig {
  VerifyConfig sweep;
  std::string output_dir = "verify";
};
VerifyRunConfig verify_from_json(const nlohmann::json& j);

struct BiasRunConfig {
  BiasStudyConfig study;
  std::string output_dir = "bias-study";
};
BiasRunConfig bias_from_json(const nlohmann::json& j);

}  // namespace dvae
