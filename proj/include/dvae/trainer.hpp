#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dvae/config.hpp"
#include "dvae/datasets.hpp"
#include "dvae/models.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor> m, v;
};

/// One bias-corrected Adam descent step on `params` (pass negated gradients to ascend).
void adam_step(AdamState& state, const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

struct EpochRecord {
  std::size_t epoch = 0;
  double objective = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double divergence = 0.0;
  double encoder_entropy = 0.0;
};

using MetricRow = std::pair<std::string, double>;

struct TrainResult {
  VaeModel model;
  std::vector<EpochRecord> history;
  std::vector<MetricRow> metrics;
};

Dataset load_dataset(const DatasetConfig& config, std::uint64_t seed);
VaeModel build_model(const ExperimentConfig& config, const Dataset& data, Rng& rng);

/// Runs the epoch loop and the end-of-training metrics without touching the filesystem.
TrainResult train_model(const ExperimentConfig& config, const Dataset& data);
std::vector<MetricRow> compute_metrics(const ExperimentConfig& config, const VaeModel& model, const Dataset& data);

std::vector<std::string> history_columns();
void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
void write_metrics(const std::filesystem::path& path, const std::vector<MetricRow>& metrics);
void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& config, const std::vector<std::string>& files);

/// Loads the dataset, trains, and writes checkpoint.dvae, history.csv, metrics.csv,
/// config.json and manifest.json into `out_dir`.
TrainResult train(const ExperimentConfig& config, const std::filesystem::path& out_dir);

}  // namespace dvae
