#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dvae/models.hpp"
#include "dvae/objectives.hpp"
#include "dvae/rng.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

struct Theorem1Report {
  double lhs = 0.0;  // L_beta(x)
  double rhs = 0.0;  // ELBO under the annealed prior + (beta - 1) H + log F_beta
  double residual = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;           // KL(q || p)
  double annealed_kl = 0.0;  // KL(q || f_beta)
  double entropy = 0.0;
  double log_F = 0.0;
  bool monte_carlo = false;
};

/// x: B x P, the report averages over rows. Gaussian priors use closed forms; other
/// priors use the K noise samples on both sides. Mixture priors need `norm_rng` for log F_beta.
Theorem1Report verify_theorem1(const VaeModel& model, const Tensor& x, double beta, const Noise& noise,
                               Rng* norm_rng = nullptr);
Theorem1Report verify_theorem1(const VaeModel& model, const Tensor& x, double beta, std::size_t samples, Rng& rng);

struct CorollaryReport {
  double lhs = 0.0;  // L_beta(x; theta, phi)
  double rhs = 0.0;  // L_{H,beta}(x; theta', phi') + c
  double c = 0.0;
  double value_residual = 0.0;
  double grad_residual = 0.0;  // max elementwise |a - b| / (|b| + 1e-8)
  std::size_t worst_parameter = 0;
};

double corollary_constant(const PriorSpec& prior, double beta);
CorollaryReport verify_corollary_gauss(const VaeModel& model, const Tensor& x, double beta, const Noise& noise);

struct RotationReport {
  double lhs = 0.0;  // L_beta of the original model
  double rhs = 0.0;  // L_beta of the rotated model
  double residual = 0.0;
  double reconstruction_residual = 0.0;
  double kl_residual = 0.0;
  bool expected_to_differ = false;  // prior is not isotropic
};

RotationReport verify_rotation_invariance(const VaeModel& model, const Tensor& x, double beta, const Tensor& rotation,
                                          const Noise& noise);

struct BiasStudyConfig {
  std::size_t n = 1024;
  std::size_t batch = 64;
  std::size_t dim = 1;
  std::vector<double> separations{0.0, 2.0, 5.0, 100.0};
  std::size_t trials = 200;
  std::size_t oracle_samples = 20000;
  std::uint64_t seed = 0;
};

struct BiasStudyRow {
  std::size_t n = 0, batch = 0, dim = 0, trials = 0;
  double separation = 0.0;
  double mean_estimate = 0.0;  // mean of the naive estimator
  double estimate_se = 0.0;
  double predicted = 0.0;  // log n + mean encoder entropy
  double oracle = 0.0;
  double oracle_se = 0.0;
  double gap_predicted = 0.0;  // mean_estimate - predicted
  double gap_oracle = 0.0;     // mean_estimate - oracle
};

BiasStudyRow bias_study_row(const BiasStudyConfig& config, double separation);
std::vector<BiasStudyRow> bias_study(const BiasStudyConfig& config);

// ---------------------------------------------------------------------------
// Randomised sweeps

struct SweepResult {
  std::string name;
  std::size_t trials = 0;
  double worst = 0.0;  // largest residual, or the smallest gap for "must differ" checks
  double tolerance = 0.0;
  bool passed = false;
  std::vector<std::string> failures;
};

struct VerifyConfig {
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::size_t batch = 4;
  std::size_t input_dim = 5;
  std::size_t hidden = 8;
  double student_t_nu = 5.0;
  std::size_t mc_samples = 16;
};

/// n points of the D-dimensional integer lattice scaled by `spacing` (first n in lexicographic order).
Tensor lattice_means(std::size_t n, std::size_t dim, double spacing);

SweepResult sweep_theorem1_gaussian(const VerifyConfig& config);
SweepResult sweep_theorem1_student_t(const VerifyConfig& config);
SweepResult sweep_corollary_value(const VerifyConfig& config);
SweepResult sweep_corollary_gradient(const VerifyConfig& config);
SweepResult sweep_rotation_isotropic(const VerifyConfig& config);
SweepResult sweep_rotation_anisotropic(const VerifyConfig& config);
std::vector<SweepResult> run_verification(const VerifyConfig& config);

std::string sweeps_to_json(const std::vector<SweepResult>& sweeps);
std::string sweeps_to_text(const std::vector<SweepResult>& sweeps);
std::string bias_rows_to_json(const std::vector<BiasStudyRow>& rows);
std::string bias_rows_to_text(const std::vector<BiasStudyRow>& rows);

}  // namespace dvae
