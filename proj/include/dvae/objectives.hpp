#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dvae/autodiff.hpp"
#include "dvae/models.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

enum class ObjectiveKind { Elbo, BetaVae, EntropyRegElbo, Decomp };
enum class DivergenceKind { InclusiveKl, MmdDimwise };

std::string objective_name(ObjectiveKind kind);
ObjectiveKind parse_objective(const std::string& name);
std::string divergence_name(DivergenceKind kind);
DivergenceKind parse_divergence(const std::string& name);

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::Elbo;
  double alpha = 0.0;
  double beta = 1.0;
  DivergenceKind divergence = DivergenceKind::InclusiveKl;
  std::size_t recon_samples = 1;  // K

  void validate() const;
};

/// Reparameterisation noise for one minibatch of B rows: (K*B) x D, row k*B + b.
struct Noise {
  Tensor eps;
  std::size_t samples = 1;

  static Noise draw(std::size_t batch, std::size_t dim, std::size_t samples, Rng& rng);
  static Noise zeros(std::size_t batch, std::size_t dim, std::size_t samples = 1);
};

/// Recorded terms; every entry is a scalar node (divergence unset when not computed).
struct ObjectiveNodes {
  ad::Var value;
  ad::Var reconstruction;  // batch mean of the K-sample average of log p(x|z)
  ad::Var kl;              // batch mean of KL(q(z|x) || p(z))
  ad::Var divergence;      // D(q(z), p(z)) over the minibatch's aggregate encoding; only when alpha > 0
  ad::Var entropy;         // batch mean of H[q(z|x)]
  ad::Var log_det_cov;     // batch mean of log |S(x)|
};

/// Divergence inputs drawn outside the objective: prior samples z_j ~ p(z), J x D.
struct DivergenceSamples {
  Tensor prior;
};

ObjectiveNodes record_objective(const BoundModel& bound, ad::Var x, const ObjectiveSpec& spec, const Noise& noise,
                                const DivergenceSamples* divergence = nullptr);

struct ObjectiveTerms {
  double value = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double divergence = 0.0;
  double entropy = 0.0;
  double log_det_cov = 0.0;
};

struct ObjectiveGradient {
  ObjectiveTerms terms;
  std::vector<Tensor> grads;  // VaeModel::parameters() order
};

ObjectiveTerms evaluate_objective(const VaeModel& model, const Tensor& x, const ObjectiveSpec& spec, const Noise& noise,
                                  const DivergenceSamples* divergence = nullptr);
ObjectiveGradient objective_gradient(const VaeModel& model, const Tensor& x, const ObjectiveSpec& spec,
                                     const Noise& noise, const DivergenceSamples* divergence = nullptr);

ObjectiveTerms elbo(const VaeModel& model, const Tensor& x, const Noise& noise);
ObjectiveTerms beta_vae(const VaeModel& model, const Tensor& x, double beta, const Noise& noise);
ObjectiveTerms entropy_reg_elbo(const VaeModel& model, const Tensor& x, double beta, const Noise& noise);
ObjectiveTerms decomp_objective(const VaeModel& model, const Tensor& x, double alpha, double beta,
                                DivergenceKind divergence, const Noise& noise, const DivergenceSamples& samples);

}  // namespace dvae
