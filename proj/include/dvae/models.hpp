#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dvae/autodiff.hpp"
#include "dvae/distributions.hpp"
#include "dvae/rng.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

enum class Activation { Identity, Relu, LeakyRelu, Tanh, Sigmoid, Softplus };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);

struct DenseLayer {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
  Activation activation = Activation::Identity;
};

struct Mlp {
  std::vector<DenseLayer> layers;

  /// widths = {in, hidden..., out}; weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Mlp random(std::span<const std::size_t> widths, Activation hidden, Activation output, Rng& rng);
  static Mlp zeros(std::span<const std::size_t> widths, Activation hidden, Activation output);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  void validate() const;
  Tensor forward(const Tensor& x) const;
};

/// Encoder/decoder pair with its likelihood and prior. The optional fixed maps carry the
/// latent-space transforms: the posterior becomes N(M mu + b, M S M^T) and the decoder
/// sees N z instead of z.
struct VaeModel {
  Mlp encoder;
  Mlp decoder;
  LikelihoodSpec likelihood = GaussianFixedScale{};
  PriorSpec prior;
  std::size_t latent_dim = 0;
  std::optional<Tensor> post_encoder_map;    // M, D x D
  std::optional<Tensor> post_encoder_shift;  // b, 1 x D
  std::optional<Tensor> pre_decoder_map;     // N, D x D
  std::optional<Tensor> prior_log_variance;  // 1 x D, present iff the diagonal prior is learnable

  static VaeModel create(std::span<const std::size_t> encoder_hidden, std::span<const std::size_t> decoder_hidden,
                         std::size_t input_dim, std::size_t latent_dim, Activation hidden, Activation decoder_output,
                         LikelihoodSpec likelihood, PriorSpec prior, Rng& rng);

  void validate() const;
  /// Prior with learned parameters substituted in.
  PriorSpec effective_prior() const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
};

GaussianPosterior encode(const VaeModel& model, std::span<const double> x);
/// z = mean + A eps, A the posterior factor.
std::vector<double> reparam_sample(const GaussianPosterior& q, std::span<const double> eps);
double decode_log_prob(const VaeModel& model, std::span<const double> z, std::span<const double> x);
/// Runs the decoder (after the pre-decoder map) and returns its mean.
std::vector<double> decode_mean(const VaeModel& model, std::span<const double> z);

/// Transformed model realising mean -> sqrt(beta) mean, S -> beta S, p(x|z) -> p(x|z/sqrt(beta)).
VaeModel rescale_networks(const VaeModel& model, double beta);
/// Transformed model with posterior N(R mu, R S R^T) and decoder p(x | R^T z).
VaeModel rotate_networks(const VaeModel& model, const Tensor& rotation);

/// Proper rotation in the (i, j) plane.
Tensor plane_rotation(std::size_t dim, std::size_t i, std::size_t j, double angle);
/// Haar-ish random rotation (Gram-Schmidt of a Gaussian matrix, det fixed to +1).
Tensor random_rotation(std::size_t dim, Rng& rng);

// ---------------------------------------------------------------------------
// Recorded forms

/// Model parameters placed on a tape as leaves, in `VaeModel::parameters()` order.
struct BoundModel {
  const VaeModel* model = nullptr;
  ad::Tape* tape = nullptr;
  std::vector<ad::Var> params;
  ad::Var prior_log_variance;  // unset unless the prior is learnable
};

BoundModel bind(ad::Tape& tape, const VaeModel& model);

struct EncodedBatch {
  ad::Var raw_mean;      // B x D, encoder head
  ad::Var log_variance;  // B x D, encoder head
  ad::Var mean;          // B x D, after the post-encoder map
};

ad::Var mlp_forward(const Mlp& mlp, std::span<const ad::Var> params, ad::Var x);
EncodedBatch encode(const BoundModel& bound, ad::Var x);
/// eps: B x D. Returns (raw_mean + sigma * eps) M^T + b.
ad::Var reparam_sample(const BoundModel& bound, const EncodedBatch& enc, ad::Var eps);
ad::Var decode_mean(const BoundModel& bound, ad::Var z);
/// B x 1 log p(x | z).
ad::Var decode_log_prob(const BoundModel& bound, ad::Var z, ad::Var x);

/// log |det M| of the post-encoder map (0 without one).
double post_map_log_abs_det(const VaeModel& model);

}  // namespace dvae
