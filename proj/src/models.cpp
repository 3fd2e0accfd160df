#include "dvae/models.hpp"

#include <cmath>

#include "dvae/error.hpp"

namespace dvae {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Softplus: return "softplus";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "leaky_relu") return Activation::LeakyRelu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "softplus") return Activation::Softplus;
  throw ValidationError("unknown activation '" + name + "'");
}

namespace {

double apply(Activation a, double x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::LeakyRelu: return x > 0.0 ? x : 0.2 * x;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Sigmoid: return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case Activation::Softplus: return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  return x;
}

ad::Var apply(Activation a, ad::Var x) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return ad::relu(x);
    case Activation::LeakyRelu: return ad::leaky_relu(x, 0.2);
    case Activation::Tanh: return ad::tanh(x);
    case Activation::Sigmoid: return ad::sigmoid(x);
    case Activation::Softplus: return ad::softplus(x);
  }
  return x;
}

Mlp build(std::span<const std::size_t> widths, Activation hidden, Activation output, Rng* rng) {
  if (widths.size() < 2) throw ValidationError("mlp: need at least input and output widths");
  Mlp mlp;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    if (in == 0 || out == 0) throw ValidationError("mlp: layer widths must be positive");
    DenseLayer layer{Tensor(Shape{in, out}), Tensor(Shape{1, out}), l + 2 == widths.size() ? output : hidden};
    if (rng) {
      const double bound = 1.0 / std::sqrt(double(in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& w : layer.weight.data()) w = u(*rng);
      for (double& b : layer.bias.data()) b = u(*rng);
    }
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

bool is_diagonal(const Tensor& m) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (i != j && m(i, j) != 0.0) return false;
  return true;
}

void check_square(const Tensor& m, std::size_t dim, const char* what) {
  if (m.rank() != 2 || m.rows() != dim || m.cols() != dim) {
    throw ValidationError(std::string("model: ") + what + " must be " + std::to_string(dim) + " x " +
                          std::to_string(dim));
  }
  if (determinant(m) == 0.0) throw ValidationError(std::string("model: ") + what + " is singular");
}

}  // namespace

Mlp Mlp::random(std::span<const std::size_t> widths, Activation hidden, Activation output, Rng& rng) {
  return build(widths, hidden, output, &rng);
}

Mlp Mlp::zeros(std::span<const std::size_t> widths, Activation hidden, Activation output) {
  return build(widths, hidden, output, nullptr);
}

std::size_t Mlp::input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
std::size_t Mlp::output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

void Mlp::validate() const {
  if (layers.empty()) throw ValidationError("mlp: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weight.rank() != 2 || layer.bias.rank() != 2 || layer.bias.rows() != 1 ||
        layer.bias.cols() != layer.weight.cols()) {
      throw ValidationError("mlp: layer " + std::to_string(l) + " has inconsistent weight/bias shapes");
    }
    if (l > 0 && layers[l - 1].weight.cols() != layer.weight.rows()) {
      throw ValidationError("mlp: layer " + std::to_string(l) + " input does not match previous output");
    }
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : layers) {
    h = matmul(h, layer.weight);
    const std::size_t r = h.rows(), c = h.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) h[i * c + j] = apply(layer.activation, h[i * c + j] + layer.bias[j]);
  }
  return h;
}

VaeModel VaeModel::create(std::span<const std::size_t> encoder_hidden, std::span<const std::size_t> decoder_hidden,
                          std::size_t input_dim, std::size_t latent_dim, Activation hidden, Activation decoder_output,
                          LikelihoodSpec likelihood, PriorSpec prior, Rng& rng) {
  std::vector<std::size_t> enc{input_dim};
  enc.insert(enc.end(), encoder_hidden.begin(), encoder_hidden.end());
  enc.push_back(2 * latent_dim);
  std::vector<std::size_t> dec{latent_dim};
  dec.insert(dec.end(), decoder_hidden.begin(), decoder_hidden.end());
  dec.push_back(input_dim);
  VaeModel m;
  m.encoder = Mlp::random(enc, hidden, Activation::Identity, rng);
  m.decoder = Mlp::random(dec, hidden, decoder_output, rng);
  m.likelihood = likelihood;
  m.prior = std::move(prior);
  m.latent_dim = latent_dim;
  if (const auto* diag = std::get_if<DiagGaussian>(&m.prior.family); diag && diag->learnable) {
    m.prior_log_variance = Tensor::row(diag->log_variance);
  }
  m.validate();
  return m;
}

void VaeModel::validate() const {
  encoder.validate();
  decoder.validate();
  dvae::validate(likelihood);
  dvae::validate(prior);
  if (latent_dim == 0) throw ValidationError("model: latent dimension must be positive");
  if (prior.dim != latent_dim) throw ValidationError("model: prior dimension differs from latent dimension");
  if (encoder.output_dim() != 2 * latent_dim) throw ValidationError("model: encoder must output 2D values (mean, log-variance)");
  if (decoder.input_dim() != latent_dim) throw ValidationError("model: decoder input must equal latent dimension");
  if (decoder.output_dim() != encoder.input_dim()) throw ValidationError("model: decoder output must equal data dimension");
  if (post_encoder_map) check_square(*post_encoder_map, latent_dim, "post-encoder map");
  if (pre_decoder_map) check_square(*pre_decoder_map, latent_dim, "pre-decoder map");
  if (post_encoder_shift && post_encoder_shift->size() != latent_dim)
    throw ValidationError("model: post-encoder shift must have D entries");
  if (prior_log_variance) {
    if (!std::holds_alternative<DiagGaussian>(prior.family) || prior_log_variance->size() != latent_dim)
      throw ValidationError("model: learned prior log-variance requires a D-dimensional diagonal prior");
  }
}

PriorSpec VaeModel::effective_prior() const {
  if (!prior_log_variance) return prior;
  PriorSpec p = prior;
  auto& diag = std::get<DiagGaussian>(p.family);
  diag.log_variance.assign(prior_log_variance->data().begin(), prior_log_variance->data().end());
  return p;
}

std::vector<Tensor*> VaeModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : encoder.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  for (auto& l : decoder.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  if (prior_log_variance) out.push_back(&*prior_log_variance);
  return out;
}

std::vector<const Tensor*> VaeModel::parameters() const {
  std::vector<const Tensor*> out;
  for (auto* p : const_cast<VaeModel*>(this)->parameters()) out.push_back(p);
  return out;
}

std::vector<std::string> VaeModel::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < encoder.layers.size(); ++l) {
    out.push_back("encoder." + std::to_string(l) + ".weight");
    out.push_back("encoder." + std::to_string(l) + ".bias");
  }
  for (std::size_t l = 0; l < decoder.layers.size(); ++l) {
    out.push_back("decoder." + std::to_string(l) + ".weight");
    out.push_back("decoder." + std::to_string(l) + ".bias");
  }
  if (prior_log_variance) out.push_back("prior.log_variance");
  return out;
}

double post_map_log_abs_det(const VaeModel& model) {
  if (!model.post_encoder_map) return 0.0;
  return std::log(std::abs(determinant(*model.post_encoder_map)));
}

GaussianPosterior encode(const VaeModel& model, std::span<const double> x) {
  if (x.size() != model.encoder.input_dim()) {
    throw ShapeError("encode: input of length " + std::to_string(x.size()) + ", encoder expects " +
                     std::to_string(model.encoder.input_dim()));
  }
  const std::size_t dim = model.latent_dim;
  const Tensor out = model.encoder.forward(Tensor::row({x.begin(), x.end()}));
  if (!out.all_finite()) throw NumericError("encode: non-finite encoder output");
  std::vector<double> mean(out.data().begin(), out.data().begin() + dim);
  std::vector<double> log_var(out.data().begin() + dim, out.data().end());
  if (!model.post_encoder_map) {
    if (model.post_encoder_shift)
      for (std::size_t d = 0; d < dim; ++d) mean[d] += (*model.post_encoder_shift)[d];
    return GaussianPosterior::diagonal(std::move(mean), std::move(log_var));
  }
  const Tensor& m = *model.post_encoder_map;
  std::vector<double> mapped(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) mapped[i] += m(i, j) * mean[j];
    if (model.post_encoder_shift) mapped[i] += (*model.post_encoder_shift)[i];
  }
  if (is_diagonal(m)) {
    for (std::size_t d = 0; d < dim; ++d) log_var[d] += 2.0 * std::log(std::abs(m(d, d)));
    return GaussianPosterior::diagonal(std::move(mapped), std::move(log_var));
  }
  Tensor factor(Shape{dim, dim});
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) factor(i, j) = m(i, j) * std::exp(0.5 * log_var[j]);
  return GaussianPosterior::with_factor(std::move(mapped), std::move(factor));
}

std::vector<double> reparam_sample(const GaussianPosterior& q, std::span<const double> eps) {
  if (eps.size() != q.dim()) throw ShapeError("reparam_sample: noise length differs from latent dimension");
  std::vector<double> z = q.mean;
  if (q.full) {
    for (std::size_t i = 0; i < q.dim(); ++i)
      for (std::size_t j = 0; j < q.dim(); ++j) z[i] += q.factor(i, j) * eps[j];
  } else {
    for (std::size_t i = 0; i < q.dim(); ++i) z[i] += std::exp(0.5 * q.log_variance[i]) * eps[i];
  }
  return z;
}

std::vector<double> decode_mean(const VaeModel& model, std::span<const double> z) {
  if (z.size() != model.latent_dim) throw ShapeError("decode: latent vector length differs from D");
  std::vector<double> input(z.begin(), z.end());
  if (model.pre_decoder_map) {
    const Tensor& n = *model.pre_decoder_map;
    for (std::size_t i = 0; i < input.size(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < input.size(); ++j) acc += n(i, j) * z[j];
      input[i] = acc;
    }
  }
  const Tensor out = model.decoder.forward(Tensor::row(std::move(input)));
  return {out.data().begin(), out.data().end()};
}

double decode_log_prob(const VaeModel& model, std::span<const double> z, std::span<const double> x) {
  const auto mean = decode_mean(model, z);
  return likelihood_log_prob(model.likelihood, x, mean);
}

VaeModel rescale_networks(const VaeModel& model, double beta) {
  if (!(beta > 0.0)) throw ValidationError("rescale_networks: beta must be > 0");
  if (model.post_encoder_map && !is_diagonal(*model.post_encoder_map)) {
    throw ValidationError("rescale_networks: requires a diagonal-covariance encoder");
  }
  const std::size_t dim = model.latent_dim;
  const double up = std::sqrt(beta), down = 1.0 / std::sqrt(beta);
  VaeModel out = model;
  Tensor m = model.post_encoder_map ? *model.post_encoder_map : Tensor::identity(dim);
  for (double& v : m.data()) v *= up;
  out.post_encoder_map = std::move(m);
  if (out.post_encoder_shift)
    for (double& v : out.post_encoder_shift->data()) v *= up;
  Tensor n = model.pre_decoder_map ? *model.pre_decoder_map : Tensor::identity(dim);
  for (double& v : n.data()) v *= down;
  out.pre_decoder_map = std::move(n);
  return out;
}

VaeModel rotate_networks(const VaeModel& model, const Tensor& rotation) {
  const std::size_t dim = model.latent_dim;
  if (rotation.rank() != 2 || rotation.rows() != dim || rotation.cols() != dim) {
    throw ValidationError("rotate_networks: rotation must be D x D");
  }
  const Tensor rtr = matmul_tn(rotation, rotation);
  if (max_abs_diff(rtr, Tensor::identity(dim)) > 1e-10) throw ValidationError("rotate_networks: R is not orthogonal");
  if (std::abs(determinant(rotation) - 1.0) > 1e-10) throw ValidationError("rotate_networks: det R must be +1");
  VaeModel out = model;
  out.post_encoder_map = model.post_encoder_map ? matmul(rotation, *model.post_encoder_map) : rotation;
  if (model.post_encoder_shift) {
    out.post_encoder_shift = matmul_nt(*model.post_encoder_shift, rotation);  // (R b)^T = b^T R^T
  }
  const Tensor rt = rotation.transposed();
  out.pre_decoder_map = model.pre_decoder_map ? matmul(*model.pre_decoder_map, rt) : rt;
  return out;
}

Tensor plane_rotation(std::size_t dim, std::size_t i, std::size_t j, double angle) {
  Tensor r = Tensor::identity(dim);
  const double c = std::cos(angle), s = std::sin(angle);
  r(i, i) = c;
  r(j, j) = c;
  r(i, j) = -s;
  r(j, i) = s;
  return r;
}

Tensor random_rotation(std::size_t dim, Rng& rng) {
  Tensor a = standard_normal(dim, dim, rng);
  // Modified Gram-Schmidt on columns.
  for (std::size_t c = 0; c < dim; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < dim; ++r) dot += a(r, c) * a(r, p);
      for (std::size_t r = 0; r < dim; ++r) a(r, c) -= dot * a(r, p);
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < dim; ++r) norm += a(r, c) * a(r, c);
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < dim; ++r) a(r, c) /= norm;
  }
  if (determinant(a) < 0.0)
    for (std::size_t r = 0; r < dim; ++r) a(r, 0) = -a(r, 0);
  return a;
}

// ---------------------------------------------------------------------------

BoundModel bind(ad::Tape& tape, const VaeModel& model) {
  BoundModel b;
  b.model = &model;
  b.tape = &tape;
  for (const Tensor* p : model.parameters()) b.params.push_back(tape.parameter(*p));
  if (model.prior_log_variance) b.prior_log_variance = b.params.back();
  return b;
}

ad::Var mlp_forward(const Mlp& mlp, std::span<const ad::Var> params, ad::Var x) {
  if (params.size() != 2 * mlp.layers.size()) throw Error("mlp_forward: parameter count mismatch");
  ad::Var h = x;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    h = ad::broadcast_add_rowvec(ad::matmul(h, params[2 * l]), params[2 * l + 1]);
    h = apply(mlp.layers[l].activation, h);
  }
  return h;
}

EncodedBatch encode(const BoundModel& bound, ad::Var x) {
  const VaeModel& m = *bound.model;
  const std::size_t enc_params = 2 * m.encoder.layers.size();
  ad::Var out = mlp_forward(m.encoder, std::span(bound.params).first(enc_params), x);
  const std::size_t rows = out.shape()[0], dim = m.latent_dim;
  EncodedBatch e;
  e.raw_mean = ad::slice(out, 0, rows, 0, dim);
  e.log_variance = ad::slice(out, 0, rows, dim, 2 * dim);
  e.mean = e.raw_mean;
  if (m.post_encoder_map) e.mean = ad::matmul(e.mean, bound.tape->constant(m.post_encoder_map->transposed()));
  if (m.post_encoder_shift) e.mean = ad::broadcast_add_rowvec(e.mean, bound.tape->constant(*m.post_encoder_shift));
  return e;
}

ad::Var reparam_sample(const BoundModel& bound, const EncodedBatch& enc, ad::Var eps) {
  const VaeModel& m = *bound.model;
  ad::Var z = enc.raw_mean + ad::exp(0.5 * enc.log_variance) * eps;
  if (m.post_encoder_map) z = ad::matmul(z, bound.tape->constant(m.post_encoder_map->transposed()));
  if (m.post_encoder_shift) z = ad::broadcast_add_rowvec(z, bound.tape->constant(*m.post_encoder_shift));
  return z;
}

ad::Var decode_mean(const BoundModel& bound, ad::Var z) {
  const VaeModel& m = *bound.model;
  const std::size_t enc_params = 2 * m.encoder.layers.size();
  const std::size_t dec_params = 2 * m.decoder.layers.size();
  ad::Var input = z;
  if (m.pre_decoder_map) input = ad::matmul(z, bound.tape->constant(m.pre_decoder_map->transposed()));
  return mlp_forward(m.decoder, std::span(bound.params).subspan(enc_params, dec_params), input);
}

ad::Var decode_log_prob(const BoundModel& bound, ad::Var z, ad::Var x) {
  return likelihood_log_prob(bound.model->likelihood, x, decode_mean(bound, z));
}

}  // namespace dvae
