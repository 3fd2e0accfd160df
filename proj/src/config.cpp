#include "dvae/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <cmath>

#include "dvae/divergences.hpp"
#include "dvae/error.hpp"

namespace dvae {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ValidationError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing key '" + key + "'");
  return get_or<T>(j, key, T{}, where);
}

json activation_json(Activation a) { return activation_name(a); }

}  // namespace

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &config;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ValidationError("override '" + path + "': '" + parts[i] + "' is not an object");
    node = &(*node)[parts[i]];
  }
  if (!node->is_object() && !node->is_null()) throw ValidationError("override '" + path + "': parent is not an object");
  (*node)[parts.back()] = value;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("config file '" + path.string() + "' is not valid JSON");
  return j;
}

PriorSpec prior_from_json(const json& j, std::size_t dim) {
  const std::string where = "prior";
  const auto family = require<std::string>(j, "family", where);
  PriorSpec p;
  if (family == "isotropic") {
    check_keys(j, {"family", "variance"}, where);
    p = isotropic_prior(dim, get_or(j, "variance", 1.0, where));
  } else if (family == "diagonal") {
    check_keys(j, {"family", "variances", "log_variance", "learnable", "init"}, where);
    const auto init = get_or<std::string>(j, "init", "ones", where);
    if (init != "ones" && init != "pca-softmax") throw ValidationError("prior.init: expected 'ones' or 'pca-softmax'");
    if (j.contains("variances") && j.contains("log_variance"))
      throw ValidationError("prior: give either variances or log_variance, not both");
    p = diagonal_prior(std::vector<double>(dim, 1.0), get_or(j, "learnable", false, where));
    auto& diag = std::get<DiagGaussian>(p.family);
    if (j.contains("log_variance")) {
      diag.log_variance = require<std::vector<double>>(j, "log_variance", where);
    } else if (j.contains("variances")) {
      const auto var = require<std::vector<double>>(j, "variances", where);
      diag.log_variance.clear();
      for (double v : var) {
        if (!(v > 0.0)) throw ValidationError("prior.variances: entries must be > 0");
        diag.log_variance.push_back(std::log(v));
      }
    }
    if (diag.log_variance.size() != dim) throw ValidationError("prior: need one variance per latent dimension");
    std::get<DiagGaussian>(p.family).init = init == "ones" ? DiagInit::Ones : DiagInit::PcaSoftmax;
  } else if (family == "student-t") {
    check_keys(j, {"family", "nu"}, where);
    p = student_t_prior(dim, require<double>(j, "nu", where));
  } else if (family == "mixture") {
    check_keys(j, {"family", "weights", "means", "variances"}, where);
    GaussianMixture g{require<std::vector<double>>(j, "weights", where),
                      require<std::vector<std::vector<double>>>(j, "means", where),
                      require<std::vector<std::vector<double>>>(j, "variances", where)};
    p = PriorSpec{std::move(g), dim};
  } else if (family == "unit-square-mixture") {
    check_keys(j, {"family", "variance"}, where);
    if (dim != 2) throw ValidationError("prior: unit-square-mixture is two-dimensional");
    p = unit_square_mixture_prior(get_or(j, "variance", 0.03, where));
  } else if (family == "spike-slab") {
    check_keys(j, {"family", "gamma", "slab_off_variance"}, where);
    p = spike_slab_prior(dim, require<double>(j, "gamma", where), get_or(j, "slab_off_variance", 0.05, where));
  } else {
    throw ValidationError("prior.family: unknown family '" + family + "'");
  }
  validate(p);
  return p;
}

json prior_to_json(const PriorSpec& prior) {
  return std::visit(
      [&](const auto& f) -> json {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, IsotropicGaussian>) {
          return {{"family", "isotropic"}, {"variance", f.variance}};
        } else if constexpr (std::is_same_v<T, DiagGaussian>) {
          return {{"family", "diagonal"},
                  {"log_variance", f.log_variance},
                  {"learnable", f.learnable},
                  {"init", f.init == DiagInit::Ones ? "ones" : "pca-softmax"}};
        } else if constexpr (std::is_same_v<T, StudentTProduct>) {
          return {{"family", "student-t"}, {"nu", f.nu}};
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          return {{"family", "mixture"}, {"weights", f.weights}, {"means", f.means}, {"variances", f.variances}};
        } else {
          return {{"family", "spike-slab"}, {"gamma", f.gamma}, {"slab_off_variance", f.slab_off_variance}};
        }
      },
      prior.family);
}

LikelihoodSpec likelihood_from_json(const json& j) {
  const std::string where = "model.likelihood";
  const auto type = require<std::string>(j, "type", where);
  LikelihoodSpec l;
  if (type == "bernoulli") {
    check_keys(j, {"type"}, where);
    l = BernoulliMean{};
  } else if (type == "laplace") {
    check_keys(j, {"type", "scale"}, where);
    l = LaplaceFixedScale{get_or(j, "scale", 0.1, where)};
  } else if (type == "gaussian") {
    check_keys(j, {"type", "variance"}, where);
    l = GaussianFixedScale{get_or(j, "variance", 1.0, where)};
  } else {
    throw ValidationError(where + ".type: unknown likelihood '" + type + "'");
  }
  validate(l);
  return l;
}

json likelihood_to_json(const LikelihoodSpec& likelihood) {
  if (std::holds_alternative<BernoulliMean>(likelihood)) return {{"type", "bernoulli"}};
  if (const auto* l = std::get_if<LaplaceFixedScale>(&likelihood)) return {{"type", "laplace"}, {"scale", l->scale}};
  return {{"type", "gaussian"}, {"variance", std::get<GaussianFixedScale>(likelihood).variance}};
}

ObjectiveSpec objective_from_json(const json& j) {
  const std::string where = "objective";
  check_keys(j, {"kind", "alpha", "beta", "divergence", "recon_samples"}, where);
  ObjectiveSpec o;
  o.kind = parse_objective(get_or<std::string>(j, "kind", "elbo", where));
  o.alpha = get_or(j, "alpha", 0.0, where);
  o.beta = get_or(j, "beta", 1.0, where);
  o.divergence = parse_divergence(get_or<std::string>(j, "divergence", "inclusive-kl", where));
  o.recon_samples = get_or<std::size_t>(j, "recon_samples", 1, where);
  o.validate();
  return o;
}

json objective_to_json(const ObjectiveSpec& o) {
  return {{"kind", objective_name(o.kind)},
          {"alpha", o.alpha},
          {"beta", o.beta},
          {"divergence", divergence_name(o.divergence)},
          {"recon_samples", o.recon_samples}};
}

void ExperimentConfig::validate() const {
  if (version != kConfigVersion) throw ValidationError("config: unsupported version " + std::to_string(version));
  if (batch_size < 1) throw ValidationError("config: batch_size must be >= 1");
  if (epochs < 1) throw ValidationError("config: epochs must be >= 1");
  if (model.latent_dim < 1) throw ValidationError("model.latent_dim must be >= 1");
  if (!(optimizer.lr > 0.0)) throw ValidationError("optimizer.lr must be > 0");
  if (optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 || optimizer.beta2 < 0.0 || optimizer.beta2 >= 1.0)
    throw ValidationError("optimizer: beta1 and beta2 must lie in [0, 1)");
  if (!(optimizer.eps > 0.0)) throw ValidationError("optimizer.eps must be > 0");
  if (optimizer.grad_clip < 0.0) throw ValidationError("optimizer.grad_clip must be >= 0");
  if (prior.dim != model.latent_dim) throw ValidationError("prior dimension differs from model.latent_dim");
  objective.validate();
  if (objective.kind == ObjectiveKind::EntropyRegElbo && !prior.is_gaussian())
    throw ValidationError("objective entropy-reg-elbo is only defined for a Gaussian prior");
  static const std::set<std::string> known{"sparsity", "disentanglement", "inclusive-kl", "mmd", "encoder-entropy",
                                           "elbo"};
  for (const auto& m : metrics)
    if (!known.count(m)) throw ValidationError("metrics: unknown metric '" + m + "'");
  if ((dataset.source == "npy" || dataset.source == "idx") && !std::filesystem::exists(dataset.path))
    throw ValidationError("dataset.path: file '" + dataset.path + "' does not exist");
}

ExperimentConfig experiment_from_json(const json& j) {
  check_keys(j,
             {"version", "dataset", "model", "prior", "objective", "optimizer", "batch_size", "epochs", "seed", "metrics",
              "metric_options", "divergence_samples", "output_dir"},
             "config");
  ExperimentConfig c;
  c.version = get_or(j, "version", kConfigVersion, "config");

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, {"source", "pinwheel", "images", "path", "limit", "resize"}, "dataset");
    c.dataset.source = get_or<std::string>(d, "source", "pinwheel", "dataset");
    static const std::set<std::string> sources{"pinwheel", "factor-images", "npy", "idx"};
    if (!sources.count(c.dataset.source)) throw ValidationError("dataset.source: unknown source '" + c.dataset.source + "'");
    if (d.contains("pinwheel")) {
      const json& p = d.at("pinwheel");
      check_keys(p, {"num_classes", "per_class", "radial_std", "tangential_std", "rate"}, "dataset.pinwheel");
      auto& o = c.dataset.pinwheel;
      o.num_classes = get_or(p, "num_classes", o.num_classes, "dataset.pinwheel");
      o.per_class = get_or(p, "per_class", o.per_class, "dataset.pinwheel");
      o.radial_std = get_or(p, "radial_std", o.radial_std, "dataset.pinwheel");
      o.tangential_std = get_or(p, "tangential_std", o.tangential_std, "dataset.pinwheel");
      o.rate = get_or(p, "rate", o.rate, "dataset.pinwheel");
    }
    if (d.contains("images")) {
      const json& p = d.at("images");
      check_keys(p, {"xpos", "ypos", "scale", "shape", "canvas"}, "dataset.images");
      auto& o = c.dataset.images;
      o.xpos = get_or(p, "xpos", o.xpos, "dataset.images");
      o.ypos = get_or(p, "ypos", o.ypos, "dataset.images");
      o.scale = get_or(p, "scale", o.scale, "dataset.images");
      o.shape = get_or(p, "shape", o.shape, "dataset.images");
      o.canvas = get_or(p, "canvas", o.canvas, "dataset.images");
    }
    c.dataset.path = get_or<std::string>(d, "path", "", "dataset");
    c.dataset.limit = get_or<std::size_t>(d, "limit", 0, "dataset");
    c.dataset.resize = get_or<std::size_t>(d, "resize", 0, "dataset");
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, {"encoder_hidden", "decoder_hidden", "hidden_activation", "decoder_output", "latent_dim", "likelihood"},
               "model");
    c.model.encoder_hidden = get_or(m, "encoder_hidden", c.model.encoder_hidden, "model");
    c.model.decoder_hidden = get_or(m, "decoder_hidden", c.model.decoder_hidden, "model");
    c.model.hidden_activation = parse_activation(get_or<std::string>(m, "hidden_activation", "relu", "model"));
    c.model.decoder_output = parse_activation(get_or<std::string>(m, "decoder_output", "identity", "model"));
    c.model.latent_dim = get_or<std::size_t>(m, "latent_dim", 2, "model");
    if (m.contains("likelihood")) c.model.likelihood = likelihood_from_json(m.at("likelihood"));
  }

  c.prior_json = j.contains("prior") ? j.at("prior") : json{{"family", "isotropic"}};
  c.prior = prior_from_json(c.prior_json, c.model.latent_dim);
  if (j.contains("objective")) c.objective = objective_from_json(j.at("objective"));

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o, {"lr", "beta1", "beta2", "eps", "grad_clip"}, "optimizer");
    c.optimizer.lr = get_or(o, "lr", c.optimizer.lr, "optimizer");
    c.optimizer.beta1 = get_or(o, "beta1", c.optimizer.beta1, "optimizer");
    c.optimizer.beta2 = get_or(o, "beta2", c.optimizer.beta2, "optimizer");
    c.optimizer.eps = get_or(o, "eps", c.optimizer.eps, "optimizer");
    c.optimizer.grad_clip = get_or(o, "grad_clip", c.optimizer.grad_clip, "optimizer");
  }
  c.batch_size = get_or(j, "batch_size", c.batch_size, "config");
  c.epochs = get_or(j, "epochs", c.epochs, "config");
  c.seed = get_or<std::uint64_t>(j, "seed", 0, "config");
  c.metrics = get_or(j, "metrics", c.metrics, "config");
  c.divergence_samples = get_or(j, "divergence_samples", c.divergence_samples, "config");
  if (j.contains("metric_options")) {
    const json& m = j.at("metric_options");
    check_keys(m,
               {"inclusive_kl_samples", "mmd_samples", "disentanglement_batch", "disentanglement_votes",
                "collapse_threshold"},
               "metric_options");
    auto& o = c.metric_options;
    o.inclusive_kl_samples = get_or(m, "inclusive_kl_samples", o.inclusive_kl_samples, "metric_options");
    o.mmd_samples = get_or(m, "mmd_samples", o.mmd_samples, "metric_options");
    o.disentanglement_batch = get_or(m, "disentanglement_batch", o.disentanglement_batch, "metric_options");
    o.disentanglement_votes = get_or(m, "disentanglement_votes", o.disentanglement_votes, "metric_options");
    o.collapse_threshold = get_or(m, "collapse_threshold", o.collapse_threshold, "metric_options");
  }
  c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir, "config");
  c.validate();
  return c;
}

json experiment_to_json(const ExperimentConfig& c) {
  const auto& p = c.dataset.pinwheel;
  const auto& im = c.dataset.images;
  json prior = c.prior_json.is_null() ? prior_to_json(c.prior) : c.prior_json;
  return {{"version", c.version},
          {"dataset",
           {{"source", c.dataset.source},
            {"pinwheel",
             {{"num_classes", p.num_classes},
              {"per_class", p.per_class},
              {"radial_std", p.radial_std},
              {"tangential_std", p.tangential_std},
              {"rate", p.rate}}},
            {"images",
             {{"xpos", im.xpos}, {"ypos", im.ypos}, {"scale", im.scale}, {"shape", im.shape}, {"canvas", im.canvas}}},
            {"path", c.dataset.path},
            {"limit", c.dataset.limit},
            {"resize", c.dataset.resize}}},
          {"model",
           {{"encoder_hidden", c.model.encoder_hidden},
            {"decoder_hidden", c.model.decoder_hidden},
            {"hidden_activation", activation_json(c.model.hidden_activation)},
            {"decoder_output", activation_json(c.model.decoder_output)},
            {"latent_dim", c.model.latent_dim},
            {"likelihood", likelihood_to_json(c.model.likelihood)}}},
          {"prior", prior},
          {"objective", objective_to_json(c.objective)},
          {"optimizer",
           {{"lr", c.optimizer.lr},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps},
            {"grad_clip", c.optimizer.grad_clip}}},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"divergence_samples", c.divergence_samples},
          {"seed", c.seed},
          {"metrics", c.metrics},
          {"metric_options",
           {{"inclusive_kl_samples", c.metric_options.inclusive_kl_samples},
            {"mmd_samples", c.metric_options.mmd_samples},
            {"disentanglement_batch", c.metric_options.disentanglement_batch},
            {"disentanglement_votes", c.metric_options.disentanglement_votes},
            {"collapse_threshold", c.metric_options.collapse_threshold}}},
          {"output_dir", c.output_dir}};
}

ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json j = read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return experiment_from_json(j);
}

VerifyRunConfig verify_from_json(const json& j) {
  const std::string where = "verify config";
  check_keys(j, {"version", "trials", "seed", "batch", "input_dim", "hidden", "student_t_nu", "mc_samples", "output_dir"},
             where);
  if (get_or(j, "version", kConfigVersion, where) != kConfigVersion) throw ValidationError(where + ": unsupported version");
  VerifyRunConfig c;
  auto& s = c.sweep;
  s.trials = get_or(j, "trials", s.trials, where);
  s.seed = get_or(j, "seed", s.seed, where);
  s.batch = get_or(j, "batch", s.batch, where);
  s.input_dim = get_or(j, "input_dim", s.input_dim, where);
  s.hidden = get_or(j, "hidden", s.hidden, where);
  s.student_t_nu = get_or(j, "student_t_nu", s.student_t_nu, where);
  s.mc_samples = get_or(j, "mc_samples", s.mc_samples, where);
  c.output_dir = get_or(j, "output_dir", c.output_dir, where);
  if (s.trials < 1 || s.batch < 1 || s.input_dim < 1 || s.hidden < 1 || s.mc_samples < 1)
    throw ValidationError(where + ": counts must be >= 1");
  if (!(s.student_t_nu > 0.0)) throw ValidationError(where + ": student_t_nu must be > 0");
  return c;
}

BiasRunConfig bias_from_json(const json& j) {
  const std::string where = "bias-study config";
  check_keys(j, {"version", "n", "batch", "dim", "separations", "trials", "oracle_samples", "seed", "output_dir"}, where);
  if (get_or(j, "version", kConfigVersion, where) != kConfigVersion) throw ValidationError(where + ": unsupported version");
  BiasRunConfig c;
  auto& s = c.study;
  s.n = get_or(j, "n", s.n, where);
  s.batch = get_or(j, "batch", s.batch, where);
  s.dim = get_or(j, "dim", s.dim, where);
  s.separations = get_or(j, "separations", s.separations, where);
  s.trials = get_or(j, "trials", s.trials, where);
  s.oracle_samples = get_or(j, "oracle_samples", s.oracle_samples, where);
  s.seed = get_or(j, "seed", s.seed, where);
  c.output_dir = get_or(j, "output_dir", c.output_dir, where);
  if (s.n > kOracleMaxComponents) throw ValidationError(where + ": n exceeds 4096");
  if (s.batch < 2 || s.batch > s.n) throw ValidationError(where + ": need 2 <= batch <= n");
  return c;
}

}  // namespace dvae
