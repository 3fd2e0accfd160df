#include "dvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dvae/divergences.hpp"
#include "dvae/error.hpp"
#include "dvae/io.hpp"
#include "dvae/metrics.hpp"
#include "dvae/objectives.hpp"

namespace dvae {

void adam_step(AdamState& s, const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  if (s.m.empty()) {
    for (const Tensor* p : params) {
      s.m.emplace_back(p->shape());
      s.v.emplace_back(p->shape());
    }
  }
  if (s.m.size() != params.size()) throw ShapeError("adam_step: state was built for a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape() || s.m[i].shape() != params[i]->shape())
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(i));
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, double(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, double(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      s.m[i][k] = s.beta1 * s.m[i][k] + (1.0 - s.beta1) * g[k];
      s.v[i][k] = s.beta2 * s.v[i][k] + (1.0 - s.beta2) * g[k] * g[k];
      const double mhat = s.m[i][k] / c1, vhat = s.v[i][k] / c2;
      p[k] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
}

Dataset load_dataset(const DatasetConfig& c, std::uint64_t seed) {
  Dataset d;
  if (c.source == "pinwheel") {
    Rng rng = RngStreams(seed).stream("data");
    d = gen_pinwheel(c.pinwheel, rng);
  } else if (c.source == "factor-images") {
    d = gen_factor_images(c.images);
  } else if (c.source == "npy") {
    d.observations = read_npy_matrix(c.path);
    d.provenance = "npy:" + c.path;
  } else if (c.source == "idx") {
    d.observations = read_idx(c.path, c.resize);
    d.provenance = "idx:" + c.path;
  } else {
    throw ValidationError("dataset.source: unknown source '" + c.source + "'");
  }
  if (c.limit > 0 && c.limit < d.size()) {
    std::vector<std::size_t> rows(c.limit);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    d = d.subset(rows);
  }
  d.validate();
  if (d.size() == 0) throw ValidationError("dataset is empty");
  return d;
}

VaeModel build_model(const ExperimentConfig& c, const Dataset& data, Rng& rng) {
  PriorSpec prior = c.prior;
  if (auto* diag = std::get_if<DiagGaussian>(&prior.family); diag && diag->init == DiagInit::PcaSoftmax) {
    diag->log_variance = pca_softmax_log_variance(data.observations, c.model.latent_dim);
  }
  return VaeModel::create(c.model.encoder_hidden, c.model.decoder_hidden, data.dim(), c.model.latent_dim,
                          c.model.hidden_activation, c.model.decoder_output, c.model.likelihood, std::move(prior), rng);
}

TrainResult train_model(const ExperimentConfig& c, const Dataset& data) {
  c.validate();
  const RngStreams streams(c.seed);
  Rng init = streams.stream("init"), shuffle = streams.stream("shuffle"), reparam = streams.stream("reparam"),
      prior_rng = streams.stream("prior-samples");
  TrainResult out{build_model(c, data, init), {}, {}};
  VaeModel& model = out.model;
  const std::size_t n = data.size(), dim = model.latent_dim, k = c.objective.recon_samples;
  const std::size_t batch = std::min(c.batch_size, n);
  const bool needs_prior_samples = c.objective.kind == ObjectiveKind::Decomp && c.objective.alpha > 0.0;

  AdamState adam{c.optimizer.lr, c.optimizer.beta1, c.optimizer.beta2, c.optimizer.eps, 0, {}, {}};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch), b = stop - start;
      Tensor x(Shape{b, data.dim()});
      for (std::size_t r = 0; r < b; ++r) {
        auto src = data.observations.row_span(order[start + r]);
        std::copy(src.begin(), src.end(), x.row_span(r).begin());
      }
      const Noise noise = Noise::draw(b, dim, k, reparam);
      DivergenceSamples div;
      if (needs_prior_samples) div.prior = prior_sample(model.prior, c.divergence_samples ? c.divergence_samples : b, prior_rng);
      ObjectiveGradient g = objective_gradient(model, x, c.objective, noise, needs_prior_samples ? &div : nullptr);
      double norm_sq = 0.0;
      for (auto& t : g.grads) {
        if (!t.all_finite()) throw NumericError("train: non-finite gradient at epoch " + std::to_string(epoch));
        for (double& v : t.data()) {
          v = -v;
          norm_sq += v * v;
        }
      }
      if (c.optimizer.grad_clip > 0.0 && std::sqrt(norm_sq) > c.optimizer.grad_clip) {
        const double f = c.optimizer.grad_clip / std::sqrt(norm_sq);
        for (auto& t : g.grads)
          for (double& v : t.data()) v *= f;
      }
      adam_step(adam, model.parameters(), g.grads);
      const double w = double(b) / double(n);
      rec.objective += w * g.terms.value;
      rec.reconstruction += w * g.terms.reconstruction;
      rec.kl += w * g.terms.kl;
      rec.divergence += w * g.terms.divergence;
      rec.encoder_entropy += w * g.terms.entropy;
    }
    if (!std::isfinite(rec.objective)) throw NumericError("train: objective became non-finite at epoch " + std::to_string(epoch));
    out.history.push_back(rec);
  }
  out.metrics = compute_metrics(c, model, data);
  return out;
}

std::vector<MetricRow> compute_metrics(const ExperimentConfig& c, const VaeModel& model, const Dataset& data) {
  const RngStreams streams(c.seed);
  Rng rng = streams.stream("metric");
  std::vector<MetricRow> rows;
  const auto& o = c.metric_options;
  for (const auto& name : c.metrics) {
    if (name == "sparsity") {
      rows.emplace_back("sparsity", sparsity_score(posterior_mean_code(model)(data.observations)).score);
    } else if (name == "disentanglement") {
      if (data.num_factors() < 2) throw ValidationError("metric disentanglement: dataset has fewer than 2 factors");
      DisentanglementOptions opts{o.disentanglement_batch, o.disentanglement_votes, o.collapse_threshold};
      const auto r = disentanglement_score(posterior_mean_code(model), data, opts, rng);
      rows.emplace_back("disentanglement", r.score);
      rows.emplace_back("disentanglement_collapsed_dims", double(r.collapsed_dims.size()));
    } else if (name == "inclusive-kl") {
      const PosteriorSet set = encode_dataset(model, data.observations);
      const auto r = inclusive_kl_estimate(set, model.effective_prior(), o.inclusive_kl_samples, rng);
      rows.emplace_back("inclusive_kl", r.value);
      rows.emplace_back("inclusive_kl_se", r.std_error);
    } else if (name == "mmd") {
      const std::size_t m = std::min(o.mmd_samples, data.size());
      std::normal_distribution<double> normal(0.0, 1.0);
      Tensor z(Shape{m, model.latent_dim});
      for (std::size_t i = 0; i < m; ++i) {
        const auto q = encode(model, data.observations.row_span(i));
        std::vector<double> eps(model.latent_dim);
        for (double& e : eps) e = normal(rng);
        const auto s = reparam_sample(q, eps);
        std::copy(s.begin(), s.end(), z.row_span(i).begin());
      }
      rows.emplace_back("mmd", mmd_dimwise_cauchy(z, prior_sample(model.effective_prior(), m, rng)));
    } else if (name == "encoder-entropy") {
      double h = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) h += gaussian_entropy(encode(model, data.observations.row_span(i)));
      rows.emplace_back("encoder_entropy", h / double(data.size()));
    } else if (name == "elbo") {
      const Noise noise = Noise::draw(data.size(), model.latent_dim, 1, rng);
      rows.emplace_back("elbo", elbo(model, data.observations, noise).value);
    } else {
      throw ValidationError("metrics: unknown metric '" + name + "'");
    }
  }
  return rows;
}

std::vector<std::string> history_columns() {
  return {"epoch", "objective", "reconstruction", "kl", "divergence", "encoder_entropy"};
}

void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : history) {
    rows.push_back({std::to_string(r.epoch), format_double(r.objective), format_double(r.reconstruction),
                    format_double(r.kl), format_double(r.divergence), format_double(r.encoder_entropy)});
  }
  write_csv(path, history_columns(), rows);
}

void write_metrics(const std::filesystem::path& path, const std::vector<MetricRow>& metrics) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [name, value] : metrics) rows.push_back({name, format_double(value)});
  write_csv(path, {"metric", "value"}, rows);
}

void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& config, const std::vector<std::string>& files) {
  nlohmann::json columns = {
      {"history.csv",
       {{"epoch", "1-based epoch index"},
        {"objective", "training objective, mean over the epoch's minibatches (weighted by batch size)"},
        {"reconstruction", "mean log p(x|z) with reparameterised z"},
        {"kl", "mean KL(q(z|x) || p(z)); closed form for Gaussian priors, Monte-Carlo otherwise"},
        {"divergence", "aggregate-posterior divergence D(q(z), p(z)) per minibatch; 0 when alpha = 0"},
        {"encoder_entropy", "mean entropy of q(z|x)"}}},
      {"metrics.csv", {{"metric", "metric name"}, {"value", "metric value after the final epoch"}}}};
  nlohmann::json manifest = {{"files", files}, {"columns", columns}, {"seed", config.seed},
                             {"objective", objective_to_json(config.objective)}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write '" + (dir / "manifest.json").string() + "'");
  out << manifest.dump(2) << "\n";
}

TrainResult train(const ExperimentConfig& config, const std::filesystem::path& out_dir) {
  const Dataset data = load_dataset(config.dataset, config.seed);
  TrainResult result = train_model(config, data);
  std::filesystem::create_directories(out_dir);
  save_checkpoint(out_dir / "checkpoint.dvae", result.model, config.seed);
  write_history(out_dir / "history.csv", result.history);
  write_metrics(out_dir / "metrics.csv", result.metrics);
  {
    std::ofstream cfg(out_dir / "config.json");
    if (!cfg) throw IoError("cannot write '" + (out_dir / "config.json").string() + "'");
    cfg << experiment_to_json(config).dump(2) << "\n";
  }
  write_manifest(out_dir, config, {"checkpoint.dvae", "history.csv", "metrics.csv", "config.json", "manifest.json"});
  return result;
}

}  // namespace dvae
