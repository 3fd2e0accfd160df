#include "dvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "dvae/error.hpp"

namespace dvae {

namespace {

std::vector<double> column_std(const Tensor& codes) {
  const std::size_t n = codes.rows(), dim = codes.cols();
  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += codes(i, d);
  for (double& m : mean) m /= double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) {
      const double c = codes(i, d) - mean[d];
      var[d] += c * c;
    }
  for (double& v : var) v = std::sqrt(v / double(n));
  return var;
}

}  // namespace

double hoyer(std::span<const double> y) {
  if (y.size() < 2) throw ValidationError("hoyer: needs at least 2 entries");
  double l1 = 0.0, l2 = 0.0;
  for (double v : y) {
    l1 += std::abs(v);
    l2 += v * v;
  }
  if (l2 == 0.0) throw NumericError("hoyer: zero vector");
  const double sd = std::sqrt(double(y.size()));
  return (sd - l1 / std::sqrt(l2)) / (sd - 1.0);
}

SparsityResult sparsity_score(const Tensor& encodings) {
  if (encodings.rank() != 2 || encodings.rows() == 0) throw ValidationError("sparsity_score: empty encoding matrix");
  const std::size_t n = encodings.rows(), dim = encodings.cols();
  const auto sd = column_std(encodings);
  SparsityResult out;
  std::vector<std::size_t> kept;
  for (std::size_t d = 0; d < dim; ++d) (sd[d] < 1e-8 ? out.excluded_dims : kept).push_back(d);
  if (kept.size() < 2) throw ValidationError("sparsity_score: fewer than 2 dimensions with non-zero spread");
  std::vector<double> row(kept.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < kept.size(); ++c) row[c] = encodings(i, kept[c]) / sd[kept[c]];
    total += hoyer(row);
  }
  out.score = total / double(n);
  return out;
}

CodeFn posterior_mean_code(const VaeModel& model) {
  return [&model](const Tensor& x) {
    Tensor out(Shape{x.rows(), model.latent_dim});
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto q = encode(model, x.row_span(i));
      std::copy(q.mean.begin(), q.mean.end(), out.row_span(i).begin());
    }
    return out;
  };
}

DisentanglementResult disentanglement_score(const CodeFn& code, const Dataset& data, const DisentanglementOptions& options,
                                            Rng& rng) {
  const std::size_t num_factors = data.num_factors();
  if (num_factors < 2 || data.factors.empty()) throw ValidationError("disentanglement_score: needs at least 2 factors");
  if (options.batch < 2) throw ValidationError("disentanglement_score: L must be >= 2");
  if (options.votes < num_factors) throw ValidationError("disentanglement_score: M must be >= number of factors");

  const Tensor codes = code(data.observations);
  if (codes.rows() != data.size()) throw ShapeError("disentanglement_score: code returned the wrong number of rows");
  const std::size_t dim = codes.cols();
  const auto sd = column_std(codes);
  DisentanglementResult out;
  std::vector<std::size_t> active;
  for (std::size_t d = 0; d < dim; ++d) (sd[d] < options.collapse_threshold ? out.collapsed_dims : active).push_back(d);
  if (active.empty()) throw ValidationError("disentanglement_score: every latent dimension collapsed");

  // rows_by_value[k][v] lists the rows whose factor k equals v.
  std::vector<std::vector<std::vector<std::size_t>>> rows_by_value(num_factors);
  for (std::size_t k = 0; k < num_factors; ++k) rows_by_value[k].resize(data.cardinalities[k]);
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t k = 0; k < num_factors; ++k) rows_by_value[k][data.factor(i, k)].push_back(i);

  std::uniform_int_distribution<std::size_t> pick_factor(0, num_factors - 1);
  std::vector<std::size_t> vote_dim(options.votes), vote_factor(options.votes);
  std::vector<double> mean(active.size()), sq(active.size());
  for (std::size_t m = 0; m < options.votes; ++m) {
    const std::size_t k = pick_factor(rng);
    std::uniform_int_distribution<std::size_t> pick_value(0, data.cardinalities[k] - 1);
    std::size_t v = pick_value(rng);
    while (rows_by_value[k][v].empty()) v = pick_value(rng);
    const auto& pool = rows_by_value[k][v];
    std::uniform_int_distribution<std::size_t> pick_row(0, pool.size() - 1);
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(sq.begin(), sq.end(), 0.0);
    for (std::size_t l = 0; l < options.batch; ++l) {
      const std::size_t row = pool[pick_row(rng)];
      for (std::size_t a = 0; a < active.size(); ++a) {
        const double z = codes(row, active[a]) / sd[active[a]];
        mean[a] += z;
        sq[a] += z * z;
      }
    }
    std::size_t best = 0;
    double best_var = 0.0;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const double mu = mean[a] / double(options.batch);
      const double var = sq[a] / double(options.batch) - mu * mu;
      if (a == 0 || var < best_var) {
        best = a;
        best_var = var;
      }
    }
    vote_dim[m] = active[best];
    vote_factor[m] = k;
  }

  std::map<std::size_t, std::vector<std::size_t>> counts;
  for (std::size_t m = 0; m < options.votes; ++m) {
    auto& c = counts[vote_dim[m]];
    if (c.empty()) c.assign(num_factors, 0);
    ++c[vote_factor[m]];
  }
  std::size_t correct = 0;
  for (const auto& [d, c] : counts) correct += *std::max_element(c.begin(), c.end());
  out.score = double(correct) / double(options.votes);
  out.votes = options.votes;
  return out;
}

}  // namespace dvae
