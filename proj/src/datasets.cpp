#include "dvae/datasets.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "dvae/error.hpp"

namespace dvae {

void Dataset::validate() const {
  if (observations.rank() != 2) throw ValidationError("dataset: observations must be an n x P matrix");
  if (factors.empty()) return;
  const std::size_t k = num_factors();
  if (factors.size() != size() * k) throw ValidationError("dataset: factor matrix must be n x K");
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t f = 0; f < k; ++f)
      if (factor(i, f) >= cardinalities[f]) {
        throw ValidationError("dataset: factor " + std::to_string(f) + " of row " + std::to_string(i) +
                              " exceeds its cardinality");
      }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.cardinalities = cardinalities;
  out.provenance = provenance;
  out.observations = Tensor(Shape{rows.size(), dim()});
  const std::size_t k = num_factors();
  if (!factors.empty()) out.factors.reserve(rows.size() * k);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= size()) throw ValidationError("dataset subset: row index out of range");
    auto src = observations.row_span(rows[r]);
    std::copy(src.begin(), src.end(), out.observations.row_span(r).begin());
    for (std::size_t f = 0; f < k && !factors.empty(); ++f) out.factors.push_back(factor(rows[r], f));
  }
  return out;
}

Dataset gen_pinwheel(const PinwheelOptions& o, Rng& rng) {
  if (o.num_classes < 1 || o.per_class < 1) throw ValidationError("gen_pinwheel: need at least one class and one point");
  if (!(o.radial_std >= 0.0) || !(o.tangential_std >= 0.0)) throw ValidationError("gen_pinwheel: stds must be >= 0");
  const std::size_t n = o.num_classes * o.per_class;
  Dataset d;
  d.observations = Tensor(Shape{n, 2});
  d.factors.resize(n);
  d.cardinalities = {o.num_classes};
  d.provenance = "pinwheel";
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < o.num_classes; ++c) {
    const double base = 2.0 * std::numbers::pi * double(c) / double(o.num_classes);
    for (std::size_t p = 0; p < o.per_class; ++p) {
      const std::size_t i = c * o.per_class + p;
      const double a = 1.0 + o.radial_std * normal(rng);
      const double b = o.tangential_std * normal(rng);
      const double psi = base + o.rate * std::exp(a);
      d.observations(i, 0) = a * std::cos(psi) - b * std::sin(psi);
      d.observations(i, 1) = a * std::sin(psi) + b * std::cos(psi);
      d.factors[i] = static_cast<std::uint32_t>(c);
    }
  }
  return d;
}

Dataset gen_factor_images(const FactorImageOptions& o) {
  if (o.xpos < 2 || o.ypos < 2 || o.scale < 2 || o.shape < 1) {
    throw ValidationError("gen_factor_images: xpos, ypos and scale need >= 2 values, shape >= 1");
  }
  if (o.shape > 2) throw ValidationError("gen_factor_images: only square and plus glyphs exist");
  const std::size_t canvas = o.canvas;
  const std::size_t max_glyph = 3 + 2 * (o.scale - 1);
  if (max_glyph > canvas) {
    throw ValidationError("gen_factor_images: glyph of side " + std::to_string(max_glyph) + " leaves the " +
                          std::to_string(canvas) + "-pixel canvas");
  }
  const std::size_t room = canvas - max_glyph;
  const std::size_t step_x = room / (o.xpos - 1), step_y = room / (o.ypos - 1);
  if (step_x == 0 || step_y == 0) throw ValidationError("gen_factor_images: canvas too small for the position grid");

  const std::size_t n = o.xpos * o.ypos * o.scale * o.shape;
  Dataset d;
  d.observations = Tensor(Shape{n, canvas * canvas});
  d.factors.reserve(n * 4);
  d.cardinalities = {o.xpos, o.ypos, o.scale, o.shape};
  d.provenance = "factor-images";
  std::size_t i = 0;
  for (std::size_t x = 0; x < o.xpos; ++x)
    for (std::size_t y = 0; y < o.ypos; ++y)
      for (std::size_t s = 0; s < o.scale; ++s)
        for (std::size_t sh = 0; sh < o.shape; ++sh, ++i) {
          const std::size_t side = 3 + 2 * s, half = side / 2;
          const std::size_t c0 = x * step_x, r0 = y * step_y;
          auto row = d.observations.row_span(i);
          for (std::size_t r = 0; r < side; ++r)
            for (std::size_t c = 0; c < side; ++c) {
              const bool on = sh == 0 || r == half || c == half;
              if (on) row[(r0 + r) * canvas + (c0 + c)] = 1.0;
            }
          for (std::uint32_t f : {x, y, s, sh}) d.factors.push_back(f);
        }
  return d;
}

}  // namespace dvae
