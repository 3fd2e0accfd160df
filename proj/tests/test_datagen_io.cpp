#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <cstring>
#include <numbers>

#include "dvae/datasets.hpp"
#include "dvae/error.hpp"
#include "dvae/io.hpp"
#include "temp_dir.hpp"

using namespace dvae;
namespace {

// NPY v1.0 file from a header literal, padded so that magic + lengths + header is a multiple of 16.
std::vector<unsigned char> npy_bytes(std::string header, const std::vector<unsigned char>& payload, unsigned char major = 1) {
  while ((10 + header.size() + 1) % 16 != 0) header += ' ';
  header += '\n';
  std::vector<unsigned char> b{0x93, 'N', 'U', 'M', 'P', 'Y', major, 0};
  b.push_back(static_cast<unsigned char>(header.size() & 0xff));
  b.push_back(static_cast<unsigned char>(header.size() >> 8));
  b.insert(b.end(), header.begin(), header.end());
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

std::string format_error(const std::filesystem::path& p) {
  try {
    read_npy(p);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

VaeModel model(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t hidden[] = {5, 3};
  return VaeModel::create(hidden, hidden, 4, 2, Activation::Relu, Activation::Sigmoid, BernoulliMean{},
                          spike_slab_prior(2, 0.7, 0.04), rng);
}

}  // namespace

TEST_CASE("pinwheel with the reference parameters") {
  Rng rng(1);
  const Dataset d = gen_pinwheel({}, rng);
  CHECK(d.size() == 400);
  CHECK(d.dim() == 2);
  CHECK(d.cardinalities == std::vector<std::size_t>{4});
  std::size_t counts[4] = {};
  for (std::size_t i = 0; i < 400; ++i) counts[d.factor(i, 0)]++;
  for (auto c : counts) CHECK(c == 100);
}

TEST_CASE("noise-free pinwheel lies on unit rays") {
  Rng rng(2);
  PinwheelOptions o;
  o.num_classes = 3;
  o.per_class = 5;
  o.rate = 0.0;
  o.radial_std = 1e-12;
  o.tangential_std = 1e-12;
  const Dataset d = gen_pinwheel(o, rng);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = d.observations(i, 0), y = d.observations(i, 1);
    CHECK(std::hypot(x, y) == doctest::Approx(1.0).epsilon(1e-10));
    const double expected = 2 * std::numbers::pi * d.factor(i, 0) / 3.0;
    CHECK(std::abs(std::remainder(std::atan2(y, x) - expected, 2 * std::numbers::pi)) < 1e-10);
  }
}

TEST_CASE("pinwheel class radius matches direct simulation of the transform") {
  PinwheelOptions o;
  o.num_classes = 1;
  o.per_class = 100000;
  Rng rng(3);
  const Dataset d = gen_pinwheel(o, rng);
  double radius = 0;
  for (std::size_t i = 0; i < d.size(); ++i) radius += std::hypot(d.observations(i, 0), d.observations(i, 1)) / double(d.size());
  Rng sim(4);
  std::normal_distribution<double> ra(1.0, 0.1), tb(0.0, 0.3);
  double sim_radius = 0;
  for (int i = 0; i < 100000; ++i) sim_radius += std::hypot(ra(sim), tb(sim)) / 1e5;
  CHECK(std::abs(radius - sim_radius) < 0.003);
}

TEST_CASE("property: pinwheel is reproducible for a fixed seed") {
  Rng a(5), b(5), c(6);
  const Dataset x = gen_pinwheel({}, a), y = gen_pinwheel({}, b), z = gen_pinwheel({}, c);
  CHECK(x.observations == y.observations);
  CHECK(x.factors == y.factors);
  CHECK_FALSE(x.observations == z.observations);
}

TEST_CASE("factor images") {
  const Dataset d = gen_factor_images();
  CHECK(d.size() == 512);
  CHECK(d.dim() == 256);
  CHECK(d.cardinalities == std::vector<std::size_t>{8, 8, 4, 2});
  CHECK(std::all_of(d.observations.data().begin(), d.observations.data().end(), [](double v) { return v == 0.0 || v == 1.0; }));
  auto row_of = [&](std::uint32_t x, std::uint32_t y, std::uint32_t s, std::uint32_t sh) {
    std::vector<std::size_t> hits;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.factor(i, 0) == x && d.factor(i, 1) == y && d.factor(i, 2) == s && d.factor(i, 3) == sh) hits.push_back(i);
    return hits;
  };
  auto mass = [&](std::size_t row) {
    double m = 0;
    for (double v : d.observations.row_span(row)) m += v;
    return m;
  };
  for (std::uint32_t s = 0; s < 4; ++s)
    for (std::uint32_t sh = 0; sh < 2; ++sh) {
      const auto a = row_of(1, 3, s, sh), b = row_of(6, 3, s, sh);
      REQUIRE(a.size() == 1);
      REQUIRE(b.size() == 1);
      CHECK(mass(a[0]) == mass(b[0]));
      const double side = 3 + 2 * s;
      CHECK(mass(a[0]) == (sh == 0 ? side * side : 2 * side - 1));
    }
  CHECK(gen_factor_images().observations == d.observations);
  FactorImageOptions too_big;
  too_big.canvas = 8;
  CHECK_THROWS_AS(gen_factor_images(too_big), ValidationError);
}

TEST_CASE("NPY hand-built u1 fixture") {
  TempDir dir;
  const auto path = dir / "a.npy";
  write_bytes(path, npy_bytes("{'descr': '|u1', 'fortran_order': False, 'shape': (2, 2), }", {7, 200, 0, 31}));
  const Tensor t = read_npy_matrix(path);
  CHECK(t == Tensor::from_rows({{7, 200}, {0, 31}}));
}

TEST_CASE("NPY dtypes and shapes") {
  TempDir dir;
  const auto p = dir / "f.npy";
  float f[3] = {1.5f, -2.25f, 1e-3f};
  std::vector<unsigned char> payload(12);
  std::memcpy(payload.data(), f, 12);
  write_bytes(p, npy_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (3,), }", payload));
  const auto a = read_npy(p);
  CHECK(a.shape == Shape{3});
  CHECK(a.data[2] == double(1e-3f));
  write_bytes(p, npy_bytes("{'descr': '|b1', 'fortran_order': False, 'shape': (1, 2, 2), }", {1, 0, 0, 1}));
  const Tensor m = read_npy_matrix(p);
  CHECK(m == Tensor::from_rows({{1, 0, 0, 1}}));
}

TEST_CASE("NPY rejects malformed files with distinct diagnostics") {
  TempDir dir;
  const auto p = dir / "bad.npy";
  const std::string good = "{'descr': '<f8', 'fortran_order': False, 'shape': (2,), }";
  std::vector<unsigned char> payload(16, 0);

  auto bytes = npy_bytes(good, payload);
  bytes[1] = 'X';
  write_bytes(p, bytes);
  CHECK(format_error(p).find("bad magic") != std::string::npos);

  write_bytes(p, npy_bytes(good, payload, 2));
  CHECK(format_error(p).find("unsupported version") != std::string::npos);

  write_bytes(p, npy_bytes("{'descr': '<i4', 'fortran_order': False, 'shape': (2,), }", payload));
  CHECK(format_error(p).find("unsupported dtype") != std::string::npos);

  write_bytes(p, npy_bytes("{'descr': '<f8', 'fortran_order': True, 'shape': (2,), }", payload));
  CHECK(format_error(p).find("fortran_order") != std::string::npos);

  write_bytes(p, npy_bytes(good, std::vector<unsigned char>(12, 0)));
  CHECK(format_error(p).find("truncated payload") != std::string::npos);

  write_bytes(p, npy_bytes("{'descr': '<f8', 'fortran_order': False, }", payload));
  CHECK(format_error(p).find("shape") != std::string::npos);

  CHECK_THROWS_AS(read_npy(dir / "missing.npy"), IoError);
}

TEST_CASE("NPY writer round-trips bit-exactly") {
  TempDir dir;
  Rng rng(7);
  const Tensor t = standard_normal(5, 3, rng);
  write_npy(dir / "t.npy", t);
  CHECK(read_npy_matrix(dir / "t.npy") == t);
  const auto bytes = read_bytes(dir / "t.npy");
  const std::size_t header_len = bytes[8] | (bytes[9] << 8);
  CHECK((10 + header_len) % 64 == 0);
  const Tensor u8 = Tensor::from_rows({{0, 255}, {3, 4}});
  write_npy(dir / "u.npy", u8, "|u1");
  CHECK(read_npy_matrix(dir / "u.npy") == u8);
}

TEST_CASE("IDX fixtures") {
  TempDir dir;
  const auto p = dir / "a.idx";
  write_bytes(p, {0, 0, 0x08, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 64});
  const Tensor t = read_idx(p);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 2);
  CHECK(t == Tensor::from_rows({{0, 1}, {128.0 / 255, 64.0 / 255}}));

  write_bytes(p, {0, 0, 0x08, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor flat = read_idx(p);
  CHECK(flat.rows() == 2);
  CHECK(flat.cols() == 4);
  CHECK(flat(1, 3) == 8.0 / 255);

  const Tensor up = read_idx(p, 4);
  CHECK(up.cols() == 16);
  CHECK(up(0, 0) == 1.0 / 255);
  CHECK(up(0, 15) == 4.0 / 255);

  write_bytes(p, {0, 0, 0x08, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128});
  try {
    read_idx(p);
    FAIL("expected a size mismatch");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("size mismatch") != std::string::npos);
  }
  write_bytes(p, {1, 0, 0x08, 1, 0, 0, 0, 1, 9});
  CHECK_THROWS_AS(read_idx(p), FormatError);
  write_bytes(p, {0, 0, 0x0D, 1, 0, 0, 0, 1, 9, 9, 9, 9});
  CHECK_THROWS_AS(read_idx(p), FormatError);
}

TEST_CASE("CSV writes 17 digits, quotes fields and reads back identical doubles") {
  TempDir dir;
  Rng rng(8);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> rows(20, std::vector<double>(3));
  for (auto& r : rows)
    for (auto& v : r) v = nd(rng) * std::pow(10.0, nd(rng) * 5);
  rows[0][0] = 0.1;
  write_csv(dir / "t.csv", {"a", "b", "c"}, rows);
  const auto table = read_csv(dir / "t.csv");
  CHECK(table.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(table.rows.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::stod(table.rows[i][j]) == rows[i][j]);
  CHECK(format_double(0.1) == "0.10000000000000001");

  write_csv(dir / "s.csv", {"name", "note"}, std::vector<std::vector<std::string>>{{"x,y", "say \"hi\""}, {"plain", "line\nbreak"}});
  const std::string text = read_text(dir / "s.csv");
  CHECK(text.find("\"x,y\",\"say \"\"hi\"\"\"\r\n") != std::string::npos);
  const auto back = read_csv(dir / "s.csv");
  CHECK(back.rows[0][1] == "say \"hi\"");
  CHECK(back.rows[1][1] == "line\nbreak");
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  TempDir dir;
  VaeModel m = model(9);
  m.post_encoder_map = Tensor::from_rows({{2, 0}, {0, 2}});
  m.post_encoder_shift = Tensor::row({0.1, -0.2});
  m.pre_decoder_map = Tensor::from_rows({{0.5, 0}, {0, 0.5}});
  save_checkpoint(dir / "m.dvae", m, 1234);
  const Checkpoint c = load_checkpoint(dir / "m.dvae");
  CHECK(c.seed == 1234);
  const auto a = m.parameters();
  const auto b = c.model.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  CHECK(*c.model.post_encoder_map == *m.post_encoder_map);
  CHECK(*c.model.post_encoder_shift == *m.post_encoder_shift);
  CHECK(*c.model.pre_decoder_map == *m.pre_decoder_map);
  CHECK(c.model.prior.family_name() == "spike-slab");
  CHECK(std::get<SpikeSlab>(c.model.prior.family).gamma == 0.7);
  CHECK(c.model.decoder.layers.back().activation == Activation::Sigmoid);

  VaeModel learn = model(10);
  learn.prior = diagonal_prior({1.3, 0.7}, true);
  learn.prior_log_variance = Tensor::row({std::log(1.3) + 1e-9, std::log(0.7)});
  save_checkpoint(dir / "l.dvae", learn, 1);
  const Checkpoint lc = load_checkpoint(dir / "l.dvae");
  CHECK(*lc.model.prior_log_variance == *learn.prior_log_variance);
  CHECK(std::get<DiagGaussian>(lc.model.prior.family).log_variance == std::get<DiagGaussian>(learn.prior.family).log_variance);
}

TEST_CASE("checkpoint corruption is rejected") {
  TempDir dir;
  save_checkpoint(dir / "m.dvae", model(11), 5);
  const auto bytes = read_bytes(dir / "m.dvae");
  auto bad = bytes;
  bad[0] = 'X';
  write_bytes(dir / "b.dvae", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "b.dvae"), FormatError);
  bad = bytes;
  bad[4] = 9;
  write_bytes(dir / "b.dvae", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "b.dvae"), FormatError);
  bad.assign(bytes.begin(), bytes.end() - 8);
  write_bytes(dir / "b.dvae", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "b.dvae"), FormatError);
  bad = bytes;
  bad.push_back(0);
  write_bytes(dir / "b.dvae", bad);
  CHECK_THROWS_AS(load_checkpoint(dir / "b.dvae"), FormatError);
  try {
    load_checkpoint(dir / "nope.dvae");
    FAIL("expected an IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("nope.dvae") != std::string::npos);
  }
}
