#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "kinnet/network.hpp"

using namespace kinnet;

namespace {

std::vector<double> fd_dt(const MlpModel& m, std::span<const double> y0, double t, double h) {
  const std::vector<double> hi = predict(m, y0, t + h);
  const std::vector<double> lo = predict(m, y0, t - h);
  std::vector<double> g(hi.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (hi[i] - lo[i]) / (2.0 * h);
  return g;
}

}  // namespace

TEST_CASE("parameter layout counts weights and biases per layer") {
  const std::vector<std::size_t> small{1, 8, 8, 1};
  const std::vector<std::size_t> wide{1, 128, 128, 128, 2};
  CHECK(mlp_parameter_count(small) == 97);
  CHECK(mlp_parameter_count(wide) == 33538);
  CHECK(make_mlp({1, 8, 8, 1}, 0).params.size() == 97);
}

TEST_CASE("xavier initialization respects the fan bound and the seed") {
  const MlpModel m = make_mlp({1, 128, 128, 2}, 7);
  const std::size_t fans[] = {1 * 128, 128 * 128, 128 * 2};
  const std::size_t outs[] = {128, 128, 2};
  const double bounds[] = {std::sqrt(6.0 / 129.0), std::sqrt(6.0 / 256.0),
                           std::sqrt(6.0 / 130.0)};
  std::size_t off = 0;
  for (int l = 0; l < 3; ++l) {
    double peak = 0.0;
    for (std::size_t k = 0; k < fans[l]; ++k) {
      const double w = m.params[off + k];
      CHECK(std::abs(w) <= bounds[l]);
      peak = std::max(peak, std::abs(w));
    }
    CHECK(peak > 0.8 * bounds[l]);
    for (std::size_t k = 0; k < outs[l]; ++k) CHECK(m.params[off + fans[l] + k] == 0.0);
    off += fans[l] + outs[l];
  }
  CHECK(off == m.params.size());

  CHECK(make_mlp({1, 128, 128, 2}, 7).params == m.params);
  CHECK(make_mlp({1, 128, 128, 2}, 8).params != m.params);

  const MlpModel tiny = make_mlp({1, 1, 1}, 3);
  REQUIRE(tiny.params.size() == 4);
  CHECK(std::abs(tiny.params[0]) <= std::sqrt(3.0));
  CHECK(tiny.params[1] == 0.0);
  CHECK(tiny.params[3] == 0.0);
}

TEST_CASE("width validation rejects malformed shapes") {
  CHECK_THROWS_AS(make_mlp({1, 2}, 0), config_error);
  CHECK_THROWS_AS(make_mlp({2, 4, 1}, 0), config_error);
  CHECK_THROWS_AS(make_mlp({1, 0, 1}, 0), config_error);
}

TEST_CASE("raw forward agrees across scalar types") {
  // 4 stays on the short-row kernel, 13 runs the blocked one with a remainder.
  for (const std::size_t width : {std::size_t{4}, std::size_t{13}}) {
    const MlpModel m = make_mlp({1, width, width, 2}, 3);
    const double s = -0.35;
    const std::vector<double> plain = mlp_raw<double>(m, s);
    REQUIRE(plain.size() == 2);

    const std::vector<DualScalar> dual = mlp_raw<DualScalar>(m, {s, 1.0});
    Tape tape(m.params);
    const std::vector<TapeVar> taped = mlp_taped(m, tape, tape.input(s, 1.0));
    for (std::size_t i = 0; i < plain.size(); ++i) {
      CHECK(dual[i].value == plain[i]);
      CHECK(tape.value(taped[i]) == plain[i]);
      CHECK(tape.tangent(taped[i]) == dual[i].tangent);
    }

    MlpModel zero = m;
    zero.params.assign(zero.params.size(), 0.0);
    for (const double v : mlp_raw<double>(zero, 1.7)) CHECK(v == 0.0);
  }
}

TEST_CASE("dual forward differentiates the time input") {
  const MlpModel m = make_mlp({1, 6, 6, 1}, 12, OutputTransform::none);
  const double t = 0.7;
  const std::vector<DualScalar> out = predict_dual(m, {}, t);
  const std::vector<double> fd = fd_dt(m, {}, t, 1e-6);
  REQUIRE(out.size() == 1);
  CHECK(out[0].value == predict(m, {}, t)[0]);
  CHECK(std::abs(out[0].tangent - fd[0]) <= 1e-6 * std::max(1.0, std::abs(fd[0])));
}

TEST_CASE("hard-IC transform pins the initial condition") {
  const MlpModel m = make_mlp({1, 8, 8, 3}, 5);
  const std::vector<double> y0{1.0, 0.0, 0.5};

  const std::vector<double> at0 = predict(m, y0, 0.0);
  REQUIRE(at0.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(at0[i] == y0[i]);

  MlpModel zero = m;
  zero.params.assign(zero.params.size(), 0.0);
  const std::vector<double> flat = predict(zero, y0, 7.3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(flat[i] == y0[i]);

  const double t = 0.9;
  const std::vector<DualScalar> out = predict_dual(m, y0, t);
  const std::vector<double> fd = fd_dt(m, y0, t, 1e-6);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(out[i].value == predict(m, y0, t)[i]);
    CHECK(std::abs(out[i].tangent - fd[i]) <= 1e-6 * std::max(1.0, std::abs(fd[i])));
  }

  CHECK_THROWS_AS(predict(m, y0, -1.0), derivative_domain_error);
  CHECK_THROWS_AS(predict_dual(m, y0, 0.0), derivative_domain_error);
  CHECK_THROWS_AS(predict(m, std::vector<double>{1.0, 2.0}, 0.5), dimension_error);

  const MlpModel open = make_mlp({1, 4, 4, 2}, 5, OutputTransform::none);
  CHECK(predict(open, {}, 0.0).size() == 2);
  CHECK(predict_dual(open, {}, 0.0).size() == 2);
}

TEST_CASE("taped prediction matches the dual route bit for bit") {
  for (const std::size_t width : {std::size_t{5}, std::size_t{16}}) {
    const MlpModel m = make_mlp({1, width, width, 2}, 9);
    const std::vector<double> y0{0.3, 0.1};
    const double t = 2.5;

    Tape tape(m.params);
    const std::vector<TapeVar> taped = predict_taped(m, tape, y0, t);
    const std::vector<DualScalar> dual = predict_dual(m, y0, t);
    REQUIRE(taped.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(tape.value(taped[i]) == dual[i].value);
      CHECK(tape.tangent(taped[i]) == dual[i].tangent);
    }

    Tape other;
    CHECK_THROWS_AS(mlp_taped(m, other, other.input(1.0)), dimension_error);
    CHECK_THROWS_AS(predict_taped(m, tape, y0, 0.0), derivative_domain_error);
  }
}

TEST_CASE("prediction gradient against parameters matches finite differences") {
  MlpModel m = make_mlp({1, 4, 4, 2}, 21);
  const std::vector<double> y0{0.2, 0.8};
  const double t = 1.7;

  Tape tape(m.params);
  const std::vector<TapeVar> out = predict_taped(m, tape, y0, t);
  const TapeVar s = out[0] * out[0] + out[1] * out[1];
  const GradientResult res = tape.backward(s);
  REQUIRE(res.gradient.size() == m.params.size());

  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const double keep = m.params[i];
    const double h = 1e-6 * std::max(1.0, std::abs(keep));
    m.params[i] = keep + h;
    const std::vector<double> hi = predict(m, y0, t);
    m.params[i] = keep - h;
    const std::vector<double> lo = predict(m, y0, t);
    m.params[i] = keep;
    const double fd = (hi[0] * hi[0] + hi[1] * hi[1] - lo[0] * lo[0] - lo[1] * lo[1]) / (2.0 * h);
    CHECK(std::abs(res.gradient[i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("checkpoints round-trip bit for bit") {
  const MlpModel m = make_mlp({1, 6, 4, 2}, 11, OutputTransform::none);
  const std::string text = serialize_checkpoint(m);
  CHECK(text.rfind("widths=1,6,4,2\nactivation=gelu\nseed=11\ntransform=none\n", 0) == 0);

  const MlpModel back = parse_checkpoint(text);
  CHECK(back.widths == m.widths);
  CHECK(back.seed == m.seed);
  CHECK(back.transform == m.transform);
  CHECK(back.params == m.params);
  CHECK(serialize_checkpoint(back) == text);

  const MlpModel hard = make_mlp({1, 3, 3, 1}, 2);
  CHECK(parse_checkpoint(serialize_checkpoint(hard)).transform == OutputTransform::hard_ic);
}

TEST_CASE("checkpoint parsing reports malformed input") {
  const std::string head = "widths=1,2,1\nactivation=gelu\nseed=0\ntransform=hard-ic\n";
  const std::string params = "0\n0\n0\n0\n0\n0\n0\n";

  CHECK_THROWS_AS(parse_checkpoint("widths=1,2,1\nactivation=gelu\n"), parse_error);
  CHECK_THROWS_AS(parse_checkpoint(head + "0\n0\n0\n"), parse_error);

  auto message_of = [](const std::string& text) {
    try {
      parse_checkpoint(text);
    } catch (const parse_error& e) {
      return std::string(e.what());
    }
    return std::string();
  };

  CHECK(message_of("widths=2,4,1\nactivation=gelu\nseed=0\ntransform=hard-ic\n")
            .find("line 1") == 0);
  CHECK(message_of("widths=1,2,1\nactivation=relu\nseed=0\ntransform=hard-ic\n" + params)
            .find("line 2") == 0);
  CHECK(message_of("widths=1,2,1\nactivation=gelu\nseed=-3\ntransform=hard-ic\n" + params)
            .find("line 3") == 0);
  CHECK(message_of("widths=1,2,1\nactivation=gelu\nseed=0\ntransform=soft\n" + params)
            .find("line 4") == 0);
  CHECK(message_of(head + "0\n0\nabc\n0\n0\n0\n0\n").find("line 7") == 0);
  CHECK(message_of("layers=1,2,1\nactivation=gelu\nseed=0\ntransform=hard-ic\n" + params)
            .find("line 1") == 0);
}
