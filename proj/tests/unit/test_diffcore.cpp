#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "notifdt/common/rng.hpp"
#include "notifdt/diffcore/checkpoint.hpp"
#include "notifdt/diffcore/gradcheck.hpp"
#include "notifdt/diffcore/graph.hpp"
#include "notifdt/diffcore/optimizer.hpp"

using namespace notifdt;
using namespace notifdt::diff;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

}  // namespace

TEST_CASE("square of a scalar: value and derivative") {
  ParameterSet<double> ps;
  ps.add("x", Tensor<double>::scalar(3.0));
  Graph<double> g(ps);
  Var x = g.param("x");
  Var y = g.mul(x, x);
  CHECK(g.value(y).item() == 9.0);
  g.backward(y);
  CHECK(ps.get("x").grad.item() == 6.0);
}

TEST_CASE("sum of constants has zero gradient everywhere") {
  ParameterSet<double> ps;
  ps.add("w", Tensor<double>(Shape{2, 2}, 0.5));
  Graph<double> g(ps);
  g.param("w");
  Var c = g.sum(g.input(Tensor<double>(Shape{3}, 2.0)));
  CHECK(g.value(c).item() == 6.0);
  g.backward(c);
  for (double v : ps.get("w").grad.data) CHECK(v == 0.0);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(1);
  ParameterSet<double> ps;
  Graph<double> g(ps);
  Var s = g.softmax_rows(g.input(random_tensor({7, 5}, rng, 4.0)));
  const auto& v = g.value(s);
  for (std::size_t r = 0; r < 7; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 5; ++c) total += v.at(r, c);
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("layernorm rows have zero mean and unit variance before the affine map") {
  Rng rng(2);
  ParameterSet<double> ps;
  Graph<double> g(ps);
  Var y = g.layernorm(g.input(random_tensor({6, 16}, rng, 3.0)), 0.0);
  const auto& v = g.value(y);
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += v.at(r, c);
    mean /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += (v.at(r, c) - mean) * (v.at(r, c) - mean);
    var /= 16;
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(var - 1.0) <= 1e-9);
  }
}

TEST_CASE("backward contract violations") {
  ParameterSet<double> ps;
  ps.add("w", Tensor<double>(Shape{2}, 1.0));
  SUBCASE("empty graph") {
    Graph<double> g(ps);
    CHECK_THROWS_AS(g.backward(Var{0}), ContractError);
  }
  SUBCASE("inference graph") {
    Graph<double> g(std::as_const(ps), GradMode::kNone);
    Var s = g.sum(g.param("w"));
    CHECK_THROWS_AS(g.backward(s), ContractError);
  }
  SUBCASE("non-scalar root") {
    Graph<double> g(ps);
    Var w = g.param("w");
    CHECK_THROWS_AS(g.backward(w), ContractError);
  }
}

TEST_CASE("frozen parameters keep zero gradients") {
  ParameterSet<double> ps;
  ps.add("a", Tensor<double>(Shape{3}, 1.5));
  ps.add("b", Tensor<double>(Shape{3}, 2.0));
  ps.set_trainable_prefixes({"a"});
  Graph<double> g(ps);
  Var y = g.sum(g.mul(g.param("a"), g.param("b")));
  g.backward(y);
  for (double v : ps.get("a").grad.data) CHECK(v == 2.0);
  for (double v : ps.get("b").grad.data) CHECK(v == 0.0);
}

TEST_CASE("shape mismatch names the operation and operands") {
  ParameterSet<double> ps;
  ps.add("w", Tensor<double>(Shape{4, 3}, 1.0));
  Graph<double> g(ps);
  Var x = g.input(Tensor<double>(Shape{2, 5}), "features");
  try {
    g.matmul(x, g.param("w"));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("features") != std::string::npos);
    CHECK(msg.find("[4,3]") != std::string::npos);
  }
}

TEST_CASE("gradient check: linear layer") {
  Rng rng(3);
  ParameterSet<double> ps;
  ps.add_fan_in("w", {5, 4}, 5, rng);
  ps.add_normal("b", {4}, 0.3, rng);
  const auto x = random_tensor({6, 5}, rng);
  const auto target = random_tensor({6, 4}, rng);
  auto report = check_gradients(ps, [&](Graph<double>& g) {
    Var y = g.linear(g.input(x), g.param("w"), g.param("b"));
    Var d = g.add(y, g.scale(g.input(target), -1.0));
    return g.sum(g.mul(d, d));
  });
  CHECK(report.checked == 24);
  CHECK(report.max_rel_error <= 1e-7);
}

TEST_CASE("gradient check: attention block") {
  Rng rng(4);
  const std::size_t seqs = 2, len = 5, d = 8, heads = 2;
  ParameterSet<double> ps;
  ps.add_fan_in("wq", {d, d}, d, rng);
  ps.add_fan_in("wk", {d, d}, d, rng);
  ps.add_fan_in("wv", {d, d}, d, rng);
  ps.add_fan_in("wo", {d, d}, d, rng);
  ps.add_constant("ln.g", {d}, 1.0);
  ps.add_constant("ln.b", {d}, 0.0);
  const auto x = random_tensor({seqs * len, d}, rng);
  const auto proj = random_tensor({seqs * len, d}, rng);
  std::vector<std::uint8_t> valid(seqs * len, 1);
  valid[0] = 0;  // one padded key
  auto report = check_gradients(ps, [&](Graph<double>& g) {
    Var in = g.input(x);
    Var h = g.layernorm(in, g.param("ln.g"), g.param("ln.b"));
    Var att = g.causal_attention(g.matmul(h, g.param("wq")), g.matmul(h, g.param("wk")),
                                 g.matmul(h, g.param("wv")), seqs, len, heads, valid);
    Var out = g.add(in, g.matmul(att, g.param("wo")));
    return g.sum(g.mul(g.gelu(out), g.input(proj)));
  });
  CHECK(report.max_rel_error <= 1e-5);
  CHECK(report.skipped_kinks == 0);
}

TEST_CASE("gradient check: structural ops and masked cross-entropy") {
  Rng rng(5);
  ParameterSet<double> ps;
  ps.add_normal("a", {4, 3}, 1.0, rng);
  ps.add_normal("b", {4, 3}, 1.0, rng);
  ps.add_normal("table", {5, 6}, 1.0, rng);
  auto report = check_gradients(ps, [&](Graph<double>& g) {
    Var a = g.param("a");
    Var b = g.param("b");
    Var inter = g.interleave_rows({a, b});                                   // [8,3]
    Var cat = g.concat_cols(inter, g.softmax_rows(inter));                   // [8,6]
    Var rows = g.gather_rows(g.param("table"), {0, 4, 4, 1, 2, 3, 0, 1});     // [8,6]
    Var logits = g.matmul(g.mul(cat, rows), g.input(Tensor<double>(Shape{6, 3}, 0.25)));
    Var mixed = g.add(logits, g.scale(g.gather_rows(inter, {0, 1, 2, 3, 4, 5, 6, 7}), 0.5));
    return g.masked_cross_entropy(mixed, {0, 1, 2, 2, 1, 0, 2, 1}, {7, 3, 4, 6, 2, 5, 7, 7},
                                  {1, 1, 1, 0, 1, 1, 1, 2});
  });
  CHECK(report.max_rel_error <= 1e-6);
}

TEST_CASE("pinball loss values") {
  ParameterSet<double> ps;
  Graph<double> g(ps);
  auto pin = [&](double pred, double target, double alpha) {
    Var l = g.pinball(g.input(Tensor<double>(Shape{1, 1}, pred)), g.input(Tensor<double>(Shape{1, 1}, target)),
                      {alpha}, {1.0});
    return g.value(l).item();
  };
  CHECK(pin(0.0, 1.0, 0.25) == 0.25);
  CHECK(pin(1.0, 0.0, 0.25) == 0.75);
  CHECK(pin(2.0, 2.0, 0.25) == 0.0);
}

TEST_CASE("pinball kink is reported and skipped by the gradient check") {
  ParameterSet<double> ps;
  ps.add("q", Tensor<double>(Shape{1, 3}, std::vector<double>{0.5, 1.0, 2.0}));
  const Tensor<double> y(Shape{1, 1}, 1.0);  // equals the middle prediction
  Graph<double> g(ps);
  Var l = g.pinball(g.param("q"), g.input(y), {0.25, 0.5, 0.75}, {1.0});
  g.backward(l);
  // alpha branch at equality: d rho / d pred = -alpha
  CHECK(ps.get("q").grad.data[1] == doctest::Approx(-0.5));
  auto report = check_gradients(ps, [&](Graph<double>& gg) {
    return gg.pinball(gg.param("q"), gg.input(y), {0.25, 0.5, 0.75}, {1.0});
  });
  CHECK(report.skipped_kinks == 1);
  CHECK(report.checked == 2);
  CHECK(report.max_rel_error <= 1e-8);
}

TEST_CASE("causal attention ignores later positions") {
  Rng rng(6);
  const std::size_t len = 6, d = 4;
  auto q = random_tensor({len, d}, rng), k = random_tensor({len, d}, rng), v = random_tensor({len, d}, rng);
  ParameterSet<double> ps;
  auto run = [&](const Tensor<double>& kk, const Tensor<double>& vv) {
    Graph<double> g(ps);
    return g.value(g.causal_attention(g.input(q), g.input(kk), g.input(vv), 1, len, 2,
                                      std::vector<std::uint8_t>(len, 1)));
  };
  const auto base = run(k, v);
  for (std::size_t t = 0; t < len; ++t) {
    auto k2 = k, v2 = v;
    for (std::size_t r = t + 1; r < len; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        k2.at(r, c) += rng.normal();
        v2.at(r, c) += rng.normal();
      }
    const auto out = run(k2, v2);
    for (std::size_t r = 0; r <= t; ++r)
      for (std::size_t c = 0; c < d; ++c) CHECK(out.at(r, c) == base.at(r, c));
  }
}

TEST_CASE("forward is deterministic") {
  Rng rng(7);
  ParameterSet<float> ps;
  ps.add_fan_in("w", {8, 8}, 8, rng);
  const Tensor<float> x(Shape{3, 8}, 0.3f);
  auto run = [&] {
    Graph<float> g(std::as_const(ps), GradMode::kNone);
    return g.value(g.gelu(g.matmul(g.input(x), g.param("w")))).data;
  };
  CHECK(run() == run());
}

TEST_CASE("property: composite graphs match finite differences at random points") {
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    Rng rng(100 + trial);
    const std::size_t n = 2 + rng.below(4), d = 4;
    ParameterSet<double> ps;
    ps.add_fan_in("w1", {d, d}, d, rng);
    ps.add_normal("b1", {d}, 0.5, rng);
    ps.add_constant("g", {d}, 1.0);
    ps.add_constant("b", {d}, 0.0);
    ps.add_fan_in("w2", {d, 2}, d, rng);
    const auto x = random_tensor({n, d}, rng, 2.0);
    auto report = check_gradients(ps, [&](Graph<double>& g) {
      Var h = g.gelu(g.linear(g.input(x), g.param("w1"), g.param("b1")));
      Var z = g.layernorm(h, g.param("g"), g.param("b"));
      Var o = g.matmul(z, g.param("w2"));
      Var s = g.softmax_rows(o);
      return g.sum(g.mul(s, o));
    });
    CHECK(report.max_rel_error <= 1e-4);
  }
}

TEST_CASE("checkpoint round trip preserves names, shapes and values") {
  Rng rng(8);
  ParameterSet<float> ps;
  ps.add_normal("layer.w", {3, 2}, 1.0, rng);
  ps.add_normal("layer.b", {2}, 1.0, rng);
  ps[1].trainable = false;
  const auto path = std::filesystem::temp_directory_path() / "notifdt_ckpt_test.bin";
  write_checkpoint(path, ps, R"({"k":1})");
  const auto ck = read_checkpoint(path);
  CHECK(ck.config == R"({"k":1})");
  REQUIRE(ck.tensors.size() == 2);
  CHECK(ck.tensors[0].name == "layer.w");
  CHECK(ck.tensors[0].dtype == DType::kF32);
  ParameterSet<float> other;
  other.add("layer.w", Tensor<float>(Shape{3, 2}));
  other.add("layer.b", Tensor<float>(Shape{2}));
  load_parameters(other, ck);
  CHECK(other[0].value.data == ps[0].value.data);
  CHECK(other[1].value.data == ps[1].value.data);
  CHECK_FALSE(other[1].trainable);

  ParameterSet<float> wrong;
  wrong.add("layer.w", Tensor<float>(Shape{2, 3}));
  wrong.add("layer.b", Tensor<float>(Shape{2}));
  CHECK_THROWS_AS(load_parameters(wrong, ck), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("Adam minimizes a quadratic") {
  ParameterSet<double> ps;
  ps.add("x", Tensor<double>(Shape{2}, std::vector<double>{3.0, -2.0}));
  Adam<double> opt(ps, AdamOptions{.learning_rate = 0.1});
  for (int i = 0; i < 300; ++i) {
    ps.zero_grad();
    Graph<double> g(ps);
    Var x = g.param("x");
    g.backward(g.sum(g.mul(x, x)));
    opt.step(ps);
  }
  CHECK(std::abs(ps.get("x").value.data[0]) < 1e-2);
  CHECK(std::abs(ps.get("x").value.data[1]) < 1e-2);
}
