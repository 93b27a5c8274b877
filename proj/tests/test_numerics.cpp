#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "gsmt/adam.hpp"
#include "gsmt/error.hpp"
#include "gsmt/gradcheck.hpp"
#include "gsmt/ops.hpp"
#include "support.hpp"

using namespace gsmt;
using testing::Rng;

TEST_SUITE("numerics") {

TEST_CASE("relu and uniform softmax examples") {
  const auto r = relu(Tensor({3}, {-1.0, 0.0, 2.0}));
  CHECK(std::vector<double>(r.values().begin(), r.values().end()) == std::vector<double>{0.0, 0.0, 2.0});

  const auto s = row_softmax(Tensor::matrix(1, 3, {0.0, 0.0, 0.0}));
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("matmul matches a triple loop") {
  Rng rng(1);
  const auto a = testing::random_matrix(rng, 2, 3);
  const auto b = testing::random_matrix(rng, 3, 4);
  const auto c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 4});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 3; ++k) ref += a.at(i, k) * b.at(k, j);
      CHECK(c.at(i, j) == doctest::Approx(ref).epsilon(1e-14));
    }
}

TEST_CASE("backward examples") {
  SUBCASE("sum gives ones") {
    Tensor x({4}, {0.3, -2.0, 5.0, 1.0}, true);
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(sum(x));
    }
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("mean abs difference") {
    Tensor x({2}, {1.0, 3.0}, true);
    const Tensor y({2}, {2.0, 2.0});
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(mean(abs(sub(x, y))));
    }
    CHECK(x.grad()[0] == doctest::Approx(-0.5));
    CHECK(x.grad()[1] == doctest::Approx(0.5));
  }
  SUBCASE("fan-out accumulates") {
    Tensor x({3}, {1.0, 2.0, 3.0}, true);
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(sum(add(x, x)));
    }
    for (double g : x.grad()) CHECK(g == 2.0);
  }
}

TEST_CASE("tape contract") {
  Tensor x({2}, {1.0, 2.0}, true);
  Tape tape;
  TapeScope scope(tape);
  const auto y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);  // not a scalar
  const auto loss = sum(y);
  tape.backward(loss);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(loss), TapeError);
  CHECK_THROWS_AS(sum(x), TapeError);  // recording on a consumed tape
  tape.clear();
  CHECK_FALSE(tape.consumed());
}

TEST_CASE("op outputs are immutable, leaves are not") {
  Tensor x({2}, {1.0, 2.0}, true);
  Tape tape;
  TapeScope scope(tape);
  auto y = scale(x, 2.0);
  CHECK_THROWS_AS(y.mutable_values(), StateError);
  x.mutable_values()[0] = 4.0;
  CHECK(x.values()[0] == 4.0);
}

TEST_CASE("shape and value errors") {
  const auto a = Tensor::matrix(2, 3, std::vector<double>(6, 1.0));
  const auto b = Tensor::matrix(2, 3, std::vector<double>(6, 1.0));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Tensor::matrix(3, 2, std::vector<double>(6, 1.0))), DimensionError);
  CHECK_THROWS_AS(Tensor({2}, {1.0}), DimensionError);
  CHECK_THROWS_AS(Tensor({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
  CHECK_THROWS_AS(exp(Tensor({1}, {1000.0})), NumericError);
  const std::vector<std::uint8_t> none{0, 0};
  CHECK_THROWS_AS(masked_row_softmax(Tensor::matrix(1, 2, {0.0, 0.0}), none), ContractError);
}

TEST_CASE("gradient_check examples") {
  Tensor x({3}, {1.0, 2.0, 3.0});
  std::vector<Tensor> inputs{x};
  const auto r = gradient_check([&] { return sum(mul(x, x)); }, inputs);
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.checked == 3);

  const auto c = gradient_check([] { return Tensor::scalar(7.0); }, inputs);
  CHECK(c.max_rel_error == 0.0);

  Tensor y({1}, {1.0});
  std::vector<Tensor> ys{y};
  // exp(709.7827) is finite; a +1e-6 perturbation overflows.
  CHECK_THROWS_AS(gradient_check([&] { return sum(gsmt::exp(scale(y, 709.7827))); }, ys), NumericError);
}

// Every primitive against central differences at random points.
TEST_CASE("primitive gradients match finite differences") {
  Rng rng(7);
  // Values bounded away from the kinks of relu/abs/leaky_relu.
  auto away = [&](std::size_t r, std::size_t c) {
    auto v = testing::uniform_values(rng, r * c, 0.2, 1.0);
    for (auto& x : v)
      if (rng() & 1) x = -x;
    return Tensor::matrix(r, c, v);
  };
  for (int trial = 0; trial < 10; ++trial) {
    auto a = testing::random_matrix(rng, 3, 4);
    auto b = testing::random_matrix(rng, 3, 4);
    auto m = testing::random_matrix(rng, 4, 2);
    auto bias = Tensor({4}, testing::uniform_values(rng, 4));
    auto k = away(3, 4);
    auto w = testing::random_matrix(rng, 3, 2);
    std::vector<std::uint8_t> mask{1, 0, 1, 1, 1, 1, 0, 1, 0, 0, 1, 1};

    struct Case {
      const char* name;
      std::function<Tensor()> fn;
      std::vector<Tensor> inputs;
    };
    auto weighted = [&](const Tensor& t) {
      // Random linear functional so every output coordinate matters.
      std::vector<double> c(t.numel());
      for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.5 + 0.1 * static_cast<double>(i % 7);
      return sum(mul(t, Tensor(t.shape(), c)));
    };
    std::vector<Case> cases{
        {"matmul", [&] { return weighted(matmul(a, m)); }, {a, m}},
        {"add", [&] { return weighted(add(a, b)); }, {a, b}},
        {"sub", [&] { return weighted(sub(a, b)); }, {a, b}},
        {"mul", [&] { return weighted(mul(a, b)); }, {a, b}},
        {"add_row", [&] { return weighted(add_row(a, bias)); }, {a, bias}},
        {"scale", [&] { return weighted(scale(a, -1.7)); }, {a}},
        {"relu", [&] { return weighted(relu(k)); }, {k}},
        {"leaky_relu", [&] { return weighted(leaky_relu(k, 0.2)); }, {k}},
        {"sigmoid", [&] { return weighted(sigmoid(a)); }, {a}},
        {"tanh", [&] { return weighted(gsmt::tanh(a)); }, {a}},
        {"exp", [&] { return weighted(gsmt::exp(a)); }, {a}},
        {"abs", [&] { return weighted(gsmt::abs(k)); }, {k}},
        {"sum", [&] { return sum(a); }, {a}},
        {"mean", [&] { return mean(mul(a, a)); }, {a}},
        {"concat_cols", [&] { std::vector<Tensor> p{a, w}; return weighted(concat_cols(p)); }, {a, w}},
        {"slice_cols", [&] { return weighted(slice_cols(a, 1, 3)); }, {a}},
        {"reshape", [&] { return weighted(reshape(a, {4, 3})); }, {a}},
        {"row_softmax", [&] { return weighted(row_softmax(a)); }, {a}},
        {"masked_row_softmax", [&] { return weighted(masked_row_softmax(a, mask)); }, {a}},
        {"neighbor_sum", [&] { return weighted(neighbor_sum(a, m)); }, {a, m}},
        {"pair_sum", [&] { return weighted(pair_sum(a, b)); }, {a, b}},
    };
    for (auto& c : cases) {
      CAPTURE(c.name);
      const auto r = gradient_check(c.fn, c.inputs);
      CHECK(r.max_rel_error < 1e-5);
      CHECK(r.checked > 0);
    }
  }
}

TEST_CASE("softmax rows are distributions with exact zeros under the mask") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = testing::index(rng, 1, 6);
    const std::size_t cols = testing::index(rng, 1, 6);
    const auto logits = testing::random_matrix(rng, rows, cols, false, -20.0, 20.0);
    std::vector<std::uint8_t> mask(rows * cols);
    for (auto& m : mask) m = (rng() % 3) != 0;
    for (std::size_t i = 0; i < rows; ++i) mask[i * cols + testing::index(rng, 0, cols - 1)] = 1;
    const auto p = masked_row_softmax(logits, mask);
    for (std::size_t i = 0; i < rows; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        const double v = p.at(i, j);
        CHECK(v >= 0.0);
        if (!mask[i * cols + j]) CHECK(v == 0.0);
        total += v;
      }
      CHECK(std::fabs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("softmax and neighbour sums are column-permutation equivariant bit-exactly") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = testing::index(rng, 2, 7);
    const auto logits = testing::random_matrix(rng, n, n, false, -3.0, 3.0);
    const auto u = testing::random_matrix(rng, n, 3);
    const auto perm = testing::random_permutation(rng, n);
    std::vector<double> lp(n * n), up(n * 3);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) lp[i * n + j] = logits.at(i, perm[j]);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t f = 0; f < 3; ++f) up[j * 3 + f] = u.at(perm[j], f);
    const auto a = row_softmax(logits);
    const auto ap = row_softmax(Tensor::matrix(n, n, lp));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) CHECK(ap.at(i, j) == a.at(i, perm[j]));
    const auto v = neighbor_sum(a, u);
    const auto vp = neighbor_sum(ap, Tensor::matrix(n, 3, up));
    CHECK(std::vector<double>(v.values().begin(), v.values().end()) ==
          std::vector<double>(vp.values().begin(), vp.values().end()));
  }
}

TEST_CASE("adam examples") {
  SUBCASE("one step on x^2 from x = 1") {
    Tensor x({1}, {1.0}, true);
    AdamState st;
    st.config = {0.1, 0.9, 0.999, 1e-8};
    {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(sum(mul(x, x)));
    }
    std::vector<Tensor> params{x};
    adam_step(params, st);
    // m_hat = 2, v_hat = 4: step = 0.1 * 2 / (2 + 1e-8)
    CHECK(x.values()[0] == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
    CHECK(x.values()[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(st.step == 1);
  }
  SUBCASE("zero gradient leaves parameters and advances t") {
    std::vector<double> p{0.5, -1.5};
    const std::vector<double> g{0.0, 0.0};
    std::vector<std::span<double>> ps{p};
    std::vector<std::span<const double>> gs{g};
    AdamState st;
    adam_step(ps, gs, st);
    adam_step(ps, gs, st);
    CHECK(p == std::vector<double>{0.5, -1.5});
    CHECK(st.step == 2);
  }
  SUBCASE("first step has magnitude lr") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> p{testing::uniform(rng, -5, 5)};
      double g0 = testing::uniform(rng, -100, 100);
      if (std::fabs(g0) < 1e-3) g0 = 1.0;
      const std::vector<double> g{g0};
      const double before = p[0];
      std::vector<std::span<double>> ps{p};
      std::vector<std::span<const double>> gs{g};
      AdamState st;
      st.config.lr = 0.01;
      adam_step(ps, gs, st);
      CHECK(std::fabs(std::fabs(p[0] - before) - 0.01) < 1e-7);
    }
  }
  SUBCASE("deterministic and congruent") {
    Rng rng(4);
    auto p1 = testing::uniform_values(rng, 5);
    auto p2 = p1;
    const auto g = testing::uniform_values(rng, 5);
    AdamState s1, s2;
    for (int i = 0; i < 3; ++i) {
      std::vector<std::span<double>> a{p1}, b{p2};
      std::vector<std::span<const double>> ga{g}, gb{g};
      adam_step(a, ga, s1);
      adam_step(b, gb, s2);
    }
    CHECK(p1 == p2);
    CHECK(s1.m == s2.m);
    CHECK(s1.v == s2.v);
    for (double v : s1.v[0]) CHECK(v >= 0.0);
    std::vector<double> shorter(4, 0.0);
    std::vector<std::span<double>> bad{shorter};
    std::vector<std::span<const double>> gbad{g};
    CHECK_THROWS_AS(adam_step(bad, gbad, s1), ContractError);
  }
  SUBCASE("invalid hyperparameters") {
    AdamState st;
    st.config.eps = 0.0;
    std::vector<double> p{1.0};
    const std::vector<double> g{1.0};
    std::vector<std::span<double>> ps{p};
    std::vector<std::span<const double>> gs{g};
    CHECK_THROWS_AS(adam_step(ps, gs, st), ConfigError);
  }
}

}  // TEST_SUITE
