#include <doctest.h>

#include <cmath>
#include <vector>

#include "gsmt/error.hpp"
#include "gsmt/gradcheck.hpp"
#include "gsmt/model.hpp"
#include "gsmt/ops.hpp"
#include "support.hpp"

using namespace gsmt;
using testing::Rng;

namespace {

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void fill(Tensor& t, double v) {
  for (auto& x : t.mutable_values()) x = v;
}

void randomize(Tensor& t, Rng& rng, double scale = 0.5) {
  for (auto& x : t.mutable_values()) x = testing::uniform(rng, -scale, scale);
}

GsmtModel small_model(std::size_t hidden, std::size_t layers, std::size_t l_in, std::size_t l_out,
                      CellKind cell = CellKind::lstm, std::uint64_t seed = 9) {
  ModelConfig c;
  c.hidden_width = hidden;
  c.gat_layers = layers;
  c.l_in = l_in;
  c.l_out = l_out;
  c.cell = cell;
  c.seed = seed;
  return GsmtModel(c);
}

AdjacencyMatrix random_gamma(Rng& rng, std::size_t n, bool sparse) {
  AdjacencyMatrix a(n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool keep = i == j || !sparse || rng() % 3 != 0;
      a.at(i, j) = keep ? testing::uniform(rng, 0.05, 1.0) : 0.0;
      total += a.at(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) /= total;
  }
  return a;
}

double leaky(double x, double slope) { return x > 0 ? x : slope * x; }

// Attention MLP evaluated for one ordered pair with plain loops.
double pair_score(const Tensor& u, std::size_t i, std::size_t j, double gamma, const GatLayerParams& l, double slope) {
  const std::size_t d = l.att_bias.numel();
  double e = l.att_out_bias.values()[0];
  for (std::size_t k = 0; k < d; ++k) {
    double h = l.att_bias.values()[k] + gamma * l.att_gamma.at(0, k);
    for (std::size_t a = 0; a < u.cols(); ++a) h += u.at(i, a) * l.att_self.at(a, k) + u.at(j, a) * l.att_nbr.at(a, k);
    e += leaky(h, slope) * l.att_out.at(k, 0);
  }
  return e;
}

// Formula oracle for the residual update of one row.
std::vector<double> update_row(const Tensor& u, const Tensor& v, std::size_t i, const GatLayerParams& l) {
  const std::size_t d = u.cols();
  std::vector<double> hidden(d), out(d);
  for (std::size_t k = 0; k < d; ++k) {
    double s = l.b1.values()[k];
    for (std::size_t a = 0; a < d; ++a) s += v.at(i, a) * l.w1.at(a, k);
    hidden[k] = std::max(0.0, s);
  }
  for (std::size_t k = 0; k < d; ++k) {
    double s = l.b2.values()[k];
    for (std::size_t a = 0; a < d; ++a) s += hidden[a] * l.w2.at(a, k);
    out[k] = u.at(i, k) + std::max(0.0, s);
  }
  return out;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& p) {
  std::vector<double> v(t.numel());
  const std::size_t c = t.cols();
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t k = 0; k < c; ++k) v[i * c + k] = t.at(p[i], k);
  return Tensor::matrix(t.rows(), c, v);
}

AdjacencyMatrix permute_graph(const AdjacencyMatrix& a, const std::vector<std::size_t>& p) {
  AdjacencyMatrix out(a.n);
  for (std::size_t i = 0; i < a.n; ++i)
    for (std::size_t j = 0; j < a.n; ++j) out.at(i, j) = a.at(p[i], p[j]);
  return out;
}

WindowSample permute_window(const WindowSample& w, const std::vector<std::size_t>& p) {
  WindowSample out = w;
  for (std::size_t s = 0; s < w.input.steps; ++s)
    for (std::size_t b = 0; b < p.size(); ++b)
      for (std::size_t f = 0; f < 3; ++f) out.input.at(s, b, f) = w.input.at(s, p[b], f);
  for (std::size_t s = 0; s < w.target.steps; ++s)
    for (std::size_t b = 0; b < p.size(); ++b)
      for (std::size_t f = 0; f < 2; ++f) out.target.at(s, b, f) = w.target.at(s, p[b], f);
  return out;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("attention scores") {
  Rng rng(1);
  auto m = small_model(4, 1, 2, 1);
  auto& layer = m.gat.layers[0];
  SUBCASE("identical nodes and symmetric gamma give symmetric scores") {
    const auto u = Tensor::matrix(3, 4, std::vector<double>{0.1, -0.2, 0.3, 0.4, 0.1, -0.2, 0.3, 0.4, 0.1, -0.2, 0.3, 0.4});
    AdjacencyMatrix g(3);
    g.weights = {0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5};
    const auto s = gat_scores(u, g, layer, 0.2);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(s.scores.at(i, j) == s.scores.at(j, i));
  }
  SUBCASE("zero output weights give the output bias everywhere") {
    fill(layer.att_out, 0.0);
    layer.att_out_bias.mutable_values()[0] = 0.37;
    const auto u = testing::random_matrix(rng, 3, 4);
    const auto s = gat_scores(u, random_gamma(rng, 3, false), layer, 0.2);
    for (double v : s.scores.values()) CHECK(v == 0.37);
  }
  SUBCASE("per-pair oracle and mask") {
    for (int trial = 0; trial < 20; ++trial) {
      for (auto* t : {&layer.att_self, &layer.att_nbr, &layer.att_gamma, &layer.att_bias, &layer.att_out, &layer.att_out_bias})
        randomize(*t, rng);
      const std::size_t n = testing::index(rng, 2, 5);
      const auto u = testing::random_matrix(rng, n, 4);
      const auto g = random_gamma(rng, n, true);
      const auto s = gat_scores(u, g, layer, 0.2);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          CHECK(s.mask[i * n + j] == (g.at(i, j) > 0.0 ? 1 : 0));
          CHECK(s.scores.at(i, j) == doctest::Approx(pair_score(u, i, j, g.at(i, j), layer, 0.2)).epsilon(1e-12));
        }
    }
  }
  CHECK_THROWS_AS(gat_scores(testing::random_matrix(rng, 3, 5), random_gamma(rng, 3, false), layer, 0.2), DimensionError);
  CHECK_THROWS_AS(gat_scores(testing::random_matrix(rng, 3, 4), random_gamma(rng, 2, false), layer, 0.2), DimensionError);
}

TEST_CASE("attention weights") {
  const std::vector<std::uint8_t> all(9, 1);
  const auto flat = gat_weights(Tensor::matrix(3, 3, std::vector<double>(9, 2.5)), all);
  for (double v : flat.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto peak = gat_weights(Tensor::matrix(1, 3, {0.0, 100.0, 0.0}), std::vector<std::uint8_t>{1, 1, 1});
  CHECK(peak.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<std::uint8_t> partial{1, 0, 1};
  const auto masked = gat_weights(Tensor::matrix(1, 3, {1.0, 50.0, 1.0}), partial);
  CHECK(masked.at(0, 1) == 0.0);
  CHECK(masked.at(0, 0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(gat_weights(Tensor::matrix(1, 2, {0.0, 0.0}), std::vector<std::uint8_t>{0, 0}), ContractError);
}

TEST_CASE("aggregation") {
  Rng rng(2);
  const auto u = testing::random_matrix(rng, 3, 4);
  AdjacencyMatrix eye(3);
  const auto id = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(vals(gat_aggregate(id, u)) == vals(u));

  const auto same = Tensor::matrix(2, 2, {0.7, -0.1, 0.7, -0.1});
  const auto half = Tensor::matrix(2, 2, {0.5, 0.5, 0.5, 0.5});
  const auto v = gat_aggregate(half, same);
  CHECK(v.at(0, 0) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(v.at(1, 1) == doctest::Approx(-0.1).epsilon(1e-15));

  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = testing::index(rng, 2, 6), d = testing::index(rng, 1, 5);
    const auto alpha = testing::random_matrix(rng, n, n, false, 0.0, 1.0);
    const auto x = testing::random_matrix(rng, n, d);
    const auto out = gat_aggregate(alpha, x);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += alpha.at(i, j) * x.at(j, k);
        CHECK(out.at(i, k) == doctest::Approx(s).epsilon(1e-13));
      }
  }
  CHECK_THROWS_AS(gat_aggregate(testing::random_matrix(rng, 3, 2), u), DimensionError);
}

TEST_CASE("residual update") {
  Rng rng(3);
  auto m = small_model(4, 1, 2, 1);
  auto& l = m.gat.layers[0];
  const auto u = testing::random_matrix(rng, 3, 4);
  const auto v = testing::random_matrix(rng, 3, 4);
  {
    auto z = m.clone();
    auto& zl = z.gat.layers[0];
    for (auto* t : {&zl.w1, &zl.b1, &zl.w2, &zl.b2}) fill(*t, 0.0);
    CHECK(vals(gat_update(u, v, zl)) == vals(u));
    const auto zero = Tensor::zeros({3, 4});
    CHECK(vals(gat_update(zero, zero, zl)) == vals(zero));
  }
  for (int trial = 0; trial < 20; ++trial) {
    for (auto* t : {&l.w1, &l.b1, &l.w2, &l.b2}) randomize(*t, rng);
    const auto out = gat_update(u, v, l);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto want = update_row(u, v, i, l);
      for (std::size_t k = 0; k < 4; ++k) CHECK(out.at(i, k) == doctest::Approx(want[k]).epsilon(1e-13));
    }
  }
  CHECK_THROWS_AS(gat_update(u, testing::random_matrix(rng, 3, 3), l), DimensionError);
}

TEST_CASE("GAT stack composition") {
  Rng rng(4);
  const double slope = 0.2;
  auto m = small_model(5, 3, 2, 1);
  const auto frame = testing::random_matrix(rng, 4, 3, false, 0.0, 1.0);
  const auto g = random_gamma(rng, 4, true);
  const auto projected = add_row(matmul(frame, m.gat.in_w), m.gat.in_b);

  SUBCASE("one layer") {
    auto one = small_model(5, 1, 2, 1);
    const auto p1 = add_row(matmul(frame, one.gat.in_w), one.gat.in_b);
    CHECK(vals(gat_forward(frame, g, one.gat, slope)) == vals(gat_layer(p1, g, one.gat.layers[0], slope)));
  }
  SUBCASE("zero update networks keep the projection") {
    auto z = m.clone();
    for (auto& l : z.gat.layers)
      for (auto* t : {&l.w1, &l.b1, &l.w2, &l.b2}) fill(*t, 0.0);
    CHECK(vals(gat_forward(frame, g, z.gat, slope)) == vals(projected));
  }
  SUBCASE("three layers step by step") {
    auto u = projected;
    for (const auto& l : m.gat.layers) {
      const auto s = gat_scores(u, g, l, slope);
      const auto a = gat_weights(s.scores, s.mask);
      u = gat_update(u, gat_aggregate(a, u), l);
    }
    CHECK(vals(gat_forward(frame, g, m.gat, slope)) == vals(u));
  }
}

TEST_CASE("GAT invariants on random instances") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = testing::index(rng, 2, 6);
    auto m = small_model(testing::index(rng, 2, 6), testing::index(rng, 1, 3), 2, 1, CellKind::lstm, rng());
    const std::size_t d = m.config().hidden_width;
    const auto u = testing::random_matrix(rng, n, d);
    const auto g = random_gamma(rng, n, true);
    const auto& layer = m.gat.layers[0];

    const auto s = gat_scores(u, g, layer, 0.2);
    const auto alpha = gat_weights(s.scores, s.mask);
    for (std::size_t i = 0; i < n; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (!s.mask[i * n + j]) CHECK(alpha.at(i, j) == 0.0);
        total += alpha.at(i, j);
      }
      CHECK(std::fabs(total - 1.0) <= 1e-9);
    }

    auto zeroed = m.clone();
    for (auto& l : zeroed.gat.layers)
      for (auto* t : {&l.w1, &l.b1, &l.w2, &l.b2}) fill(*t, 0.0);
    for (const auto& l : zeroed.gat.layers) CHECK(vals(gat_layer(u, g, l, 0.2)) == vals(u));

    const auto p = testing::random_permutation(rng, n);
    const auto frame = testing::random_matrix(rng, n, 3, false, 0.0, 1.0);
    const auto out = gat_forward(frame, g, m.gat, 0.2);
    const auto out_p = gat_forward(permute_rows(frame, p), permute_graph(g, p), m.gat, 0.2);
    CHECK(vals(out_p) == vals(permute_rows(out, p)));
  }
}

TEST_CASE("recurrent cells") {
  Rng rng(6);
  SUBCASE("zero LSTM stays at zero") {
    auto m = small_model(3, 1, 1, 1);
    auto cell = m.seq.encoder;
    for (auto* t : {&cell.wx, &cell.wh, &cell.b}) fill(*t, 0.0);
    const auto zero = Tensor::zeros({2, 3});
    const auto s = lstm_cell(zero, zero, zero, cell);
    for (double v : s.h.values()) CHECK(v == 0.0);
    for (double v : s.c.values()) CHECK(v == 0.0);
  }
  SUBCASE("forget gate bias starts at one") {
    auto m = small_model(3, 1, 1, 1);
    const auto b = vals(m.seq.encoder.b);
    for (std::size_t k = 0; k < 12; ++k) CHECK(b[k] == (k >= 3 && k < 6 ? 1.0 : 0.0));
  }
  SUBCASE("GRU with a shut update gate keeps its state") {
    auto m = small_model(3, 1, 1, 1, CellKind::gru);
    auto cell = m.seq.encoder;
    auto b = cell.b.mutable_values();
    for (std::size_t k = 0; k < 3; ++k) b[k] = -60.0;
    const auto x = testing::random_matrix(rng, 2, 3);
    const auto h = testing::random_matrix(rng, 2, 3);
    const auto next = gru_cell(x, h, cell);
    for (std::size_t k = 0; k < 6; ++k) CHECK(next.values()[k] == doctest::Approx(h.values()[k]).epsilon(1e-20));
  }
  SUBCASE("two unrolled steps match finite differences") {
    for (auto kind : {CellKind::lstm, CellKind::gru}) {
      auto m = small_model(3, 1, 1, 1, kind);
      auto cell = m.seq.encoder;
      auto x1 = testing::random_matrix(rng, 2, 3);
      auto x2 = testing::random_matrix(rng, 2, 3);
      std::vector<Tensor> inputs{cell.wx, cell.wh, cell.b, x1, x2};
      if (kind == CellKind::gru) inputs.push_back(cell.bh);
      const auto r = gradient_check(
          [&] {
            auto s = zero_state(2, cell);
            s = cell_step(x1, s, cell);
            s = cell_step(x2, s, cell);
            return sum(mul(s.h, s.h));
          },
          inputs);
      CHECK(r.max_rel_error < 1e-5);
    }
  }
}

TEST_CASE("encoder unrolls its cell") {
  Rng rng(7);
  auto m = small_model(4, 1, 3, 1);
  const auto& cell = m.seq.encoder;
  std::vector<Tensor> xs{testing::random_matrix(rng, 3, 4), testing::random_matrix(rng, 3, 4), testing::random_matrix(rng, 3, 4)};
  const auto one = encode(std::span<const Tensor>(xs.data(), 1), cell);
  const auto manual1 = cell_step(xs[0], zero_state(3, cell), cell);
  CHECK(vals(one.h) == vals(manual1.h));
  auto s = zero_state(3, cell);
  for (const auto& x : xs) s = cell_step(x, s, cell);
  const auto three = encode(xs, cell);
  CHECK(vals(three.h) == vals(s.h));
  CHECK(vals(three.c) == vals(s.c));
  CHECK_THROWS_AS(encode(std::span<const Tensor>{}, cell), ContractError);

  const auto p = testing::random_permutation(rng, 3);
  std::vector<Tensor> xp;
  for (const auto& x : xs) xp.push_back(permute_rows(x, p));
  CHECK(vals(encode(xp, cell).h) == vals(permute_rows(three.h, p)));
}

TEST_CASE("decoder") {
  Rng rng(8);
  auto m = small_model(4, 1, 2, 3);
  const auto g = random_gamma(rng, 3, false);
  const auto last = testing::random_matrix(rng, 3, 3, false, 0.0, 1.0);
  const auto state = encode(std::vector<Tensor>{testing::random_matrix(rng, 3, 4)}, m.seq.encoder);

  auto zero_head = m.clone();
  fill(zero_head.seq.head_w, 0.0);
  fill(zero_head.seq.head_b, 0.0);
  for (const auto& y : decode(state, last, 3, g, zero_head))
    for (double v : y.values()) CHECK(v == 0.0);

  const auto single = decode(state, last, 1, g, m);
  REQUIRE(single.size() == 1);
  const auto x = gat_forward(last, g, m.gat, 0.2);
  const auto s1 = cell_step(x, state, m.seq.decoder);
  CHECK(vals(single[0]) == vals(add_row(matmul(s1.h, m.seq.head_w), m.seq.head_b)));

  const auto a = decode(state, last, 3, g, m);
  const auto b = decode(state, last, 3, g, m);
  for (std::size_t k = 0; k < 3; ++k) CHECK(vals(a[k]) == vals(b[k]));
  CHECK_THROWS_AS(decode(state, last, 0, g, m), ContractError);
}

TEST_CASE("full forward") {
  Rng rng(9);
  const auto w = testing::random_window(rng, 3, 2, 2);
  const auto g = random_gamma(rng, 2, false);
  auto m = small_model(8, 3, 3, 2);
  const auto out = forward(w, g, m);
  REQUIRE(out.size() == 2);
  for (const auto& y : out) CHECK(y.shape() == Shape{2, 2});
  CHECK(predict(w, g, m) == predict(w, g, m));

  auto params = m.parameters();
  const auto r = gradient_check([&] { return mae_loss(forward(w, g, m), w.target); }, params);
  CHECK(r.max_rel_error < 1e-4);
  CHECK(r.checked > 500);

  auto wrong = testing::random_window(rng, 4, 2, 2);
  CHECK_THROWS_AS(forward(wrong, g, m), DimensionError);
}

TEST_CASE("full forward is node-permutation equivariant") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = testing::index(rng, 2, 5);
    auto m = small_model(6, 2, 3, 2, trial % 2 ? CellKind::gru : CellKind::lstm, rng());
    const auto w = testing::random_window(rng, 3, 2, n);
    const auto g = random_gamma(rng, n, true);
    const auto p = testing::random_permutation(rng, n);
    const auto out = predict(w, g, m);
    const auto out_p = predict(permute_window(w, p), permute_graph(g, p), m);
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t f = 0; f < 2; ++f) CHECK(out_p.at(s, b, f) == out.at(s, p[b], f));
  }
}

TEST_CASE("clone does not alias") {
  auto m = small_model(4, 1, 2, 1);
  auto c = m.clone();
  c.seq.head_b.mutable_values()[0] = 5.0;
  CHECK(m.seq.head_b.values()[0] == 0.0);
  const auto names = m.named_parameters();
  CHECK(names.front().name == "gat.in_w");
  CHECK(names.back().name == "head.b");
}

TEST_CASE("training") {
  Rng rng(11);
  auto constant_samples = [&](std::size_t count) {
    std::vector<TrainingSample> out;
    for (std::size_t k = 0; k < count; ++k) {
      WindowSample w;
      w.input = FrameArray(2, 2, 3);
      w.target = FrameArray(2, 2, 2);
      for (auto& v : w.input.values) v = 0.5;
      for (auto& v : w.target.values) v = 0.3;
      out.push_back({w, random_gamma(rng, 2, false)});
    }
    return out;
  };
  ModelConfig mc;
  mc.hidden_width = 8;
  mc.gat_layers = 1;
  mc.l_in = 2;
  mc.l_out = 2;

  SUBCASE("constant trajectories are fitted") {
    TrainConfig tc;
    tc.epochs = 200;
    tc.patience = 0;
    tc.batch_size = 4;
    tc.adam.lr = 0.01;
    const auto samples = constant_samples(8);
    auto state = init_training(mc, tc);
    train(state, samples, samples, tc);
    CHECK(state.history.size() == 200);
    CHECK(evaluate_mae(state.best, samples) < 1e-3);
    CHECK(state.best_validation <= state.history.front().validation_mae);
  }
  SUBCASE("zero epochs") {
    TrainConfig tc;
    tc.epochs = 0;
    auto state = init_training(mc, tc);
    const auto before = vals(state.model.gat.in_w);
    const auto samples = constant_samples(2);
    train(state, samples, samples, tc);
    CHECK(state.history.empty());
    CHECK(vals(state.model.gat.in_w) == before);
  }
  SUBCASE("early stopping and the best checkpoint") {
    Rng r2(12);
    std::vector<TrainingSample> train_set, val_set;
    for (int k = 0; k < 6; ++k) train_set.push_back({testing::random_window(r2, 2, 2, 2), random_gamma(r2, 2, false)});
    for (int k = 0; k < 3; ++k) val_set.push_back({testing::random_window(r2, 2, 2, 2), random_gamma(r2, 2, false)});
    TrainConfig tc;
    tc.epochs = 60;
    tc.patience = 3;
    auto state = init_training(mc, tc);
    train(state, train_set, val_set, tc);
    double best = 1e300;
    for (const auto& e : state.history) best = std::min(best, e.validation_mae);
    CHECK(state.best_validation == best);
    CHECK(evaluate_mae(state.best, val_set) == best);
    CHECK(best <= state.history.front().validation_mae);
    if (state.stopped_early) CHECK(state.epochs_since_best == 3);
  }
  SUBCASE("divergence names the epoch and the loss trace") {
    TrainConfig tc;
    tc.epochs = 20;
    tc.patience = 0;
    tc.adam.lr = 1e308;
    const auto samples = constant_samples(4);
    auto state = init_training(mc, tc);
    try {
      train(state, samples, samples, tc);
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("epoch") != std::string::npos);
      CHECK(msg.find("loss trace") != std::string::npos);
      CHECK(e.exit_code() == 4);
    }
  }
  SUBCASE("resuming matches an uninterrupted run") {
    const auto samples = constant_samples(4);
    TrainConfig tc;
    tc.epochs = 6;
    tc.patience = 0;
    auto straight = init_training(mc, tc);
    train(straight, samples, samples, tc);

    TrainConfig half = tc;
    half.epochs = 3;
    auto first = init_training(mc, half);
    train(first, samples, samples, half);
    auto resumed = first.clone();
    train(resumed, samples, samples, tc);
    REQUIRE(resumed.history.size() == 6);
    for (std::size_t k = 0; k < 6; ++k) CHECK(resumed.history[k].train_loss == straight.history[k].train_loss);
    CHECK(vals(resumed.model.seq.head_w) == vals(straight.model.seq.head_w));
  }
}

}  // TEST_SUITE
