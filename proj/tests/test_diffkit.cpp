#include <doctest.h>

#include <cmath>
#include <random>

#include "l2occg/diffkit.hpp"
#include "l2occg/errors.hpp"
#include "oracles.hpp"

using namespace l2occg;
using namespace l2occg::diff;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> U(lo, hi);
  std::vector<double> d(r * c);
  for (auto& x : d) x = U(rng);
  return Tensor::matrix(r, c, d);
}

// Reverse-mode gradient of f at x against central differences of the same
// function evaluated by plain forward recording.
double fd_error(const TapeFunction& f, const Tensor& x, double h = 1e-5) {
  Tape tape;
  const NodeId id = tape.variable(x);
  const auto g = tape.backward(f(tape, id));
  const Vec analytic = to_vec(g[id].data());
  auto scalar = [&](const Vec& p) {
    Tape t;
    Tensor pt(x.shape(), to_std(p));
    return t.value(f(t, t.constant(pt))).item();
  };
  const Vec numeric = oracle::central_diff(scalar, to_vec(x.data()), h);
  return oracle::rel_err(analytic, numeric, 1e-3);
}

}  // namespace

TEST_SUITE("diffkit") {

TEST_CASE("primitive values") {
  Tape t;
  CHECK(t.value(t.sigmoid(t.constant(Tensor::scalar(0.0)))).item() == 0.5);
  CHECK(t.value(t.relu(t.constant(Tensor::scalar(-3.0)))).item() == 0.0);
  const auto pooled = t.value(t.sum_pool(t.constant(Tensor::filled({3, 2}, 1.0))));
  REQUIRE(pooled.size() == 2);
  CHECK(pooled[0] == 3.0);
  CHECK(pooled[1] == 3.0);
}

TEST_CASE("gradient of sum is ones, of x^2 at 3 is 6") {
  Tape t;
  const auto x = t.variable(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  const auto g = t.backward(t.sum(x));
  for (double v : g[x].data()) CHECK(v == 1.0);

  Tape s;
  const auto y = s.variable(Tensor::scalar(3.0));
  CHECK(s.backward(s.square(y))[y].item() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("every primitive matches central differences on 100 random inputs") {
  std::mt19937_64 rng(11);
  const Tensor W = random_tensor(4, 3, rng);
  const Tensor mask3 = random_tensor(5, 3, rng);
  const Tensor row = random_tensor(1, 4, rng);
  const Tensor target = random_tensor(5, 4, rng);
  const Tensor mask = random_tensor(5, 4, rng);
  // Weighted sums keep the root from being a plain sum, which would give
  // constant upstream gradients.
  auto weigh = [&](Tape& t, NodeId y) { return t.sum(t.hadamard(y, t.constant(mask))); };
  std::vector<std::pair<const char*, TapeFunction>> fns{
      {"matmul", [&](Tape& t, NodeId x) {
         return t.sum(t.hadamard(t.matmul(x, t.constant(W)), t.constant(mask3)));
       }},
      {"add", [&](Tape& t, NodeId x) { return weigh(t, t.add(x, t.constant(row))); }},
      {"sub", [&](Tape& t, NodeId x) { return weigh(t, t.sub(t.constant(target), x)); }},
      {"hadamard", [&](Tape& t, NodeId x) { return weigh(t, t.hadamard(x, x)); }},
      {"scale", [&](Tape& t, NodeId x) { return weigh(t, t.scale(x, -1.7)); }},
      {"sigmoid", [&](Tape& t, NodeId x) { return weigh(t, t.sigmoid(x)); }},
      {"tanh", [&](Tape& t, NodeId x) { return weigh(t, t.tanh(x)); }},
      {"square", [&](Tape& t, NodeId x) { return weigh(t, t.square(x)); }},
      {"mse", [&](Tape& t, NodeId x) { return t.mse(x, t.constant(target)); }},
      {"sum_pool", [&](Tape& t, NodeId x) {
         return t.sum(t.hadamard(t.sum_pool(x), t.constant(row)));
       }},
      {"concat_cols", [&](Tape& t, NodeId x) {
         const auto c = t.concat_cols(x, t.constant(target));
         return t.sum(t.hadamard(c, t.constant(Tensor::filled({5, 8}, 0.3))));
       }},
  };
  for (const auto& [name, f] : fns) {
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) worst = std::max(worst, fd_error(f, random_tensor(5, 4, rng)));
    INFO(name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("relu gradient away from the kink") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    Tensor x = random_tensor(4, 3, rng);
    for (auto& v : x.data())
      if (std::abs(v) < 1e-3) v = 0.5;
    CHECK(fd_error([](Tape& t, NodeId id) { return t.sum(t.square(t.relu(id))); }, x) < 1e-4);
  }
}

TEST_CASE("two-layer MLP gradient within 1e-5") {
  std::mt19937_64 rng(3);
  const Tensor W1 = random_tensor(4, 6, rng), b1 = random_tensor(1, 6, rng);
  const Tensor W2 = random_tensor(6, 1, rng);
  auto mlp = [&](Tape& t, NodeId x) {
    const auto h = t.tanh(t.add(t.matmul(x, t.constant(W1)), t.constant(b1)));
    return t.sum(t.square(t.matmul(h, t.constant(W2))));
  };
  const auto rep = grad_check(mlp, random_tensor(3, 4, rng), 1e-5, 1e-5);
  CHECK(rep.pass);
  CHECK(fd_error(mlp, random_tensor(3, 4, rng)) < 1e-5);
}

TEST_CASE("grad_check on a quadratic and a wrong rule") {
  auto sq = [](Tape& t, NodeId x) { return t.sum(t.square(x)); };
  const auto ok = grad_check(sq, Tensor::vector({1.0, 2.0}), 1e-5, 1e-7);
  CHECK(ok.pass);
  CHECK(ok.max_rel_err < 1e-7);

  auto wrong = [](Tape& t, NodeId x) {
    Tensor out = Tensor::scalar(0.0);
    for (double v : t.value(x).data()) out[0] += v * v;
    return t.custom(std::vector<NodeId>{x}, out, [&t, x](const Tensor& g) {
      Tensor dx = t.value(x);
      for (auto& v : dx.data()) v *= 3.0 * g.item();
      return std::vector<Tensor>{dx};
    });
  };
  CHECK_FALSE(grad_check(wrong, Tensor::vector({1.0, 2.0}), 1e-5, 1e-4).pass);
}

TEST_CASE("backward is linear in the root and leaves the tape reusable") {
  std::mt19937_64 rng(9);
  Tape t;
  const auto x = t.variable(random_tensor(3, 3, rng));
  const auto a = t.sum(t.tanh(x));
  const auto b = t.sum(t.square(t.sigmoid(x)));
  const auto ga = t.backward(a), gb = t.backward(b), gab = t.backward(t.add(a, b));
  for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(gab[x][i] - (ga[x][i] + gb[x][i])) <= 1e-12);
  const auto again = t.backward(a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(again[x][i] == ga[x][i]);
}

TEST_CASE("replaying a tape is bit-identical") {
  std::mt19937_64 rng(2);
  const Tensor x0 = random_tensor(6, 5, rng), W = random_tensor(5, 5, rng);
  auto run = [&] {
    Tape t;
    const auto x = t.variable(x0);
    const auto y = t.sum(t.sigmoid(t.matmul(x, t.constant(W))));
    const auto g = t.backward(y);
    std::vector<double> out{t.value(y).item()};
    out.insert(out.end(), g[x].data().begin(), g[x].data().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("shape and value errors") {
  Tape t;
  const auto a = t.constant(Tensor::zeros({2, 3}));
  const auto b = t.constant(Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(t.matmul(a, b), DimensionError);
  CHECK_THROWS_AS(t.add(a, t.constant(Tensor::zeros({3, 2}))), DimensionError);
  CHECK_THROWS_AS(t.backward(a), ContractError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), DimensionError);
  const auto big = t.constant(Tensor::scalar(1e308));
  CHECK_THROWS_AS(t.scale(big, 1e10), NumericError);
}

TEST_CASE("adam and clipping") {
  std::vector<Tensor> g{Tensor::vector({3.0, 4.0})};
  CHECK(global_norm(g) == doctest::Approx(5.0));
  clip_by_global_norm(g, 1.0);
  CHECK(global_norm(g) == doctest::Approx(1.0));

  // Minimise (x - 2)^2.
  std::vector<Tensor> p{Tensor::scalar(0.0)};
  Adam opt(0.05);
  for (int i = 0; i < 2000; ++i) {
    std::vector<Tensor> grad{Tensor::scalar(2.0 * (p[0].item() - 2.0))};
    opt.step(p, grad);
  }
  CHECK(p[0].item() == doctest::Approx(2.0).epsilon(1e-3));
}

}  // TEST_SUITE
