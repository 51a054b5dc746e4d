#include <doctest.h>

#include <cmath>

#include "gedi/errors.hpp"
#include "gedi/grad_check.hpp"
#include "test_util.hpp"

using namespace gedi;
using gedi::testing::project;
using gedi::testing::uniform;

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

void check_primitive(const char* name, const ScalarFunction& f,
                     const std::function<std::vector<Matrix>(Rng&)>& make) {
  for (std::uint64_t seed : kSeeds) {
    Rng rng(seed);
    const std::vector<Matrix> params = make(rng);
    const double err = grad_check(f, params, kStep);
    INFO(name << " seed " << seed << " error " << err);
    CHECK(err < kTol);
  }
}

Matrix random_mask(Index rows, Index cols, Rng& rng) {
  std::bernoulli_distribution b(0.6);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = b(rng) ? 1.0 : 0.0;
  for (Index r = 0; r < rows; ++r) m(r, 0) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("matmul with identity returns the other operand") {
  Tape t;
  Rng rng(7);
  Matrix b = uniform(3, 5, rng);
  Tensor out = matmul(t.constant(Matrix::Identity(3, 3)), t.constant(b));
  CHECK(out.value() == b);
}

TEST_CASE("masked softmax excludes masked entries") {
  Tape t;
  Matrix logits(1, 3);
  logits << 1, 1, 1;
  Matrix mask(1, 3);
  mask << 1, 0, 1;
  Tensor p = masked_softmax(t.constant(logits), mask);
  CHECK(p.value()(0, 0) == doctest::Approx(0.5));
  CHECK(p.value()(0, 1) == 0.0);
  CHECK(p.value()(0, 2) == doctest::Approx(0.5));
}

TEST_CASE("masked softmax with an all-zero mask row yields zeros") {
  Tape t;
  Matrix logits = Matrix::Constant(2, 3, 0.3);
  Matrix mask = Matrix::Ones(2, 3);
  mask.row(1).setZero();
  Tensor p = masked_softmax(t.constant(logits), mask);
  CHECK(p.value().row(1).isZero(0.0));
  CHECK(p.value().row(0).sum() == doctest::Approx(1.0));
}

TEST_CASE("masked softmax property: nonnegative, zero where masked, rows sum to one") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tape t;
    Matrix mask = random_mask(4, 6, rng);
    Tensor p = masked_softmax(t.constant(uniform(4, 6, rng, -10, 10)), mask);
    for (Index i = 0; i < 4; ++i) {
      double total = 0.0;
      for (Index j = 0; j < 6; ++j) {
        CHECK(p.value()(i, j) >= 0.0);
        if (mask(i, j) == 0.0) CHECK(p.value()(i, j) == 0.0);
        total += p.value()(i, j);
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("layer norm of [1, 3] is [-1, 1] up to epsilon") {
  Tape t;
  Matrix x(1, 2);
  x << 1, 3;
  Tensor y = layer_norm(t.constant(x), t.constant(Matrix::Ones(1, 2)),
                        t.constant(Matrix::Zero(1, 2)));
  // (x - 2) / sqrt(1 + 1e-5)
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y.value()(0, 0) == doctest::Approx(-expect).epsilon(1e-12));
  CHECK(y.value()(0, 1) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("backward of sum and of sum of squares") {
  Tape t;
  Matrix x(1, 2);
  x << 2, 3;
  Tensor v = t.variable(x);
  t.backward(sum(v));
  CHECK(v.grad() == Matrix::Ones(1, 2));
  t.backward(sum(mul(v, v)));
  CHECK(v.grad()(0, 0) == 4.0);
  CHECK(v.grad()(0, 1) == 6.0);
}

TEST_CASE("gradients accumulate across fan-out") {
  Tape t;
  Tensor v = t.variable(Matrix::Constant(1, 1, 3.0));
  Tensor y = add(mul(v, v), scale(v, 2.0));
  t.backward(y);
  CHECK(v.grad()(0, 0) == doctest::Approx(8.0));
}

TEST_CASE("backward on an untaped tensor is a usage error") {
  Tape t;
  Tensor c = t.constant(Matrix::Ones(1, 1));
  CHECK_THROWS_AS(t.backward(sum(c)), UsageError);
  Tensor v = t.variable(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(t.backward(v), UsageError);
}

TEST_CASE("shape mismatch raises a dimension error") {
  Tape t;
  Tensor a = t.constant(Matrix::Ones(2, 3));
  Tensor b = t.constant(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(matmul(a, a), DimensionError);
  CHECK_THROWS_AS(add(a, b), DimensionError);
  CHECK_THROWS_AS(concat_cols(std::vector<Tensor>{a, t.constant(Matrix::Ones(3, 1))}),
                  DimensionError);
}

TEST_CASE("non-finite results name the primitive") {
  Tape t;
  Tensor zero = t.constant(Matrix::Zero(1, 1));
  try {
    div(t.constant(Matrix::Ones(1, 1)), zero);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("div") != std::string::npos);
  }
  CHECK_THROWS_AS(log(zero), NumericError);
}

TEST_CASE("grad_check of sum of squares is tight") {
  Matrix x(1, 2);
  x << 1, 2;
  const double err = grad_check(
      [](Tape&, std::span<const Tensor> p) { return sum(mul(p[0], p[0])); }, std::vector{x},
      1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("primitive gradients match central differences") {
  using V = std::vector<Matrix>;
  auto two = [](Index r1, Index c1, Index r2, Index c2) {
    return [=](Rng& rng) { return V{uniform(r1, c1, rng), uniform(r2, c2, rng)}; };
  };
  auto one = [](Index r, Index c, double lo = -2.0, double hi = 2.0) {
    return [=](Rng& rng) { return V{uniform(r, c, rng, lo, hi)}; };
  };
  auto bin = [](Tensor (*op)(const Tensor&, const Tensor&)) {
    return [op](Tape&, std::span<const Tensor> p) { return project(op(p[0], p[1]), 11); };
  };
  auto un = [](Tensor (*op)(const Tensor&)) {
    return [op](Tape&, std::span<const Tensor> p) { return project(op(p[0]), 12); };
  };

  check_primitive("matmul", bin(matmul), two(3, 4, 4, 2));
  check_primitive("add", bin(add), two(3, 4, 3, 4));
  check_primitive("add row broadcast", bin(add), two(3, 4, 1, 4));
  check_primitive("sub col broadcast", bin(sub), two(3, 4, 3, 1));
  check_primitive("mul", bin(mul), two(3, 4, 3, 4));
  check_primitive("mul scalar broadcast", bin(mul), two(3, 4, 1, 1));
  check_primitive("div", bin(div), [](Rng& rng) {
    return V{uniform(3, 4, rng), uniform(3, 4, rng, 0.5, 2.0)};
  });
  check_primitive("relu", un(relu), one(4, 5));
  check_primitive("exp", un(exp), one(4, 5));
  check_primitive("log", un(log), one(4, 5, 0.2, 2.0));
  check_primitive("sigmoid", un(sigmoid), one(4, 5));
  check_primitive("softplus", un(softplus), one(4, 5));
  check_primitive("transpose", un(transpose), one(3, 5));
  check_primitive("row_l2_norm", un(row_l2_norm), one(4, 3));
  check_primitive(
      "scale", [](Tape&, std::span<const Tensor> p) { return project(scale(p[0], -1.7), 3); },
      one(2, 3));
  check_primitive(
      "sum", [](Tape&, std::span<const Tensor> p) { return sum(mul(p[0], p[0])); }, one(3, 3));
  check_primitive(
      "mean", [](Tape&, std::span<const Tensor> p) { return mean(mul(p[0], p[0])); },
      one(3, 3));
  check_primitive(
      "concat",
      [](Tape&, std::span<const Tensor> p) {
        Tensor c = concat_cols(std::vector<Tensor>{p[0], p[1]});
        Tensor r = concat_rows(std::vector<Tensor>{c, c});
        return project(r, 4);
      },
      two(3, 2, 3, 4));
  check_primitive(
      "slice_cols",
      [](Tape&, std::span<const Tensor> p) { return project(slice_cols(p[0], 1, 2), 5); },
      one(3, 4));
  check_primitive(
      "gather_rows",
      [](Tape&, std::span<const Tensor> p) {
        const std::vector<Index> idx{2, 0, 2, 1};
        return project(gather_rows(p[0], idx), 6);
      },
      one(3, 4));
  check_primitive(
      "masked_softmax",
      [](Tape&, std::span<const Tensor> p) {
        Matrix mask = Matrix::Ones(3, 4);
        mask(0, 1) = mask(2, 3) = 0.0;
        return project(masked_softmax(p[0], mask), 7);
      },
      one(3, 4));
  check_primitive(
      "layer_norm",
      [](Tape&, std::span<const Tensor> p) { return project(layer_norm(p[0], p[1], p[2]), 8); },
      [](Rng& rng) { return V{uniform(3, 5, rng), uniform(1, 5, rng), uniform(1, 5, rng)}; });
  check_primitive(
      "masked_attention",
      [](Tape&, std::span<const Tensor> p) {
        Matrix mask(2, 3);
        mask << 1, 0, 1, 0, 1, 1;
        return project(masked_attention(p[0], p[1], p[2], mask, 2), 9);
      },
      [](Rng& rng) { return V{uniform(6, 4, rng), uniform(6, 4, rng), uniform(6, 4, rng)}; });
  check_primitive(
      "masked_mean_pool",
      [](Tape&, std::span<const Tensor> p) {
        Matrix mask(2, 3);
        mask << 1, 0, 1, 0, 1, 1;
        return project(masked_mean_pool(p[0], mask), 10);
      },
      one(6, 4));
  check_primitive(
      "softmax_cross_entropy",
      [](Tape&, std::span<const Tensor> p) {
        const std::vector<Index> targets{0, 3, 2};
        ColVector w(3);
        w << 0.5, 1.0, 0.25;
        return softmax_cross_entropy(p[0], targets, w);
      },
      one(3, 4));
  check_primitive(
      "sigmoid_bce",
      [](Tape&, std::span<const Tensor> p) {
        ColVector y(4), w(4);
        y << 1, 0, 1, 0;
        w << 0.25, 0.25, 0.5, 1.0;
        return sigmoid_bce(p[0], y, w);
      },
      one(4, 1));
}

TEST_CASE("sparse primitives match central differences") {
  SparseMatrix pat(3, 3);
  std::vector<Eigen::Triplet<double>> trip{{0, 0, 1}, {0, 2, 1}, {1, 1, 1}, {2, 0, 1}, {2, 2, 1}};
  pat.setFromTriplets(trip.begin(), trip.end());
  pat.makeCompressed();
  auto pattern = std::make_shared<const SparseMatrix>(pat);
  for (std::uint64_t seed : kSeeds) {
    Rng rng(seed);
    std::vector<Matrix> params{uniform(3, 4, rng), uniform(3, 2, rng)};
    const double err = grad_check(
        [&](Tape&, std::span<const Tensor> p) {
          Tensor vals = add(pattern_gram(p[0], pattern),
                            p[0].tape()->constant(Matrix::Constant(5, 1, 20.0)));
          Tensor deg = sparse_row_sum(vals, pattern);
          Tensor a = sparse_sym_normalize(vals, deg, pattern);
          return project(spmm(a, pattern, p[1]), 13);
        },
        params, kStep);
    INFO("seed " << seed << " error " << err);
    CHECK(err < kTol);
  }
}

TEST_CASE("masked softmax cross entropy on random 3x4 logits passes grad_check") {
  Rng rng(21);
  std::vector<Matrix> params{uniform(3, 4, rng)};
  const double err = grad_check(
      [](Tape&, std::span<const Tensor> p) {
        Matrix mask = Matrix::Ones(3, 4);
        mask(1, 2) = 0.0;
        Tensor prob = masked_softmax(p[0], mask);
        Matrix onehot = Matrix::Zero(3, 4);
        onehot(0, 1) = onehot(1, 0) = onehot(2, 3) = 1.0;
        Tensor picked = sum(mul(prob, p[0].tape()->constant(onehot)));
        return scale(log(picked), -1.0);
      },
      params);
  CHECK(err < kTol);
}

TEST_CASE("faulty relu switch is caught by grad_check") {
  Rng rng(5);
  std::vector<Matrix> params{uniform(3, 3, rng)};
  auto f = [](Tape&, std::span<const Tensor> p) { return project(relu(p[0]), 1); };
  debug::set_faulty_relu_gradient(true);
  const double bad = grad_check(f, params);
  debug::set_faulty_relu_gradient(false);
  CHECK(bad > 0.1);
  CHECK(grad_check(f, params) < kTol);
}

TEST_CASE("tape replay is bit-identical") {
  auto run = [] {
    Rng rng(99);
    Tape t;
    Tensor a = t.variable(uniform(6, 4, rng));
    Tensor w = t.variable(uniform(4, 4, rng));
    Matrix mask(2, 3);
    mask << 1, 1, 0, 1, 0, 1;
    Tensor h = masked_attention(matmul(a, w), a, a, mask, 2);
    Tensor loss = project(layer_norm(h, t.constant(Matrix::Ones(1, 4)),
                                     t.constant(Matrix::Zero(1, 4))),
                          3);
    t.backward(loss);
    return std::make_pair(loss.item(), w.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}
