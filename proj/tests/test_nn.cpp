#include <doctest.h>

#include <cmath>
#include <random>

#include "artistembed/error.hpp"
#include "artistembed/nn/gradcheck.hpp"
#include "artistembed/nn/layers.hpp"
#include "artistembed/nn/losses.hpp"
#include "artistembed/nn/optim.hpp"
#include "support.hpp"

using namespace artistembed;
using namespace artistembed::nn;
using testsupport::random_matrix;

namespace {

Tensor<double> row_tensor(std::initializer_list<double> v) {
  Tensor<double> t{Matrix<double>(1, static_cast<Eigen::Index>(v.size())), 1, static_cast<Eigen::Index>(v.size())};
  Eigen::Index i = 0;
  for (double x : v) t.values(0, i++) = x;
  return t;
}

std::vector<double> to_vec(const Matrix<double>& m) { return {m.data(), m.data() + m.size()}; }

Matrix<double> from_vec(std::span<const double> v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix<double>>(v.data(), rows, cols);
}

}  // namespace

TEST_CASE("conv1d examples") {
  SUBCASE("three-tap box filter") {
    Conv1d<double> conv(1, 1, 3);
    conv.weight.value.setOnes();
    const auto y = conv.forward(row_tensor({1, 2, 3, 4, 5}));
    CHECK(to_vec(y.values) == std::vector<double>{3, 6, 9, 12, 9});
  }
  SUBCASE("centre impulse is the identity") {
    for (int k : {1, 3, 4, 5}) {
      Conv1d<double> conv(1, 1, k);
      conv.weight.value.setZero();
      conv.weight.value(0, conv.pad_left()) = 1.0;
      const auto x = row_tensor({0.5, -1, 2, 7, 3, -2});
      CHECK(conv.forward(x).values == x.values);
    }
  }
  SUBCASE("zero kernel yields the bias") {
    Conv1d<double> conv(2, 3, 4);
    conv.bias.value << 1.5, -2, 0.25;
    std::mt19937_64 rng(1);
    Tensor<double> x{random_matrix<double>(2, 14, rng), 2, 7};
    const auto y = conv.forward(x);
    CHECK(y.frames == 7);
    for (Eigen::Index t = 0; t < y.values.cols(); ++t) CHECK(y.values.col(t) == conv.bias.value.col(0));
  }
  SUBCASE("channel mismatch") {
    Conv1d<double> conv(2, 1, 3);
    CHECK_THROWS_WITH_AS(conv.forward(row_tensor({1, 2, 3})), doctest::Contains("shape error"), Error);
  }
  SUBCASE("length preserved for every kernel width") {
    std::mt19937_64 rng(2);
    for (int k = 1; k <= 9; ++k) {
      Conv1d<double> conv(3, 2, k);
      Tensor<double> x{random_matrix<double>(3, 20, rng), 2, 10};
      CHECK(conv.forward(x).frames == 10);
      CHECK(conv.forward(x).values.cols() == 20);
    }
  }
}

TEST_CASE("conv1d agrees with a direct convolution loop") {
  std::mt19937_64 rng(3);
  const int in = 3, out = 2, k = 4, frames = 9, batch = 2;
  Conv1d<double> conv(in, out, k);
  conv.weight.value = random_matrix<double>(out, in * k, rng);
  conv.bias.value = random_matrix<double>(out, 1, rng);
  Tensor<double> x{random_matrix<double>(in, batch * frames, rng), batch, frames};
  const auto y = conv.forward(x);
  const int pad = (k - 1 + 1) / 2;  // ceil((k - 1) / 2)
  for (int b = 0; b < batch; ++b)
    for (int o = 0; o < out; ++o)
      for (int t = 0; t < frames; ++t) {
        double acc = conv.bias.value(o, 0);
        for (int j = 0; j < k; ++j)
          for (int c = 0; c < in; ++c) {
            const int src = t + j - pad;
            if (src >= 0 && src < frames) acc += conv.weight.value(o, j * in + c) * x.values(c, b * frames + src);
          }
        CHECK(y.values(o, b * frames + t) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("batchnorm semantics") {
  std::mt19937_64 rng(5);
  SUBCASE("train mode normalises per channel") {
    BatchNorm1d<double> bn(3);
    Tensor<double> x{random_matrix<double>(3, 40, rng, -3, 7), 4, 10};
    const auto y = bn.forward(x, Mode::train);
    for (Eigen::Index c = 0; c < 3; ++c) {
      const double mean = y.values.row(c).mean();
      const double var = (y.values.row(c).array() - mean).square().mean();
      CHECK(std::abs(mean) < 1e-12);
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
  SUBCASE("constant channel maps to beta") {
    BatchNorm1d<double> bn(1);
    bn.beta.value(0, 0) = 0.75;
    Tensor<double> x{Matrix<double>::Constant(1, 12, 3.0), 3, 4};
    const auto y = bn.forward(x, Mode::train);
    CHECK((y.values.array() == 0.75).all());
  }
  SUBCASE("infer mode closed form") {
    BatchNorm1d<double> bn(2);
    bn.running_mean << 0.3, -1.0;
    bn.running_var << 2.0, 0.5;
    bn.gamma.value << 1.5, -0.5;
    bn.beta.value << 0.1, 0.2;
    Tensor<double> x{random_matrix<double>(2, 6, rng), 3, 2};
    const auto y = bn.forward(x, Mode::infer);
    for (Eigen::Index c = 0; c < 2; ++c)
      for (Eigen::Index t = 0; t < 6; ++t) {
        const double want = (x.values(c, t) - bn.running_mean(c)) / std::sqrt(bn.running_var(c) + 1e-5) *
                                bn.gamma.value(c, 0) + bn.beta.value(c, 0);
        CHECK(y.values(c, t) == doctest::Approx(want).epsilon(1e-12));
      }
    // Batch-size independence.
    Tensor<double> first{x.values.leftCols(2), 1, 2};
    CHECK(bn.forward(first, Mode::infer).values == y.values.leftCols(2));
  }
  SUBCASE("running statistics update") {
    BatchNorm1d<double> bn(1);
    Tensor<double> x{Matrix<double>(1, 4), 2, 2};
    x.values << 1, 2, 3, 4;
    bn.forward(x, Mode::train);
    CHECK(bn.running_mean(0) == doctest::Approx(0.01 * 2.5));
    CHECK(bn.running_var(0) == doctest::Approx(0.99 + 0.01 * (1.25 * 4.0 / 3.0)));
  }
  SUBCASE("batch of one is rejected in train mode") {
    BatchNorm1d<double> bn(1);
    CHECK_THROWS_WITH_AS(bn.forward(row_tensor({1, 2, 3}), Mode::train), doctest::Contains("batch too small"), Error);
  }
}

TEST_CASE("relu, maxpool and dropout") {
  Relu<double> relu;
  CHECK(to_vec(relu.forward(row_tensor({-1, 2})).values) == std::vector<double>{0, 2});

  MaxPool1d<double> pool(2);
  const auto y = pool.forward(row_tensor({1, 3, 2, 5}));
  CHECK(to_vec(y.values) == std::vector<double>{3, 5});
  CHECK(pool.forward(row_tensor({1, 3, 2, 5, 9})).frames == 2);  // remainder dropped
  const auto tie = MaxPool1d<double>(2).forward(row_tensor({4, 4}));
  CHECK(tie.values(0, 0) == 4);
  MaxPool1d<double> tie_pool(2);
  tie_pool.forward(row_tensor({4, 4}));
  CHECK(to_vec(tie_pool.backward(row_tensor({1})).values) == std::vector<double>{1, 0});
  CHECK_THROWS_WITH_AS(MaxPool1d<double>(0), doctest::Contains("invalid pool"), Error);

  Dropout<double> drop(0.5);
  Rng rng(42);
  const Matrix<double> ones = Matrix<double>::Ones(1000, 1000);
  const auto dropped = drop.forward(ones, Mode::train, rng);
  CHECK(std::abs(dropped.mean() - 1.0) < 0.01);
  CHECK(((dropped.array() == 0.0) || (dropped.array() == 2.0)).all());
  CHECK(drop.forward(ones, Mode::infer, rng) == ones);
  Rng a(7), b(7);
  Dropout<double> d1(0.5), d2(0.5);
  CHECK(d1.forward(ones.topRows(10), Mode::train, a) == d2.forward(ones.topRows(10), Mode::train, b));
}

TEST_CASE("softmax cross entropy") {
  Vector<double> uniform = Vector<double>::Constant(7, 0.3);
  CHECK(softmax_cross_entropy<double>(uniform, 2).loss == doctest::Approx(std::log(7.0)).epsilon(1e-14));
  Vector<double> two(2);
  two << 1, 0;
  const auto r = softmax_cross_entropy<double>(two, 0);
  CHECK(r.loss == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-14));
  CHECK(r.loss == doctest::Approx(0.31326).epsilon(1e-5));
  CHECK(std::abs(r.grad.sum()) < 1e-15);
  CHECK_THROWS_WITH_AS(softmax_cross_entropy<double>(two, 2), doctest::Contains("bad label"), Error);
  CHECK_THROWS_WITH_AS(softmax_cross_entropy<double>(two, -1), doctest::Contains("bad label"), Error);
  Vector<double> huge(3);
  huge << 1000, 0, -1000;
  CHECK(std::isfinite(softmax_cross_entropy<double>(huge, 1).loss));
}

TEST_CASE("cosine relevance") {
  Vector<double> a(2), b(2), c(2), z = Vector<double>::Zero(2);
  a << 1, 0;
  b << 1, 1;
  c << 0, 1;
  CHECK(cosine_relevance<double>(a, a) == doctest::Approx(1.0));
  CHECK(cosine_relevance<double>(a, c) == 0.0);
  CHECK(cosine_relevance<double>(a, b) == doctest::Approx(0.70711).epsilon(1e-5));
  CHECK(cosine_relevance<double>(a, b) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK_THROWS_WITH_AS(cosine_relevance<double>(a, z), doctest::Contains("undefined cosine"), Error);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    const Vector<double> x = random_matrix<double>(6, 1, rng), y = random_matrix<double>(6, 1, rng);
    const Vector<double> xs = x * 3.7, ys = y * 0.02;
    CHECK(std::abs(cosine_relevance<double>(xs, ys) - cosine_relevance<double>(x, y)) < 1e-12);
  }
}

TEST_CASE("max margin loss examples") {
  CHECK(max_margin_from_scores(0.9, std::vector<double>{0.1, 0.2, 0.5, 0.8}, 0.4) == doctest::Approx(0.3).epsilon(1e-15));
  // Positive identical to anchor, negatives orthogonal.
  Vector<double> a = Vector<double>::Zero(5);
  a(0) = 1;
  std::vector<Vector<double>> negs;
  for (int i = 1; i <= 4; ++i) {
    Vector<double> n = Vector<double>::Zero(5);
    n(i) = 1;
    negs.push_back(n);
  }
  const auto l = max_margin_loss<double>(a, a, negs, 0.4);
  CHECK(l.loss == 0.0);
  CHECK(l.active_terms == 0);
  negs[0] = -a;  // fully wrong negative still below margin
  CHECK(max_margin_loss<double>(a, a, negs, 0.4).loss == 0.0);
  negs[0] = a;  // negative equal to the anchor
  CHECK(max_margin_loss<double>(a, a, negs, 0.4).loss == doctest::Approx(0.4));
}

TEST_CASE("nesterov sgd") {
  SUBCASE("zero gradient leaves parameters") {
    Param<double> p(Matrix<double>::Constant(2, 2, 3.0));
    std::vector<Param<double>*> ps{&p};
    auto state = OptState<double>::initial(0.1);
    NesterovSgd<double>{}.step(ps, state);
    CHECK((p.value.array() == 3.0).all());
    CHECK(state.step_count == 1);
  }
  SUBCASE("first step delta") {
    Param<double> p(Matrix<double>::Zero(1, 3));
    p.grad << 1, -2, 0.5;
    std::vector<Param<double>*> ps{&p};
    auto state = OptState<double>::initial(0.01);
    NesterovSgd<double>{}.step(ps, state);
    for (int i = 0; i < 3; ++i) CHECK(p.value(0, i) == doctest::Approx(-0.01 * 1.9 * p.grad(0, i)).epsilon(1e-14));
  }
  SUBCASE("time-based decay") {
    NesterovSgd<double> sgd{0.9, 0.5};
    auto state = OptState<double>::initial(0.1);
    state.step_count = 2;
    CHECK(sgd.effective_lr(state) == doctest::Approx(0.05));
  }
  SUBCASE("quadratic descent without momentum") {
    Param<double> p(Matrix<double>::Constant(1, 1, 1.0));
    std::vector<Param<double>*> ps{&p};
    auto state = OptState<double>::initial(0.1);
    NesterovSgd<double> sgd{0.0, 0.0};
    double prev = 0.5;
    for (int i = 0; i < 2; ++i) {
      p.grad = p.value;
      sgd.step(ps, state);
      const double loss = 0.5 * p.value(0, 0) * p.value(0, 0);
      CHECK(loss < prev);
      prev = loss;
    }
    CHECK(p.value(0, 0) == doctest::Approx(0.81));
  }
  SUBCASE("shape mismatch") {
    Param<double> p(Matrix<double>::Zero(2, 2));
    p.grad = Matrix<double>::Zero(3, 2);
    std::vector<Param<double>*> ps{&p};
    auto state = OptState<double>::initial(0.1);
    CHECK_THROWS_WITH_AS(NesterovSgd<double>{}.step(ps, state), doctest::Contains("shape error"), Error);
  }
}

TEST_CASE("grad_check harness") {
  std::mt19937_64 rng(13);
  SUBCASE("relu away from zero") {
    Matrix<double> x = random_matrix<double>(4, 5, rng);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (std::abs(x.data()[i]) < 1e-3) x.data()[i] = 0.5;
    const Matrix<double> w = random_matrix<double>(4, 5, rng);
    Relu<double> relu;
    const auto f = [&](std::span<const double> v) {
      Relu<double> r;
      return r.forward({from_vec(v, 4, 5), 1, 5}).values.cwiseProduct(w).sum();
    };
    relu.forward({x, 1, 5});
    const auto g = relu.backward({w, 1, 5}).values;
    CHECK(grad_check(f, to_vec(x), to_vec(g)) < 1e-7);
  }
  SUBCASE("dense layer") {
    Dense<double> dense(4, 3);
    dense.weight.value = random_matrix<double>(3, 4, rng);
    const Matrix<double> x = random_matrix<double>(4, 2, rng), w = random_matrix<double>(3, 2, rng);
    const auto f = [&](std::span<const double> v) {
      Dense<double> d = dense;
      return d.forward(from_vec(v, 4, 2)).cwiseProduct(w).sum();
    };
    dense.forward(x);
    CHECK(grad_check(f, to_vec(x), to_vec(dense.backward(w))) < 1e-7);
  }
  SUBCASE("max margin loss") {
    const Vector<double> a = random_matrix<double>(6, 1, rng), p = random_matrix<double>(6, 1, rng);
    std::vector<Vector<double>> n;
    for (int i = 0; i < 4; ++i) n.push_back(random_matrix<double>(6, 1, rng));
    const auto l = max_margin_loss<double>(a, p, n, 0.4);
    const auto f = [&](std::span<const double> v) {
      return max_margin_loss<double>(from_vec(v, 6, 1), p, n, 0.4).loss;
    };
    CHECK(grad_check(f, to_vec(a), to_vec(l.d_anchor)) < 1e-6);
  }
  SUBCASE("non-finite values are reported") {
    const auto f = [](std::span<const double> v) { return std::log(v[0]); };
    std::vector<double> x{-1.0}, g{0.0};
    CHECK_THROWS_WITH_AS(grad_check(f, x, g), doctest::Contains("numerical failure"), Error);
  }
}
