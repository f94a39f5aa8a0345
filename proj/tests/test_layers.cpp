#include "doctest.h"
#include "helpers.hpp"
#include "mrn/layers.hpp"
#include "oracles.hpp"

using namespace mrn;
using namespace testutil;

namespace {

template <typename T>
double inner(const ArrayPtr<T>& a, const std::vector<T>& b) {
  double s = 0;
  for (size_t i = 0; i < a->val.size(); ++i) s += double(a->val[i]) * double(b[i]);
  return s;
}

}  // namespace

TEST_CASE("conv2d same-padding window counts on all-ones input") {
  ParamStore<double> store;
  std::mt19937_64 rng(1);
  Conv2d<double> conv(store, "c", 1, 1, 3, rng);
  for (auto& v : conv.weight->val) v = 1.0;
  for (auto& v : conv.bias->val) v = 0.0;
  auto x = make_array<double>(1, 1, 3, 3);
  for (auto& v : x->val) v = 1.0;
  auto y = conv.forward(x, nullptr);
  CHECK(y->at(0, 0, 1, 1) == doctest::Approx(9.0));  // full window
  CHECK(y->at(0, 0, 0, 0) == doctest::Approx(4.0));  // corner
  CHECK(y->at(0, 0, 0, 1) == doctest::Approx(6.0));  // edge
  CHECK(y->at(0, 0, 2, 2) == doctest::Approx(4.0));
}

TEST_CASE("1x1 conv with unit weight is the identity") {
  ParamStore<double> store;
  std::mt19937_64 rng(1);
  Conv2d<double> conv(store, "c", 1, 1, 1, rng);
  conv.weight->val[0] = 1.0;
  conv.bias->val[0] = 0.0;
  auto x = make_array<double>(1, 1, 4, 4);
  fill_normal(*x, rng);
  auto y = conv.forward(x, nullptr);
  for (size_t i = 0; i < x->val.size(); ++i) CHECK(y->val[i] == doctest::Approx(x->val[i]));
}

TEST_CASE("conv2d matches the naive-loop oracle") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    ParamStore<double> store;
    Conv2d<double> conv(store, "c", 2, 3, 3, rng);
    auto x = make_array<double>(1, 2, 5, 5);
    fill_normal(*x, rng);
    auto got = conv.forward(x, nullptr);
    auto want = oracle::conv2d(x, conv.weight, conv.bias);
    REQUIRE(got->same_shape(*want));
    for (size_t i = 0; i < got->val.size(); ++i)
      CHECK(got->val[i] == doctest::Approx(want->val[i]).epsilon(1e-6));
  }
}

TEST_CASE("conv2d kernel sizes 1/3/5 preserve spatial dims") {
  std::mt19937_64 rng(2);
  for (int k : {1, 3, 5}) {
    ParamStore<double> store;
    Conv2d<double> conv(store, "c", 2, 2, k, rng);
    auto x = make_array<double>(2, 2, 6, 7);
    fill_normal(*x, rng);
    auto y = conv.forward(x, nullptr);
    CHECK(y->h == 6);
    CHECK(y->w == 7);
    auto want = oracle::conv2d(x, conv.weight, conv.bias);
    for (size_t i = 0; i < y->val.size(); ++i)
      CHECK(y->val[i] == doctest::Approx(want->val[i]).epsilon(1e-6));
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  ParamStore<double> store;
  std::mt19937_64 rng(1);
  Conv2d<double> conv(store, "c", 2, 3, 3, rng);
  auto x = make_array<double>(1, 4, 5, 5);
  CHECK_THROWS_AS(conv.forward(x, nullptr), std::invalid_argument);
}

TEST_CASE("conv2d gradients match finite differences") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    ParamStore<double> store;
    Conv2d<double> conv(store, "c", 2, 2, 3, rng);
    auto x = make_array<double>(2, 2, 4, 4);
    fill_normal(*x, rng);
    auto build = [&](Tape<double>* t) {
      return sum_all<double>(sigmoid<double>(conv.forward(x, t), t), t);
    };
    CHECK(max_grad_err({x, conv.weight, conv.bias}, build) < 1e-4);
  }
}

TEST_CASE("transconv2d expands one pixel into value times kernel") {
  ParamStore<double> store;
  std::mt19937_64 rng(1);
  TransConv2d<double> up(store, "u", 1, 1, rng);
  up.weight->val = {0.5, -1.0, 2.0, 3.0};
  up.bias->val[0] = 0.0;
  auto x = make_array<double>(1, 1, 1, 1);
  x->val[0] = 4.0;
  auto y = up.forward(x, nullptr);
  REQUIRE(y->h == 2);
  REQUIRE(y->w == 2);
  CHECK(y->val[0] == doctest::Approx(2.0));
  CHECK(y->val[1] == doctest::Approx(-4.0));
  CHECK(y->val[2] == doctest::Approx(8.0));
  CHECK(y->val[3] == doctest::Approx(12.0));
}

TEST_CASE("transconv2d of zero input with zero bias is exactly zero") {
  ParamStore<double> store;
  std::mt19937_64 rng(1);
  TransConv2d<double> up(store, "u", 2, 3, rng);
  auto x = make_array<double>(1, 2, 3, 3);
  auto y = up.forward(x, nullptr);
  for (double v : y->val) CHECK(v == 0.0);
}

TEST_CASE("transconv2d matches the scatter-accumulate oracle") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    ParamStore<double> store;
    TransConv2d<double> up(store, "u", 2, 1, rng);
    fill_normal(*up.bias, rng);  // exercise the bias path too
    auto x = make_array<double>(1, 2, 3, 3);
    fill_normal(*x, rng);
    auto got = up.forward(x, nullptr);
    auto want = oracle::transconv2d(x, up.weight, up.bias);
    REQUIRE(got->same_shape(*want));
    for (size_t i = 0; i < got->val.size(); ++i)
      CHECK(got->val[i] == doctest::Approx(want->val[i]).epsilon(1e-6));
  }
}

TEST_CASE("transconv2d gradients match finite differences") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    ParamStore<double> store;
    TransConv2d<double> up(store, "u", 2, 2, rng);
    auto x = make_array<double>(2, 2, 3, 3);
    fill_normal(*x, rng);
    auto build = [&](Tape<double>* t) {
      return sum_all<double>(sigmoid<double>(up.forward(x, t), t), t);
    };
    CHECK(max_grad_err({x, up.weight, up.bias}, build) < 1e-4);
  }
}

TEST_CASE("conv and transconv satisfy the inner-product adjoint identity") {
  // For a linear map L, <L(x), y> == <x, L^T(y)>; the backward pass computes
  // L^T, so the gradient of <L(x), y> w.r.t. x must reproduce the pairing.
  std::mt19937_64 rng(17);
  ParamStore<double> store;
  Conv2d<double> conv(store, "c", 2, 3, 3, rng);
  for (auto& v : conv.bias->val) v = 0.0;
  auto x = make_array<double>(1, 2, 4, 4);
  auto y = make_array<double>(1, 3, 4, 4);
  fill_normal(*x, rng);
  fill_normal(*y, rng);
  Tape<double> tape;
  auto out = conv.forward(x, &tape);
  auto loss = sum_all<double>(mul<double>(out, y, &tape), &tape);
  double lhs = loss->val[0];  // <conv(x), y>
  tape.backward(loss);
  double rhs = inner(x, x->grad);  // <x, conv^T(y)>
  CHECK(rel_err(lhs, rhs) < 1e-5);

  TransConv2d<double> up(store, "u", 3, 2, rng);
  for (auto& v : up.bias->val) v = 0.0;
  auto x2 = make_array<double>(1, 3, 3, 3);
  auto y2 = make_array<double>(1, 2, 6, 6);
  fill_normal(*x2, rng);
  fill_normal(*y2, rng);
  Tape<double> tape2;
  auto out2 = up.forward(x2, &tape2);
  auto loss2 = sum_all<double>(mul<double>(out2, y2, &tape2), &tape2);
  double lhs2 = loss2->val[0];
  tape2.backward(loss2);
  CHECK(rel_err(lhs2, inner(x2, x2->grad)) < 1e-5);
}

TEST_CASE("maxpool2 window maximum and tie-break") {
  auto x = make_array<double>(1, 1, 2, 2);
  x->val = {1.0, 2.0, 3.0, 4.0};
  auto y = maxpool2<double>(x, nullptr);
  REQUIRE(y->val.size() == 1);
  CHECK(y->val[0] == 4.0);

  // constant window: gradient routes to the first element in row-major order
  auto c = make_array<double>(1, 1, 2, 2);
  for (auto& v : c->val) v = 5.0;
  Tape<double> tape;
  auto loss = sum_all<double>(maxpool2<double>(c, &tape), &tape);
  tape.backward(loss);
  CHECK(c->grad[0] == 1.0);
  CHECK(c->grad[1] == 0.0);
  CHECK(c->grad[2] == 0.0);
  CHECK(c->grad[3] == 0.0);
}

TEST_CASE("maxpool2 matches the window-loop oracle and rejects odd dims") {
  std::mt19937_64 rng(4);
  auto x = make_array<double>(1, 1, 4, 4);
  fill_normal(*x, rng);
  auto got = maxpool2<double>(x, nullptr);
  auto want = oracle::maxpool2(x);
  for (size_t i = 0; i < got->val.size(); ++i) CHECK(got->val[i] == want->val[i]);

  auto odd = make_array<double>(1, 1, 5, 4);
  CHECK_THROWS_AS(maxpool2<double>(odd, nullptr), std::invalid_argument);
}

TEST_CASE("maxpool2 gradients match finite differences") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto x = make_array<double>(2, 2, 4, 4);
    fill_normal(*x, rng);
    CHECK(max_grad_err({x}, [&](Tape<double>* t) {
            return sum_all<double>(maxpool2<double>(x, t), t);
          }) < 1e-4);
  }
}

TEST_CASE("batchnorm train mode standardizes per channel") {
  ParamStore<double> store;
  BatchNorm<double> bn(store, "bn", 2);
  std::mt19937_64 rng(6);
  auto x = make_array<double>(8, 2, 8, 8);
  fill_normal(*x, rng, 5.0, 2.0);
  auto y = bn.forward(x, nullptr, /*training=*/true);
  const size_t hw = 64;
  for (int c = 0; c < 2; ++c) {
    double mean = 0, var = 0;
    for (int n = 0; n < 8; ++n)
      for (size_t i = 0; i < hw; ++i) mean += y->val[(n * 2 + c) * hw + i];
    mean /= 8 * hw;
    for (int n = 0; n < 8; ++n)
      for (size_t i = 0; i < hw; ++i) {
        double d = y->val[(n * 2 + c) * hw + i] - mean;
        var += d * d;
      }
    var /= 8 * hw;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 0.05);
  }
}

TEST_CASE("batchnorm affine parameters shift and scale the output") {
  ParamStore<double> store;
  BatchNorm<double> bn(store, "bn", 1);
  bn.gamma->val[0] = 3.0;
  bn.beta->val[0] = 7.0;
  std::mt19937_64 rng(8);
  auto x = make_array<double>(16, 1, 8, 8);
  fill_normal(*x, rng);  // already ~N(0,1)
  auto y = bn.forward(x, nullptr, true);
  double mean = 0;
  for (double v : y->val) mean += v;
  mean /= y->val.size();
  double var = 0;
  for (double v : y->val) var += (v - mean) * (v - mean);
  var /= y->val.size();
  CHECK(mean == doctest::Approx(7.0).epsilon(0.05));
  CHECK(std::sqrt(var) == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("batchnorm matches the train-mode oracle") {
  std::mt19937_64 rng(10);
  ParamStore<double> store;
  BatchNorm<double> bn(store, "bn", 3);
  fill_normal(*bn.gamma, rng, 1.0, 0.2);
  fill_normal(*bn.beta, rng, 0.0, 0.2);
  auto x = make_array<double>(4, 3, 6, 6);
  fill_normal(*x, rng, 2.0, 1.5);
  auto got = bn.forward(x, nullptr, true);
  auto want = oracle::batchnorm_train(x, bn.gamma, bn.beta);
  for (size_t i = 0; i < got->val.size(); ++i)
    CHECK(got->val[i] == doctest::Approx(want->val[i]).epsilon(1e-9));
}

TEST_CASE("batchnorm running-stat update uses momentum 0.1 and unbiased variance") {
  ParamStore<double> store;
  BatchNorm<double> bn(store, "bn", 1);
  std::mt19937_64 rng(12);
  auto x = make_array<double>(2, 1, 4, 4);
  fill_normal(*x, rng, 3.0, 2.0);
  bn.forward(x, nullptr, true);
  const double count = x->val.size();
  double mu = 0;
  for (double v : x->val) mu += v;
  mu /= count;
  double ss = 0;
  for (double v : x->val) ss += (v - mu) * (v - mu);
  const double unbiased = ss / (count - 1);
  CHECK(bn.running_mean->val[0] == doctest::Approx(0.1 * mu).epsilon(1e-12));
  CHECK(bn.running_var->val[0] == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-12));
  CHECK(bn.batches_tracked->val[0] == 1.0);
}

TEST_CASE("batchnorm eval mode requires stats and then uses the running ones") {
  ParamStore<double> store;
  BatchNorm<double> bn(store, "bn", 2);
  std::mt19937_64 rng(14);
  auto x = make_array<double>(2, 2, 4, 4);
  fill_normal(*x, rng);
  CHECK_THROWS_AS(bn.forward(x, nullptr, /*training=*/false), std::invalid_argument);
  bn.forward(x, nullptr, true);
  auto y = bn.forward(x, nullptr, false);
  auto want = oracle::batchnorm_eval(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var);
  for (size_t i = 0; i < y->val.size(); ++i)
    CHECK(y->val[i] == doctest::Approx(want->val[i]).epsilon(1e-9));
}

TEST_CASE("batchnorm gradients match finite differences on 4x3x6x6") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    ParamStore<double> store;
    BatchNorm<double> bn(store, "bn" + std::to_string(seed), 3);
    fill_normal(*bn.gamma, rng, 1.0, 0.3);
    fill_normal(*bn.beta, rng, 0.0, 0.3);
    auto x = make_array<double>(4, 3, 6, 6);
    fill_normal(*x, rng);
    auto build = [&](Tape<double>* t) {
      return sum_all<double>(sigmoid<double>(bn.forward(x, t, true), t), t);
    };
    // h = 1e-4: mean subtraction leaves gradients ~1e-4 against a loss of
    // ~2e2, so a smaller step would drown in cancellation noise.
    CHECK(max_grad_err({x, bn.gamma, bn.beta}, build, 32, 1e-4) < 1e-4);
  }
}

TEST_CASE("batchnorm eval-mode gradients match finite differences") {
  std::mt19937_64 rng(40);
  ParamStore<double> store;
  BatchNorm<double> bn(store, "bn", 2);
  fill_normal(*bn.gamma, rng, 1.0, 0.3);
  fill_normal(*bn.beta, rng, 0.0, 0.3);
  auto warm = make_array<double>(4, 2, 4, 4);
  fill_normal(*warm, rng, 1.0, 2.0);
  bn.forward(warm, nullptr, true);  // populate running stats
  auto x = make_array<double>(2, 2, 4, 4);
  fill_normal(*x, rng);
  auto build = [&](Tape<double>* t) {
    return sum_all<double>(sigmoid<double>(bn.forward(x, t, false), t), t);
  };
  CHECK(max_grad_err({x, bn.gamma, bn.beta}, build) < 1e-4);
}

TEST_CASE("spatial layers never mix batch items") {
  std::mt19937_64 rng(18);
  ParamStore<double> store;
  Conv2d<double> conv(store, "c", 2, 2, 3, rng);
  TransConv2d<double> up(store, "u", 2, 2, rng);
  auto x = make_array<double>(2, 2, 4, 4);
  fill_normal(*x, rng);
  auto base_conv = conv.forward(x, nullptr);
  auto base_up = up.forward(x, nullptr);
  auto base_pool = maxpool2<double>(x, nullptr);
  // perturb item 0 only
  for (int i = 0; i < 2 * 4 * 4; ++i) x->val[i] += 0.5;
  auto pert_conv = conv.forward(x, nullptr);
  auto pert_up = up.forward(x, nullptr);
  auto pert_pool = maxpool2<double>(x, nullptr);
  const size_t conv_half = base_conv->val.size() / 2;
  for (size_t i = conv_half; i < base_conv->val.size(); ++i)
    CHECK(pert_conv->val[i] == base_conv->val[i]);
  const size_t up_half = base_up->val.size() / 2;
  for (size_t i = up_half; i < base_up->val.size(); ++i)
    CHECK(pert_up->val[i] == base_up->val[i]);
  const size_t pool_half = base_pool->val.size() / 2;
  for (size_t i = pool_half; i < base_pool->val.size(); ++i)
    CHECK(pert_pool->val[i] == base_pool->val[i]);
}

TEST_CASE("initialization follows the fan-in rule with zero bias") {
  ParamStore<double> store;
  std::mt19937_64 rng(100);
  Conv2d<double> conv(store, "c", 8, 32, 3, rng);
  for (double v : conv.bias->val) CHECK(v == 0.0);
  double mean = 0;
  for (double v : conv.weight->val) mean += v;
  mean /= conv.weight->val.size();
  double var = 0;
  for (double v : conv.weight->val) var += (v - mean) * (v - mean);
  var /= conv.weight->val.size();
  const double expect_std = std::sqrt(2.0 / (8 * 3 * 3));
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::sqrt(var) == doctest::Approx(expect_std).epsilon(0.1));

  BatchNorm<double> bn(store, "bn", 4);
  for (double v : bn.gamma->val) CHECK(v == 1.0);
  for (double v : bn.beta->val) CHECK(v == 0.0);
  for (double v : bn.running_mean->val) CHECK(v == 0.0);
  for (double v : bn.running_var->val) CHECK(v == 1.0);
}
