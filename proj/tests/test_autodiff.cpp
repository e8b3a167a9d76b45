// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "adimp/nn/modules.hpp"
#include "adimp/nn/tape.hpp"
#include "gradcheck.hpp"

using adimp::nn::Adam;
using adimp::nn::BatchNorm;
using adimp::nn::Conv2d;
using adimp::nn::Linear;
using adimp::nn::Parameter;
using adimp::nn::Tape;
using adimp::nn::Tensor;

namespace {

Tensor<double> randn(std::vector<int64_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> g(0.0, scale);
  for (auto& v : t.data) v = g(rng);
  return t;
}

std::vector<int> rand_labels(int64_t n, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> y(static_cast<size_t>(n));
  for (auto& v : y) v = d(rng);
  return y;
}

}  // namespace

TEST_CASE("linear+relu+sigmoid chain matches finite differences") {
  std::mt19937_64 rng(7);
  Linear<double> l1("l1", 5, 4, rng), l2("l2", 4, 3, rng);
  Tensor<double> x = randn({6, 5}, rng);
  auto y = rand_labels(6, 3, rng);

  auto run = [&](bool back) {
    Tape<double> t(0, true);
    int xi = t.input(x);
    int h = t.relu(l1.forward(t, xi));
    int p = t.softmax_rows(l2.forward(t, h));
    int loss = t.nll_probs(p, y, 1e-7);
    if (back) t.backward(loss);
    return t.scalar(loss);
  };
  std::vector<Parameter<double>*> ps;
  l1.params(ps);
  l2.params(ps);
  CHECK(testutil::max_rel_grad_error(ps, run) < 1e-5);
}

TEST_CASE("gradient reversal scales and negates upstream gradient") {
  // d/dx of mean(relu(grl(x, s))) must equal -s * d/dx mean(relu(x)).
  std::mt19937_64 rng(11);
  Parameter<double> x("x", {4, 3});
  x.value = randn({4, 3}, rng);
  for (double s : {0.0, 0.3, 1.0, 2.5}) {
    Tape<double> t;
    int xi = t.param(x);
    int loss = t.mean_all(t.relu(t.grl(xi, s)));
    x.zero_grad();
    t.backward(loss);
    for (int64_t i = 0; i < x.value.numel(); ++i) {
      double plain = x.value[i] > 0 ? 1.0 / 12.0 : 0.0;
      CHECK(x.grad[i] == doctest::Approx(-s * plain).epsilon(1e-12));
    }
  }
}

TEST_CASE("gradient reversal on a quadratic matches -s times finite differences") {
  std::mt19937_64 rng(13);
  Parameter<double> w("w", {3, 3});
  w.value = randn({3, 3}, rng);
  Tensor<double> x = randn({5, 3}, rng);
  const double s = 0.5;

  // loss = mean(square(grl(x w^T, s)))
  Parameter<double> b("b", {3});
  b.value.fill(0.1);
  auto run = [&](bool back) {
    Tape<double> t;
    int xi = t.input(x);
    int z = t.grl(t.linear(xi, t.param(w), t.param(b)), s);
    int loss = t.mean_all(t.mul(z, z));
    if (back) t.backward(loss);
    return t.scalar(loss);
  };
  // Analytic gradient from the tape.
  w.zero_grad();
  b.zero_grad();
  run(true);
  // Reference: finite differences of the same loss WITHOUT the reversal
  // layer, scaled by -s.
  auto run_plain = [&](bool) {
    Tape<double> t;
    int xi = t.input(x);
    int z = t.linear(xi, t.param(w), t.param(b));
    int loss = t.mean_all(t.mul(z, z));
    return t.scalar(loss);
  };
  for (Parameter<double>* p : {&w, &b}) {
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      double orig = p->value[i];
      double h = 1e-6 * std::max(1.0, std::abs(orig));
      p->value[i] = orig + h;
      double lp = run_plain(false);
      p->value[i] = orig - h;
      double lm = run_plain(false);
      p->value[i] = orig;
      double fd = -s * (lp - lm) / (2 * h);
      CHECK(std::abs(p->grad[i] - fd) / std::max({std::abs(fd), std::abs(p->grad[i]), 1e-8}) <
            1e-4);
    }
  }
}

TEST_CASE("batchnorm (train mode, rank 2) matches finite differences") {
  std::mt19937_64 rng(17);
  Linear<double> l1("l1", 4, 6, rng);
  BatchNorm<double> bn("bn", 6);
  Linear<double> l2("l2", 6, 2, rng);
  Tensor<double> x = randn({8, 4}, rng);
  auto y = rand_labels(8, 2, rng);

  auto run = [&](bool back) {
    Tape<double> t(0, true);
    // Running stats mutate across probes; train-mode output only depends on
    // batch stats, so finite differences stay valid.
    int h = t.relu(bn.forward(t, l1.forward(t, t.input(x))));
    int p = t.softmax_rows(l2.forward(t, h));
    int loss = t.nll_probs(p, y, 1e-7);
    if (back) t.backward(loss);
    return t.scalar(loss);
  };
  std::vector<Parameter<double>*> ps;
  l1.params(ps);
  bn.params(ps);
  l2.params(ps);
  CHECK(testutil::max_rel_grad_error(ps, run) < 1e-5);
}

TEST_CASE("conv + maxpool + batchnorm stack matches finite differences") {
  std::mt19937_64 rng(23);
  Conv2d<double> c1("c1", 2, 3, 3, 1, rng);
  BatchNorm<double> bn("bn", 3);
  Linear<double> fc("fc", 3 * 2 * 2, 2, rng);
  Tensor<double> x = randn({3, 2, 4, 4}, rng);
  auto y = rand_labels(3, 2, rng);

  auto run = [&](bool back) {
    Tape<double> t(0, true);
    int h = t.maxpool2(t.relu(bn.forward(t, c1.forward(t, t.input(x)))));
    int p = t.softmax_rows(fc.forward(t, t.flatten(h)));
    int loss = t.nll_probs(p, y, 1e-7);
    if (back) t.backward(loss);
    return t.scalar(loss);
  };
  std::vector<Parameter<double>*> ps;
  c1.params(ps);
  bn.params(ps);
  fc.params(ps);
  CHECK(testutil::max_rel_grad_error(ps, run) < 1e-5);
}

TEST_CASE("conv2d same-padding output shape and a hand computed value") {
  // 1x1x3x3 input, 1 filter of 3x3 with pad 1: output center = full sum.
  Tape<double> t;
  Tensor<double> x({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) x[i] = i + 1;  // 1..9
  Tensor<double> w({1, 9});
  w.fill(1.0);
  Tensor<double> b({1});
  b.fill(0.0);
  int y = t.conv2d(t.input(x), t.input(w), t.input(b), 3, 1);
  const auto& Y = t.value(y);
  CHECK(Y.shape == std::vector<int64_t>({1, 1, 3, 3}));
  CHECK(Y[4] == doctest::Approx(45.0));          // center sees all of 1..9
  CHECK(Y[0] == doctest::Approx(1 + 2 + 4 + 5)); // corner sees 2x2 block
}

TEST_CASE("dropout is identity in eval mode and inverted-scaled in train mode") {
  Tensor<double> x({1, 1000});
  x.fill(1.0);
  Tape<double> te(99, false);
  int ye = te.dropout(te.input(x), 0.4);
  CHECK(te.value(ye).vec().sum() == doctest::Approx(1000.0));

  Tape<double> tt(99, true);
  int yt = tt.dropout(tt.input(x), 0.4);
  double mean = tt.value(yt).vec().sum() / 1000.0;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.1));  // E[mask/keep] = 1
  for (int64_t i = 0; i < 1000; ++i) {
    double v = tt.value(yt)[i];
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.6)));
  }
}

TEST_CASE("coupling-weighted squared distance: value and gradients") {
  std::mt19937_64 rng(31);
  Parameter<double> A("A", {3, 2}), B("B", {4, 2});
  A.value = randn({3, 2}, rng);
  B.value = randn({4, 2}, rng);
  Eigen::MatrixXd gamma(3, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) gamma(i, j) = u(rng);

  // Direct double-loop reference value.
  double ref = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double d0 = A.value[i * 2] - B.value[j * 2];
      double d1 = A.value[i * 2 + 1] - B.value[j * 2 + 1];
      ref += gamma(i, j) * (d0 * d0 + d1 * d1);
    }

  auto run = [&](bool back) {
    Tape<double> t;
    int v = t.coupling_quadratic(t.param(A), t.param(B), gamma);
    if (back) t.backward(v);
    return t.scalar(v);
  };
  CHECK(run(false) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(testutil::max_rel_grad_error({&A, &B}, run) < 1e-5);
}

TEST_CASE("parameter reuse within one tape accumulates both paths") {
  // loss = mean(w x1) + mean(w x2); dW must see both terms.
  std::mt19937_64 rng(37);
  Linear<double> l("l", 3, 2, rng);
  Tensor<double> x1 = randn({4, 3}, rng), x2 = randn({4, 3}, rng);
  auto run = [&](bool back) {
    Tape<double> t;
    int a = t.mean_all(l.forward(t, t.input(x1)));
    int b = t.mean_all(l.forward(t, t.input(x2)));
    int loss = t.add(a, b);
    if (back) t.backward(loss);
    return t.scalar(loss);
  };
  std::vector<Parameter<double>*> ps;
  l.params(ps);
  CHECK(testutil::max_rel_grad_error(ps, run) < 1e-5);
}

TEST_CASE("adam takes a descent step on a quadratic") {
  Parameter<double> w("w", {4});
  w.value.fill(2.0);
  Adam<double> opt;
  std::vector<Parameter<double>*> ps{&w};
  double prev = 1e30;
  for (int it = 0; it < 200; ++it) {
    Tape<double> t;
    int wi = t.param(w);
    int loss = t.mean_all(t.mul(wi, wi));
    Adam<double>::zero_grad(ps);
    t.backward(loss);
    opt.step(ps, 0.05);
    double cur = t.scalar(loss);
    if (it > 0) CHECK(cur <= prev + 1e-9);
    prev = cur;
  }
  CHECK(prev < 1e-2);
}

TEST_CASE("gather_rows and concat_cols route gradients to the right slots") {
  std::mt19937_64 rng(41);
  Parameter<double> X("X", {5, 3});
  X.value = randn({5, 3}, rng);
  auto run = [&](bool back) {
    Tape<double> t;
    int xi = t.param(X);
    int g = t.gather_rows(xi, {4, 0, 2});
    int c = t.concat_cols(g, g);
    int loss = t.mean_all(t.mul(c, c));
    if (back) t.backward(loss);
    return t.scalar(loss);
  };
  CHECK(testutil::max_rel_grad_error({&X}, run) < 1e-5);
}
