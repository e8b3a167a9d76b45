// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "adimp/nn/tape.hpp"
#include "adimp/nn/tensor.hpp"

namespace adimp::nn {

// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void init_fan_in(Tensor<T>& t, int64_t fan_in, std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : t.data) v = T(u(rng));
}

template <typename T>
struct Linear {
  Parameter<T> W, b;
  int64_t in = 0, out = 0;

  Linear() = default;
  Linear(std::string name, int64_t in_, int64_t out_, std::mt19937_64& rng) : in(in_), out(out_) {
    W = Parameter<T>(name + ".W", {out, in});
    b = Parameter<T>(name + ".b", {out});
    init_fan_in(W.value, in, rng);
    init_fan_in(b.value, in, rng);
  }
  int forward(Tape<T>& t, int x) { return t.linear(x, t.param(W), t.param(b)); }
  void params(std::vector<Parameter<T>*>& out_list) {
    out_list.push_back(&W);
    out_list.push_back(&b);
  }
};

template <typename T>
struct Conv2d {
  Parameter<T> W, b;
  int64_t cin = 0, cout = 0;
  int ksize = 0, pad = 0;

  Conv2d() = default;
  Conv2d(std::string name, int64_t cin_, int64_t cout_, int k, int pad_, std::mt19937_64& rng)
      : cin(cin_), cout(cout_), ksize(k), pad(pad_) {
    W = Parameter<T>(name + ".W", {cout, cin * k * k});
    b = Parameter<T>(name + ".b", {cout});
    init_fan_in(W.value, cin * k * k, rng);
    init_fan_in(b.value, cin * k * k, rng);
  }
  int forward(Tape<T>& t, int x) { return t.conv2d(x, t.param(W), t.param(b), ksize, pad); }
  void params(std::vector<Parameter<T>*>& out_list) {
    out_list.push_back(&W);
    out_list.push_back(&b);
  }
};

template <typename T>
struct BatchNorm {
  Parameter<T> gamma, beta;
  BNState<T> state;
  double eps = 1e-5;
  double momentum = 0.1;
  int64_t features = 0;

  BatchNorm() = default;
  BatchNorm(std::string name, int64_t features_) : features(features_) {
    gamma = Parameter<T>(name + ".gamma", {features});
    beta = Parameter<T>(name + ".beta", {features});
    gamma.value.fill(T(1));
    beta.value.fill(T(0));
    state.running_mean = Tensor<T>({features}, T(0));
    state.running_var = Tensor<T>({features}, T(1));
  }
  int forward(Tape<T>& t, int x) {
    return t.batchnorm(x, t.param(gamma), t.param(beta), state, eps, momentum);
  }
  void params(std::vector<Parameter<T>*>& out_list) {
    out_list.push_back(&gamma);
    out_list.push_back(&beta);
  }
};

// Adam with per-call learning rate (schedules live outside the optimizer).
template <typename T>
struct Adam {
  double beta1 = 0.8;
  double beta2 = 0.999;
  double eps = 1e-8;

  void step(std::vector<Parameter<T>*>& params, double lr) {
    for (Parameter<T>* p : params) {
      if (!p->trainable) continue;
      p->ensure_grad();
      if (!p->adam_m.same_shape(p->value)) {
        p->adam_m = Tensor<T>(p->value.shape, T(0));
        p->adam_v = Tensor<T>(p->value.shape, T(0));
        p->adam_steps = 0;
      }
      p->adam_steps++;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p->adam_steps));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p->adam_steps));
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        T g = p->grad[i];
        p->adam_m[i] = T(beta1) * p->adam_m[i] + T(1 - beta1) * g;
        p->adam_v[i] = T(beta2) * p->adam_v[i] + T(1 - beta2) * g * g;
        double mhat = static_cast<double>(p->adam_m[i]) / bc1;
        double vhat = static_cast<double>(p->adam_v[i]) / bc2;
        p->value[i] -= T(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

  static void zero_grad(std::vector<Parameter<T>*>& params) {
    for (Parameter<T>* p : params) p->zero_grad();
  }

  // Drop moment estimates; used when a new optimization stage starts on an
  // already-trained model.
  static void reset_state(std::vector<Parameter<T>*>& params) {
    for (Parameter<T>* p : params) {
      p->adam_m = Tensor<T>();
      p->adam_v = Tensor<T>();
      p->adam_steps = 0;
    }
  }
};

}  // namespace adimp::nn
