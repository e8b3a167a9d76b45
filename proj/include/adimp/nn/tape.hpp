// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adimp/nn/tensor.hpp"

namespace adimp::nn {

// Trainable tensor with gradient accumulator and optimizer state.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m, adam_v;
  int64_t adam_steps = 0;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, std::vector<int64_t> shape) : name(std::move(n)), value(std::move(shape)) {}

  void ensure_grad() {
    if (!grad.same_shape(value)) {
      grad = Tensor<T>(value.shape);
    }
  }
  void zero_grad() {
    ensure_grad();
    grad.zero();
  }
};

// Running statistics for batch normalization. Persisted with checkpoints.
template <typename T>
struct BNState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  int64_t batches_seen = 0;
};

// Reverse-mode autodiff tape. Build a graph per step, call backward once on a
// scalar node, then read gradients back from the Parameter objects.
//
// Node values are computed eagerly on construction. Backward functions pull
// the node's gradient and accumulate into parent gradients.
template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void(Tape&, Node&)> backprop;  // may be empty for leaves
  };

  explicit Tape(uint64_t seed = 0, bool training = true)
      : rng_(seed), training_(training) {}

  bool training() const { return training_; }
  void set_training(bool t) { training_ = t; }
  std::mt19937_64& rng() { return rng_; }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].val; }
  Tensor<T>& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  double scalar(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.val.numel() != 1) throw std::logic_error("scalar(): node is not scalar");
    return static_cast<double>(n.val[0]);
  }

  // ---- leaves ----

  int input(Tensor<T> v, bool requires_grad = false) {
    Node n;
    n.val = std::move(v);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Registers a parameter as a leaf, deduplicating so that reuse within one
  // tape (e.g. a shared encoder applied to two batches) maps to one node.
  int param(Parameter<T>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return it->second;
    int id = input(p.value, p.trainable && grad_enabled_);
    param_ids_.emplace(&p, id);
    params_.push_back(&p);
    param_nodes_.push_back(id);
    return id;
  }

  // When false, parameters enter as constants; backward is then a no-op.
  void set_grad_enabled(bool e) { grad_enabled_ = e; }

  // ---- elementwise and linear algebra ----

  int linear(int x, int w, int b) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& W = val(w);
    const Tensor<T>& B = val(b);
    int64_t n = X.rows(), in = X.cols(), out = W.rows();
    if (W.cols() != in || B.numel() != out) throw std::logic_error("linear: shape mismatch");
    Tensor<T> y({n, out});
    y.mat().noalias() = X.mat() * W.mat().transpose();
    y.mat().rowwise() += B.mat(1, out).row(0);
    return emit(std::move(y), {x, w, b}, [x, w, b](Tape& t, Node& self) {
      const auto gY = self.grad.mat();
      if (t.needs(x)) t.gref(x).mat().noalias() += gY * t.val(w).mat();
      if (t.needs(w)) t.gref(w).mat().noalias() += gY.transpose() * t.val(x).mat();
      if (t.needs(b)) t.gref(b).mat(1, self.grad.cols()).row(0) += gY.colwise().sum();
    });
  }

  int relu(int x) {
    Tensor<T> y = val(x);
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    return emit(std::move(y), {x}, [x](Tape& t, Node& self) {
      if (!t.needs(x)) return;
      const Tensor<T>& X = t.val(x);
      Tensor<T>& gX = t.gref(x);
      for (int64_t i = 0; i < X.numel(); ++i)
        if (X[i] > T(0)) gX[i] += self.grad[i];
    });
  }

  int sigmoid(int x) {
    Tensor<T> y = val(x);
    for (auto& v : y.data) {
      if (v >= T(0)) {
        T e = std::exp(-v);
        v = T(1) / (T(1) + e);
      } else {
        T e = std::exp(v);
        v = e / (T(1) + e);
      }
    }
    return emit(std::move(y), {x}, [x](Tape& t, Node& self) {
      if (!t.needs(x)) return;
      Tensor<T>& gX = t.gref(x);
      for (int64_t i = 0; i < self.val.numel(); ++i) {
        T s = self.val[i];
        gX[i] += self.grad[i] * s * (T(1) - s);
      }
    });
  }

  int add(int a, int b) {
    check_same(a, b, "add");
    Tensor<T> y = val(a);
    y.vec() += val(b).vec();
    return emit(std::move(y), {a, b}, [a, b](Tape& t, Node& self) {
      if (t.needs(a)) t.gref(a).vec() += self.grad.vec();
      if (t.needs(b)) t.gref(b).vec() += self.grad.vec();
    });
  }

  int sub(int a, int b) {
    check_same(a, b, "sub");
    Tensor<T> y = val(a);
    y.vec() -= val(b).vec();
    return emit(std::move(y), {a, b}, [a, b](Tape& t, Node& self) {
      if (t.needs(a)) t.gref(a).vec() += self.grad.vec();
      if (t.needs(b)) t.gref(b).vec() -= self.grad.vec();
    });
  }

  int mul(int a, int b) {
    check_same(a, b, "mul");
    Tensor<T> y = val(a);
    y.vec().array() *= val(b).vec().array();
    return emit(std::move(y), {a, b}, [a, b](Tape& t, Node& self) {
      if (t.needs(a)) t.gref(a).vec().array() += self.grad.vec().array() * t.val(b).vec().array();
      if (t.needs(b)) t.gref(b).vec().array() += self.grad.vec().array() * t.val(a).vec().array();
    });
  }

  int scale(int x, double c) {
    Tensor<T> y = val(x);
    y.vec() *= T(c);
    return emit(std::move(y), {x}, [x, c](Tape& t, Node& self) {
      if (t.needs(x)) t.gref(x).vec() += T(c) * self.grad.vec();
    });
  }

  // c - x, elementwise (used for log(1 - d)).
  int rsub_const(int x, double c) {
    Tensor<T> y = val(x);
    for (auto& v : y.data) v = T(c) - v;
    return emit(std::move(y), {x}, [x](Tape& t, Node& self) {
      if (t.needs(x)) t.gref(x).vec() -= self.grad.vec();
    });
  }

  // log(max(x, eps)); gradient is 1/x where unclamped and 0 in the clamped
  // region.
  int log_clamped(int x, double eps) {
    Tensor<T> y = val(x);
    const T e = T(eps);
    for (auto& v : y.data) v = std::log(v > e ? v : e);
    return emit(std::move(y), {x}, [x, e](Tape& t, Node& self) {
      if (!t.needs(x)) return;
      const Tensor<T>& X = t.val(x);
      Tensor<T>& gX = t.gref(x);
      for (int64_t i = 0; i < X.numel(); ++i)
        if (X[i] > e) gX[i] += self.grad[i] / X[i];
    });
  }

  int concat_cols(int a, int b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    int64_t n = A.rows(), ca = A.cols(), cb = B.cols();
    if (B.rows() != n) throw std::logic_error("concat_cols: row mismatch");
    Tensor<T> y({n, ca + cb});
    y.mat().leftCols(ca) = A.mat(n, ca);
    y.mat().rightCols(cb) = B.mat(n, cb);
    return emit(std::move(y), {a, b}, [a, b, ca, cb](Tape& t, Node& self) {
      int64_t n = self.grad.rows();
      if (t.needs(a)) t.gref(a).mat(n, ca) += self.grad.mat().leftCols(ca);
      if (t.needs(b)) t.gref(b).mat(n, cb) += self.grad.mat().rightCols(cb);
    });
  }

  int slice_cols(int x, int64_t c0, int64_t c1) {
    const Tensor<T>& X = val(x);
    int64_t n = X.rows(), c = X.cols();
    if (c0 < 0 || c1 > c || c0 >= c1) throw std::logic_error("slice_cols: bad range");
    Tensor<T> y({n, c1 - c0});
    y.mat() = X.mat().middleCols(c0, c1 - c0);
    return emit(std::move(y), {x}, [x, c0, c1](Tape& t, Node& self) {
      if (t.needs(x)) t.gref(x).mat().middleCols(c0, c1 - c0) += self.grad.mat();
    });
  }

  int gather_rows(int x, std::vector<int64_t> idx) {
    const Tensor<T>& X = val(x);
    int64_t c = X.cols();
    Tensor<T> y({static_cast<int64_t>(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i) y.mat().row(static_cast<int64_t>(i)) = X.mat().row(idx[i]);
    return emit(std::move(y), {x}, [x, idx = std::move(idx)](Tape& t, Node& self) {
      if (!t.needs(x)) return;
      auto gX = t.gref(x).mat();
      for (size_t i = 0; i < idx.size(); ++i) gX.row(idx[i]) += self.grad.mat().row(static_cast<int64_t>(i));
    });
  }

  // Gradient reversal: identity forward, multiply incoming gradient by -s on
  // the way back.
  int grl(int x, double s) {
    Tensor<T> y = val(x);
    return emit(std::move(y), {x}, [x, s](Tape& t, Node& self) {
      if (t.needs(x)) t.gref(x).vec() -= T(s) * self.grad.vec();
    });
  }

  // Inverted dropout; identity in eval mode.
  int dropout(int x, double rate) {
    if (!training_ || rate <= 0.0) {
      Tensor<T> y = val(x);
      return emit(std::move(y), {x}, [x](Tape& t, Node& self) {
        if (t.needs(x)) t.gref(x).vec() += self.grad.vec();
      });
    }
    std::bernoulli_distribution keep(1.0 - rate);
    auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(val(x).numel()));
    const T inv = T(1.0 / (1.0 - rate));
    Tensor<T> y = val(x);
    for (int64_t i = 0; i < y.numel(); ++i) {
      T m = keep(rng_) ? inv : T(0);
      (*mask)[static_cast<size_t>(i)] = m;
      y[i] *= m;
    }
    return emit(std::move(y), {x}, [x, mask](Tape& t, Node& self) {
      if (!t.needs(x)) return;
      Tensor<T>& gX = t.gref(x);
      for (int64_t i = 0; i < self.grad.numel(); ++i) gX[i] += self.grad[i] * (*mask)[static_cast<size_t>(i)];
    });
  }

  // ---- reductions and losses ----

  int sum_all(int x) {
    Tensor<T> y({1});
    y[0] = val(x).vec().sum();
    return emit(std::move(y), {x}, [x](Tape& t, Node& self) {
      if (t.needs(x)) t.gref(x).vec().array() += self.grad[0];
    });
  }

  int mean_all(int x) {
    int64_t n = val(x).numel();
    Tensor<T> y({1});
    y[0] = val(x).vec().sum() / T(n);
    return emit(std::move(y), {x}, [x, n](Tape& t, Node& self) {
      if (t.needs(x)) t.gref(x).vec().array() += self.grad[0] / T(n);
    });
  }

  // Row-wise softmax with the usual max-shift for stability.
  int softmax_rows(int x) {
    Tensor<T> y = val(x);
    auto M = y.mat();
    for (int64_t i = 0; i < M.rows(); ++i) {
      T mx = M.row(i).maxCoeff();
      M.row(i) = (M.row(i).array() - mx).exp();
      M.row(i) /= M.row(i).sum();
    }
    return emit(std::move(y), {x}, [x](Tape& t, Node& self) {
      if (!t.needs(x)) return;
      auto Y = self.val.mat();
      auto G = self.grad.mat();
      auto gX = t.gref(x).mat();
      for (int64_t i = 0; i < Y.rows(); ++i) {
        T dot = (G.row(i).array() * Y.row(i).array()).sum();
        gX.row(i).array() += Y.row(i).array() * (G.row(i).array() - dot);
      }
    });
  }

  // Mean negative log of the probability assigned to the true label, with the
  // probability clamped at eps before the log.
  int nll_probs(int probs, std::vector<int> labels, double eps) {
    const Tensor<T>& P = val(probs);
    int64_t n = P.rows();
    if (static_cast<int64_t>(labels.size()) != n) throw std::logic_error("nll_probs: label count");
    const T e = T(eps);
    Tensor<T> y({1});
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      T p = P.mat()(i, labels[static_cast<size_t>(i)]);
      acc += -std::log(static_cast<double>(p > e ? p : e));
    }
    y[0] = T(acc / static_cast<double>(n));
    return emit(std::move(y), {probs}, [probs, labels = std::move(labels), e, n](Tape& t, Node& self) {
      if (!t.needs(probs)) return;
      auto P = t.val(probs).mat();
      auto gP = t.gref(probs).mat();
      const T g = self.grad[0] / T(n);
      for (int64_t i = 0; i < n; ++i) {
        T p = P(i, labels[static_cast<size_t>(i)]);
        if (p > e) gP(i, labels[static_cast<size_t>(i)]) -= g / p;
      }
    });
  }

  // Sum of coupling-weighted squared distances between the rows of a and b:
  // sum_ij gamma_ij * ||a_i - b_j||^2. gamma is held fixed (no gradient).
  int coupling_quadratic(int a, int b, const Eigen::MatrixXd& gamma) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    int64_t na = A.rows(), nb = B.rows(), d = A.cols();
    if (B.cols() != d || gamma.rows() != na || gamma.cols() != nb)
      throw std::logic_error("coupling_quadratic: shape mismatch");
    using MatT = typename Tensor<T>::Mat;
    MatT G = gamma.cast<T>();
    Eigen::Matrix<T, Eigen::Dynamic, 1> r = G.rowwise().sum();
    Eigen::Matrix<T, Eigen::Dynamic, 1> c = G.colwise().sum().transpose();
    auto Am = A.mat(na, d);
    auto Bm = B.mat(nb, d);
    MatT GB = G * Bm;                       // na x d
    double v = 0.0;
    v += (Am.array().square().rowwise().sum() * r.array()).sum();
    v += (Bm.array().square().rowwise().sum() * c.array()).sum();
    v -= 2.0 * (Am.array() * GB.array()).sum();
    Tensor<T> y({1});
    y[0] = T(v);
    auto shared_GB = std::make_shared<MatT>(std::move(GB));
    auto shared_G = std::make_shared<MatT>(std::move(G));
    auto shared_r = std::make_shared<Eigen::Matrix<T, Eigen::Dynamic, 1>>(std::move(r));
    auto shared_c = std::make_shared<Eigen::Matrix<T, Eigen::Dynamic, 1>>(std::move(c));
    return emit(std::move(y), {a, b},
                [a, b, shared_GB, shared_G, shared_r, shared_c](Tape& t, Node& self) {
                  const T g = self.grad[0];
                  auto Am = t.val(a).mat();
                  auto Bm = t.val(b).mat();
                  if (t.needs(a)) {
                    t.gref(a).mat().noalias() +=
                        (T(2) * g) * (shared_r->asDiagonal() * Am - *shared_GB);
                  }
                  if (t.needs(b)) {
                    t.gref(b).mat().noalias() +=
                        (T(2) * g) * (shared_c->asDiagonal() * Bm - shared_G->transpose() * Am);
                  }
                });
  }

  // ---- batch normalization ----

  // mode: per-column statistics for rank-2 input (n x d) when channels == 0,
  // per-channel statistics over (n, h, w) for rank-4 input when channels > 0.
  int batchnorm(int x, int gamma, int beta, BNState<T>& state, double eps, double momentum) {
    const Tensor<T>& X = val(x);
    int64_t chan, groups;
    if (X.ndim() == 2) {
      chan = X.dim(1);
      groups = X.dim(0);
    } else if (X.ndim() == 4) {
      chan = X.dim(1);
      groups = X.dim(0) * X.dim(2) * X.dim(3);
    } else {
      throw std::logic_error("batchnorm: rank must be 2 or 4");
    }
    if (val(gamma).numel() != chan || val(beta).numel() != chan)
      throw std::logic_error("batchnorm: affine shape");
    if (state.running_mean.numel() != chan) {
      state.running_mean = Tensor<T>({chan}, T(0));
      state.running_var = Tensor<T>({chan}, T(1));
    }

    auto mean = std::make_shared<Tensor<T>>(std::vector<int64_t>{chan}, T(0));
    auto invstd = std::make_shared<Tensor<T>>(std::vector<int64_t>{chan}, T(0));
    auto xhat = std::make_shared<Tensor<T>>(X.shape);
    const bool train = training_;

    if (train) {
      reduce_channels(X, chan, [&](int64_t c, T v) { (*mean)[c] += v; });
      for (int64_t c = 0; c < chan; ++c) (*mean)[c] /= T(groups);
      Tensor<T> var({chan}, T(0));
      reduce_channels(X, chan, [&](int64_t c, T v) {
        T d = v - (*mean)[c];
        var[c] += d * d;
      });
      for (int64_t c = 0; c < chan; ++c) var[c] /= T(groups);
      for (int64_t c = 0; c < chan; ++c) (*invstd)[c] = T(1) / std::sqrt(var[c] + T(eps));
      // Running stats keep the unbiased variance.
      T unbias = groups > 1 ? T(groups) / T(groups - 1) : T(1);
      for (int64_t c = 0; c < chan; ++c) {
        state.running_mean[c] = T(1 - momentum) * state.running_mean[c] + T(momentum) * (*mean)[c];
        state.running_var[c] = T(1 - momentum) * state.running_var[c] + T(momentum) * var[c] * unbias;
      }
      state.batches_seen++;
    } else {
      for (int64_t c = 0; c < chan; ++c) {
        (*mean)[c] = state.running_mean[c];
        (*invstd)[c] = T(1) / std::sqrt(state.running_var[c] + T(eps));
      }
    }

    const Tensor<T>& G = val(gamma);
    const Tensor<T>& Bt = val(beta);
    Tensor<T> y(X.shape);
    map_channels(X, chan, [&](int64_t c, int64_t i, T v) {
      T xh = (v - (*mean)[c]) * (*invstd)[c];
      (*xhat)[i] = xh;
      y[i] = G[c] * xh + Bt[c];
    });

    return emit(std::move(y), {x, gamma, beta},
                [x, gamma, beta, chan, groups, mean, invstd, xhat, train](Tape& t, Node& self) {
                  const Tensor<T>& G = t.val(gamma);
                  // Per-channel reductions of the incoming gradient.
                  Tensor<T> gsum({chan}, T(0)), gdot({chan}, T(0));
                  map_channels_const(self.grad, chan, [&](int64_t c, int64_t i, T g) {
                    gsum[c] += g;
                    gdot[c] += g * (*xhat)[i];
                  });
                  if (t.needs(gamma)) {
                    Tensor<T>& gG = t.gref(gamma);
                    for (int64_t c = 0; c < chan; ++c) gG[c] += gdot[c];
                  }
                  if (t.needs(beta)) {
                    Tensor<T>& gB = t.gref(beta);
                    for (int64_t c = 0; c < chan; ++c) gB[c] += gsum[c];
                  }
                  if (t.needs(x)) {
                    Tensor<T>& gX = t.gref(x);
                    if (train) {
                      map_channels_const(self.grad, chan, [&](int64_t c, int64_t i, T g) {
                        T term = g - gsum[c] / T(groups) - (*xhat)[i] * gdot[c] / T(groups);
                        gX[i] += G[c] * (*invstd)[c] * term;
                      });
                    } else {
                      map_channels_const(self.grad, chan, [&](int64_t c, int64_t i, T g) {
                        gX[i] += G[c] * (*invstd)[c] * g;
                      });
                    }
                  }
                });
  }

  // ---- convolution stack (NCHW, square kernels, stride 1, zero padding) ----

  int conv2d(int x, int w, int b, int ksize, int pad) {
    const Tensor<T>& X = val(x);
    const Tensor<T>& W = val(w);
    if (X.ndim() != 4) throw std::logic_error("conv2d: input rank");
    int64_t n = X.dim(0), cin = X.dim(1), h = X.dim(2), wd = X.dim(3);
    int64_t cout = W.dim(0);
    if (W.numel() != cout * cin * ksize * ksize) throw std::logic_error("conv2d: weight shape");
    int64_t oh = h + 2 * pad - ksize + 1, ow = wd + 2 * pad - ksize + 1;
    Tensor<T> y({n, cout, oh, ow});
    // Chunk over images to bound the column-buffer footprint.
    const int64_t chunk = std::max<int64_t>(1, (1 << 22) / std::max<int64_t>(1, oh * ow * cin * ksize * ksize));
    typename Tensor<T>::Mat col, out;
    for (int64_t n0 = 0; n0 < n; n0 += chunk) {
      int64_t nc = std::min(chunk, n - n0);
      im2col(X, n0, nc, ksize, pad, oh, ow, col);
      out.noalias() = col * W.mat(cout, cin * ksize * ksize).transpose();  // (nc*oh*ow) x cout
      for (int64_t i = 0; i < nc; ++i)
        for (int64_t c = 0; c < cout; ++c)
          for (int64_t p = 0; p < oh * ow; ++p)
            y[(((n0 + i) * cout + c) * oh * ow) + p] = out(i * oh * ow + p, c);
    }
    if (b >= 0) {
      const Tensor<T>& B = val(b);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < cout; ++c) {
          T* dst = y.ptr() + ((i * cout + c) * oh * ow);
          for (int64_t p = 0; p < oh * ow; ++p) dst[p] += B[c];
        }
    }
    return emit(std::move(y), {x, w, b}, [x, w, b, ksize, pad, oh, ow, chunk](Tape& t, Node& self) {
      const Tensor<T>& X = t.val(x);
      const Tensor<T>& W = t.val(w);
      int64_t n = X.dim(0), cin = X.dim(1);
      int64_t cout = W.dim(0);
      auto Wm = t.val(w).mat(cout, cin * ksize * ksize);
      typename Tensor<T>::Mat col, gout, gcol;
      for (int64_t n0 = 0; n0 < n; n0 += chunk) {
        int64_t nc = std::min(chunk, n - n0);
        gout.resize(nc * oh * ow, cout);
        for (int64_t i = 0; i < nc; ++i)
          for (int64_t c = 0; c < cout; ++c)
            for (int64_t p = 0; p < oh * ow; ++p)
              gout(i * oh * ow + p, c) = self.grad[(((n0 + i) * cout + c) * oh * ow) + p];
        if (t.needs(w)) {
          im2col(X, n0, nc, ksize, pad, oh, ow, col);
          t.gref(w).mat(cout, cin * ksize * ksize).noalias() += gout.transpose() * col;
        }
        if (t.needs(x)) {
          gcol.noalias() = gout * Wm;  // (nc*oh*ow) x (cin*k*k)
          col2im_add(t.gref(x), n0, nc, ksize, pad, oh, ow, gcol);
        }
      }
      if (b >= 0 && t.needs(b)) {
        Tensor<T>& gB = t.gref(b);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t c = 0; c < cout; ++c) {
            const T* src = self.grad.ptr() + ((i * cout + c) * oh * ow);
            T acc = T(0);
            for (int64_t p = 0; p < oh * ow; ++p) acc += src[p];
            gB[c] += acc;
          }
      }
    });
  }

  int maxpool2(int x) {
    const Tensor<T>& X = val(x);
    if (X.ndim() != 4) throw std::logic_error("maxpool2: input rank");
    int64_t n = X.dim(0), c = X.dim(1), h = X.dim(2), w = X.dim(3);
    int64_t oh = h / 2, ow = w / 2;
    Tensor<T> y({n, c, oh, ow});
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(y.numel()));
    int64_t oi = 0;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* plane = X.ptr() + (i * c + ch) * h * w;
        for (int64_t r = 0; r < oh; ++r)
          for (int64_t q = 0; q < ow; ++q) {
            int64_t base = (2 * r) * w + 2 * q;
            int64_t cand[4] = {base, base + 1, base + w, base + w + 1};
            int64_t best = cand[0];
            for (int k = 1; k < 4; ++k)
              if (plane[cand[k]] > plane[best]) best = cand[k];
            y[oi] = plane[best];
            (*arg)[static_cast<size_t>(oi)] = (i * c + ch) * h * w + best;
            ++oi;
          }
      }
    return emit(std::move(y), {x}, [x, arg](Tape& t, Node& self) {
      if (!t.needs(x)) return;
      Tensor<T>& gX = t.gref(x);
      for (int64_t i = 0; i < self.grad.numel(); ++i) gX[(*arg)[static_cast<size_t>(i)]] += self.grad[i];
    });
  }

  int flatten(int x) {
    const Tensor<T>& X = val(x);
    Tensor<T> y = X;
    y.shape = {X.dim(0), X.numel() / X.dim(0)};
    return emit(std::move(y), {x}, [x](Tape& t, Node& self) {
      if (t.needs(x)) t.gref(x).vec() += self.grad.vec();
    });
  }

  // ---- backward ----

  void backward(int loss_id) {
    Node& top = nodes_[static_cast<size_t>(loss_id)];
    if (top.val.numel() != 1) throw std::logic_error("backward: loss must be scalar");
    if (!top.requires_grad) return;
    for (auto& n : nodes_) {
      if (n.requires_grad && !n.grad.same_shape(n.val)) {
        n.grad = Tensor<T>(n.val.shape);
      } else if (n.requires_grad) {
        n.grad.zero();
      }
    }
    top.grad.fill(T(1));
    for (int i = loss_id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.requires_grad && n.backprop) n.backprop(*this, n);
    }
    for (size_t k = 0; k < params_.size(); ++k) {
      Parameter<T>* p = params_[k];
      const Node& n = nodes_[static_cast<size_t>(param_nodes_[k])];
      if (!n.requires_grad) continue;
      p->ensure_grad();
      p->grad.vec() += n.grad.vec();
    }
  }

 private:
  const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
  Tensor<T>& gref(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  bool needs(int id) const { return id >= 0 && nodes_[static_cast<size_t>(id)].requires_grad; }

  void check_same(int a, int b, const char* op) {
    if (!val(a).same_shape(val(b))) throw std::logic_error(std::string(op) + ": shape mismatch");
  }

  int emit(Tensor<T> y, std::initializer_list<int> parents, std::function<void(Tape&, Node&)> back) {
    Node n;
    n.val = std::move(y);
    for (int p : parents)
      if (p >= 0 && nodes_[static_cast<size_t>(p)].requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.backprop = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  template <typename F>
  static void reduce_channels(const Tensor<T>& X, int64_t chan, F f) {
    if (X.ndim() == 2) {
      for (int64_t i = 0; i < X.dim(0); ++i)
        for (int64_t c = 0; c < chan; ++c) f(c, X[i * chan + c]);
    } else {
      int64_t plane = X.dim(2) * X.dim(3);
      for (int64_t i = 0; i < X.dim(0); ++i)
        for (int64_t c = 0; c < chan; ++c) {
          const T* p = X.ptr() + (i * chan + c) * plane;
          for (int64_t k = 0; k < plane; ++k) f(c, p[k]);
        }
    }
  }

  template <typename F>
  static void map_channels(const Tensor<T>& X, int64_t chan, F f) {
    if (X.ndim() == 2) {
      for (int64_t i = 0; i < X.dim(0); ++i)
        for (int64_t c = 0; c < chan; ++c) {
          int64_t idx = i * chan + c;
          f(c, idx, X[idx]);
        }
    } else {
      int64_t plane = X.dim(2) * X.dim(3);
      for (int64_t i = 0; i < X.dim(0); ++i)
        for (int64_t c = 0; c < chan; ++c) {
          int64_t base = (i * chan + c) * plane;
          for (int64_t k = 0; k < plane; ++k) f(c, base + k, X[base + k]);
        }
    }
  }

  template <typename F>
  static void map_channels_const(const Tensor<T>& X, int64_t chan, F f) {
    map_channels(X, chan, f);
  }

  static void im2col(const Tensor<T>& X, int64_t n0, int64_t nc, int ksize, int pad, int64_t oh,
                     int64_t ow, typename Tensor<T>::Mat& col) {
    int64_t cin = X.dim(1), h = X.dim(2), w = X.dim(3);
    col.resize(nc * oh * ow, cin * ksize * ksize);
    for (int64_t i = 0; i < nc; ++i) {
      for (int64_t r = 0; r < oh; ++r)
        for (int64_t q = 0; q < ow; ++q) {
          int64_t row = (i * oh + r) * ow + q;
          T* dst = col.data() + row * cin * ksize * ksize;
          for (int64_t c = 0; c < cin; ++c) {
            const T* plane = X.ptr() + ((n0 + i) * cin + c) * h * w;
            for (int kr = 0; kr < ksize; ++kr) {
              int64_t sr = r + kr - pad;
              for (int kq = 0; kq < ksize; ++kq) {
                int64_t sq = q + kq - pad;
                *dst++ = (sr >= 0 && sr < h && sq >= 0 && sq < w) ? plane[sr * w + sq] : T(0);
              }
            }
          }
        }
    }
  }

  static void col2im_add(Tensor<T>& gX, int64_t n0, int64_t nc, int ksize, int pad, int64_t oh,
                         int64_t ow, const typename Tensor<T>::Mat& gcol) {
    int64_t cin = gX.dim(1), h = gX.dim(2), w = gX.dim(3);
    for (int64_t i = 0; i < nc; ++i) {
      for (int64_t r = 0; r < oh; ++r)
        for (int64_t q = 0; q < ow; ++q) {
          int64_t row = (i * oh + r) * ow + q;
          const T* src = gcol.data() + row * cin * ksize * ksize;
          for (int64_t c = 0; c < cin; ++c) {
            T* plane = gX.ptr() + ((n0 + i) * cin + c) * h * w;
            for (int kr = 0; kr < ksize; ++kr) {
              int64_t sr = r + kr - pad;
              for (int kq = 0; kq < ksize; ++kq) {
                int64_t sq = q + kq - pad;
                T v = *src++;
                if (sr >= 0 && sr < h && sq >= 0 && sq < w) plane[sr * w + sq] += v;
              }
            }
          }
        }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_ids_;
  std::vector<Parameter<T>*> params_;
  std::vector<int> param_nodes_;
  std::mt19937_64 rng_;
  bool training_ = true;
  bool grad_enabled_ = true;
};

}  // namespace adimp::nn
