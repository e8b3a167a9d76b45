// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adimp/data/dataset.hpp"
#include "adimp/nets/arch.hpp"
#include "adimp/nn/modules.hpp"
#include "adimp/nn/tape.hpp"

namespace adimp::nets {

enum class Act { None, ReLU, Sigmoid, Softmax };

// Stack of fully connected layers with optional per-layer batch norm and an
// activation per layer. Dropout (if any) is applied after the first
// activation.
template <typename T>
struct MlpStack {
  std::vector<nn::Linear<T>> layers;
  std::vector<nn::BatchNorm<T>> bns;  // aligned with layers when batch_norm
  std::vector<Act> acts;
  bool batch_norm = false;
  double dropout_after_first = 0.0;

  void add(const std::string& name, int64_t in, int64_t out, Act act, bool bn,
           std::mt19937_64& rng) {
    layers.emplace_back(name, in, out, rng);
    acts.push_back(act);
    batch_norm = batch_norm || bn;
    bns.emplace_back(bn ? nn::BatchNorm<T>(name + ".bn", out) : nn::BatchNorm<T>());
    if (!bn) bns.back().features = 0;
  }

  int forward(nn::Tape<T>& t, int x) {
    for (size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].forward(t, x);
      if (bns[i].features > 0) x = bns[i].forward(t, x);
      switch (acts[i]) {
        case Act::ReLU:
          x = t.relu(x);
          break;
        case Act::Sigmoid:
          x = t.sigmoid(x);
          break;
        case Act::Softmax:
          x = t.softmax_rows(x);
          break;
        case Act::None:
          break;
      }
      if (i == 0 && dropout_after_first > 0.0) x = t.dropout(x, dropout_after_first);
    }
    return x;
  }

  void params(std::vector<nn::Parameter<T>*>& out) {
    for (size_t i = 0; i < layers.size(); ++i) {
      layers[i].params(out);
      if (bns[i].features > 0) bns[i].params(out);
    }
  }
  void named_tensors(const std::string& prefix,
                     std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    for (size_t i = 0; i < layers.size(); ++i) {
      out.emplace_back(prefix + ".l" + std::to_string(i) + ".W", &layers[i].W.value);
      out.emplace_back(prefix + ".l" + std::to_string(i) + ".b", &layers[i].b.value);
      if (bns[i].features > 0) {
        out.emplace_back(prefix + ".l" + std::to_string(i) + ".bn.gamma", &bns[i].gamma.value);
        out.emplace_back(prefix + ".l" + std::to_string(i) + ".bn.beta", &bns[i].beta.value);
        out.emplace_back(prefix + ".l" + std::to_string(i) + ".bn.mean", &bns[i].state.running_mean);
        out.emplace_back(prefix + ".l" + std::to_string(i) + ".bn.var", &bns[i].state.running_var);
      }
    }
  }
};

// Three-block convolutional encoder: 5x5 kernels with same padding, batch
// norm, 2x2 max pooling; relu on the hidden blocks and sigmoid at the end.
// 32x32 input -> 128 * 4 * 4 = 2048 latent.
template <typename T>
struct ConvEncoder {
  nn::Conv2d<T> c1, c2, c3;
  nn::BatchNorm<T> b1, b2, b3;

  ConvEncoder() = default;
  ConvEncoder(const std::string& name, int64_t in_channels, std::mt19937_64& rng)
      : c1(name + ".c1", in_channels, 64, 5, 2, rng),
        c2(name + ".c2", 64, 64, 5, 2, rng),
        c3(name + ".c3", 64, 128, 5, 2, rng),
        b1(name + ".b1", 64),
        b2(name + ".b2", 64),
        b3(name + ".b3", 128) {}

  int forward(nn::Tape<T>& t, int x) {
    int h = t.maxpool2(t.relu(b1.forward(t, c1.forward(t, x))));
    h = t.maxpool2(t.relu(b2.forward(t, c2.forward(t, h))));
    h = t.sigmoid(t.maxpool2(b3.forward(t, c3.forward(t, h))));
    return t.flatten(h);
  }
  void params(std::vector<nn::Parameter<T>*>& out) {
    c1.params(out);
    c2.params(out);
    c3.params(out);
    b1.params(out);
    b2.params(out);
    b3.params(out);
  }
  void named_tensors(const std::string& p,
                     std::vector<std::pair<std::string, nn::Tensor<T>*>>& out) {
    auto conv = [&](const std::string& n, nn::Conv2d<T>& c, nn::BatchNorm<T>& b) {
      out.emplace_back(p + "." + n + ".W", &c.W.value);
      out.emplace_back(p + "." + n + ".b", &c.b.value);
      out.emplace_back(p + "." + n + ".bn.gamma", &b.gamma.value);
      out.emplace_back(p + "." + n + ".bn.beta", &b.beta.value);
      out.emplace_back(p + "." + n + ".bn.mean", &b.state.running_mean);
      out.emplace_back(p + "." + n + ".bn.var", &b.state.running_var);
    };
    conv("c1", c1, b1);
    conv("c2", c2, b2);
    conv("c3", c3, b3);
  }
};

// The full component set: two feature extractors (observed block g1, missing
// block g2), the latent imputation head r, classifier f and the two
// discriminators (domain d1, generated-vs-real d2).
template <typename T>
struct Bundle {
  ArchSpec arch;
  uint64_t init_seed = 0;

  // conv family
  ConvEncoder<T> g1_conv, g2_conv;
  // mlp family
  MlpStack<T> g1_mlp, g2_mlp;

  MlpStack<T> r, f, d1, d2;

  Bundle() = default;

  explicit Bundle(const ArchSpec& a, uint64_t seed) : arch(a), init_seed(seed) {
    std::mt19937_64 rng(seed);
    const int64_t L = arch.latent();
    if (arch.family == "conv_digits") {
      g1_conv = ConvEncoder<T>("g1", arch.in_channels, rng);
      g2_conv = ConvEncoder<T>("g2", arch.in_channels, rng);
      // imputation head: two (optionally three) hidden layers of 512
      r.add("r0", L, 512, Act::ReLU, false, rng);
      if (arch.deep_imputer) r.add("rx", 512, 512, Act::ReLU, false, rng);
      r.add("r1", 512, 512, Act::ReLU, false, rng);
      r.add("r2", 512, L, Act::Sigmoid, false, rng);
      // classifier: two hidden layers of 100 with batch norm, dropout on the
      // first layer, softmax output
      f.add("f0", arch.classifier_in(), 100, Act::ReLU, true, rng);
      f.dropout_after_first = arch.dropout;
      f.add("f1", 100, 100, Act::ReLU, true, rng);
      f.add("f2", 100, arch.num_classes, Act::Softmax, false, rng);
      auto disc = [&](MlpStack<T>& d, const std::string& n, int64_t in) {
        if (arch.strong_domain_disc) {
          d.add(n + "0", in, 512, Act::ReLU, false, rng);
          d.add(n + "1", 512, 512, Act::ReLU, false, rng);
          d.add(n + "2", 512, 1, Act::Sigmoid, false, rng);
        } else {
          d.add(n + "0", in, 100, Act::ReLU, false, rng);
          d.add(n + "1", 100, 1, Act::Sigmoid, false, rng);
        }
      };
      disc(d1, "d1_", arch.domain_disc_in());
      disc(d2, "d2_", L);
    } else if (arch.family == "mlp_tabular") {
      if (arch.d1 <= 0 || (arch.d2 <= 0 && arch.classifier_on_pair))
        throw std::invalid_argument("Bundle: tabular block widths not set");
      const int64_t H = arch.mlp_hidden;
      auto extractor = [&](MlpStack<T>& g, const std::string& n, int64_t in) {
        g.add(n + "0", in, H, Act::ReLU, false, rng);
        g.add(n + "1", H, H, Act::ReLU, false, rng);
        g.add(n + "2", H, H, Act::Sigmoid, false, rng);
      };
      extractor(g1_mlp, "g1_", arch.d1);
      extractor(g2_mlp, "g2_", std::max<int64_t>(arch.d2, 1));
      r.add("r0", H, H, Act::ReLU, false, rng);
      r.add("r1", H, H, Act::ReLU, false, rng);
      r.add("r2", H, H, Act::Sigmoid, false, rng);
      f.add("f0", arch.classifier_in(), H, Act::ReLU, false, rng);
      f.add("f1", H, arch.num_classes, Act::Softmax, false, rng);
      d1.add("d1_0", arch.domain_disc_in(), H, Act::ReLU, false, rng);
      d1.add("d1_1", H, 1, Act::Sigmoid, false, rng);
      d2.add("d2_0", H, H, Act::ReLU, false, rng);
      d2.add("d2_1", H, 1, Act::Sigmoid, false, rng);
    } else {
      throw std::invalid_argument("Bundle: unknown family '" + arch.family + "'");
    }
  }

  bool conv() const { return arch.family == "conv_digits"; }

  // ---- input assembly ----

  // Gathers the requested block for the given rows. For conv bundles the
  // block is re-embedded into zero-filled full-size frames at its original
  // pixel positions, so the encoders are independent of the mask fraction.
  nn::Tensor<T> input_block(const data::MaskedDataset& ds, const std::vector<int64_t>& rows,
                            int block) const {
    const nn::Tensor<float>& X = block == 1 ? ds.X1 : ds.X2;
    const std::vector<int64_t>& at = block == 1 ? ds.mask.observed : ds.mask.missing;
    if (block == 2 && !ds.x2_present)
      throw std::logic_error("input_block: second block requested from a structurally masked dataset");
    if (!conv()) {
      nn::Tensor<T> out({static_cast<int64_t>(rows.size()), X.cols()});
      for (size_t i = 0; i < rows.size(); ++i)
        for (int64_t j = 0; j < X.cols(); ++j)
          out[static_cast<int64_t>(i) * X.cols() + j] = T(X.mat()(rows[i], j));
      return out;
    }
    const auto& m = ds.mask;
    if (!m.is_image()) throw std::logic_error("input_block: conv bundle needs an image mask");
    nn::Tensor<T> out({static_cast<int64_t>(rows.size()), m.channels, m.height, m.width}, T(0));
    int64_t frame = m.channels * m.height * m.width;
    for (size_t i = 0; i < rows.size(); ++i) {
      T* dst = out.ptr() + static_cast<int64_t>(i) * frame;
      const float* src = X.ptr() + rows[i] * X.cols();
      for (size_t k = 0; k < at.size(); ++k) dst[at[k]] = T(src[k]);
    }
    return out;
  }

  // All-zero frames/vectors shaped like the second block input (the
  // zero-imputation baseline feeds these through g2).
  nn::Tensor<T> zero_block2(const data::MaskedDataset& ds, int64_t n) const {
    if (!conv()) return nn::Tensor<T>({n, ds.X2.cols()}, T(0));
    const auto& m = ds.mask;
    return nn::Tensor<T>({n, m.channels, m.height, m.width}, T(0));
  }

  // ---- forward ops ----

  int encode1(nn::Tape<T>& t, int x1) { return conv() ? g1_conv.forward(t, x1) : g1_mlp.forward(t, x1); }
  int encode2(nn::Tape<T>& t, int x2) { return conv() ? g2_conv.forward(t, x2) : g2_mlp.forward(t, x2); }
  int impute(nn::Tape<T>& t, int z1) { return r.forward(t, z1); }

  // (z1, z2) from both observed blocks; requires the second block present.
  std::pair<int, int> encode_full(nn::Tape<T>& t, int x1, int x2) {
    return {encode1(t, x1), encode2(t, x2)};
  }
  // (z1, r(z1)): the deployment encoding when the second block is missing.
  std::pair<int, int> encode_hat(nn::Tape<T>& t, int x1) {
    int z1 = encode1(t, x1);
    return {z1, impute(t, z1)};
  }

  int classify_pair(nn::Tape<T>& t, int z1, int z2) {
    if (!arch.classifier_on_pair) throw std::logic_error("classify_pair: classifier reads one block");
    return f.forward(t, t.concat_cols(z1, z2));
  }
  int classify_single(nn::Tape<T>& t, int z1) {
    if (arch.classifier_on_pair) throw std::logic_error("classify_single: classifier reads the pair");
    return f.forward(t, z1);
  }
  int disc_domain(nn::Tape<T>& t, int z) { return d1.forward(t, z); }
  int disc_generated(nn::Tape<T>& t, int z2) { return d2.forward(t, z2); }

  // ---- parameter groups ----

  std::vector<nn::Parameter<T>*> params_g1() {
    std::vector<nn::Parameter<T>*> out;
    conv() ? g1_conv.params(out) : g1_mlp.params(out);
    return out;
  }
  std::vector<nn::Parameter<T>*> params_g2() {
    std::vector<nn::Parameter<T>*> out;
    conv() ? g2_conv.params(out) : g2_mlp.params(out);
    return out;
  }
  std::vector<nn::Parameter<T>*> params_r() {
    std::vector<nn::Parameter<T>*> out;
    r.params(out);
    return out;
  }
  std::vector<nn::Parameter<T>*> params_f() {
    std::vector<nn::Parameter<T>*> out;
    f.params(out);
    return out;
  }
  std::vector<nn::Parameter<T>*> params_d1() {
    std::vector<nn::Parameter<T>*> out;
    d1.params(out);
    return out;
  }
  std::vector<nn::Parameter<T>*> params_d2() {
    std::vector<nn::Parameter<T>*> out;
    d2.params(out);
    return out;
  }
  std::vector<nn::Parameter<T>*> all_params() {
    std::vector<nn::Parameter<T>*> out;
    for (auto g : {params_g1(), params_g2(), params_r(), params_f(), params_d1(), params_d2()})
      out.insert(out.end(), g.begin(), g.end());
    return out;
  }

  std::vector<std::pair<std::string, nn::Tensor<T>*>> named_tensors() {
    std::vector<std::pair<std::string, nn::Tensor<T>*>> out;
    if (conv()) {
      g1_conv.named_tensors("g1", out);
      g2_conv.named_tensors("g2", out);
    } else {
      g1_mlp.named_tensors("g1", out);
      g2_mlp.named_tensors("g2", out);
    }
    r.named_tensors("r", out);
    f.named_tensors("f", out);
    d1.named_tensors("d1", out);
    d2.named_tensors("d2", out);
    return out;
  }
};

}  // namespace adimp::nets
