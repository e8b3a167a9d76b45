// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <random>

#include "adimp/data/dataset.hpp"
#include "adimp/data/mask.hpp"
#include "adimp/nets/bundle.hpp"
#include "adimp/nets/checkpoint.hpp"
#include "adimp/nn/modules.hpp"

using namespace adimp;

namespace {

data::MaskedDataset tiny_image_dataset(int n, int channels, int side, int num_classes,
                                       double mask_fraction, uint64_t seed) {
  data::Dataset d;
  d.name = "tiny";
  d.channels = channels;
  d.height = side;
  d.width = side;
  d.num_classes = num_classes;
  d.X = nn::Tensor<float>({n, channels * side * side});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (auto& v : d.X.data) v = u(rng);
  d.y.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) d.y[static_cast<size_t>(i)] = i % num_classes;
  auto m = data::FixedMask::horizontal_patch(channels, side, side, mask_fraction);
  return data::apply_mask(d, m, /*keep_missing_block=*/true);
}

}  // namespace

TEST_CASE("conv bundle shapes") {
  nets::ArchSpec a;
  a.family = "conv_digits";
  a.in_channels = 1;
  a.image_side = 32;
  a.num_classes = 10;
  nets::Bundle<float> b(a, 7);
  auto ds = tiny_image_dataset(6, 1, 32, 10, 0.5, 1);

  nn::Tape<float> t(11, /*training=*/true);
  std::vector<int64_t> rows = {0, 1, 2, 3};
  int x1 = t.input(b.input_block(ds, rows, 1));
  int x2 = t.input(b.input_block(ds, rows, 2));
  auto [z1, z2] = b.encode_full(t, x1, x2);
  CHECK(t.value(z1).rows() == 4);
  CHECK(t.value(z1).cols() == 2048);
  CHECK(t.value(z2).cols() == 2048);
  int z2hat = b.impute(t, z1);
  CHECK(t.value(z2hat).cols() == 2048);
  int p = b.classify_pair(t, z1, z2hat);
  CHECK(t.value(p).rows() == 4);
  CHECK(t.value(p).cols() == 10);
  for (int64_t i = 0; i < 4; ++i) {
    double s = 0;
    for (int64_t k = 0; k < 10; ++k) s += t.value(p)[i * 10 + k];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
  int dd = b.disc_domain(t, t.concat_cols(z1, z2hat));
  CHECK(t.value(dd).cols() == 1);
  int dg = b.disc_generated(t, z2hat);
  CHECK(t.value(dg).cols() == 1);

  // latent range matches the sigmoid output layer
  for (int64_t i = 0; i < t.value(z1).numel(); ++i) {
    CHECK(t.value(z1)[i] >= 0.f);
    CHECK(t.value(z1)[i] <= 1.f);
  }
}

TEST_CASE("mlp bundle shapes") {
  nets::ArchSpec a;
  a.family = "mlp_tabular";
  a.d1 = 9;
  a.d2 = 5;
  a.num_classes = 2;
  nets::Bundle<float> b(a, 3);

  nn::Tape<float> t(5, true);
  nn::Tensor<float> x1v({3, 9}, 0.25f);
  nn::Tensor<float> x2v({3, 5}, -0.5f);
  auto [z1, z2] = b.encode_full(t, t.input(x1v), t.input(x2v));
  CHECK(t.value(z1).cols() == 128);
  CHECK(t.value(z2).cols() == 128);
  int p = b.classify_pair(t, z1, b.impute(t, z1));
  CHECK(t.value(p).cols() == 2);
}

TEST_CASE("frame assembly puts the block back at its own pixels") {
  auto ds = tiny_image_dataset(3, 1, 8, 2, 0.25, 9);
  nets::ArchSpec a;
  a.family = "conv_digits";
  a.in_channels = 1;
  a.image_side = 8;
  a.num_classes = 2;
  nets::Bundle<float> b(a, 1);

  auto f1 = b.input_block(ds, {1}, 1);
  auto f2 = b.input_block(ds, {1}, 2);
  CHECK(f1.shape == std::vector<int64_t>({1, 1, 8, 8}));
  // observed and missing frames are disjoint and sum to the original image
  const auto& m = ds.mask;
  for (size_t k = 0; k < m.observed.size(); ++k) {
    CHECK(f1[m.observed[k]] == ds.X1[1 * ds.X1.cols() + static_cast<int64_t>(k)]);
    CHECK(f2[m.observed[k]] == 0.f);
  }
  for (size_t k = 0; k < m.missing.size(); ++k) {
    CHECK(f2[m.missing[k]] == ds.X2[1 * ds.X2.cols() + static_cast<int64_t>(k)]);
    CHECK(f1[m.missing[k]] == 0.f);
  }
  // bottom quarter of an 8x8 frame is rows 6..7
  CHECK(m.first_masked_row == 6);

  auto z = b.zero_block2(ds, 4);
  CHECK(z.shape == std::vector<int64_t>({4, 1, 8, 8}));
  for (auto v : z.data) CHECK(v == 0.f);
}

TEST_CASE("structurally masked dataset refuses to serve the second block") {
  data::Dataset d;
  d.name = "t";
  d.channels = 1;
  d.height = 8;
  d.width = 8;
  d.num_classes = 2;
  d.X = nn::Tensor<float>({2, 64}, 0.5f);
  d.y = {0, 1};
  auto m = data::FixedMask::horizontal_patch(1, 8, 8, 0.5);
  auto ds = data::apply_mask(d, m, /*keep_missing_block=*/false);
  CHECK_FALSE(ds.x2_present);

  nets::ArchSpec a;
  a.family = "conv_digits";
  a.in_channels = 1;
  a.image_side = 8;
  a.num_classes = 2;
  nets::Bundle<float> b(a, 1);
  CHECK_THROWS_AS((void)b.input_block(ds, {0}, 2), std::logic_error);
}

TEST_CASE("domain alignment gradients do not reach the second extractor") {
  // L1 only sees (z1, r(z1)); g2 must receive exactly zero gradient.
  nets::ArchSpec a;
  a.family = "mlp_tabular";
  a.d1 = 6;
  a.d2 = 4;
  a.num_classes = 2;
  nets::Bundle<float> b(a, 21);

  nn::Tape<float> t(2, true);
  nn::Tensor<float> xs({4, 6}), xt({4, 6}), xs2({4, 4});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (auto& v : xs.data) v = u(rng);
  for (auto& v : xt.data) v = u(rng);
  for (auto& v : xs2.data) v = u(rng);

  auto [zs1, zs2hat] = b.encode_hat(t, t.input(xs));
  auto [zt1, zt2hat] = b.encode_hat(t, t.input(xt));
  int zs2 = b.encode2(t, t.input(xs2));  // on the tape but outside the loss
  (void)zs2;
  int ds_ = b.disc_domain(t, t.concat_cols(zs1, zs2hat));
  int dt_ = b.disc_domain(t, t.concat_cols(zt1, zt2hat));
  int l1 = t.scale(t.add(t.mean_all(t.log_clamped(ds_, 1e-7)),
                         t.mean_all(t.log_clamped(t.rsub_const(dt_, 1.0), 1e-7))),
                   -1.0);
  t.backward(l1);

  double g1_norm = 0, g2_norm = 0, r_norm = 0;
  for (auto* p : b.params_g1())
    for (int64_t i = 0; i < p->grad.numel(); ++i) g1_norm += std::abs(double(p->grad[i]));
  for (auto* p : b.params_g2())
    for (int64_t i = 0; i < p->grad.numel(); ++i) g2_norm += std::abs(double(p->grad[i]));
  for (auto* p : b.params_r())
    for (int64_t i = 0; i < p->grad.numel(); ++i) r_norm += std::abs(double(p->grad[i]));
  CHECK(g1_norm > 0.0);
  CHECK(r_norm > 0.0);
  CHECK(g2_norm == 0.0);
}

TEST_CASE("checkpoint round trip restores every tensor and the forward pass") {
  nets::ArchSpec a;
  a.family = "conv_digits";
  a.in_channels = 1;
  a.image_side = 8;
  a.num_classes = 3;
  a.deep_imputer = true;
  nets::Bundle<float> b(a, 99);

  // perturb running stats so they are not at the init values
  b.g1_conv.b1.state.running_mean.fill(0.25f);
  b.g1_conv.b1.state.batches_seen = 5;

  const char* path = "ckpt_roundtrip.bin";
  nlohmann::json extra = {{"epoch", 17}, {"note", "unit"}};
  nets::save_bundle(path, b, extra);

  nlohmann::json extra2;
  auto b2 = nets::load_bundle<float>(path, &extra2);
  CHECK(extra2.at("epoch").get<int>() == 17);
  CHECK(b2.arch.family == "conv_digits");
  CHECK(b2.arch.deep_imputer);
  CHECK(b2.arch.num_classes == 3);

  auto ta = b.named_tensors();
  auto tb = b2.named_tensors();
  REQUIRE(ta.size() == tb.size());
  for (size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].first == tb[i].first);
    REQUIRE(ta[i].second->shape == tb[i].second->shape);
    for (int64_t j = 0; j < ta[i].second->numel(); ++j)
      CHECK((*ta[i].second)[j] == (*tb[i].second)[j]);
  }

  // identical eval-mode forward
  nn::Tensor<float> x({2, 1, 8, 8});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1.f, 1.f);
  for (auto& v : x.data) v = u(rng);
  nn::Tape<float> t1(1, false), t2(1, false);
  auto [za1, za2] = b.encode_hat(t1, t1.input(x));
  int pa = b.classify_pair(t1, za1, za2);
  auto [zb1, zb2] = b2.encode_hat(t2, t2.input(x));
  int pb = b2.classify_pair(t2, zb1, zb2);
  for (int64_t i = 0; i < t1.value(pa).numel(); ++i)
    CHECK(t1.value(pa)[i] == t2.value(pb)[i]);

  std::remove(path);
}

TEST_CASE("checkpoint rejects garbage and dtype mismatches") {
  const char* path = "ckpt_garbage.bin";
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint at all";
  }
  CHECK_THROWS_AS((void)nets::load_bundle<float>(path), std::runtime_error);
  std::remove(path);

  nets::ArchSpec a;
  a.family = "mlp_tabular";
  a.d1 = 4;
  a.d2 = 3;
  a.num_classes = 2;
  nets::Bundle<double> bd(a, 1);
  const char* p2 = "ckpt_f64.bin";
  nets::save_bundle(p2, bd);
  CHECK_THROWS_AS((void)nets::load_bundle<float>(p2), std::runtime_error);
  auto back = nets::load_bundle<double>(p2);
  CHECK(back.arch.d1 == 4);
  std::remove(p2);
}
