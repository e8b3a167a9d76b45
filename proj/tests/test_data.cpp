// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include <fstream>

#include "adimp/data/batching.hpp"
#include "adimp/data/dataset.hpp"
#include "adimp/data/idx.hpp"
#include "adimp/data/mask.hpp"
#include "adimp/data/synthetic.hpp"
#include "adimp/data/tabular.hpp"

using namespace adimp;

TEST_CASE("horizontal patch mask partitions the features") {
  auto m = data::FixedMask::horizontal_patch(1, 32, 32, 0.5);
  CHECK(m.d1() == 512);
  CHECK(m.d2() == 512);
  CHECK(m.first_masked_row == 16);
  std::set<int64_t> all(m.observed.begin(), m.observed.end());
  all.insert(m.missing.begin(), m.missing.end());
  CHECK(static_cast<int64_t>(all.size()) == m.n_total);
  CHECK(*all.rbegin() == m.n_total - 1);
  // every missing index lies in the bottom rows
  for (int64_t i : m.missing) CHECK((i / 32) % 32 >= 16);

  // floor semantics: 0.3 of 32 rows -> 9 masked rows (23..31)
  auto m3 = data::FixedMask::horizontal_patch(3, 32, 32, 0.3);
  CHECK(m3.first_masked_row == 23);
  CHECK(m3.d2() == 3 * 9 * 32);

  // fraction 0 is the full-data mask; fraction 1 keeps one observed row
  auto m0 = data::FixedMask::horizontal_patch(1, 32, 32, 0.0);
  CHECK(m0.d2() == 0);
  CHECK(m0.d1() == 1024);
  auto m1 = data::FixedMask::horizontal_patch(1, 32, 32, 1.0);
  CHECK(m1.d1() == 32);
  CHECK_THROWS_AS(data::FixedMask::horizontal_patch(1, 32, 32, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(data::FixedMask::horizontal_patch(1, 32, 32, 1.5), std::invalid_argument);
}

TEST_CASE("suffix mask and explicit index mask") {
  auto m = data::FixedMask::suffix_fraction(16, 0.5);
  CHECK(m.d1() == 8);
  CHECK(m.missing.front() == 8);
  CHECK(m.missing.back() == 15);
  CHECK_FALSE(m.is_image());

  auto e = data::FixedMask::from_missing(5, {1, 3});
  CHECK(e.observed == std::vector<int64_t>({0, 2, 4}));
  CHECK(e.missing == std::vector<int64_t>({1, 3}));
  CHECK_THROWS_AS(data::FixedMask::from_missing(5, {5}), std::invalid_argument);
  CHECK_THROWS_AS(data::FixedMask::from_missing(5, {1, 1}), std::invalid_argument);
}

TEST_CASE("apply_mask splits and reassembles exactly") {
  data::Dataset d;
  d.name = "t";
  d.num_classes = 3;
  d.X = nn::Tensor<float>({4, 6});
  for (int64_t i = 0; i < d.X.numel(); ++i) d.X[i] = static_cast<float>(i) * 0.5f;
  d.y = {0, 1, 2, 0};
  auto m = data::FixedMask::from_missing(6, {0, 4});

  auto full = data::apply_mask(d, m, true);
  CHECK(full.x2_present);
  CHECK(full.X1.cols() == 4);
  CHECK(full.X2.cols() == 2);
  for (int64_t i = 0; i < 4; ++i) {
    for (size_t k = 0; k < m.observed.size(); ++k)
      CHECK(full.X1[i * 4 + static_cast<int64_t>(k)] == d.X[i * 6 + m.observed[k]]);
    for (size_t k = 0; k < m.missing.size(); ++k)
      CHECK(full.X2[i * 2 + static_cast<int64_t>(k)] == d.X[i * 6 + m.missing[k]]);
  }

  auto masked = data::apply_mask(d, m, false);
  CHECK_FALSE(masked.x2_present);
  for (auto v : masked.X2.data) CHECK(v == 0.f);

  auto sub = data::take_rows(full, {2, 0});
  CHECK(sub.n() == 2);
  CHECK(sub.y == std::vector<int>({2, 0}));
  CHECK(sub.X1[0] == full.X1[2 * 4]);

  data::FixedMask wrong = data::FixedMask::suffix_fraction(7, 0.5);
  CHECK_THROWS_AS(data::apply_mask(d, wrong, true), std::invalid_argument);
}

TEST_CASE("masking is idempotent through reassembly") {
  data::Dataset d;
  d.name = "t";
  d.num_classes = 2;
  d.X = nn::Tensor<float>({3, 8});
  for (int64_t i = 0; i < d.X.numel(); ++i) d.X[i] = static_cast<float>(i) - 10.f;
  d.y = {1, 0, 1};
  auto m = data::FixedMask::suffix_fraction(8, 0.25);

  auto once = data::apply_mask(d, m, true);
  auto back = data::reassemble(once);
  CHECK(back.X.data == d.X.data);
  auto twice = data::apply_mask(back, m, true);
  CHECK(twice.X1.data == once.X1.data);
  CHECK(twice.X2.data == once.X2.data);

  // structurally masked roundtrip zero-fills the missing block
  auto masked = data::apply_mask(d, m, false);
  auto back2 = data::reassemble(masked);
  auto again = data::apply_mask(back2, m, false);
  CHECK(again.X1.data == masked.X1.data);
  for (size_t k = 0; k < m.missing.size(); ++k) CHECK(back2.X[m.missing[k]] == 0.f);
}

TEST_CASE("subsampling is deterministic and label-preserving") {
  data::Dataset d;
  d.name = "s";
  d.num_classes = 4;
  int64_t n = 4000;
  d.X = nn::Tensor<float>({n, 2});
  d.y.resize(static_cast<size_t>(n));
  // unbalanced: class c has (c+1)/10 of the data
  int64_t at = 0;
  for (int c = 0; c < 4; ++c) {
    int64_t cnt = n * (c + 1) / 10;
    for (int64_t i = 0; i < cnt && at < n; ++i, ++at) d.y[static_cast<size_t>(at)] = c;
  }
  for (; at < n; ++at) d.y[static_cast<size_t>(at)] = 3;
  for (int64_t i = 0; i < d.X.numel(); ++i) d.X[i] = static_cast<float>(i % 97);

  auto a = data::subsample(d, 1000, 5);
  auto b = data::subsample(d, 1000, 5);
  CHECK(a.X.data == b.X.data);
  CHECK(a.y == b.y);
  CHECK(a.n() == 1000);

  std::vector<int64_t> full_counts(4, 0), sub_counts(4, 0);
  for (int y : d.y) full_counts[static_cast<size_t>(y)]++;
  for (int y : a.y) sub_counts[static_cast<size_t>(y)]++;
  for (int c = 0; c < 4; ++c) {
    double pf = static_cast<double>(full_counts[static_cast<size_t>(c)]) / static_cast<double>(n);
    double ps = static_cast<double>(sub_counts[static_cast<size_t>(c)]) / 1000.0;
    CHECK(std::abs(pf - ps) <= 0.02);
  }
  CHECK_THROWS_AS(data::subsample(d, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(data::subsample(d, n + 1, 1), std::invalid_argument);
}

TEST_CASE("synthetic generator is deterministic and labeled in range") {
  data::SyntheticSpec spec;
  spec.n_per_domain = 400;
  spec.n_heldout = 100;
  spec.seed = 7;
  auto a = data::make_synthetic_multimodal(spec);
  auto b = data::make_synthetic_multimodal(spec);
  CHECK(a.source.X.data == b.source.X.data);
  CHECK(a.target.y == b.target.y);
  CHECK(a.source.n() == 400);
  CHECK(a.target_heldout.n() == 100);
  for (int y : a.source.y) {
    CHECK(y >= 0);
    CHECK(y < spec.K);
  }
  spec.seed = 8;
  auto c = data::make_synthetic_multimodal(spec);
  CHECK(a.source.X.data != c.source.X.data);
}

TEST_CASE("synthetic tail follows the shared two-mode kernel in both domains") {
  data::SyntheticSpec spec;
  spec.n_per_domain = 3000;
  spec.n_heldout = 10;
  spec.seed = 3;
  auto d = data::make_synthetic_multimodal(spec);
  const auto& o = d.oracle;
  int64_t dh = o.head(), dt = spec.tail;

  auto mean_mode_gap = [&](const data::Dataset& ds) {
    double acc = 0;
    for (int64_t i = 0; i < ds.n(); ++i) {
      Eigen::Map<const Eigen::VectorXf> row(ds.X.ptr() + i * ds.d(), ds.d());
      Eigen::VectorXd u = row.head(dh).cast<double>();
      Eigen::VectorXd t = row.tail(dt).cast<double>();
      double dplus = (t - o.conditional_mode(u, +1)).squaredNorm();
      double dminus = (t - o.conditional_mode(u, -1)).squaredNorm();
      acc += std::min(dplus, dminus);
    }
    return acc / static_cast<double>(ds.n());
  };

  // nearest-mode squared distance concentrates at dt * sigma_tail^2
  double expect = static_cast<double>(dt) * spec.sigma_tail * spec.sigma_tail;
  double s = mean_mode_gap(d.source);
  double t = mean_mode_gap(d.target);
  CHECK(s == doctest::Approx(expect).epsilon(0.15));
  CHECK(t == doctest::Approx(expect).epsilon(0.15));
  // identical conditional kernel: the statistic matches across domains
  CHECK(s == doctest::Approx(t).epsilon(0.1));

  // both modes are used about equally
  int64_t plus = 0;
  for (int64_t i = 0; i < d.source.n(); ++i) {
    Eigen::Map<const Eigen::VectorXf> row(d.source.X.ptr() + i * d.source.d(), d.source.d());
    Eigen::VectorXd u = row.head(dh).cast<double>();
    Eigen::VectorXd tl = row.tail(dt).cast<double>();
    if ((tl - o.conditional_mode(u, +1)).squaredNorm() <
        (tl - o.conditional_mode(u, -1)).squaredNorm())
      ++plus;
  }
  double frac = static_cast<double>(plus) / static_cast<double>(d.source.n());
  CHECK(frac > 0.45);
  CHECK(frac < 0.55);
}

TEST_CASE("synthetic target head is the stated affine image of the source head") {
  data::SyntheticSpec spec;
  spec.n_per_domain = 6000;
  spec.n_heldout = 10;
  spec.shift_scale = 1.3;
  spec.shift_offset = 0.9;
  spec.seed = 11;
  auto d = data::make_synthetic_multimodal(spec);
  int64_t dh = d.oracle.head();

  Eigen::VectorXd ms = Eigen::VectorXd::Zero(dh), mt = Eigen::VectorXd::Zero(dh);
  for (int64_t i = 0; i < d.source.n(); ++i) {
    ms += Eigen::Map<const Eigen::VectorXf>(d.source.X.ptr() + i * d.source.d(), dh).cast<double>();
    mt += Eigen::Map<const Eigen::VectorXf>(d.target.X.ptr() + i * d.target.d(), dh).cast<double>();
  }
  ms /= static_cast<double>(d.source.n());
  mt /= static_cast<double>(d.target.n());
  Eigen::VectorXd predicted = spec.shift_scale * ms + d.oracle.shift_vec;
  for (int64_t j = 0; j < dh; ++j) CHECK(std::abs(mt[j] - predicted[j]) < 0.12);
}

TEST_CASE("oracle posterior and mask geometry") {
  data::SyntheticSpec spec;
  spec.n_per_domain = 300;
  spec.n_heldout = 300;
  spec.seed = 5;
  auto d = data::make_synthetic_multimodal(spec);
  const auto& o = d.oracle;

  // posterior is a distribution
  Eigen::Map<const Eigen::VectorXf> row(d.source.X.ptr(), d.source.d());
  Eigen::VectorXd p = o.posterior_full(row.cast<double>(), false);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p.minCoeff() >= 0.0);

  // Bayes rule beats chance comfortably on held-out data from either domain
  double acc_s = o.bayes_accuracy(d.source_heldout, false, true);
  double acc_t = o.bayes_accuracy(d.target_heldout, true, true);
  CHECK(acc_s > 2.0 / spec.K);
  CHECK(acc_t > 2.0 / spec.K);

  // the mode pattern lives on the last half of the tail and the canonical
  // mask hides the whole tail
  int64_t support = (spec.tail + 1) / 2;
  for (int64_t i = 0; i < spec.tail - support; ++i) CHECK(o.mode_dir[i] == 0.0);
  CHECK(o.mode_dir.norm() == doctest::Approx(1.0).epsilon(1e-12));
  auto cm = o.canonical_mask();
  CHECK(cm.d2() == spec.tail);
  CHECK(cm.missing.front() == spec.dim - spec.tail);

  // labels decouple from the mode by default and split it when requested
  CHECK(o.label_of(1, +1) == 1);
  CHECK(o.label_of(1, -1) == 1);
  data::SyntheticSpec spec2 = spec;
  spec2.mode_affects_label = true;
  auto d2 = data::make_synthetic_multimodal(spec2);
  CHECK(d2.oracle.label_of(1, +1) == 3);
  CHECK(d2.oracle.label_of(1, -1) == 2);
  // with mode-dependent labels, seeing the tail strictly helps the oracle
  double full = d2.oracle.bayes_accuracy(d2.source_heldout, false, true);
  double head = d2.oracle.bayes_accuracy(d2.source_heldout, false, false);
  CHECK(full > head + 0.2);
}

TEST_CASE("balanced batches hold every class at quota") {
  std::vector<int> labels;
  for (int i = 0; i < 1280; ++i) labels.push_back(i % 10);
  // skew the data heavily toward class 0; batches must stay balanced
  for (int i = 0; i < 600; ++i) labels.push_back(0);
  data::BalancedBatcher bb(labels, 10, 128, 42);
  for (int step = 0; step < 30; ++step) {
    auto batch = bb.next_batch();
    REQUIRE(batch.size() == 128);
    std::vector<int> counts(10, 0);
    for (int64_t i : batch) counts[static_cast<size_t>(labels[static_cast<size_t>(i)])]++;
    for (int c = 0; c < 10; ++c) {
      CHECK(counts[static_cast<size_t>(c)] >= 12);
      CHECK(counts[static_cast<size_t>(c)] <= 13);
    }
  }
  CHECK(bb.batches_per_epoch() == 1880 / 128);
  CHECK_THROWS_AS(data::BalancedBatcher({0, 1}, 2, 1, 0), std::invalid_argument);
}

TEST_CASE("shuffled batches cover each epoch exactly once") {
  data::ShuffledBatcher sb(10, 5, 1);
  auto b1 = sb.next_batch();
  auto b2 = sb.next_batch();
  std::set<int64_t> seen(b1.begin(), b1.end());
  seen.insert(b2.begin(), b2.end());
  CHECK(seen.size() == 10);
}

TEST_CASE("idx image round trip") {
  data::IdxImages im;
  im.n = 3;
  im.channels = 1;
  im.height = 4;
  im.width = 5;
  im.pixels.resize(static_cast<size_t>(3 * 4 * 5));
  for (size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<uint8_t>(i * 7);
  data::write_idx_images("idx_rt.bin", im);
  auto back = data::read_idx_images("idx_rt.bin");
  CHECK(back.n == 3);
  CHECK(back.channels == 1);
  CHECK(back.height == 4);
  CHECK(back.pixels == im.pixels);
  std::remove("idx_rt.bin");

  im.channels = 3;
  im.pixels.resize(static_cast<size_t>(3 * 3 * 4 * 5));
  for (size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<uint8_t>(255 - i % 251);
  data::write_idx_images("idx_rt4.bin", im);
  auto back4 = data::read_idx_images("idx_rt4.bin");
  CHECK(back4.channels == 3);
  CHECK(back4.pixels == im.pixels);
  std::remove("idx_rt4.bin");

  std::vector<uint8_t> lab = {0, 9, 3};
  data::write_idx_labels("idx_lab.bin", lab);
  CHECK(data::read_idx_labels("idx_lab.bin") == lab);
  std::remove("idx_lab.bin");
}

TEST_CASE("tabular loader with sidecar mask") {
  {
    std::ofstream f("tab_test.csv");
    f << "age, income, label, clicks\n";
    f << "25, 1.5, 0, 7\n";
    f << "40, 2.25, 1, 3\n";
    f << "33, -0.5, 0, 0\n";
  }
  {
    std::ofstream f("tab_test.mask");
    f << "# partner-site features absent for prospects\n";
    f << "clicks\n";
  }
  auto tab = data::load_tabular("tab_test.csv");
  CHECK(tab.columns == std::vector<std::string>({"age", "income", "clicks"}));
  CHECK(tab.data.n() == 3);
  CHECK(tab.data.d() == 3);
  CHECK(tab.data.num_classes == 2);
  CHECK(tab.data.y == std::vector<int>({0, 1, 0}));
  CHECK(tab.data.X[1 * 3 + 1] == 2.25f);
  CHECK(tab.data.X[0 * 3 + 2] == 7.f);

  auto m = data::mask_from_sidecar("tab_test.mask", tab.columns);
  CHECK(m.missing == std::vector<int64_t>({2}));
  CHECK(m.d1() == 2);

  {
    std::ofstream f("tab_bad.mask");
    f << "nonexistent\n";
  }
  CHECK_THROWS_AS(data::mask_from_sidecar("tab_bad.mask", tab.columns), std::runtime_error);
  {
    std::ofstream f("tab_bad.csv");
    f << "a,label\n1,0\nx,1\n";
  }
  CHECK_THROWS_AS(data::load_tabular("tab_bad.csv"), std::runtime_error);
  std::remove("tab_test.csv");
  std::remove("tab_test.mask");
  std::remove("tab_bad.mask");
  std::remove("tab_bad.csv");
}

TEST_CASE("digit cache loader") {
  const char* env = std::getenv("DATA_DIR");
  std::string data_dir = env ? env : "/root/data";

  SUBCASE("missing cache raises a fetch error with the remedy") {
    try {
      (void)data::load_digits("usps", "train", data_dir, 1);
      FAIL("expected DataFetchError");
    } catch (const data::DataFetchError& e) {
      CHECK(std::string(e.what()).find("prepare-data") != std::string::npos);
    }
  }

  SUBCASE("staged cache loads, rescales and normalizes") {
    if (!std::filesystem::exists(data_dir + "/mnist/train-images-idx3-ubyte")) {
      MESSAGE("mnist cache not staged; skipping");
      return;
    }
    auto train = data::load_digits("mnist", "train", data_dir, 1);
    CHECK(train.n() == 60000);
    CHECK(train.channels == 1);
    CHECK(train.height == 32);
    CHECK(train.width == 32);
    CHECK(train.num_classes == 10);
    float lo = 1e9f, hi = -1e9f;
    for (int64_t i = 0; i < 32 * 32; ++i) {
      lo = std::min(lo, train.X[i]);
      hi = std::max(hi, train.X[i]);
    }
    CHECK(lo >= -1.0f);
    CHECK(hi <= 1.0f);
    CHECK(hi > 0.0f);  // strokes present after rescaling
    auto test = data::load_digits("mnist", "test", data_dir, 3);
    CHECK(test.n() == 10000);
    CHECK(test.channels == 3);
    // triplicated channels are identical
    for (int64_t i = 0; i < 32 * 32; ++i) {
      CHECK(test.X[i] == test.X[32 * 32 + i]);
      CHECK(test.X[i] == test.X[2 * 32 * 32 + i]);
    }
    for (int y : train.y) {
      CHECK(y >= 0);
      CHECK(y <= 9);
    }
  }
}
