// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "adimp/data/batching.hpp"
#include "adimp/data/dataset.hpp"
#include "adimp/eval/metrics.hpp"
#include "adimp/losses/losses.hpp"
#include "adimp/nets/bundle.hpp"
#include "adimp/nn/modules.hpp"
#include "adimp/nn/tape.hpp"
#include "adimp/util/seeding.hpp"

namespace adimp::eval {

// Bound-term diagnostics. Every quantity here is a sample proxy computed
// with a small frozen-protocol classifier; none of them claims to estimate
// the underlying sup density ratios, which are not identifiable from data.
struct DiagnosticsReport {
  double source_risk = 0;            // held-out source error of the deployed classifier
  double proxy_divergence = 0;       // 2(1 - 2 eps) from a domain probe, in [0, 2]
  double imputation_mse_source = 0;  // held-out MSE between real and generated z2
  double imputation_disc_error = 0;  // held-out real-vs-generated probe error
  double transfer_proxy = 0;         // held-out domain probe error on (z1, zhat2)
  double lambda_proxy = 0;           // source error + pseudo-label disagreement
};

namespace detail {

// Fixed probe protocol: one hidden layer of width 100, ReLU, sigmoid output,
// Adam at 1e-3, 20 epochs of balanced 32+32 batches. Cheap and reproducible.
inline double probe_error(const nn::Tensor<float>& a_tr, const nn::Tensor<float>& b_tr,
                          const nn::Tensor<float>& a_te, const nn::Tensor<float>& b_te,
                          uint64_t seed) {
  if (a_tr.rows() < 1 || b_tr.rows() < 1 || a_te.rows() < 1 || b_te.rows() < 1)
    throw std::invalid_argument("probe_error: empty split");
  const int64_t d = a_tr.cols();
  if (b_tr.cols() != d || a_te.cols() != d || b_te.cols() != d)
    throw std::invalid_argument("probe_error: feature width mismatch");

  std::mt19937_64 rng(util::mix_seed(seed, 0xD1A6));
  nn::Linear<float> l1("probe.l1", d, 100, rng), l2("probe.l2", 100, 1, rng);
  std::vector<nn::Parameter<float>*> params;
  l1.params(params);
  l2.params(params);
  nn::Adam<float> adam;

  auto forward = [&](nn::Tape<float>& t, int x) {
    return t.sigmoid(l2.forward(t, t.relu(l1.forward(t, x))));
  };
  auto take = [&](const nn::Tensor<float>& src, const std::vector<int64_t>& rows) {
    nn::Tensor<float> out({static_cast<int64_t>(rows.size()), d});
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy_n(src.ptr() + rows[i] * d, d, out.ptr() + static_cast<int64_t>(i) * d);
    return out;
  };

  const int64_t half = 32;
  const int64_t steps =
      std::max<int64_t>(1, std::min(a_tr.rows(), b_tr.rows()) / half);
  data::ShuffledBatcher ba(a_tr.rows(), std::min(half, a_tr.rows()), util::mix_seed(seed, 1));
  data::ShuffledBatcher bb(b_tr.rows(), std::min(half, b_tr.rows()), util::mix_seed(seed, 2));
  for (int epoch = 0; epoch < 20; ++epoch) {
    for (int64_t s = 0; s < steps; ++s) {
      nn::Tape<float> t(util::mix_seed(seed, 0xE000 + static_cast<uint64_t>(epoch * 1000 + s)),
                        true);
      int pa = forward(t, t.input(take(a_tr, ba.next_batch())));
      int pb = forward(t, t.input(take(b_tr, bb.next_batch())));
      int loss = losses::disc_bce(t, pa, pb);
      nn::Adam<float>::zero_grad(params);
      t.backward(loss);
      adam.step(params, 1e-3);
    }
  }

  auto side_error = [&](const nn::Tensor<float>& x, bool positive) {
    nn::Tape<float> t(1, false);
    t.set_grad_enabled(false);
    const auto& p = t.value(forward(t, t.input(x)));
    int64_t wrong = 0;
    for (int64_t i = 0; i < p.numel(); ++i)
      wrong += positive ? (p[i] <= 0.5f) : (p[i] > 0.5f);
    return static_cast<double>(wrong) / static_cast<double>(p.numel());
  };
  // Balanced error so unequal split sizes cannot hide one side.
  return 0.5 * (side_error(a_te, true) + side_error(b_te, false));
}

inline void split_half(int64_t n, uint64_t seed, std::vector<int64_t>& train,
                       std::vector<int64_t>& held) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  int64_t cut = n / 2;
  train.assign(idx.begin(), idx.begin() + cut);
  held.assign(idx.begin() + cut, idx.end());
}

inline nn::Tensor<float> take_rows_of(const nn::Tensor<float>& src,
                                      const std::vector<int64_t>& rows) {
  nn::Tensor<float> out({static_cast<int64_t>(rows.size()), src.cols()});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(src.ptr() + rows[i] * src.cols(), src.cols(),
                out.ptr() + static_cast<int64_t>(i) * src.cols());
  return out;
}

}  // namespace detail

// Which latent view of a sample to extract (eval mode, batched).
enum class LatentView { z1, z2_generated, z2_real, pair_hat };

inline nn::Tensor<float> extract_latents(nets::Bundle<float>& b, const data::MaskedDataset& ds,
                                         const std::vector<int64_t>& rows, LatentView view,
                                         int64_t batch = 256) {
  if (view == LatentView::z2_real && !ds.x2_present)
    throw std::logic_error("extract_latents: real z2 requested from a structurally masked dataset");
  const int64_t width = view == LatentView::pair_hat ? 2 * b.arch.latent() : b.arch.latent();
  nn::Tensor<float> out({static_cast<int64_t>(rows.size()), width});
  for (size_t begin = 0; begin < rows.size(); begin += static_cast<size_t>(batch)) {
    size_t end = std::min(rows.size(), begin + static_cast<size_t>(batch));
    std::vector<int64_t> chunk(rows.begin() + static_cast<int64_t>(begin),
                               rows.begin() + static_cast<int64_t>(end));
    nn::Tape<float> t(1, false);
    t.set_grad_enabled(false);
    int id = -1;
    switch (view) {
      case LatentView::z1:
        id = b.encode1(t, t.input(b.input_block(ds, chunk, 1)));
        break;
      case LatentView::z2_generated:
        id = b.impute(t, b.encode1(t, t.input(b.input_block(ds, chunk, 1))));
        break;
      case LatentView::z2_real:
        id = b.encode2(t, t.input(b.input_block(ds, chunk, 2)));
        break;
      case LatentView::pair_hat: {
        auto [z1, z2] = b.encode_hat(t, t.input(b.input_block(ds, chunk, 1)));
        id = t.concat_cols(z1, z2);
        break;
      }
    }
    const auto& v = t.value(id);
    for (size_t i = begin; i < end; ++i)
      std::copy_n(v.ptr() + static_cast<int64_t>(i - begin) * width, width,
                  out.ptr() + static_cast<int64_t>(i) * width);
  }
  return out;
}

// Classifier-based distribution distance 2(1 - 2 eps), clipped to [0, 2].
// eps is the held-out balanced error of a freshly trained domain probe.
inline double proxy_divergence(const nn::Tensor<float>& latents_s,
                               const nn::Tensor<float>& latents_t, uint64_t seed) {
  if (latents_s.rows() < 2 || latents_t.rows() < 2)
    throw std::invalid_argument("proxy_divergence: need at least 2 samples per domain");
  std::vector<int64_t> s_tr, s_te, t_tr, t_te;
  detail::split_half(latents_s.rows(), util::mix_seed(seed, 0xA1), s_tr, s_te);
  detail::split_half(latents_t.rows(), util::mix_seed(seed, 0xA2), t_tr, t_te);
  double eps = detail::probe_error(detail::take_rows_of(latents_s, s_tr),
                                   detail::take_rows_of(latents_t, t_tr),
                                   detail::take_rows_of(latents_s, s_te),
                                   detail::take_rows_of(latents_t, t_te), seed);
  return std::clamp(2.0 * (1.0 - 2.0 * eps), 0.0, 2.0);
}

// Mean squared distance between two aligned latent sets (rows correspond).
inline double latent_mse(const nn::Tensor<float>& a, const nn::Tensor<float>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("latent_mse: shape mismatch");
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return a.rows() > 0 ? acc / static_cast<double>(a.rows()) : 0.0;
}

// Source error + disagreement between the classifier and the given target
// pseudo-labels, each on held-out halves. With self-labels the second term
// is zero by construction; pass labels from another snapshot to make it
// informative.
struct LambdaProxyReport {
  double source_error = 0;
  double pseudo_disagreement = 0;
  double value = 0;  // sum of the two, in [0, 2]
};

inline LambdaProxyReport lambda_proxy(nets::Bundle<float>& b, const data::MaskedDataset& src,
                                      const data::MaskedDataset& tgt, uint64_t seed,
                                      const std::vector<int>* pseudo_labels = nullptr) {
  LambdaProxyReport rep;
  std::vector<int64_t> tr, held;
  detail::split_half(src.n(), util::mix_seed(seed, 0xB1), tr, held);
  {
    auto probs = forward_probs(b, src, held, Encoding::hat);
    std::vector<int> y(held.size());
    for (size_t i = 0; i < held.size(); ++i) y[i] = src.y[static_cast<size_t>(held[i])];
    rep.source_error = 1.0 - accuracy(argmax_rows(probs), y);
  }
  {
    std::vector<int64_t> t_tr, t_held;
    detail::split_half(tgt.n(), util::mix_seed(seed, 0xB2), t_tr, t_held);
    auto probs = forward_probs(b, tgt, t_held, Encoding::hat);
    auto pred = argmax_rows(probs);
    std::vector<int> ref(t_held.size());
    for (size_t i = 0; i < t_held.size(); ++i) {
      int64_t row = t_held[i];
      ref[i] = pseudo_labels ? (*pseudo_labels)[static_cast<size_t>(row)] : pred[i];
    }
    rep.pseudo_disagreement = 1.0 - accuracy(pred, ref);
  }
  rep.value = rep.source_error + rep.pseudo_disagreement;
  return rep;
}

// Full diagnostic pass on a frozen bundle. The divergence and transfer
// fields come from one probe on the deployment-encoding pairs; the
// imputation fields compare real and generated z2 on source halves.
inline DiagnosticsReport diagnose(nets::Bundle<float>& b, const data::MaskedDataset& src,
                                  const data::MaskedDataset& tgt, uint64_t seed) {
  DiagnosticsReport rep;
  auto rows_s = all_rows(src.n());
  auto rows_t = all_rows(tgt.n());

  std::vector<int64_t> s_tr, s_held;
  detail::split_half(src.n(), util::mix_seed(seed, 0xC1), s_tr, s_held);

  {  // deployed source risk on the held half
    auto probs = forward_probs(b, src, s_held, Encoding::hat);
    std::vector<int> y(s_held.size());
    for (size_t i = 0; i < s_held.size(); ++i) y[i] = src.y[static_cast<size_t>(s_held[i])];
    rep.source_risk = 1.0 - accuracy(argmax_rows(probs), y);
  }

  {  // domain probe on (z1, generated z2): one eps, two reported views
    auto hat_s = extract_latents(b, src, rows_s, LatentView::pair_hat);
    auto hat_t = extract_latents(b, tgt, rows_t, LatentView::pair_hat);
    std::vector<int64_t> a_tr, a_te, b_tr, b_te;
    detail::split_half(hat_s.rows(), util::mix_seed(seed, 0xC2), a_tr, a_te);
    detail::split_half(hat_t.rows(), util::mix_seed(seed, 0xC3), b_tr, b_te);
    double eps = detail::probe_error(detail::take_rows_of(hat_s, a_tr),
                                     detail::take_rows_of(hat_t, b_tr),
                                     detail::take_rows_of(hat_s, a_te),
                                     detail::take_rows_of(hat_t, b_te),
                                     util::mix_seed(seed, 0xC4));
    rep.transfer_proxy = eps;
    rep.proxy_divergence = std::clamp(2.0 * (1.0 - 2.0 * eps), 0.0, 2.0);
  }

  if (src.x2_present) {  // real vs generated z2 on the source
    auto z2_real = extract_latents(b, src, rows_s, LatentView::z2_real);
    auto z2_gen = extract_latents(b, src, rows_s, LatentView::z2_generated);
    rep.imputation_mse_source = latent_mse(detail::take_rows_of(z2_real, s_held),
                                           detail::take_rows_of(z2_gen, s_held));
    rep.imputation_disc_error = detail::probe_error(
        detail::take_rows_of(z2_real, s_tr), detail::take_rows_of(z2_gen, s_tr),
        detail::take_rows_of(z2_real, s_held), detail::take_rows_of(z2_gen, s_held),
        util::mix_seed(seed, 0xC5));
  }

  rep.lambda_proxy = lambda_proxy(b, src, tgt, util::mix_seed(seed, 0xC6)).value;
  return rep;
}

// Largest pointwise ratio p/q over a grid of positive densities. Never less
// than 1 up to rounding, with equality exactly when p = q on the grid.
inline double sup_density_ratio(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size() || p.empty())
    throw std::invalid_argument("sup_density_ratio: mismatched grids");
  double best = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (q[i] <= 0 || p[i] < 0) throw std::invalid_argument("sup_density_ratio: invalid density");
    best = std::max(best, p[i] / q[i]);
  }
  return best;
}

// Mean distance from each generated z2 row to the image of its nearest
// admissible real-space mode (candidates encoded through the second
// extractor). `mode_candidates[i]` holds the candidate x2 vectors of sample
// i as rows, in the masked block's feature order.
inline double mean_nearest_mode_distance(nets::Bundle<float>& b, const data::MaskedDataset& ds,
                                         const std::vector<nn::Tensor<float>>& mode_candidates) {
  if (static_cast<int64_t>(mode_candidates.size()) != ds.n())
    throw std::invalid_argument("mean_nearest_mode_distance: one candidate set per sample");
  auto rows = all_rows(ds.n());
  auto gen = extract_latents(b, ds, rows, LatentView::z2_generated);

  double acc = 0;
  const int64_t width = b.arch.latent();
  for (int64_t i = 0; i < ds.n(); ++i) {
    const auto& cand = mode_candidates[static_cast<size_t>(i)];
    if (cand.rows() < 1 || cand.cols() != ds.mask.d2())
      throw std::invalid_argument("mean_nearest_mode_distance: bad candidate block");
    nn::Tape<float> t(1, false);
    t.set_grad_enabled(false);
    const auto& z = t.value(b.encode2(t, t.input(cand)));
    double best = std::numeric_limits<double>::infinity();
    for (int64_t m = 0; m < cand.rows(); ++m) {
      double d2 = 0;
      for (int64_t k = 0; k < width; ++k) {
        double d = static_cast<double>(gen[i * width + k]) - static_cast<double>(z[m * width + k]);
        d2 += d * d;
      }
      best = std::min(best, d2);
    }
    acc += std::sqrt(best);
  }
  return ds.n() > 0 ? acc / static_cast<double>(ds.n()) : 0.0;
}

}  // namespace adimp::eval
