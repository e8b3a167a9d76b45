// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adimp/data/dataset.hpp"
#include "adimp/eval/diagnostics.hpp"
#include "adimp/nets/bundle.hpp"
#include "adimp/util/format.hpp"

namespace adimp::eval {

// Deterministic variance-maximizing linear projection to 2D: the top two
// eigenvectors of the pooled covariance, each oriented so its largest-
// magnitude entry is positive. Returns an n x 2 matrix; axis 1 carries at
// least as much variance as axis 2.
inline Eigen::MatrixXd project2d(const Eigen::MatrixXd& pooled) {
  if (pooled.rows() < 2) throw std::invalid_argument("project2d: need at least 2 samples");
  const Eigen::RowVectorXd mean = pooled.colwise().mean();
  Eigen::MatrixXd centered = pooled.rowwise() - mean;
  Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(pooled.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("project2d: eigensolver failed");
  // Eigenvalues come back ascending; take the last two columns.
  const int64_t d = cov.rows();
  Eigen::MatrixXd basis(d, 2);
  for (int axis = 0; axis < 2; ++axis) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - axis);
    int64_t arg = 0;
    for (int64_t i = 1; i < d; ++i)
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0) v = -v;
    basis.col(axis) = v;
  }
  return centered * basis;
}

struct EmbeddingSource {
  const data::MaskedDataset* data = nullptr;
  std::string domain;  // free-form tag written per row
};

// Writes one CSV row per sample: id, domain, label (-1 when unlabeled), and
// the two projection coordinates of its deployment-encoding latents.
inline void export_embeddings(nets::Bundle<float>& b, const std::vector<EmbeddingSource>& sources,
                              const std::string& out_path) {
  int64_t total = 0;
  for (const auto& s : sources) {
    if (!s.data) throw std::invalid_argument("export_embeddings: null dataset");
    total += s.data->n();
  }
  if (total < 2) throw std::invalid_argument("export_embeddings: need at least 2 samples");

  Eigen::MatrixXd pooled;
  {
    int64_t width = 0, at = 0;
    for (const auto& s : sources) {
      auto rows = all_rows(s.data->n());
      auto z = extract_latents(b, *s.data, rows, LatentView::pair_hat);
      if (pooled.rows() == 0) {
        width = z.cols();
        pooled.resize(total, width);
      }
      for (int64_t i = 0; i < z.rows(); ++i)
        for (int64_t k = 0; k < width; ++k)
          pooled(at + i, k) = static_cast<double>(z[i * width + k]);
      at += z.rows();
    }
  }
  Eigen::MatrixXd proj = project2d(pooled);

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("export_embeddings: cannot write " + out_path);
  out << "id,domain,label,axis1,axis2\n";
  int64_t at = 0;
  for (const auto& s : sources) {
    for (int64_t i = 0; i < s.data->n(); ++i, ++at) {
      int label = s.data->y.empty() ? -1 : s.data->y[static_cast<size_t>(i)];
      out << i << ',' << s.domain << ',' << label << ',' << util::format_double(proj(at, 0))
          << ',' << util::format_double(proj(at, 1)) << '\n';
    }
  }
}

}  // namespace adimp::eval
