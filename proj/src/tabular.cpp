// SPDX-License-Identifier: Apache-2.0
#include "adimp/data/tabular.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adimp::data {
namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  return out;
}

}  // namespace

TabularData load_tabular(const std::string& csv_path, const std::string& label_column) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("load_tabular: cannot open " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_tabular: empty file " + csv_path);
  std::vector<std::string> header = split_csv(line);
  int64_t label_idx = -1;
  TabularData out;
  for (size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) {
      if (label_idx >= 0) throw std::runtime_error("load_tabular: duplicate label column");
      label_idx = static_cast<int64_t>(i);
    } else {
      out.columns.push_back(header[i]);
    }
  }
  int64_t d = static_cast<int64_t>(out.columns.size());
  if (d == 0) throw std::runtime_error("load_tabular: no feature columns in " + csv_path);

  std::vector<float> values;
  std::vector<int> labels;
  int64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_csv(line);
    if (cells.size() != header.size())
      throw std::runtime_error("load_tabular: line " + std::to_string(lineno) + " has " +
                               std::to_string(cells.size()) + " cells, header has " +
                               std::to_string(header.size()));
    for (size_t i = 0; i < cells.size(); ++i) {
      size_t pos = 0;
      double v = 0;
      try {
        v = std::stod(cells[i], &pos);
      } catch (const std::exception&) {
        pos = std::string::npos;
      }
      if (pos != cells[i].size())
        throw std::runtime_error("load_tabular: line " + std::to_string(lineno) +
                                 ": non-numeric cell '" + cells[i] + "'");
      if (static_cast<int64_t>(i) == label_idx) {
        labels.push_back(static_cast<int>(v));
      } else {
        values.push_back(static_cast<float>(v));
      }
    }
  }
  int64_t n = static_cast<int64_t>(values.size()) / d;
  out.data.name = csv_path;
  out.data.X = nn::Tensor<float>({n, d});
  std::copy(values.begin(), values.end(), out.data.X.data.begin());
  if (label_idx >= 0) {
    out.data.y = labels;
    int mx = -1;
    for (int y : labels) {
      if (y < 0) throw std::runtime_error("load_tabular: negative label");
      mx = std::max(mx, y);
    }
    out.data.num_classes = mx + 1;
  }
  return out;
}

FixedMask mask_from_sidecar(const std::string& sidecar_path,
                            const std::vector<std::string>& columns) {
  std::ifstream in(sidecar_path);
  if (!in) throw std::runtime_error("mask_from_sidecar: cannot open " + sidecar_path);
  std::vector<int64_t> missing;
  std::string line;
  while (std::getline(in, line)) {
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto it = std::find(columns.begin(), columns.end(), line);
    if (it == columns.end())
      throw std::runtime_error("mask_from_sidecar: unknown column '" + line + "'");
    missing.push_back(static_cast<int64_t>(it - columns.begin()));
  }
  std::sort(missing.begin(), missing.end());
  return FixedMask::from_missing(static_cast<int64_t>(columns.size()), missing);
}

}  // namespace adimp::data
