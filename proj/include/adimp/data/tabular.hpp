// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "adimp/data/dataset.hpp"
#include "adimp/data/mask.hpp"

namespace adimp::data {

struct TabularData {
  Dataset data;
  std::vector<std::string> columns;  // feature column names, in file order
};

// Delimited numeric format: a header row naming the columns, then one
// numeric record per line. The column named `label_column` (when present)
// supplies integer class labels; every other column is a feature.
TabularData load_tabular(const std::string& csv_path, const std::string& label_column = "label");

// Sidecar mask declaration: one missing column name per line, '#' comments
// allowed. Unknown names are an error.
FixedMask mask_from_sidecar(const std::string& sidecar_path,
                            const std::vector<std::string>& columns);

}  // namespace adimp::data
