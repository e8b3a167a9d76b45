// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "adimp/data/dataset.hpp"

namespace adimp::data {

// Raised when a dataset cache is absent or unreadable. The message carries
// the expected path and how to populate it.
struct DataFetchError : std::runtime_error {
  explicit DataFetchError(const std::string& what) : std::runtime_error(what) {}
};

struct IdxImages {
  int64_t n = 0, channels = 1, height = 0, width = 0;
  std::vector<uint8_t> pixels;  // n * channels * height * width
};

IdxImages read_idx_images(const std::string& path);
std::vector<uint8_t> read_idx_labels(const std::string& path);
void write_idx_images(const std::string& path, const IdxImages& im);
void write_idx_labels(const std::string& path, const std::vector<uint8_t>& labels);

struct DigitDatasetInfo {
  std::string name;
  int64_t train_count = 0, test_count = 0;
  int64_t native_channels = 1;
  std::string train_images, train_labels, test_images, test_labels;  // file names in the cache dir
};

// The four digit benchmarks served from an IDX cache under
// <data_dir>/<name>/.
const DigitDatasetInfo& digit_dataset_info(const std::string& name);

// Loads a digit dataset split ("train" or "test"), rescales images to
// 32 x 32 with bilinear interpolation, normalizes pixels to [-1, 1] and,
// when out_channels is 3 and the source is grayscale, triplicates the
// channel. Throws DataFetchError when the cache files are missing.
Dataset load_digits(const std::string& name, const std::string& split, const std::string& data_dir,
                    int out_channels);

}  // namespace adimp::data
