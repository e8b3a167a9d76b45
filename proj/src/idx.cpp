// SPDX-License-Identifier: Apache-2.0
#include "adimp/data/idx.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace adimp::data {
namespace {

uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

IdxImages read_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFetchError("cannot open IDX image file: " + path);
  uint32_t magic = read_be32(in);
  IdxImages im;
  if (magic == 0x00000803u) {  // (n, rows, cols), single channel
    im.n = read_be32(in);
    im.height = read_be32(in);
    im.width = read_be32(in);
    im.channels = 1;
  } else if (magic == 0x00000804u) {  // (n, channels, rows, cols)
    im.n = read_be32(in);
    im.channels = read_be32(in);
    im.height = read_be32(in);
    im.width = read_be32(in);
  } else {
    throw DataFetchError("bad IDX image magic in " + path);
  }
  int64_t count = im.n * im.channels * im.height * im.width;
  im.pixels.resize(static_cast<size_t>(count));
  in.read(reinterpret_cast<char*>(im.pixels.data()), count);
  if (!in) throw DataFetchError("truncated IDX image file: " + path);
  return im;
}

std::vector<uint8_t> read_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFetchError("cannot open IDX label file: " + path);
  if (read_be32(in) != 0x00000801u) throw DataFetchError("bad IDX label magic in " + path);
  uint32_t n = read_be32(in);
  std::vector<uint8_t> labels(n);
  in.read(reinterpret_cast<char*>(labels.data()), n);
  if (!in) throw DataFetchError("truncated IDX label file: " + path);
  return labels;
}

void write_idx_images(const std::string& path, const IdxImages& im) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  if (im.channels == 1) {
    write_be32(out, 0x00000803u);
    write_be32(out, static_cast<uint32_t>(im.n));
    write_be32(out, static_cast<uint32_t>(im.height));
    write_be32(out, static_cast<uint32_t>(im.width));
  } else {
    write_be32(out, 0x00000804u);
    write_be32(out, static_cast<uint32_t>(im.n));
    write_be32(out, static_cast<uint32_t>(im.channels));
    write_be32(out, static_cast<uint32_t>(im.height));
    write_be32(out, static_cast<uint32_t>(im.width));
  }
  out.write(reinterpret_cast<const char*>(im.pixels.data()),
            static_cast<std::streamsize>(im.pixels.size()));
}

void write_idx_labels(const std::string& path, const std::vector<uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_be32(out, 0x00000801u);
  write_be32(out, static_cast<uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

const DigitDatasetInfo& digit_dataset_info(const std::string& name) {
  static const std::vector<DigitDatasetInfo> table = {
      {"mnist", 60000, 10000, 1, "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
       "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"},
      {"usps", 7438, 1860, 1, "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
       "test-images-idx3-ubyte", "test-labels-idx1-ubyte"},
      {"svhn", 73257, 26032, 3, "train-images-idx4-ubyte", "train-labels-idx1-ubyte",
       "test-images-idx4-ubyte", "test-labels-idx1-ubyte"},
      {"mnistm", 60000, 10000, 3, "train-images-idx4-ubyte", "train-labels-idx1-ubyte",
       "test-images-idx4-ubyte", "test-labels-idx1-ubyte"},
  };
  for (const auto& info : table)
    if (info.name == name) return info;
  throw std::invalid_argument("unknown digit dataset: " + name +
                              " (expected mnist, usps, svhn or mnistm)");
}

namespace {

// Bilinear resize of one channel plane.
void resize_plane(const uint8_t* src, int64_t sh, int64_t sw, float* dst, int64_t dh, int64_t dw) {
  for (int64_t r = 0; r < dh; ++r) {
    double sy = (static_cast<double>(r) + 0.5) * static_cast<double>(sh) / static_cast<double>(dh) - 0.5;
    int64_t y0 = static_cast<int64_t>(std::floor(sy));
    double fy = sy - static_cast<double>(y0);
    int64_t y1 = y0 + 1;
    y0 = std::max<int64_t>(0, std::min(sh - 1, y0));
    y1 = std::max<int64_t>(0, std::min(sh - 1, y1));
    for (int64_t c = 0; c < dw; ++c) {
      double sx = (static_cast<double>(c) + 0.5) * static_cast<double>(sw) / static_cast<double>(dw) - 0.5;
      int64_t x0 = static_cast<int64_t>(std::floor(sx));
      double fx = sx - static_cast<double>(x0);
      int64_t x1 = x0 + 1;
      x0 = std::max<int64_t>(0, std::min(sw - 1, x0));
      x1 = std::max<int64_t>(0, std::min(sw - 1, x1));
      double v = (1 - fy) * ((1 - fx) * src[y0 * sw + x0] + fx * src[y0 * sw + x1]) +
                 fy * ((1 - fx) * src[y1 * sw + x0] + fx * src[y1 * sw + x1]);
      dst[r * dw + c] = static_cast<float>(v);
    }
  }
}

}  // namespace

Dataset load_digits(const std::string& name, const std::string& split, const std::string& data_dir,
                    int out_channels) {
  const DigitDatasetInfo& info = digit_dataset_info(name);
  if (split != "train" && split != "test")
    throw std::invalid_argument("load_digits: split must be 'train' or 'test'");
  if (out_channels != 1 && out_channels != 3)
    throw std::invalid_argument("load_digits: out_channels must be 1 or 3");
  const std::string dir = data_dir + "/" + name + "/";
  const std::string img_path = dir + (split == "train" ? info.train_images : info.test_images);
  const std::string lbl_path = dir + (split == "train" ? info.train_labels : info.test_labels);
  IdxImages im;
  std::vector<uint8_t> labels;
  try {
    im = read_idx_images(img_path);
    labels = read_idx_labels(lbl_path);
  } catch (const DataFetchError& e) {
    throw DataFetchError(std::string(e.what()) +
                         "\nthe '" + name + "' cache is not populated under " + dir +
                         "\nrun: adimp prepare-data " + name + " --data-dir " + data_dir);
  }
  if (im.n != static_cast<int64_t>(labels.size()))
    throw DataFetchError("image/label count mismatch for " + name + " " + split);
  if (out_channels == 1 && im.channels != 1)
    throw std::invalid_argument("load_digits: cannot collapse color images to one channel");

  const int64_t side = 32;
  Dataset d;
  d.name = name + "-" + split;
  d.num_classes = 10;
  d.channels = out_channels;
  d.height = side;
  d.width = side;
  d.X = nn::Tensor<float>({im.n, static_cast<int64_t>(out_channels) * side * side});
  d.y.resize(static_cast<size_t>(im.n));

  std::vector<float> plane(static_cast<size_t>(side * side));
  for (int64_t i = 0; i < im.n; ++i) {
    d.y[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)];
    float* row = d.X.ptr() + i * d.X.cols();
    for (int64_t c = 0; c < im.channels; ++c) {
      const uint8_t* src = im.pixels.data() + (i * im.channels + c) * im.height * im.width;
      resize_plane(src, im.height, im.width, plane.data(), side, side);
      float* dst = row + c * side * side;
      for (int64_t k = 0; k < side * side; ++k)
        dst[k] = plane[static_cast<size_t>(k)] / 127.5f - 1.0f;
    }
    if (im.channels == 1 && out_channels == 3) {
      for (int64_t c = 1; c < 3; ++c)
        std::memcpy(row + c * side * side, row, sizeof(float) * side * side);
    }
  }
  return d;
}

}  // namespace adimp::data
