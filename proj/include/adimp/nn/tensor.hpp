// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cassert>
#include <cstdint>
#include <new>
#include <vector>

namespace adimp::nn {

// 64-byte aligned storage. Eigen picks vectorized kernels based on operand
// alignment, so unaligned heap buffers make results depend on allocator
// history; pinning the alignment keeps repeated runs bit-identical within
// one process.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    if (n == 0) return nullptr;
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(alignment));
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U>&) const {
    return false;
  }
};

// Dense row-major tensor. Rank is dynamic; most of the code uses rank 1, 2
// (batch x features) or 4 (batch x channels x height x width).
template <typename T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T, AlignedAllocator<T>> data;

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using MapV = Eigen::Map<Vec>;
  using CMapV = Eigen::Map<const Vec>;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(count(shape)) {}
  Tensor(std::vector<int64_t> s, T fill_value)
      : shape(std::move(s)), data(count(shape), fill_value) {}

  static int64_t count(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  // Leading dimension, or 0 for an empty tensor.
  int64_t rows() const { return shape.empty() ? (numel() > 0 ? 1 : 0) : shape[0]; }
  int64_t cols() const { return rows() == 0 ? 0 : numel() / rows(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // 2-D Eigen view over the whole buffer.
  MapM mat() { return MapM(data.data(), rows(), cols()); }
  CMapM mat() const { return CMapM(data.data(), rows(), cols()); }
  MapM mat(int64_t r, int64_t c) {
    assert(r * c == numel());
    return MapM(data.data(), r, c);
  }
  CMapM mat(int64_t r, int64_t c) const {
    assert(r * c == numel());
    return CMapM(data.data(), r, c);
  }
  MapV vec() { return MapV(data.data(), numel()); }
  CMapV vec() const { return CMapV(data.data(), numel()); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

}  // namespace adimp::nn
