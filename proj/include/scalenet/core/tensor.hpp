#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace scalenet {

/// Dense row-major tensor. Rank-3 tensors use HWC layout throughout the
/// library: index (row, col, channel) maps to ((row * w) + col) * c + channel.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;

  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(count(shape)), fill);
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  // HWC accessors (rank 3)
  T& at(int i, int j, int ch) { return v[static_cast<size_t>((static_cast<int64_t>(i) * shape[1] + j) * shape[2] + ch)]; }
  const T& at(int i, int j, int ch) const {
    return v[static_cast<size_t>((static_cast<int64_t>(i) * shape[1] + j) * shape[2] + ch)];
  }

  // rank-2 accessor
  T& at(int i, int j) { return v[static_cast<size_t>(static_cast<int64_t>(i) * shape[1] + j)]; }
  const T& at(int i, int j) const { return v[static_cast<size_t>(static_cast<int64_t>(i) * shape[1] + j)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

}  // namespace scalenet
