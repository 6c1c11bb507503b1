#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace stad {

// 64-byte aligned storage for everything Eigen maps. A fixed alignment keeps
// the vectorized kernels on the same code path from run to run, which makes
// training trajectories bitwise reproducible.
template <typename T, std::size_t kAlign = 64>
struct AlignedAlloc {
  using value_type = T;
  template <class U>
  struct rebind {
    using other = AlignedAlloc<U, kAlign>;
  };
  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U, kAlign>&) {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, std::align_val_t(kAlign)); }
  template <class U>
  bool operator==(const AlignedAlloc<U, kAlign>&) const {
    return true;
  }
  template <class U>
  bool operator!=(const AlignedAlloc<U, kAlign>&) const {
    return false;
  }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAlloc<T>>;

// Dense row-major tensor. Shapes are small (<= 4 dims in practice), data is
// contiguous. This is deliberately minimal; layers index into raw storage.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  AlignedVec<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) { resize(std::move(s)); }
  Tensor(std::initializer_list<int> s) { resize(std::vector<int>(s)); }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor dim must be nonnegative");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  void resize(std::vector<int> s) {
    shape = std::move(s);
    data.assign(numel_of(shape), T(0));
  }

  std::size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

}  // namespace stad
