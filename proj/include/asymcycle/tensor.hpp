#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace asymcycle {

/// All numeric buffers are allocated on one fixed 64-byte alignment.
/// Vectorized kernels (Eigen's GEMM in particular) dispatch on pointer
/// alignment, so mixed-alignment allocations would make summation order --
/// and therefore the last ulp of results -- depend on heap history. Pinning
/// the alignment keeps repeated runs bitwise identical.
template <typename T, std::size_t Align = 64>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = ((n * sizeof(T) + Align - 1) / Align) * Align;
    void* p = std::aligned_alloc(Align, bytes == 0 ? Align : bytes);
    if (p == nullptr) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) noexcept { std::free(p); }

  template <typename U>
  bool operator==(const AlignedAllocator<U, Align>&) const {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense NCHW tensor. Batch dimension is carried everywhere even though the
/// reference training protocol uses batch size one.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(int n, int c, int h, int w)
      : shape_{n, c, h, w},
        data_(static_cast<std::size_t>(n) * c * h * w, T(0)) {}

  static Tensor full(int n, int c, int h, int w, T value) {
    Tensor t(n, c, h, w);
    t.fill(value);
    return t;
  }

  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  const std::array<int, 4>& shape() const { return shape_; }

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int in, int ic, int iy, int ix) {
    return data_[((static_cast<std::size_t>(in) * shape_[1] + ic) * shape_[2] + iy) * shape_[3] + ix];
  }
  const T& at(int in, int ic, int iy, int ix) const {
    return data_[((static_cast<std::size_t>(in) * shape_[1] + ic) * shape_[2] + iy) * shape_[3] + ix];
  }

  /// Pointer to the start of channel `ic` of sample `in`.
  T* plane(int in, int ic) {
    return data_.data() + (static_cast<std::size_t>(in) * shape_[1] + ic) * shape_[2] * shape_[3];
  }
  const T* plane(int in, int ic) const {
    return data_.data() + (static_cast<std::size_t>(in) * shape_[1] + ic) * shape_[2] * shape_[3];
  }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_[0], shape_[1], shape_[2], shape_[3]);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::array<int, 4> shape_{0, 0, 0, 0};
  AlignedVector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(where) + ": shape mismatch");
}

using Image = Tensor<float>;        // 1x1xHxW, intensities in [0,1]
using Mask = Tensor<std::uint8_t>;  // 1x1xHxW, {0,1}

/// Affine map [0,1] -> [-1,1] used to feed images to the networks.
template <typename T>
Tensor<T> normalize_to_model(const Tensor<T>& img01) {
  Tensor<T> out = img01;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(2) * out[i] - T(1);
  return out;
}

/// Inverse of normalize_to_model; tanh outputs land strictly inside (0,1).
template <typename T>
Tensor<T> denormalize_from_model(const Tensor<T>& img11) {
  Tensor<T> out = img11;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] + T(1)) / T(2);
  return out;
}

}  // namespace asymcycle
