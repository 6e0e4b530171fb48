#pragma once

#include <vector>

#include "asymcycle/rng.hpp"
#include "asymcycle/tensor.hpp"

namespace asymcycle {

/// History buffer of generated images shown to a discriminator. Below
/// capacity every fresh image is stored and returned as-is; at capacity each
/// fresh image is swapped, with probability 1/2, against a uniformly chosen
/// stored one (the stored image is returned and the fresh one takes its
/// slot), otherwise returned directly.
template <typename T>
class ImageBuffer {
 public:
  ImageBuffer() = default;
  explicit ImageBuffer(int capacity) : capacity_(capacity) {}

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(stored_.size()); }
  const std::vector<Tensor<T>>& stored() const { return stored_; }
  std::vector<Tensor<T>>& stored() { return stored_; }

  Tensor<T> query(const Tensor<T>& fresh, Rng& rng) {
    if (capacity_ <= 0) return fresh;
    if (static_cast<int>(stored_.size()) < capacity_) {
      stored_.push_back(fresh);
      return fresh;
    }
    if (rng.bernoulli(0.5)) {
      const auto idx = rng.uniform_int(0, static_cast<std::int64_t>(stored_.size()) - 1);
      Tensor<T> out = stored_[idx];
      stored_[idx] = fresh;
      return out;
    }
    return fresh;
  }

 private:
  int capacity_ = 0;
  std::vector<Tensor<T>> stored_;
};

}  // namespace asymcycle
