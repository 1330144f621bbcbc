#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

#include "earconv/error.hpp"

namespace earconv {

/// Extent list of a dense row-major tensor. Layout is NHWC: index
/// (n, h, w, c) maps to data[((n*H + h)*W + w)*C + c].
using Shape = std::vector<int>;

/// Product of extents. Throws ShapeError if any extent is < 1 or the
/// rank exceeds 4.
std::int64_t checked_numel(const Shape& shape);

/// Dense N-dimensional array of reals, rank <= 4. Training and inference
/// use TensorT<float>; TensorT<double> exists for gradient verification.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape, T fill = T{})
      : shape_(std::move(shape)),
        data_(static_cast<std::size_t>(checked_numel(shape_)), fill) {}

  static TensorT from_data(Shape shape, std::vector<T> values) {
    TensorT t;
    const std::int64_t n = checked_numel(shape);
    if (n != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("data length does not match shape product");
    }
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  // Row-major accessors. Rank is asserted, not checked, on hot paths.
  T& at(int i, int j) {
    assert(rank() == 2);
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  const T& at(int i, int j) const {
    return const_cast<TensorT*>(this)->at(i, j);
  }
  T& at(int h, int w, int c) {
    assert(rank() == 3);
    return data_[(static_cast<std::size_t>(h) * shape_[1] + w) * shape_[2] + c];
  }
  const T& at(int h, int w, int c) const {
    return const_cast<TensorT*>(this)->at(h, w, c);
  }
  T& at(int n, int h, int w, int c) {
    assert(rank() == 4);
    return data_[((static_cast<std::size_t>(n) * shape_[1] + h) * shape_[2] + w) *
                     shape_[3] +
                 c];
  }
  const T& at(int n, int h, int w, int c) const {
    return const_cast<TensorT*>(this)->at(n, h, w, c);
  }

  /// Same data, new shape; products must agree.
  TensorT reshaped(Shape new_shape) const {
    if (checked_numel(new_shape) != numel()) {
      throw ShapeError("reshape changes element count");
    }
    TensorT t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

/// Elementwise sum; shapes must match exactly.
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);

/// Deterministic 64-bit generator (SplitMix64). The same seed produces the
/// same draw sequence on every platform; all randomness in the library
/// (weight init, shuffling, dropout, augmentation) flows through this.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed), seed_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi). Throws RangeError unless lo < hi.
  double uniform(double lo, double hi);

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t state_;
  std::uint64_t seed_;
};

/// One SplitMix64 scramble of z; used to derive substream seeds.
std::uint64_t mix64(std::uint64_t z);

/// Derives a child seed from (parent seed, tag). Distinct tags give
/// decorrelated streams; used for per-epoch / per-record substreams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

/// Tensor with i.i.d. uniform draws in [lo, hi). Same seed, same tensor.
template <typename T>
TensorT<T> uniform_tensor(Rng& rng, const Shape& shape, T lo, T hi);

}  // namespace earconv
