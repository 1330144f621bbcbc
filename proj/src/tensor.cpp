#include "earconv/tensor.hpp"

#include <cmath>
#include <string>

namespace earconv {

std::int64_t checked_numel(const Shape& shape) {
  if (shape.empty()) {
    throw ShapeError("empty shape");
  }
  if (shape.size() > 4) {
    throw ShapeError("rank " + std::to_string(shape.size()) +
                     " exceeds supported maximum of 4");
  }
  std::int64_t n = 1;
  for (int e : shape) {
    if (e < 1) {
      throw ShapeError("shape extent " + std::to_string(e) +
                       " must be at least 1");
    }
    n *= e;
  }
  return n;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("elementwise add requires identical shapes");
  }
  TensorT<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    po[i] = pa[i] + pb[i];
  }
  return out;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo < hi)) {
    throw RangeError("uniform range requires lo < hi");
  }
  return lo + next_double() * (hi - lo);
}

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(tag));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix_seed(mix_seed(seed, a), b);
}

template <typename T>
TensorT<T> uniform_tensor(Rng& rng, const Shape& shape, T lo, T hi) {
  if (!(lo < hi)) {
    throw RangeError("uniform range requires lo < hi");
  }
  TensorT<T> out(shape);
  T* p = out.data();
  const std::int64_t n = out.numel();
  const double dlo = static_cast<double>(lo);
  const double span = static_cast<double>(hi) - dlo;
  for (std::int64_t i = 0; i < n; ++i) {
    T v = static_cast<T>(dlo + rng.next_double() * span);
    // Rounding at the cast can land exactly on hi; keep the range half-open.
    if (!(v < hi)) {
      v = std::nextafter(hi, lo);
    }
    p[i] = v;
  }
  return out;
}

template class TensorT<float>;
template class TensorT<double>;
template TensorT<float> add(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> add(const TensorT<double>&, const TensorT<double>&);
template TensorT<float> uniform_tensor(Rng&, const Shape&, float, float);
template TensorT<double> uniform_tensor(Rng&, const Shape&, double, double);

}  // namespace earconv
