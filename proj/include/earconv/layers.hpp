#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "earconv/tensor.hpp"

namespace earconv {

enum class Padding { kValid, kSame };
enum class Mode { kTrain, kEval };

/// Output extent of a strided window along one axis.
/// valid: floor((n - k) / stride) + 1, requires k <= n.
/// same:  ceil(n / stride); the input is padded as needed, splitting any
///        odd padding so the extra cell goes to the bottom/right.
int conv_out_extent(int extent, int window, int stride, Padding padding);

/// Total padding along one axis for `same` placement (0 for `valid`).
int same_pad_total(int extent, int window, int stride);

/// Learnable state of a 2-D convolution.
/// weights: (kh, kw, c_in, c_out), bias: (c_out).
template <typename T>
struct ConvParams {
  TensorT<T> weights;
  TensorT<T> bias;
  int stride = 1;
  Padding padding = Padding::kValid;
};

template <typename T>
struct ConvGrads {
  TensorT<T> x;
  TensorT<T> weights;
  TensorT<T> bias;
};

/// Windowed-dot-product convolution over NHWC input (rank 3 or 4), im2col
/// fast path. The per-element reduction order is fixed, so results do not
/// depend on the thread count.
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& weights,
                          const TensorT<T>& bias, int stride, Padding padding);

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const ConvParams<T>& p) {
  return conv2d_forward(x, p.weights, p.bias, p.stride, p.padding);
}

/// Direct sliding-window convolution; the independent oracle the fast path
/// is tested against.
template <typename T>
TensorT<T> conv2d_forward_reference(const TensorT<T>& x,
                                    const TensorT<T>& weights,
                                    const TensorT<T>& bias, int stride,
                                    Padding padding);

template <typename T>
TensorT<T> conv2d_forward_reference(const TensorT<T>& x, const ConvParams<T>& p) {
  return conv2d_forward_reference(x, p.weights, p.bias, p.stride, p.padding);
}

/// Gradients of a scalar loss w.r.t. input, weights and bias, given the
/// gradient w.r.t. the convolution output.
template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& weights,
                             const TensorT<T>& bias, int stride, Padding padding,
                             const TensorT<T>& grad_out);

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const ConvParams<T>& p,
                             const TensorT<T>& grad_out) {
  return conv2d_backward(x, p.weights, p.bias, p.stride, p.padding, grad_out);
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x);

/// Passes grad_out where x > 0; the subgradient at exactly 0 is 0.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out);

struct PoolParams {
  int window = 2;
  int stride = 2;
  Padding padding = Padding::kValid;
};

/// Pool output plus the per-sample flat input index of each window winner.
/// Ties go to the first occurrence in row-major window order.
template <typename T>
struct MaxPoolResult {
  TensorT<T> out;
  std::vector<std::int32_t> argmax;
};

template <typename T>
MaxPoolResult<T> maxpool_forward(const TensorT<T>& x, const PoolParams& p);

/// Routes each output gradient to the recorded argmax position.
template <typename T>
TensorT<T> maxpool_backward(const Shape& input_shape,
                            const std::vector<std::int32_t>& argmax,
                            const TensorT<T>& grad_out);

/// Per-channel spatial mean: (h,w,c) -> (c) or (n,h,w,c) -> (n,c).
template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x);

template <typename T>
TensorT<T> global_avg_pool_backward(const Shape& input_shape,
                                    const TensorT<T>& grad_out);

/// Per-channel spatial max with argmax for the backward pass.
template <typename T>
MaxPoolResult<T> global_max_pool_with_argmax(const TensorT<T>& x);

template <typename T>
TensorT<T> global_max_pool(const TensorT<T>& x);

template <typename T>
TensorT<T> global_max_pool_backward(const Shape& input_shape,
                                    const std::vector<std::int32_t>& argmax,
                                    const TensorT<T>& grad_out);

/// Feature concatenation: (c1) + (c2) -> (c1+c2), or batched rank-2 rows.
/// a occupies indices [0, c1), b occupies [c1, c1+c2).
template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b);

/// Inverse of concat_channels; used by the backward pass and tests.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_channels(const TensorT<T>& x,
                                                 int c_first);

/// out = x w + b with x (n,f) or (f), w (f,k), b (k).
template <typename T>
TensorT<T> dense_forward(const TensorT<T>& x, const TensorT<T>& w,
                         const TensorT<T>& b);

template <typename T>
struct DenseGrads {
  TensorT<T> x;
  TensorT<T> weights;
  TensorT<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& x, const TensorT<T>& w,
                             const TensorT<T>& grad_out);

/// Row softmax with max subtraction; safe for large logits.
template <typename T>
TensorT<T> softmax(const TensorT<T>& logits);

template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& probs, const TensorT<T>& grad_out);

template <typename T>
struct DropoutResult {
  TensorT<T> out;
  std::vector<std::uint8_t> mask;  // 1 = kept, 0 = dropped
};

/// Train mode zeroes each element with probability `rate` and scales
/// survivors by 1/(1-rate); eval mode is the identity (mask all ones).
/// Requires 0 <= rate < 1.
template <typename T>
DropoutResult<T> dropout(const TensorT<T>& x, double rate, Mode mode, Rng& rng);

template <typename T>
TensorT<T> dropout_backward(const std::vector<std::uint8_t>& mask, double rate,
                            const TensorT<T>& grad_out);

}  // namespace earconv
