#include "earconv/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "parallel.hpp"

namespace earconv {

int conv_out_extent(int extent, int window, int stride, Padding padding) {
  if (extent < 1 || window < 1 || stride < 1) {
    throw ShapeError("extent, window and stride must all be >= 1");
  }
  if (padding == Padding::kValid) {
    if (window > extent) {
      throw ShapeError("window " + std::to_string(window) +
                       " exceeds input extent " + std::to_string(extent) +
                       " under valid placement");
    }
    return (extent - window) / stride + 1;
  }
  return (extent + stride - 1) / stride;
}

int same_pad_total(int extent, int window, int stride) {
  const int out = (extent + stride - 1) / stride;
  const int need = (out - 1) * stride + window - extent;
  return need > 0 ? need : 0;
}

namespace {

struct Dims4 {
  int n, h, w, c;
};

// Accepts (h,w,c) or (n,h,w,c); rank-3 inputs are treated as batch 1.
Dims4 as_batched(const Shape& s, const char* what) {
  if (s.size() == 3) {
    return {1, s[0], s[1], s[2]};
  }
  if (s.size() == 4) {
    return {s[0], s[1], s[2], s[3]};
  }
  throw ShapeError(std::string(what) + " expects a rank-3 or rank-4 tensor");
}

Shape like_rank(const Shape& input, int n, int h, int w, int c) {
  if (input.size() == 3) {
    return {h, w, c};
  }
  return {n, h, w, c};
}

struct ConvGeom {
  int kh, kw, c_in, c_out;
  int out_h, out_w;
  int pad_top, pad_left;
};

template <typename T>
ConvGeom resolve_conv(const Dims4& x, const TensorT<T>& weights,
                      const TensorT<T>& bias, int stride, Padding padding) {
  if (weights.rank() != 4) {
    throw ShapeError("conv weights must have shape (kh, kw, c_in, c_out)");
  }
  ConvGeom g;
  g.kh = weights.extent(0);
  g.kw = weights.extent(1);
  g.c_in = weights.extent(2);
  g.c_out = weights.extent(3);
  if (bias.rank() != 1 || bias.extent(0) != g.c_out) {
    throw ShapeError("conv bias must have shape (c_out)");
  }
  if (x.c != g.c_in) {
    throw ShapeError("conv input has " + std::to_string(x.c) +
                     " channels, weights expect " + std::to_string(g.c_in));
  }
  g.out_h = conv_out_extent(x.h, g.kh, stride, padding);
  g.out_w = conv_out_extent(x.w, g.kw, stride, padding);
  if (padding == Padding::kSame) {
    g.pad_top = same_pad_total(x.h, g.kh, stride) / 2;
    g.pad_left = same_pad_total(x.w, g.kw, stride) / 2;
  } else {
    g.pad_top = 0;
    g.pad_left = 0;
  }
  return g;
}

// Writes the im2col rows for output rows [oh0, oh1) of one sample.
// Row layout: k = ((dy*kw + dx)*c_in + ci), matching the flattened weights.
template <typename T>
void fill_patch_rows(const T* x, int h, int w, int c, int oh0, int oh1,
                     const ConvGeom& g, int stride, T* patches) {
  const std::int64_t seg = static_cast<std::int64_t>(g.kw) * c;
  T* row = patches;
  for (int oh = oh0; oh < oh1; ++oh) {
    const int iy0 = oh * stride - g.pad_top;
    for (int ow = 0; ow < g.out_w; ++ow) {
      const int ix0 = ow * stride - g.pad_left;
      T* dst = row;
      for (int dy = 0; dy < g.kh; ++dy) {
        const int iy = iy0 + dy;
        if (iy < 0 || iy >= h) {
          std::fill(dst, dst + seg, T{});
          dst += seg;
          continue;
        }
        const T* src_row = x + (static_cast<std::int64_t>(iy) * w) * c;
        for (int dx = 0; dx < g.kw; ++dx) {
          const int ix = ix0 + dx;
          if (ix < 0 || ix >= w) {
            std::fill(dst, dst + c, T{});
          } else {
            std::memcpy(dst, src_row + static_cast<std::int64_t>(ix) * c,
                        sizeof(T) * static_cast<std::size_t>(c));
          }
          dst += c;
        }
      }
      row += static_cast<std::int64_t>(g.kh) * seg;
    }
  }
}

// C[M,N] += A[M,K] B[K,N], all row-major. Parallel over rows of C; the
// k-order per output element is fixed regardless of thread count.
template <typename T>
void gemm_accumulate(const T* a, const T* b, T* c, std::int64_t m,
                     std::int64_t k_dim, std::int64_t n) {
  parallel_for(m, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t i = r0; i < r1; ++i) {
      const T* ai = a + i * k_dim;
      T* ci = c + i * n;
      for (std::int64_t k = 0; k < k_dim; ++k) {
        const T av = ai[k];
        const T* bk = b + k * n;
        for (std::int64_t j = 0; j < n; ++j) {
          ci[j] += av * bk[j];
        }
      }
    }
  });
}

// Rows of output per im2col block, sized to keep the patch buffer modest.
int block_rows(const ConvGeom& g, std::size_t elem_size) {
  const std::int64_t row_bytes = static_cast<std::int64_t>(g.out_w) * g.kh *
                                 g.kw * g.c_in *
                                 static_cast<std::int64_t>(elem_size);
  const std::int64_t budget = 8ll << 20;
  const std::int64_t rows = row_bytes > 0 ? budget / row_bytes : 1;
  return static_cast<int>(std::clamp<std::int64_t>(rows, 1, g.out_h));
}

}  // namespace

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& weights,
                          const TensorT<T>& bias, int stride, Padding padding) {
  const Dims4 d = as_batched(x.shape(), "conv2d");
  const ConvGeom g = resolve_conv(d, weights, bias, stride, padding);
  TensorT<T> out(like_rank(x.shape(), d.n, g.out_h, g.out_w, g.c_out));

  const std::int64_t k_dim = static_cast<std::int64_t>(g.kh) * g.kw * g.c_in;
  const std::int64_t sample_in = static_cast<std::int64_t>(d.h) * d.w * d.c;
  const std::int64_t sample_out =
      static_cast<std::int64_t>(g.out_h) * g.out_w * g.c_out;
  const int blk = block_rows(g, sizeof(T));
  std::vector<T> patches(static_cast<std::size_t>(blk) * g.out_w * k_dim);
  const T* bias_ptr = bias.data();

  for (int n = 0; n < d.n; ++n) {
    const T* xs = x.data() + n * sample_in;
    T* os = out.data() + n * sample_out;
    for (int oh0 = 0; oh0 < g.out_h; oh0 += blk) {
      const int oh1 = std::min(g.out_h, oh0 + blk);
      const std::int64_t rows = static_cast<std::int64_t>(oh1 - oh0) * g.out_w;
      fill_patch_rows(xs, d.h, d.w, d.c, oh0, oh1, g, stride, patches.data());
      T* block = os + static_cast<std::int64_t>(oh0) * g.out_w * g.c_out;
      for (std::int64_t r = 0; r < rows; ++r) {
        std::memcpy(block + r * g.c_out, bias_ptr,
                    sizeof(T) * static_cast<std::size_t>(g.c_out));
      }
      gemm_accumulate(patches.data(), weights.data(), block, rows, k_dim,
                      g.c_out);
    }
  }
  return out;
}

template <typename T>
TensorT<T> conv2d_forward_reference(const TensorT<T>& x,
                                    const TensorT<T>& weights,
                                    const TensorT<T>& bias, int stride,
                                    Padding padding) {
  const Dims4 d = as_batched(x.shape(), "conv2d");
  const ConvGeom g = resolve_conv(d, weights, bias, stride, padding);
  TensorT<T> out(like_rank(x.shape(), d.n, g.out_h, g.out_w, g.c_out));

  const T* w = weights.data();
  for (int n = 0; n < d.n; ++n) {
    const T* xs = x.data() + static_cast<std::int64_t>(n) * d.h * d.w * d.c;
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        for (int oc = 0; oc < g.c_out; ++oc) {
          T acc = bias[oc];
          for (int dy = 0; dy < g.kh; ++dy) {
            const int iy = oh * stride - g.pad_top + dy;
            if (iy < 0 || iy >= d.h) {
              continue;
            }
            for (int dx = 0; dx < g.kw; ++dx) {
              const int ix = ow * stride - g.pad_left + dx;
              if (ix < 0 || ix >= d.w) {
                continue;
              }
              for (int ci = 0; ci < d.c; ++ci) {
                acc += xs[(static_cast<std::int64_t>(iy) * d.w + ix) * d.c + ci] *
                       w[((static_cast<std::int64_t>(dy) * g.kw + dx) * d.c + ci) *
                             g.c_out +
                         oc];
              }
            }
          }
          out[((static_cast<std::int64_t>(n) * g.out_h + oh) * g.out_w + ow) *
                  g.c_out +
              oc] = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& x, const TensorT<T>& weights,
                             const TensorT<T>& bias, int stride, Padding padding,
                             const TensorT<T>& grad_out) {
  const Dims4 d = as_batched(x.shape(), "conv2d");
  const ConvGeom g = resolve_conv(d, weights, bias, stride, padding);
  const Shape expected = like_rank(x.shape(), d.n, g.out_h, g.out_w, g.c_out);
  if (grad_out.shape() != expected) {
    throw ShapeError("grad_out shape does not match the conv output shape");
  }

  ConvGrads<T> grads;
  grads.x = TensorT<T>(x.shape());
  grads.weights = TensorT<T>(weights.shape());
  grads.bias = TensorT<T>(bias.shape());

  // Bias gradient: plain sum of grad_out over all positions per channel.
  {
    const T* go = grad_out.data();
    T* gb = grads.bias.data();
    const std::int64_t positions = grad_out.numel() / g.c_out;
    for (std::int64_t r = 0; r < positions; ++r) {
      for (int oc = 0; oc < g.c_out; ++oc) {
        gb[oc] += go[r * g.c_out + oc];
      }
    }
  }

  const std::int64_t k_dim = static_cast<std::int64_t>(g.kh) * g.kw * g.c_in;
  const std::int64_t sample_in = static_cast<std::int64_t>(d.h) * d.w * d.c;
  const std::int64_t sample_out =
      static_cast<std::int64_t>(g.out_h) * g.out_w * g.c_out;
  const int blk = block_rows(g, sizeof(T));
  const std::int64_t max_rows = static_cast<std::int64_t>(blk) * g.out_w;

  std::vector<T> patches(static_cast<std::size_t>(max_rows * k_dim));
  std::vector<T> patches_t(patches.size());
  std::vector<T> dcols(patches.size());
  // Weights transposed once: wt[oc][k] for the input-gradient product.
  std::vector<T> wt(static_cast<std::size_t>(k_dim) * g.c_out);
  {
    const T* w = weights.data();
    for (std::int64_t k = 0; k < k_dim; ++k) {
      for (int oc = 0; oc < g.c_out; ++oc) {
        wt[static_cast<std::size_t>(oc) * k_dim + k] = w[k * g.c_out + oc];
      }
    }
  }

  for (int n = 0; n < d.n; ++n) {
    const T* xs = x.data() + n * sample_in;
    T* gxs = grads.x.data() + n * sample_in;
    const T* gos = grad_out.data() + n * sample_out;
    for (int oh0 = 0; oh0 < g.out_h; oh0 += blk) {
      const int oh1 = std::min(g.out_h, oh0 + blk);
      const std::int64_t rows = static_cast<std::int64_t>(oh1 - oh0) * g.out_w;
      const T* gblock = gos + static_cast<std::int64_t>(oh0) * g.out_w * g.c_out;

      fill_patch_rows(xs, d.h, d.w, d.c, oh0, oh1, g, stride, patches.data());
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t k = 0; k < k_dim; ++k) {
          patches_t[static_cast<std::size_t>(k) * rows + r] =
              patches[static_cast<std::size_t>(r) * k_dim + k];
        }
      }
      // grad_w += patches^T grad_block, parallel over the K rows of grad_w.
      T* gw = grads.weights.data();
      parallel_for(k_dim, [&](std::int64_t k0, std::int64_t k1) {
        for (std::int64_t k = k0; k < k1; ++k) {
          const T* pt = patches_t.data() + k * rows;
          T* gw_row = gw + k * g.c_out;
          for (std::int64_t r = 0; r < rows; ++r) {
            const T pv = pt[r];
            const T* grow = gblock + r * g.c_out;
            for (int oc = 0; oc < g.c_out; ++oc) {
              gw_row[oc] += pv * grow[oc];
            }
          }
        }
      });
      // dcols = grad_block W^T, then scatter back through the patch map.
      std::fill(dcols.begin(), dcols.begin() + rows * k_dim, T{});
      parallel_for(rows, [&](std::int64_t r0, std::int64_t r1) {
        for (std::int64_t r = r0; r < r1; ++r) {
          const T* grow = gblock + r * g.c_out;
          T* drow = dcols.data() + r * k_dim;
          for (int oc = 0; oc < g.c_out; ++oc) {
            const T gv = grow[oc];
            const T* wrow = wt.data() + static_cast<std::int64_t>(oc) * k_dim;
            for (std::int64_t k = 0; k < k_dim; ++k) {
              drow[k] += gv * wrow[k];
            }
          }
        }
      });
      const T* drow = dcols.data();
      for (int oh = oh0; oh < oh1; ++oh) {
        const int iy0 = oh * stride - g.pad_top;
        for (int ow = 0; ow < g.out_w; ++ow, drow += k_dim) {
          const int ix0 = ow * stride - g.pad_left;
          const T* seg = drow;
          for (int dy = 0; dy < g.kh; ++dy) {
            const int iy = iy0 + dy;
            if (iy < 0 || iy >= d.h) {
              seg += static_cast<std::int64_t>(g.kw) * d.c;
              continue;
            }
            for (int dx = 0; dx < g.kw; ++dx, seg += d.c) {
              const int ix = ix0 + dx;
              if (ix < 0 || ix >= d.w) {
                continue;
              }
              T* gx = gxs + (static_cast<std::int64_t>(iy) * d.w + ix) * d.c;
              for (int ci = 0; ci < d.c; ++ci) {
                gx[ci] += seg[ci];
              }
            }
          }
        }
      }
    }
  }
  return grads;
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    po[i] = px[i] > T{} ? px[i] : T{};
  }
  return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out) {
  if (!x.same_shape(grad_out)) {
    throw ShapeError("relu backward requires matching shapes");
  }
  TensorT<T> out(x.shape());
  const T* px = x.data();
  const T* pg = grad_out.data();
  T* po = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    po[i] = px[i] > T{} ? pg[i] : T{};
  }
  return out;
}

template <typename T>
MaxPoolResult<T> maxpool_forward(const TensorT<T>& x, const PoolParams& p) {
  const Dims4 d = as_batched(x.shape(), "maxpool");
  const int out_h = conv_out_extent(d.h, p.window, p.stride, p.padding);
  const int out_w = conv_out_extent(d.w, p.window, p.stride, p.padding);
  const int pad_top =
      p.padding == Padding::kSame ? same_pad_total(d.h, p.window, p.stride) / 2 : 0;
  const int pad_left =
      p.padding == Padding::kSame ? same_pad_total(d.w, p.window, p.stride) / 2 : 0;

  MaxPoolResult<T> res;
  res.out = TensorT<T>(like_rank(x.shape(), d.n, out_h, out_w, d.c));
  res.argmax.assign(static_cast<std::size_t>(res.out.numel()), -1);

  const std::int64_t sample_in = static_cast<std::int64_t>(d.h) * d.w * d.c;
  std::int64_t oi = 0;
  for (int n = 0; n < d.n; ++n) {
    const T* xs = x.data() + n * sample_in;
    for (int oh = 0; oh < out_h; ++oh) {
      for (int ow = 0; ow < out_w; ++ow) {
        const int iy0 = oh * p.stride - pad_top;
        const int ix0 = ow * p.stride - pad_left;
        for (int c = 0; c < d.c; ++c, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t arg = -1;
          for (int dy = 0; dy < p.window; ++dy) {
            const int iy = iy0 + dy;
            if (iy < 0 || iy >= d.h) {
              continue;
            }
            for (int dx = 0; dx < p.window; ++dx) {
              const int ix = ix0 + dx;
              if (ix < 0 || ix >= d.w) {
                continue;
              }
              const std::int64_t idx =
                  (static_cast<std::int64_t>(iy) * d.w + ix) * d.c + c;
              // First occurrence in row-major window order wins ties.
              if (xs[idx] > best) {
                best = xs[idx];
                arg = static_cast<std::int32_t>(idx);
              }
            }
          }
          res.out[oi] = best;
          res.argmax[static_cast<std::size_t>(oi)] = arg;
        }
      }
    }
  }
  return res;
}

template <typename T>
TensorT<T> maxpool_backward(const Shape& input_shape,
                            const std::vector<std::int32_t>& argmax,
                            const TensorT<T>& grad_out) {
  const Dims4 d = as_batched(input_shape, "maxpool backward");
  if (static_cast<std::int64_t>(argmax.size()) != grad_out.numel()) {
    throw ShapeError("argmax map does not match grad_out");
  }
  TensorT<T> gx(input_shape);
  const std::int64_t sample_in = static_cast<std::int64_t>(d.h) * d.w * d.c;
  const std::int64_t sample_out = grad_out.numel() / d.n;
  const T* pg = grad_out.data();
  T* px = gx.data();
  for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
    const std::int64_t n = i / sample_out;
    px[n * sample_in + argmax[static_cast<std::size_t>(i)]] += pg[i];
  }
  return gx;
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  const Dims4 d = as_batched(x.shape(), "global_avg_pool");
  Shape out_shape = x.rank() == 3 ? Shape{d.c} : Shape{d.n, d.c};
  TensorT<T> out(out_shape);
  const std::int64_t hw = static_cast<std::int64_t>(d.h) * d.w;
  for (int n = 0; n < d.n; ++n) {
    const T* xs = x.data() + static_cast<std::int64_t>(n) * hw * d.c;
    for (int c = 0; c < d.c; ++c) {
      double sum = 0.0;
      for (std::int64_t i = 0; i < hw; ++i) {
        sum += static_cast<double>(xs[i * d.c + c]);
      }
      out[static_cast<std::int64_t>(n) * d.c + c] =
          static_cast<T>(sum / static_cast<double>(hw));
    }
  }
  return out;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const Shape& input_shape,
                                    const TensorT<T>& grad_out) {
  const Dims4 d = as_batched(input_shape, "global_avg_pool backward");
  if (grad_out.numel() != static_cast<std::int64_t>(d.n) * d.c) {
    throw ShapeError("grad_out does not match pooled shape");
  }
  TensorT<T> gx(input_shape);
  const std::int64_t hw = static_cast<std::int64_t>(d.h) * d.w;
  const T scale = static_cast<T>(1.0 / static_cast<double>(hw));
  for (int n = 0; n < d.n; ++n) {
    T* gs = gx.data() + static_cast<std::int64_t>(n) * hw * d.c;
    for (std::int64_t i = 0; i < hw; ++i) {
      for (int c = 0; c < d.c; ++c) {
        gs[i * d.c + c] = grad_out[static_cast<std::int64_t>(n) * d.c + c] * scale;
      }
    }
  }
  return gx;
}

template <typename T>
MaxPoolResult<T> global_max_pool_with_argmax(const TensorT<T>& x) {
  const Dims4 d = as_batched(x.shape(), "global_max_pool");
  Shape out_shape = x.rank() == 3 ? Shape{d.c} : Shape{d.n, d.c};
  MaxPoolResult<T> res;
  res.out = TensorT<T>(out_shape);
  res.argmax.assign(static_cast<std::size_t>(res.out.numel()), -1);
  const std::int64_t hw = static_cast<std::int64_t>(d.h) * d.w;
  for (int n = 0; n < d.n; ++n) {
    const T* xs = x.data() + static_cast<std::int64_t>(n) * hw * d.c;
    for (int c = 0; c < d.c; ++c) {
      T best = -std::numeric_limits<T>::infinity();
      std::int32_t arg = -1;
      for (std::int64_t i = 0; i < hw; ++i) {
        const T v = xs[i * d.c + c];
        if (v > best) {
          best = v;
          arg = static_cast<std::int32_t>(i * d.c + c);
        }
      }
      res.out[static_cast<std::int64_t>(n) * d.c + c] = best;
      res.argmax[static_cast<std::size_t>(n) * d.c + c] = arg;
    }
  }
  return res;
}

template <typename T>
TensorT<T> global_max_pool(const TensorT<T>& x) {
  return global_max_pool_with_argmax(x).out;
}

template <typename T>
TensorT<T> global_max_pool_backward(const Shape& input_shape,
                                    const std::vector<std::int32_t>& argmax,
                                    const TensorT<T>& grad_out) {
  return maxpool_backward(input_shape, argmax, grad_out);
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != b.rank() || a.rank() < 1 || a.rank() > 2) {
    throw ShapeError("concat expects two rank-1 or two rank-2 tensors");
  }
  const int n = a.rank() == 2 ? a.extent(0) : 1;
  if (a.rank() == 2 && b.extent(0) != n) {
    throw ShapeError("concat batch extents differ");
  }
  const int c1 = a.extent(a.rank() - 1);
  const int c2 = b.extent(b.rank() - 1);
  Shape out_shape = a.rank() == 1 ? Shape{c1 + c2} : Shape{n, c1 + c2};
  TensorT<T> out(out_shape);
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * (c1 + c2),
                a.data() + static_cast<std::int64_t>(i) * c1,
                sizeof(T) * static_cast<std::size_t>(c1));
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * (c1 + c2) + c1,
                b.data() + static_cast<std::int64_t>(i) * c2,
                sizeof(T) * static_cast<std::size_t>(c2));
  }
  return out;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_channels(const TensorT<T>& x,
                                                 int c_first) {
  if (x.rank() < 1 || x.rank() > 2) {
    throw ShapeError("split expects a rank-1 or rank-2 tensor");
  }
  const int c = x.extent(x.rank() - 1);
  if (c_first < 1 || c_first >= c) {
    throw ShapeError("split point must lie strictly inside the feature axis");
  }
  const int n = x.rank() == 2 ? x.extent(0) : 1;
  const int c2 = c - c_first;
  Shape sa = x.rank() == 1 ? Shape{c_first} : Shape{n, c_first};
  Shape sb = x.rank() == 1 ? Shape{c2} : Shape{n, c2};
  TensorT<T> a(sa);
  TensorT<T> b(sb);
  for (int i = 0; i < n; ++i) {
    std::memcpy(a.data() + static_cast<std::int64_t>(i) * c_first,
                x.data() + static_cast<std::int64_t>(i) * c,
                sizeof(T) * static_cast<std::size_t>(c_first));
    std::memcpy(b.data() + static_cast<std::int64_t>(i) * c2,
                x.data() + static_cast<std::int64_t>(i) * c + c_first,
                sizeof(T) * static_cast<std::size_t>(c2));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
TensorT<T> dense_forward(const TensorT<T>& x, const TensorT<T>& w,
                         const TensorT<T>& b) {
  if (w.rank() != 2) {
    throw ShapeError("dense weights must have shape (features, units)");
  }
  const int f = w.extent(0);
  const int k = w.extent(1);
  if (b.rank() != 1 || b.extent(0) != k) {
    throw ShapeError("dense bias must have shape (units)");
  }
  if (x.rank() < 1 || x.rank() > 2 || x.extent(x.rank() - 1) != f) {
    throw ShapeError("dense input features do not match weights");
  }
  const int n = x.rank() == 2 ? x.extent(0) : 1;
  Shape out_shape = x.rank() == 1 ? Shape{k} : Shape{n, k};
  TensorT<T> out(out_shape);
  for (int i = 0; i < n; ++i) {
    T* orow = out.data() + static_cast<std::int64_t>(i) * k;
    std::memcpy(orow, b.data(), sizeof(T) * static_cast<std::size_t>(k));
    const T* xrow = x.data() + static_cast<std::int64_t>(i) * f;
    for (int j = 0; j < f; ++j) {
      const T xv = xrow[j];
      const T* wrow = w.data() + static_cast<std::int64_t>(j) * k;
      for (int u = 0; u < k; ++u) {
        orow[u] += xv * wrow[u];
      }
    }
  }
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& x, const TensorT<T>& w,
                             const TensorT<T>& grad_out) {
  const int f = w.extent(0);
  const int k = w.extent(1);
  const int n = x.rank() == 2 ? x.extent(0) : 1;
  if (x.extent(x.rank() - 1) != f) {
    throw ShapeError("dense input features do not match weights");
  }
  if (grad_out.numel() != static_cast<std::int64_t>(n) * k) {
    throw ShapeError("grad_out does not match dense output shape");
  }
  DenseGrads<T> g;
  g.x = TensorT<T>(x.shape());
  g.weights = TensorT<T>(w.shape());
  g.bias = TensorT<T>(Shape{k});
  for (int i = 0; i < n; ++i) {
    const T* xrow = x.data() + static_cast<std::int64_t>(i) * f;
    const T* grow = grad_out.data() + static_cast<std::int64_t>(i) * k;
    T* gxrow = g.x.data() + static_cast<std::int64_t>(i) * f;
    for (int u = 0; u < k; ++u) {
      g.bias[u] += grow[u];
    }
    for (int j = 0; j < f; ++j) {
      const T* wrow = w.data() + static_cast<std::int64_t>(j) * k;
      T* gwrow = g.weights.data() + static_cast<std::int64_t>(j) * k;
      T acc{};
      for (int u = 0; u < k; ++u) {
        gwrow[u] += xrow[j] * grow[u];
        acc += grow[u] * wrow[u];
      }
      gxrow[j] = acc;
    }
  }
  return g;
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.rank() < 1 || logits.rank() > 2) {
    throw ShapeError("softmax expects a rank-1 or rank-2 tensor");
  }
  const int k = logits.extent(logits.rank() - 1);
  const int n = logits.rank() == 2 ? logits.extent(0) : 1;
  TensorT<T> out(logits.shape());
  std::vector<double> e(static_cast<std::size_t>(k));
  for (int i = 0; i < n; ++i) {
    const T* row = logits.data() + static_cast<std::int64_t>(i) * k;
    double m = static_cast<double>(row[0]);
    for (int j = 1; j < k; ++j) {
      m = std::max(m, static_cast<double>(row[j]));
    }
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      e[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(row[j]) - m);
      sum += e[static_cast<std::size_t>(j)];
    }
    T* orow = out.data() + static_cast<std::int64_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      orow[j] = static_cast<T>(e[static_cast<std::size_t>(j)] / sum);
    }
  }
  return out;
}

template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& probs, const TensorT<T>& grad_out) {
  if (!probs.same_shape(grad_out)) {
    throw ShapeError("softmax backward requires matching shapes");
  }
  const int k = probs.extent(probs.rank() - 1);
  const int n = probs.rank() == 2 ? probs.extent(0) : 1;
  TensorT<T> out(probs.shape());
  for (int i = 0; i < n; ++i) {
    const T* prow = probs.data() + static_cast<std::int64_t>(i) * k;
    const T* grow = grad_out.data() + static_cast<std::int64_t>(i) * k;
    double dot = 0.0;
    for (int j = 0; j < k; ++j) {
      dot += static_cast<double>(grow[j]) * static_cast<double>(prow[j]);
    }
    T* orow = out.data() + static_cast<std::int64_t>(i) * k;
    for (int j = 0; j < k; ++j) {
      orow[j] = static_cast<T>(static_cast<double>(prow[j]) *
                               (static_cast<double>(grow[j]) - dot));
    }
  }
  return out;
}

template <typename T>
DropoutResult<T> dropout(const TensorT<T>& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw RangeError("dropout rate must lie in [0, 1)");
  }
  DropoutResult<T> res;
  res.out = x;
  res.mask.assign(static_cast<std::size_t>(x.numel()), 1);
  if (mode == Mode::kEval || rate == 0.0) {
    return res;
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  T* po = res.out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    if (rng.next_double() < rate) {
      po[i] = T{};
      res.mask[static_cast<std::size_t>(i)] = 0;
    } else {
      po[i] *= scale;
    }
  }
  return res;
}

template <typename T>
TensorT<T> dropout_backward(const std::vector<std::uint8_t>& mask, double rate,
                            const TensorT<T>& grad_out) {
  if (static_cast<std::int64_t>(mask.size()) != grad_out.numel()) {
    throw ShapeError("dropout mask does not match grad_out");
  }
  TensorT<T> gx(grad_out.shape());
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  const T* pg = grad_out.data();
  T* px = gx.data();
  const std::int64_t n = grad_out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    px[i] = mask[static_cast<std::size_t>(i)] ? pg[i] * scale : T{};
  }
  return gx;
}

#define EARCONV_INSTANTIATE_LAYERS(T)                                          \
  template TensorT<T> conv2d_forward(const TensorT<T>&, const TensorT<T>&,     \
                                     const TensorT<T>&, int, Padding);         \
  template TensorT<T> conv2d_forward_reference(                                \
      const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, int, Padding);  \
  template ConvGrads<T> conv2d_backward(const TensorT<T>&, const TensorT<T>&,  \
                                        const TensorT<T>&, int, Padding,       \
                                        const TensorT<T>&);                    \
  template TensorT<T> relu_forward(const TensorT<T>&);                         \
  template TensorT<T> relu_backward(const TensorT<T>&, const TensorT<T>&);     \
  template MaxPoolResult<T> maxpool_forward(const TensorT<T>&,                 \
                                            const PoolParams&);                \
  template TensorT<T> maxpool_backward(const Shape&,                           \
                                       const std::vector<std::int32_t>&,       \
                                       const TensorT<T>&);                     \
  template TensorT<T> global_avg_pool(const TensorT<T>&);                      \
  template TensorT<T> global_avg_pool_backward(const Shape&,                   \
                                               const TensorT<T>&);             \
  template MaxPoolResult<T> global_max_pool_with_argmax(const TensorT<T>&);    \
  template TensorT<T> global_max_pool(const TensorT<T>&);                      \
  template TensorT<T> global_max_pool_backward(                                \
      const Shape&, const std::vector<std::int32_t>&, const TensorT<T>&);      \
  template TensorT<T> concat_channels(const TensorT<T>&, const TensorT<T>&);   \
  template std::pair<TensorT<T>, TensorT<T>> split_channels(const TensorT<T>&, \
                                                            int);              \
  template TensorT<T> dense_forward(const TensorT<T>&, const TensorT<T>&,      \
                                    const TensorT<T>&);                        \
  template DenseGrads<T> dense_backward(const TensorT<T>&, const TensorT<T>&,  \
                                        const TensorT<T>&);                    \
  template TensorT<T> softmax(const TensorT<T>&);                              \
  template TensorT<T> softmax_backward(const TensorT<T>&, const TensorT<T>&);  \
  template DropoutResult<T> dropout(const TensorT<T>&, double, Mode, Rng&);    \
  template TensorT<T> dropout_backward(const std::vector<std::uint8_t>&,       \
                                       double, const TensorT<T>&);

EARCONV_INSTANTIATE_LAYERS(float)
EARCONV_INSTANTIATE_LAYERS(double)

#undef EARCONV_INSTANTIATE_LAYERS

}  // namespace earconv
