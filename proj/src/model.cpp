#include "earconv/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace earconv {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kInput:
      return "input";
    case LayerKind::kConv:
      return "conv";
    case LayerKind::kMaxPool:
      return "maxpool";
    case LayerKind::kRelu:
      return "relu";
    case LayerKind::kAdd:
      return "add";
    case LayerKind::kGlobalAvgPool:
      return "gap";
    case LayerKind::kGlobalMaxPool:
      return "gmp";
    case LayerKind::kConcat:
      return "concat";
    case LayerKind::kDense:
      return "dense";
    case LayerKind::kDropout:
      return "dropout";
    case LayerKind::kSoftmax:
      return "softmax";
  }
  return "unknown";
}

LayerKind layer_kind_from_name(const std::string& name) {
  static const std::pair<const char*, LayerKind> table[] = {
      {"input", LayerKind::kInput},       {"conv", LayerKind::kConv},
      {"maxpool", LayerKind::kMaxPool},   {"relu", LayerKind::kRelu},
      {"add", LayerKind::kAdd},           {"gap", LayerKind::kGlobalAvgPool},
      {"gmp", LayerKind::kGlobalMaxPool}, {"concat", LayerKind::kConcat},
      {"dense", LayerKind::kDense},       {"dropout", LayerKind::kDropout},
      {"softmax", LayerKind::kSoftmax},
  };
  for (const auto& [n, k] : table) {
    if (name == n) {
      return k;
    }
  }
  throw LookupError("unknown layer kind '" + name + "'");
}

std::int64_t LayerSpec::param_count() const {
  switch (kind) {
    case LayerKind::kConv:
      return static_cast<std::int64_t>(kernel) * kernel * in_ch * out_ch + out_ch;
    case LayerKind::kDense:
      return static_cast<std::int64_t>(in_ch) * out_ch + out_ch;
    default:
      return 0;
  }
}

bool LayerSpec::operator==(const LayerSpec& other) const {
  return id == other.id && display == other.display && kind == other.kind &&
         in == other.in && kernel == other.kernel && stride == other.stride &&
         padding == other.padding && in_ch == other.in_ch &&
         out_ch == other.out_ch && rate == other.rate;
}

template <typename T>
std::int64_t ModelGraph<T>::total_params() const {
  std::int64_t n = 0;
  for (const auto& p : params) {
    n += p.numel();
  }
  return n;
}

template <typename T>
int ModelGraph<T>::find_layer(const std::string& id) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].id == id) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

template <typename T>
std::vector<std::string> ModelGraph<T>::conv_layer_ids() const {
  std::vector<std::string> ids;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::kConv) {
      ids.push_back(l.id);
    }
  }
  return ids;
}

std::vector<Shape> infer_output_shapes(const std::vector<LayerSpec>& layers,
                                       int input_h, int input_w, int input_c) {
  if (layers.empty() || layers[0].kind != LayerKind::kInput) {
    throw ShapeError("layer 0 must be the input");
  }
  std::vector<Shape> shapes(layers.size());
  std::vector<int> consumers(layers.size(), 0);
  shapes[0] = {input_h, input_w, input_c};

  for (std::size_t i = 1; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerKind::kInput) {
      throw ShapeError("graph must have a single input");
    }
    const std::size_t want_in =
        (l.kind == LayerKind::kAdd || l.kind == LayerKind::kConcat) ? 2 : 1;
    if (l.in.size() != want_in) {
      throw ShapeError("layer " + l.id + " expects " + std::to_string(want_in) +
                       " input link(s)");
    }
    for (int j : l.in) {
      if (j < 0 || j >= static_cast<int>(i)) {
        throw ShapeError("layer " + l.id + " links to a non-preceding layer");
      }
      ++consumers[static_cast<std::size_t>(j)];
    }
    const Shape& a = shapes[static_cast<std::size_t>(l.in[0])];
    switch (l.kind) {
      case LayerKind::kConv: {
        if (a.size() != 3 || a[2] != l.in_ch) {
          throw ShapeError("layer " + l.id + " channel mismatch");
        }
        shapes[i] = {conv_out_extent(a[0], l.kernel, l.stride, l.padding),
                     conv_out_extent(a[1], l.kernel, l.stride, l.padding),
                     l.out_ch};
        break;
      }
      case LayerKind::kMaxPool: {
        if (a.size() != 3) {
          throw ShapeError("layer " + l.id + " expects a spatial input");
        }
        shapes[i] = {conv_out_extent(a[0], l.kernel, l.stride, l.padding),
                     conv_out_extent(a[1], l.kernel, l.stride, l.padding), a[2]};
        break;
      }
      case LayerKind::kRelu:
      case LayerKind::kDropout:
      case LayerKind::kSoftmax:
        shapes[i] = a;
        break;
      case LayerKind::kAdd: {
        const Shape& b = shapes[static_cast<std::size_t>(l.in[1])];
        if (a != b) {
          throw ShapeError("layer " + l.id + " operands differ in shape");
        }
        shapes[i] = a;
        break;
      }
      case LayerKind::kGlobalAvgPool:
      case LayerKind::kGlobalMaxPool: {
        if (a.size() != 3) {
          throw ShapeError("layer " + l.id + " expects a spatial input");
        }
        shapes[i] = {a[2]};
        break;
      }
      case LayerKind::kConcat: {
        const Shape& b = shapes[static_cast<std::size_t>(l.in[1])];
        if (a.size() != 1 || b.size() != 1) {
          throw ShapeError("layer " + l.id + " expects feature vectors");
        }
        shapes[i] = {a[0] + b[0]};
        break;
      }
      case LayerKind::kDense: {
        if (a.size() != 1 || a[0] != l.in_ch) {
          throw ShapeError("layer " + l.id + " feature extent mismatch");
        }
        shapes[i] = {l.out_ch};
        break;
      }
      case LayerKind::kInput:
        break;
    }
  }
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (consumers[i] == 0) {
      throw ShapeError("layer " + layers[i].id +
                       " is dangling; the graph must have a single output");
    }
  }
  return shapes;
}

template <typename T>
ModelGraph<T> build_from_specs(std::vector<LayerSpec> layers, int input_h,
                               int input_w, int input_c, std::uint64_t seed,
                               std::string arch, bool initialize) {
  infer_output_shapes(layers, input_h, input_w, input_c);

  ModelGraph<T> model;
  model.arch = std::move(arch);
  model.seed = seed;
  model.input_h = input_h;
  model.input_w = input_w;
  model.input_c = input_c;

  Rng rng(seed);
  for (auto& l : layers) {
    l.weight_idx = -1;
    l.bias_idx = -1;
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kDense) {
      const Shape wshape = l.kind == LayerKind::kConv
                               ? Shape{l.kernel, l.kernel, l.in_ch, l.out_ch}
                               : Shape{l.in_ch, l.out_ch};
      const std::int64_t fan_in = l.kind == LayerKind::kConv
                                      ? static_cast<std::int64_t>(l.kernel) *
                                            l.kernel * l.in_ch
                                      : l.in_ch;
      l.weight_idx = static_cast<int>(model.params.size());
      if (initialize) {
        const T bound =
            static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
        model.params.push_back(uniform_tensor<T>(rng, wshape, -bound, bound));
      } else {
        model.params.emplace_back(wshape);
      }
      model.param_names.push_back(l.id + ".weights");
      l.bias_idx = static_cast<int>(model.params.size());
      model.params.emplace_back(Shape{l.out_ch});
      model.param_names.push_back(l.id + ".bias");
    }
  }
  model.layers = std::move(layers);
  return model;
}

namespace {

struct GraphBuilder {
  std::vector<LayerSpec> layers;

  int input(int /*h*/, int /*w*/, int /*c*/) {
    LayerSpec l;
    l.id = "Input";
    l.display = "Input Layer";
    l.kind = LayerKind::kInput;
    layers.push_back(l);
    return 0;
  }
  int conv(std::string id, std::string display, int in, int kernel, int stride,
           Padding padding, int c_in, int c_out) {
    LayerSpec l;
    l.id = std::move(id);
    l.display = std::move(display);
    l.kind = LayerKind::kConv;
    l.in = {in};
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    l.in_ch = c_in;
    l.out_ch = c_out;
    layers.push_back(l);
    return static_cast<int>(layers.size()) - 1;
  }
  int pool(std::string id, std::string display, int in, int window, int stride,
           Padding padding) {
    LayerSpec l;
    l.id = std::move(id);
    l.display = std::move(display);
    l.kind = LayerKind::kMaxPool;
    l.in = {in};
    l.kernel = window;
    l.stride = stride;
    l.padding = padding;
    layers.push_back(l);
    return static_cast<int>(layers.size()) - 1;
  }
  int unary(LayerKind kind, std::string id, std::string display, int in) {
    LayerSpec l;
    l.id = std::move(id);
    l.display = std::move(display);
    l.kind = kind;
    l.in = {in};
    layers.push_back(l);
    return static_cast<int>(layers.size()) - 1;
  }
  int binary(LayerKind kind, std::string id, std::string display, int a, int b) {
    LayerSpec l;
    l.id = std::move(id);
    l.display = std::move(display);
    l.kind = kind;
    l.in = {a, b};
    layers.push_back(l);
    return static_cast<int>(layers.size()) - 1;
  }
  int dense(std::string id, std::string display, int in, int features,
            int units) {
    LayerSpec l;
    l.id = std::move(id);
    l.display = std::move(display);
    l.kind = LayerKind::kDense;
    l.in = {in};
    l.in_ch = features;
    l.out_ch = units;
    layers.push_back(l);
    return static_cast<int>(layers.size()) - 1;
  }
  int dropout(std::string id, int in, double rate) {
    LayerSpec l;
    l.id = std::move(id);
    l.display = "Dropout";
    l.kind = LayerKind::kDropout;
    l.in = {in};
    l.rate = rate;
    layers.push_back(l);
    return static_cast<int>(layers.size()) - 1;
  }
};

// Shared layout of the classifier; channel widths are parametric so the
// reduced clone shares this code path. Pool windows are clamped to the
// running extent only when `clamp_pools` is set (the clone factory).
std::vector<LayerSpec> earnet_specs(int input_hw, int c1, int c2, int c3, int c4,
                                    bool clamp_pools) {
  GraphBuilder b;
  int e = input_hw;  // square spatial extent along the trunk
  auto pool_window = [&](int want) {
    if (clamp_pools && want > e) {
      return e;
    }
    return want;
  };

  const int in = b.input(input_hw, input_hw, 3);
  int t = b.conv("Conv1", "Conv_2D_1", in, 5, 2, Padding::kValid, 3, c1);
  e = conv_out_extent(e, 5, 2, Padding::kValid);
  t = b.unary(LayerKind::kRelu, "ReLU1", "ReLU_1", t);
  t = b.conv("Conv2", "Conv_2D_2", t, 3, 1, Padding::kSame, c1, c2);
  t = b.unary(LayerKind::kRelu, "ReLU2", "ReLU_2", t);
  int w = pool_window(2);
  t = b.pool("MaxPool1", "Maxpooling_2D_1", t, w, 2, Padding::kValid);
  e = conv_out_extent(e, w, 2, Padding::kValid);
  w = pool_window(2);
  t = b.pool("MaxPool2", "Maxpooling_2D_2", t, w, 2, Padding::kValid);
  e = conv_out_extent(e, w, 2, Padding::kValid);

  // Residual block: identity skip around Conv3 + ReLU.
  const int skip1 = t;
  int br = b.conv("Conv3", "Conv_2D_3", skip1, 3, 1, Padding::kSame, c2, c2);
  br = b.unary(LayerKind::kRelu, "ReLU3", "ReLU_3", br);
  t = b.binary(LayerKind::kAdd, "Add1", "Add_1", skip1, br);

  t = b.conv("Conv4", "Conv_2D_4", t, 3, 1, Padding::kSame, c2, c3);
  t = b.unary(LayerKind::kRelu, "ReLU4", "ReLU_4", t);
  w = pool_window(2);
  t = b.pool("MaxPool3", "Maxpooling_2D_3", t, w, 2, Padding::kValid);
  e = conv_out_extent(e, w, 2, Padding::kValid);

  // Second residual block around a stride-1 shape-preserving pool.
  const int skip2 =
      b.pool("MaxPool4", "Maxpooling_2D_4", t, 2, 1, Padding::kSame);
  br = b.conv("Conv5", "Conv_2D_5", skip2, 2, 1, Padding::kSame, c3, c3);
  br = b.unary(LayerKind::kRelu, "ReLU5", "ReLU_5", br);
  t = b.binary(LayerKind::kAdd, "Add2", "Add_2", skip2, br);

  t = b.conv("Conv6", "Conv_2D_6", t, 3, 1, Padding::kSame, c3, c4);
  t = b.unary(LayerKind::kRelu, "ReLU6", "ReLU_6", t);
  w = pool_window(2);
  t = b.pool("MaxPool5", "Maxpooling_2D_5", t, w, 2, Padding::kValid);
  e = conv_out_extent(e, w, 2, Padding::kValid);
  // The report name Conv_2D_6 repeats upstream; ids stay unique.
  t = b.conv("Conv7", "Conv_2D_6", t, 3, 2, Padding::kSame, c4, c4);
  t = b.unary(LayerKind::kRelu, "ReLU7", "ReLU_7", t);

  const int gap = b.unary(LayerKind::kGlobalAvgPool, "GAP",
                          "GlobalAvgPooling_2D", t);
  const int gmp = b.unary(LayerKind::kGlobalMaxPool, "GMP",
                          "GlobalMaxPooling_2D", t);
  t = b.binary(LayerKind::kConcat, "Concat", "Concatenate", gap, gmp);
  t = b.dropout("Dropout", t, 0.2);
  t = b.dense("Dense", "Dense", t, 2 * c4, 2);
  b.unary(LayerKind::kSoftmax, "Softmax", "Softmax", t);
  return b.layers;
}

}  // namespace

template <typename T>
ModelGraph<T> build_earnet(std::uint64_t seed) {
  return build_from_specs<T>(earnet_specs(256, 512, 256, 128, 64, false), 256,
                             256, 3, seed, "earnet");
}

template <typename T>
ModelGraph<T> build_earnet_small(std::uint64_t seed, int input_hw,
                                 int width_div) {
  if (input_hw < 5 || width_div < 1) {
    throw ConfigError("reduced model needs input_hw >= 5 and width_div >= 1");
  }
  auto width = [width_div](int c) { return std::max(1, c / width_div); };
  return build_from_specs<T>(
      earnet_specs(input_hw, width(512), width(256), width(128), width(64),
                   true),
      input_hw, input_hw, 3, seed, "earnet-small");
}

template <typename T>
ForwardCache<T> forward(const ModelGraph<T>& model, const TensorT<T>& x,
                        Mode mode, Rng* rng) {
  if (x.rank() != 4 || x.extent(1) != model.input_h ||
      x.extent(2) != model.input_w || x.extent(3) != model.input_c) {
    std::ostringstream msg;
    msg << "input must have shape (N, " << model.input_h << ", "
        << model.input_w << ", " << model.input_c << ")";
    throw ShapeError(msg.str());
  }
  if (mode == Mode::kTrain && rng == nullptr) {
    throw UsageError("train-mode forward requires an Rng for dropout");
  }
  Rng eval_rng(0);  // never drawn from in eval mode

  ForwardCache<T> cache;
  cache.mode = mode;
  const std::size_t n = model.layers.size();
  cache.out.resize(n);
  cache.argmax.resize(n);
  cache.mask.resize(n);
  cache.out[0] = x;

  for (std::size_t i = 1; i < n; ++i) {
    const LayerSpec& l = model.layers[i];
    const TensorT<T>& a = cache.out[static_cast<std::size_t>(l.in[0])];
    switch (l.kind) {
      case LayerKind::kConv:
        cache.out[i] = conv2d_forward(a, model.params[l.weight_idx],
                                      model.params[l.bias_idx], l.stride,
                                      l.padding);
        break;
      case LayerKind::kMaxPool: {
        PoolParams pp{l.kernel, l.stride, l.padding};
        auto r = maxpool_forward(a, pp);
        cache.out[i] = std::move(r.out);
        cache.argmax[i] = std::move(r.argmax);
        break;
      }
      case LayerKind::kRelu:
        cache.out[i] = relu_forward(a);
        break;
      case LayerKind::kAdd:
        cache.out[i] =
            add(a, cache.out[static_cast<std::size_t>(l.in[1])]);
        break;
      case LayerKind::kGlobalAvgPool:
        cache.out[i] = global_avg_pool(a);
        break;
      case LayerKind::kGlobalMaxPool: {
        auto r = global_max_pool_with_argmax(a);
        cache.out[i] = std::move(r.out);
        cache.argmax[i] = std::move(r.argmax);
        break;
      }
      case LayerKind::kConcat:
        cache.out[i] =
            concat_channels(a, cache.out[static_cast<std::size_t>(l.in[1])]);
        break;
      case LayerKind::kDense:
        cache.out[i] = dense_forward(a, model.params[l.weight_idx],
                                     model.params[l.bias_idx]);
        break;
      case LayerKind::kDropout: {
        auto r = dropout(a, l.rate, mode, rng != nullptr ? *rng : eval_rng);
        cache.out[i] = std::move(r.out);
        cache.mask[i] = std::move(r.mask);
        break;
      }
      case LayerKind::kSoftmax:
        cache.out[i] = softmax(a);
        break;
      case LayerKind::kInput:
        throw ShapeError("graph must have a single input");
    }
  }
  return cache;
}

namespace {

template <typename T>
void accumulate(TensorT<T>& dst, TensorT<T>&& src) {
  if (dst.empty()) {
    dst = std::move(src);
    return;
  }
  T* pd = dst.data();
  const T* ps = src.data();
  const std::int64_t n = dst.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    pd[i] += ps[i];
  }
}

}  // namespace

template <typename T>
std::vector<TensorT<T>> backward(const ModelGraph<T>& model,
                                 const ForwardCache<T>& cache,
                                 const TensorT<T>& grad_probs) {
  if (cache.mode != Mode::kTrain) {
    throw UsageError("backward requires a cache from a train-mode forward");
  }
  if (cache.out.size() != model.layers.size()) {
    throw UsageError("cache does not belong to this graph");
  }
  if (!grad_probs.same_shape(cache.probs())) {
    throw ShapeError("grad_probs shape does not match the output");
  }

  std::vector<TensorT<T>> grads(model.params.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    grads[i] = TensorT<T>(model.params[i].shape());
  }
  std::vector<TensorT<T>> gout(model.layers.size());
  gout.back() = grad_probs;

  for (std::size_t i = model.layers.size(); i-- > 1;) {
    if (gout[i].empty()) {
      continue;
    }
    const LayerSpec& l = model.layers[i];
    const std::size_t in0 = static_cast<std::size_t>(l.in[0]);
    const TensorT<T>& a = cache.out[in0];
    TensorT<T>& g = gout[i];
    switch (l.kind) {
      case LayerKind::kConv: {
        auto cg = conv2d_backward(a, model.params[l.weight_idx],
                                  model.params[l.bias_idx], l.stride, l.padding,
                                  g);
        accumulate(grads[static_cast<std::size_t>(l.weight_idx)],
                   std::move(cg.weights));
        accumulate(grads[static_cast<std::size_t>(l.bias_idx)],
                   std::move(cg.bias));
        accumulate(gout[in0], std::move(cg.x));
        break;
      }
      case LayerKind::kMaxPool:
        accumulate(gout[in0], maxpool_backward(a.shape(), cache.argmax[i], g));
        break;
      case LayerKind::kRelu:
        accumulate(gout[in0], relu_backward(a, g));
        break;
      case LayerKind::kAdd: {
        const std::size_t in1 = static_cast<std::size_t>(l.in[1]);
        accumulate(gout[in0], TensorT<T>(g));
        accumulate(gout[in1], std::move(g));
        break;
      }
      case LayerKind::kGlobalAvgPool:
        accumulate(gout[in0], global_avg_pool_backward(a.shape(), g));
        break;
      case LayerKind::kGlobalMaxPool:
        accumulate(gout[in0],
                   global_max_pool_backward(a.shape(), cache.argmax[i], g));
        break;
      case LayerKind::kConcat: {
        const std::size_t in1 = static_cast<std::size_t>(l.in[1]);
        auto [ga, gb] = split_channels(g, a.extent(a.rank() - 1));
        accumulate(gout[in0], std::move(ga));
        accumulate(gout[in1], std::move(gb));
        break;
      }
      case LayerKind::kDense: {
        auto dg = dense_backward(a, model.params[l.weight_idx], g);
        accumulate(grads[static_cast<std::size_t>(l.weight_idx)],
                   std::move(dg.weights));
        accumulate(grads[static_cast<std::size_t>(l.bias_idx)],
                   std::move(dg.bias));
        accumulate(gout[in0], std::move(dg.x));
        break;
      }
      case LayerKind::kDropout:
        accumulate(gout[in0], dropout_backward(cache.mask[i], l.rate, g));
        break;
      case LayerKind::kSoftmax:
        accumulate(gout[in0], softmax_backward(cache.out[i], g));
        break;
      case LayerKind::kInput:
        break;
    }
    gout[i] = TensorT<T>();  // release as soon as it is consumed
  }
  return grads;
}

template <typename T>
std::vector<TensorT<T>> extract_feature_maps(const ModelGraph<T>& model,
                                             const TensorT<T>& x,
                                             const std::vector<std::string>& ids) {
  std::vector<int> conv_idx;
  for (const auto& id : ids) {
    const int idx = model.find_layer(id);
    if (idx < 0 || model.layers[static_cast<std::size_t>(idx)].kind !=
                       LayerKind::kConv) {
      std::string valid;
      for (const auto& cid : model.conv_layer_ids()) {
        valid += valid.empty() ? cid : ", " + cid;
      }
      throw LookupError("unknown convolution layer '" + id +
                        "'; valid layers: " + valid);
    }
    conv_idx.push_back(idx);
  }
  const ForwardCache<T> cache = forward(model, x, Mode::kEval);
  std::vector<TensorT<T>> maps;
  maps.reserve(conv_idx.size());
  for (int idx : conv_idx) {
    // Post-activation view: the ReLU fed by this convolution.
    int out_idx = idx;
    for (std::size_t j = 0; j < model.layers.size(); ++j) {
      if (model.layers[j].kind == LayerKind::kRelu &&
          model.layers[j].in[0] == idx) {
        out_idx = static_cast<int>(j);
        break;
      }
    }
    maps.push_back(cache.out[static_cast<std::size_t>(out_idx)]);
  }
  return maps;
}

namespace {

constexpr char kMagic[8] = {'E', 'A', 'R', 'C', 'O', 'N', 'V', '1'};

nlohmann::json spec_to_json(const LayerSpec& l) {
  nlohmann::json j;
  j["id"] = l.id;
  j["display"] = l.display;
  j["kind"] = layer_kind_name(l.kind);
  j["in"] = l.in;
  j["kernel"] = l.kernel;
  j["stride"] = l.stride;
  j["padding"] = l.padding == Padding::kSame ? "same" : "valid";
  j["in_ch"] = l.in_ch;
  j["out_ch"] = l.out_ch;
  j["rate"] = l.rate;
  return j;
}

LayerSpec spec_from_json(const nlohmann::json& j) {
  LayerSpec l;
  l.id = j.at("id").get<std::string>();
  l.display = j.at("display").get<std::string>();
  l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
  l.in = j.at("in").get<std::vector<int>>();
  l.kernel = j.at("kernel").get<int>();
  l.stride = j.at("stride").get<int>();
  const std::string pad = j.at("padding").get<std::string>();
  if (pad != "same" && pad != "valid") {
    throw ParseError("bad padding value '" + pad + "'");
  }
  l.padding = pad == "same" ? Padding::kSame : Padding::kValid;
  l.in_ch = j.at("in_ch").get<int>();
  l.out_ch = j.at("out_ch").get<int>();
  l.rate = j.at("rate").get<double>();
  return l;
}

}  // namespace

void save_checkpoint(const ModelGraph<float>& model, const std::string& path) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["arch"] = model.arch;
  header["seed"] = model.seed;
  header["epoch"] = model.trained_epochs;
  header["input"] = {model.input_h, model.input_w, model.input_c};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers) {
    layers.push_back(spec_to_json(l));
  }
  header["layers"] = std::move(layers);

  nlohmann::json params = nlohmann::json::array();
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& p = model.params[i];
    nlohmann::json pj;
    pj["name"] = model.param_names[i];
    pj["shape"] = p.shape();
    pj["offset"] = offset;
    pj["nbytes"] = p.numel() * 4;
    params.push_back(std::move(pj));
    offset += p.numel() * 4;
  }
  header["params"] = std::move(params);
  header["total_param_bytes"] = offset;

  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw CheckpointError("cannot open '" + path + "' for writing");
  }
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& p : model.params) {
    out.write(reinterpret_cast<const char*>(p.data()),
              static_cast<std::streamsize>(p.numel() * 4));
  }
  if (!out) {
    throw CheckpointError("write to '" + path + "' failed");
  }
}

ModelGraph<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("cannot open checkpoint '" + path + "'");
  }
  in.seekg(0, std::ios::end);
  const std::int64_t size = in.tellg();
  in.seekg(0, std::ios::beg);
  if (size < static_cast<std::int64_t>(sizeof(kMagic) + sizeof(std::uint64_t))) {
    throw CheckpointError("corrupt header: file too small");
  }
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("corrupt header: bad magic bytes");
  }
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (header_len > static_cast<std::uint64_t>(size) - 16) {
    throw CheckpointError("corrupt header: header length exceeds file size");
  }
  const std::int64_t payload_start =
      16 + static_cast<std::int64_t>(header_len);
  std::string hs(header_len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(header_len));

  nlohmann::json header;
  std::vector<LayerSpec> specs;
  int input_h = 0, input_w = 0, input_c = 0;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string arch;
  try {
    header = nlohmann::json::parse(hs);
    if (header.at("format_version").get<int>() != 1) {
      throw ParseError("unsupported format version");
    }
    arch = header.at("arch").get<std::string>();
    seed = header.at("seed").get<std::uint64_t>();
    epoch = header.at("epoch").get<int>();
    const auto input = header.at("input").get<std::vector<int>>();
    if (input.size() != 3) {
      throw ParseError("bad input shape");
    }
    input_h = input[0];
    input_w = input[1];
    input_c = input[2];
    for (const auto& lj : header.at("layers")) {
      specs.push_back(spec_from_json(lj));
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("corrupt header: ") + e.what());
  }

  ModelGraph<float> model;
  try {
    model = build_from_specs<float>(std::move(specs), input_h, input_w, input_c,
                                    seed, arch, /*initialize=*/false);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("shape mismatch: inconsistent graph: ") +
                          e.what());
  }
  model.trained_epochs = epoch;

  const auto& params_json = header.at("params");
  if (params_json.size() != model.params.size()) {
    throw CheckpointError("shape mismatch: parameter count differs from graph");
  }
  std::int64_t offset = 0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& pj = params_json[i];
    const auto name = pj.at("name").get<std::string>();
    const auto shape = pj.at("shape").get<Shape>();
    if (name != model.param_names[i] || shape != model.params[i].shape()) {
      throw CheckpointError("shape mismatch for parameter '" + name + "'");
    }
    if (pj.at("offset").get<std::int64_t>() != offset ||
        pj.at("nbytes").get<std::int64_t>() != model.params[i].numel() * 4) {
      throw CheckpointError("corrupt header: bad parameter offsets");
    }
    offset += model.params[i].numel() * 4;
  }
  if (header.at("total_param_bytes").get<std::int64_t>() != offset) {
    throw CheckpointError("corrupt header: total_param_bytes disagrees");
  }
  if (payload_start + offset > size) {
    throw CheckpointError("truncated payload: expected " +
                          std::to_string(offset) + " bytes after the header");
  }
  for (auto& p : model.params) {
    in.read(reinterpret_cast<char*>(p.data()),
            static_cast<std::streamsize>(p.numel() * 4));
  }
  if (!in) {
    throw CheckpointError("truncated payload: read failed");
  }
  return model;
}

#define EARCONV_INSTANTIATE_MODEL(T)                                         \
  template struct ModelGraph<T>;                                             \
  template ModelGraph<T> build_from_specs(std::vector<LayerSpec>, int, int,  \
                                          int, std::uint64_t, std::string,   \
                                          bool);                             \
  template ModelGraph<T> build_earnet(std::uint64_t);                        \
  template ModelGraph<T> build_earnet_small(std::uint64_t, int, int);        \
  template ForwardCache<T> forward(const ModelGraph<T>&, const TensorT<T>&,  \
                                   Mode, Rng*);                              \
  template std::vector<TensorT<T>> backward(const ModelGraph<T>&,            \
                                            const ForwardCache<T>&,          \
                                            const TensorT<T>&);              \
  template std::vector<TensorT<T>> extract_feature_maps(                     \
      const ModelGraph<T>&, const TensorT<T>&,                               \
      const std::vector<std::string>&);

EARCONV_INSTANTIATE_MODEL(float)
EARCONV_INSTANTIATE_MODEL(double)

#undef EARCONV_INSTANTIATE_MODEL

}  // namespace earconv
