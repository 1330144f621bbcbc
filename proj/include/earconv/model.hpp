#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "earconv/layers.hpp"
#include "earconv/tensor.hpp"

namespace earconv {

enum class LayerKind {
  kInput,
  kConv,
  kMaxPool,
  kRelu,
  kAdd,
  kGlobalAvgPool,
  kGlobalMaxPool,
  kConcat,
  kDense,
  kDropout,
  kSoftmax,
};

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

/// One node of the network graph. Hyperparameter fields are meaningful per
/// kind: conv uses kernel/stride/padding/in_ch/out_ch, maxpool uses
/// kernel/stride/padding, dense uses in_ch/out_ch as features/units,
/// dropout uses rate. `in` holds indices of producer layers (two for
/// add/concat, one otherwise, none for the input).
struct LayerSpec {
  std::string id;       // unique, e.g. "Conv1"
  std::string display;  // report name, e.g. "Conv_2D_1" (not unique)
  LayerKind kind = LayerKind::kInput;
  std::vector<int> in;
  int kernel = 0;
  int stride = 1;
  Padding padding = Padding::kValid;
  int in_ch = 0;
  int out_ch = 0;
  double rate = 0.0;

  // Indices into ModelGraph::params; assigned by the builder, not serialized.
  int weight_idx = -1;
  int bias_idx = -1;

  std::int64_t param_count() const;
  bool operator==(const LayerSpec& other) const;
};

/// Acyclic single-input single-output network with parameter storage.
/// Immutable during forward evaluation; training mutates `params` through
/// the optimizer and must hold exclusive access while doing so.
template <typename T>
struct ModelGraph {
  std::vector<LayerSpec> layers;  // topological order, layers[0] is the input
  std::vector<TensorT<T>> params;
  std::vector<std::string> param_names;
  std::string arch;  // "earnet" or "earnet-small"
  std::uint64_t seed = 0;
  int trained_epochs = 0;
  int input_h = 0, input_w = 0, input_c = 0;

  std::int64_t total_params() const;
  /// Index of the layer with the given id, or -1.
  int find_layer(const std::string& id) const;
  /// Ids of all convolution layers, in graph order.
  std::vector<std::string> conv_layer_ids() const;
};

/// Batch-agnostic output shape of every layer, e.g. {126,126,512} or {64}.
/// Validates the graph wiring and throws ShapeError on inconsistencies.
std::vector<Shape> infer_output_shapes(const std::vector<LayerSpec>& layers,
                                       int input_h, int input_w, int input_c);

/// Builds a graph from layer specs, validates shapes, and initializes
/// parameters (uniform fan-in init, zero biases) from the seed.
template <typename T>
ModelGraph<T> build_from_specs(std::vector<LayerSpec> layers, int input_h,
                               int input_w, int input_c, std::uint64_t seed,
                               std::string arch, bool initialize = true);

/// The fixed ear-image classifier: 256x256x3 input, seven convolutions with
/// two residual additions, dual GAP/GMP pooling head, 2,280,578 parameters.
template <typename T>
ModelGraph<T> build_earnet(std::uint64_t seed);

/// Same topology at reduced scale for cheap end-to-end checks: square input
/// of `input_hw` pixels and channel widths divided by `width_div`. Pooling
/// windows that no longer fit their (shrunken) input under valid placement
/// degrade to window = extent; at the default scale this affects only the
/// last pool, which becomes a pass-through.
template <typename T>
ModelGraph<T> build_earnet_small(std::uint64_t seed, int input_hw = 32,
                                 int width_div = 8);

/// Every intermediate needed by backward() and the feature-map export.
template <typename T>
struct ForwardCache {
  Mode mode = Mode::kEval;
  std::vector<TensorT<T>> out;                    // per layer
  std::vector<std::vector<std::int32_t>> argmax;  // maxpool / gmp layers
  std::vector<std::vector<std::uint8_t>> mask;    // dropout layers

  const TensorT<T>& probs() const { return out.back(); }
};

/// Runs the graph on x of shape (N, input_h, input_w, input_c). Train mode
/// requires an Rng for the dropout draws; eval mode ignores it and is
/// deterministic.
template <typename T>
ForwardCache<T> forward(const ModelGraph<T>& model, const TensorT<T>& x,
                        Mode mode, Rng* rng = nullptr);

/// Gradients of a scalar loss w.r.t. every parameter tensor, aligned with
/// model.params, given the loss gradient w.r.t. the output probabilities.
/// The cache must come from a train-mode forward.
template <typename T>
std::vector<TensorT<T>> backward(const ModelGraph<T>& model,
                                 const ForwardCache<T>& cache,
                                 const TensorT<T>& grad_probs);

/// Post-activation maps of the requested convolution layers (eval mode).
template <typename T>
std::vector<TensorT<T>> extract_feature_maps(const ModelGraph<T>& model,
                                             const TensorT<T>& x,
                                             const std::vector<std::string>& ids);

/// Checkpoint file: magic "EARCONV1", a little-endian u64 header length,
/// a UTF-8 JSON header (format version, layer specs, parameter shapes and
/// byte offsets, seed, epoch), then the raw little-endian float32 payload.
/// A save/load round trip is bit-exact.
void save_checkpoint(const ModelGraph<float>& model, const std::string& path);
ModelGraph<float> load_checkpoint(const std::string& path);

}  // namespace earconv
