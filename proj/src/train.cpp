#include "earconv/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace earconv {

namespace {

constexpr double kLogClamp = 1e-7;

// Substream tags for the per-epoch shuffle, per-batch dropout and
// per-record augmentation streams.
constexpr std::uint64_t kShuffleTag = 0x5348464Cu;   // "SHFL"
constexpr std::uint64_t kDropoutTag = 0x44524F50u;   // "DROP"
constexpr std::uint64_t kAugmentTag = 0x41554721u;   // "AUG!"

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (epochs < 1) {
    throw ConfigError("epochs must be at least 1");
  }
  if (batch_size < 1) {
    throw ConfigError("batch_size must be at least 1");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("dropout_rate must lie in [0, 1)");
  }
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) {
    throw ConfigError("adam epsilon must be positive");
  }
  if (flip_prob < 0.0 || flip_prob > 1.0) {
    throw ConfigError("flip_prob must lie in [0, 1]");
  }
  if (rotation_frac < 0.0 || rotation_frac > 0.5) {
    throw ConfigError("rotation_frac must lie in [0, 0.5]");
  }
}

template <typename T>
AdamState<T> adam_init(const std::vector<TensorT<T>>& params) {
  AdamState<T> state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& p : params) {
    state.m.emplace_back(p.shape());
    state.v.emplace_back(p.shape());
  }
  return state;
}

template <typename T>
void adam_step(std::vector<TensorT<T>>& params,
               const std::vector<TensorT<T>>& grads, AdamState<T>& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam: parameter, gradient and state counts differ");
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.m[i])) {
      throw ShapeError("adam: shape mismatch for parameter " +
                       std::to_string(i));
    }
    T* theta = params[i].data();
    const T* g = grads[i].data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const std::int64_t n = params[i].numel();
    for (std::int64_t j = 0; j < n; ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = cfg.beta1 * static_cast<double>(m[j]) +
                        (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) +
                        (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update =
          cfg.learning_rate * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.epsilon);
      theta[j] = static_cast<T>(static_cast<double>(theta[j]) - update);
    }
  }
}

template <typename T>
BceResult<T> bce_loss(const TensorT<T>& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.extent(1) != 2 ||
      probs.extent(0) != static_cast<int>(labels.size())) {
    throw ShapeError("bce_loss expects probs (N, 2) and N labels");
  }
  const int n = probs.extent(0);
  BceResult<T> res;
  res.grad_probs = TensorT<T>(probs.shape());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y != 0 && y != 1) {
      throw LabelError("label " + std::to_string(y) + " at index " +
                       std::to_string(i) + " is not binary");
    }
    const double raw = static_cast<double>(probs.at(i, 1));
    const double p = std::clamp(raw, kLogClamp, 1.0 - kLogClamp);
    total += y == 1 ? -std::log(p) : -std::log(1.0 - p);
    // Zero gradient where the clamp is active, matching the true slope of
    // the implemented (clamped) loss.
    double dp = 0.0;
    if (raw > kLogClamp && raw < 1.0 - kLogClamp) {
      dp = y == 1 ? -1.0 / p : 1.0 / (1.0 - p);
    }
    res.grad_probs.at(i, 1) = static_cast<T>(dp / static_cast<double>(n));
  }
  res.loss = total / static_cast<double>(n);
  return res;
}

template <typename T>
std::vector<int> predict_classes(const TensorT<T>& probs) {
  if (probs.rank() != 2 || probs.extent(1) != 2) {
    throw ShapeError("predict expects probs of shape (N, 2)");
  }
  std::vector<int> out(static_cast<std::size_t>(probs.extent(0)));
  for (int i = 0; i < probs.extent(0); ++i) {
    out[static_cast<std::size_t>(i)] = probs.at(i, 1) >= probs.at(i, 0) ? 1 : 0;
  }
  return out;
}

void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("cannot open '" + path + "' for writing");
  }
  out << "epoch,train_loss,train_acc,test_acc\n";
  char buf[160];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f\n", row.epoch,
                  row.train_loss, row.train_acc, row.test_acc);
    out << buf;
  }
}

namespace {

// Stacks dataset records into a batch tensor, casting to the compute type
// and augmenting per record with its own derived stream.
template <typename T>
TensorT<T> assemble_batch(const Dataset& data, const std::vector<int>& order,
                          std::size_t begin, std::size_t end,
                          const TrainConfig* aug_cfg, int epoch) {
  const Tensor& first = data.images[static_cast<std::size_t>(order[begin])];
  const Shape s = first.shape();
  TensorT<T> batch(
      Shape{static_cast<int>(end - begin), s[0], s[1], s[2]});
  for (std::size_t b = begin; b < end; ++b) {
    const int rec = order[b];
    const Tensor* img = &data.images[static_cast<std::size_t>(rec)];
    Tensor augmented;
    if (aug_cfg != nullptr && aug_cfg->augment) {
      Rng rng(mix_seed(mix_seed(aug_cfg->seed, kAugmentTag),
                       static_cast<std::uint64_t>(epoch),
                       static_cast<std::uint64_t>(rec)));
      augmented = augment(*img, rng, aug_cfg->flip_prob, aug_cfg->rotation_frac);
      img = &augmented;
    }
    T* dst = batch.data() + (b - begin) * img->numel();
    const float* src = img->data();
    for (std::int64_t i = 0; i < img->numel(); ++i) {
      dst[i] = static_cast<T>(src[i]);
    }
  }
  return batch;
}

template <typename T>
double eval_accuracy(const ModelGraph<T>& model, const Dataset& data,
                     int batch_size) {
  if (data.images.empty()) {
    return 0.0;
  }
  std::vector<int> order(data.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = static_cast<int>(i);
  }
  std::int64_t correct = 0;
  for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(batch_size));
    TensorT<T> batch = assemble_batch<T>(data, order, b, e, nullptr, 0);
    const auto cache = forward(model, batch, Mode::kEval);
    const auto preds = predict_classes(cache.probs());
    for (std::size_t i = b; i < e; ++i) {
      if (preds[i - b] == data.labels[static_cast<std::size_t>(order[i])]) {
        ++correct;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(order.size());
}

}  // namespace

template <typename T>
TrainLog train_loop(ModelGraph<T>& model, const Dataset& train_set,
                    const Dataset& test_set, const TrainConfig& cfg,
                    const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.images.empty()) {
    throw ConfigError("training set is empty");
  }
  if (train_set.images.size() != train_set.labels.size()) {
    throw ConfigError("training images and labels differ in count");
  }
  for (int y : train_set.labels) {
    if (y != 0 && y != 1) {
      throw LabelError("training labels must be binary");
    }
  }
  // The configured dropout rate overrides whatever the graph was built with.
  for (auto& l : model.layers) {
    if (l.kind == LayerKind::kDropout) {
      l.rate = cfg.dropout_rate;
    }
  }

  AdamState<T> adam = adam_init(model.params);
  TrainLog log;
  log.reserve(static_cast<std::size_t>(cfg.epochs));
  const std::size_t n = train_set.images.size();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) {
      order[i] = static_cast<int>(i);
    }
    Rng shuffle_rng(
        mix_seed(mix_seed(cfg.seed, kShuffleTag), static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(shuffle_rng.next_u64() % i);
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0;
    std::int64_t correct = 0;
    int batch_index = 0;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e =
          std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
      TensorT<T> batch = assemble_batch<T>(train_set, order, b, e, &cfg, epoch);
      std::vector<int> batch_labels(e - b);
      for (std::size_t i = b; i < e; ++i) {
        batch_labels[i - b] = train_set.labels[static_cast<std::size_t>(order[i])];
      }
      Rng dropout_rng(mix_seed(mix_seed(cfg.seed, kDropoutTag),
                               static_cast<std::uint64_t>(epoch),
                               static_cast<std::uint64_t>(batch_index)));
      auto cache = forward(model, batch, Mode::kTrain, &dropout_rng);
      auto bce = bce_loss(cache.probs(), batch_labels);
      loss_sum += bce.loss * static_cast<double>(e - b);
      const auto preds = predict_classes(cache.probs());
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == batch_labels[i]) {
          ++correct;
        }
      }
      auto grads = backward(model, cache, bce.grad_probs);
      adam_step(model.params, grads, adam, cfg);
      ++batch_index;
    }

    TrainLogRow row;
    row.epoch = epoch + 1;
    row.train_loss = loss_sum / static_cast<double>(n);
    row.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    row.test_acc = eval_accuracy(model, test_set, cfg.batch_size);
    log.push_back(row);
    if (on_epoch) {
      on_epoch(row);
    }
  }
  model.trained_epochs += cfg.epochs;
  return log;
}

template <typename T>
EvalReport evaluate(const ModelGraph<T>& model, const Dataset& data,
                    int batch_size) {
  if (data.images.empty()) {
    throw ConfigError("evaluation set is empty");
  }
  if (batch_size < 1) {
    throw ConfigError("batch_size must be at least 1");
  }
  std::vector<int> order(data.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = static_cast<int>(i);
  }
  std::vector<int> preds;
  std::vector<double> scores;
  preds.reserve(order.size());
  scores.reserve(order.size());
  for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e =
        std::min(order.size(), b + static_cast<std::size_t>(batch_size));
    TensorT<T> batch = assemble_batch<T>(data, order, b, e, nullptr, 0);
    const auto cache = forward(model, batch, Mode::kEval);
    const auto batch_preds = predict_classes(cache.probs());
    for (std::size_t i = 0; i < batch_preds.size(); ++i) {
      preds.push_back(batch_preds[i]);
      scores.push_back(static_cast<double>(
          cache.probs().at(static_cast<int>(i), 1)));
    }
  }
  return make_eval_report(data.labels, preds, scores);
}

#define EARCONV_INSTANTIATE_TRAIN(T)                                       \
  template struct AdamState<T>;                                            \
  template AdamState<T> adam_init(const std::vector<TensorT<T>>&);         \
  template void adam_step(std::vector<TensorT<T>>&,                        \
                          const std::vector<TensorT<T>>&, AdamState<T>&,   \
                          const TrainConfig&);                             \
  template BceResult<T> bce_loss(const TensorT<T>&, const std::vector<int>&); \
  template std::vector<int> predict_classes(const TensorT<T>&);            \
  template TrainLog train_loop(ModelGraph<T>&, const Dataset&,             \
                               const Dataset&, const TrainConfig&,         \
                               const EpochCallback&);                      \
  template EvalReport evaluate(const ModelGraph<T>&, const Dataset&, int);

EARCONV_INSTANTIATE_TRAIN(float)
EARCONV_INSTANTIATE_TRAIN(double)

#undef EARCONV_INSTANTIATE_TRAIN

}  // namespace earconv
