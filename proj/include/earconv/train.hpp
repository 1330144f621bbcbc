#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "earconv/data.hpp"
#include "earconv/metrics.hpp"
#include "earconv/model.hpp"

namespace earconv {

/// Optimizer and loop hyperparameters. Defaults match the training recipe
/// the classifier was designed around: Adam at 1e-3, 100 epochs, batches of
/// 32, dropout 0.2, flips and rotations on.
struct TrainConfig {
  double learning_rate = 0.001;
  int epochs = 100;
  int batch_size = 32;
  double dropout_rate = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  bool augment = true;
  double flip_prob = 0.2;
  double rotation_frac = 0.2;  // fraction of a full turn, so +/- 0.2*2*pi

  /// Throws ConfigError on any invariant violation.
  void validate() const;
};

/// Per-parameter Adam moments; shapes mirror the model parameters.
template <typename T>
struct AdamState {
  std::vector<TensorT<T>> m;
  std::vector<TensorT<T>> v;
  std::int64_t t = 0;
};

template <typename T>
AdamState<T> adam_init(const std::vector<TensorT<T>>& params);

/// One Adam update, in place:
///   t += 1;  m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <typename T>
void adam_step(std::vector<TensorT<T>>& params,
               const std::vector<TensorT<T>>& grads, AdamState<T>& state,
               const TrainConfig& cfg);

template <typename T>
struct BceResult {
  double loss = 0.0;
  TensorT<T> grad_probs;  // same shape as probs; column 0 is never read
};

/// Mean binary cross-entropy over a batch. probs has shape (N, 2) with
/// column 1 the predicted probability of class 1 (male); labels are in
/// {0, 1} with 0 = female. Probabilities are clamped to
/// [1e-7, 1 - 1e-7] before the log; the gradient is zero inside the
/// clamped region, matching finite differences of the implemented loss.
template <typename T>
BceResult<T> bce_loss(const TensorT<T>& probs, const std::vector<int>& labels);

/// Predicted class per row: argmax of the two probabilities; an exact tie
/// predicts class 1.
template <typename T>
std::vector<int> predict_classes(const TensorT<T>& probs);

struct TrainLogRow {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};
using TrainLog = std::vector<TrainLogRow>;

/// CSV with header epoch,train_loss,train_acc,test_acc.
void write_train_log_csv(const std::string& path, const TrainLog& log);

using EpochCallback = std::function<void(const TrainLogRow&)>;

/// Epoch/batch loop: seeded per-epoch reshuffle, augmentation on the train
/// side only, Adam updates, train stats accumulated on the fly and test
/// accuracy evaluated at each epoch end. The last partial batch is kept.
/// Single-threaded sequencing makes runs with the same seed bit-identical.
template <typename T>
TrainLog train_loop(ModelGraph<T>& model, const Dataset& train_set,
                    const Dataset& test_set, const TrainConfig& cfg,
                    const EpochCallback& on_epoch = nullptr);

/// Eval-mode pass over a dataset producing the full metric report.
template <typename T>
EvalReport evaluate(const ModelGraph<T>& model, const Dataset& data,
                    int batch_size = 32);

}  // namespace earconv
