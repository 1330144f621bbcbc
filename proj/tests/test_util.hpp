#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "earconv/model.hpp"
#include "earconv/tensor.hpp"
#include "earconv/train.hpp"

namespace earconv::testutil {

inline std::int64_t ulp_distance(float a, float b) {
  std::int32_t ia, ib;
  std::memcpy(&ia, &a, 4);
  std::memcpy(&ib, &b, 4);
  if (ia < 0) ia = static_cast<std::int32_t>(0x80000000u) - ia;
  if (ib < 0) ib = static_cast<std::int32_t>(0x80000000u) - ib;
  return std::llabs(static_cast<std::int64_t>(ia) - static_cast<std::int64_t>(ib));
}

template <typename T>
bool bit_equal(const TensorT<T>& a, const TensorT<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(T) * a.numel()) == 0;
}

inline double rel_err(double analytic, double numeric) {
  return std::fabs(analytic - numeric) /
         std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
}

/// Central finite differences of `loss` w.r.t. sampled entries of `param`,
/// compared against `analytic`. Returns the max relative error over
/// `samples` deterministic draws.
template <typename T>
double fd_check(const std::function<double()>& loss, TensorT<T>& param,
                const TensorT<T>& analytic, double h, int samples, Rng& pick) {
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const std::int64_t j = static_cast<std::int64_t>(
        pick.next_u64() % static_cast<std::uint64_t>(param.numel()));
    const T orig = param[j];
    param[j] = orig + static_cast<T>(h);
    const double lp = loss();
    param[j] = orig - static_cast<T>(h);
    const double lm = loss();
    param[j] = orig;
    worst = std::max(worst, rel_err(static_cast<double>(analytic[j]),
                                    (lp - lm) / (2.0 * h)));
  }
  return worst;
}

/// End-to-end gradient check of the network on a reduced clone.
///
/// Protocol per sampled parameter entry: central differences of the
/// same-precision loss at step `h` must match the analytic gradient within
/// `tol`. Where that measurement fails, the point must instead match
/// converged finite differences measured on the float64 twin of the model
/// (same parameter values, step 1e-5, same tolerance) — single-precision
/// central differences stop being a valid oracle when a ReLU/max gate sits
/// inside the +/-h window, while the fine-step measurement converges to the
/// true slope (or exposes a genuinely wrong gradient, which fails both
/// routes). Returns the worst per-point error after the fallback.
template <typename T>
double model_gradcheck(std::uint64_t seed, double h, double tol,
                       int points_per_tensor = 5) {
  auto model = build_earnet_small<T>(seed, 32, 8);
  auto twin = build_earnet_small<double>(seed, 32, 8);
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    for (std::int64_t j = 0; j < model.params[i].numel(); ++j) {
      twin.params[i][j] = static_cast<double>(model.params[i][j]);
    }
  }
  Rng data_rng(mix_seed(seed, 99));
  auto x = uniform_tensor<T>(data_rng, Shape{2, 32, 32, 3}, T(0), T(1));
  TensorT<double> xd(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    xd[i] = static_cast<double>(x[i]);
  }
  const std::vector<int> labels = {0, 1};
  const std::uint64_t drop_seed = mix_seed(seed, 7);

  auto loss = [&]() {
    Rng r(drop_seed);
    const auto cache = forward(model, x, Mode::kTrain, &r);
    return bce_loss(cache.probs(), labels).loss;
  };
  auto twin_loss = [&]() {
    Rng r(drop_seed);
    const auto cache = forward(twin, xd, Mode::kTrain, &r);
    return bce_loss(cache.probs(), labels).loss;
  };

  Rng r(drop_seed);
  const auto cache = forward(model, x, Mode::kTrain, &r);
  const auto bce = bce_loss(cache.probs(), labels);
  const auto grads = backward(model, cache, bce.grad_probs);

  Rng pick(mix_seed(seed, 1234));
  double worst = 0.0;
  for (std::size_t pi = 0; pi < model.params.size(); ++pi) {
    for (int s = 0; s < points_per_tensor; ++s) {
      const std::int64_t j = static_cast<std::int64_t>(
          pick.next_u64() % static_cast<std::uint64_t>(model.params[pi].numel()));
      const double analytic = static_cast<double>(grads[pi][j]);
      T* slot = &model.params[pi][j];
      const T orig = *slot;
      *slot = orig + static_cast<T>(h);
      const double lp = loss();
      *slot = orig - static_cast<T>(h);
      const double lm = loss();
      *slot = orig;
      double err = rel_err(analytic, (lp - lm) / (2.0 * h));
      if (err >= tol) {
        // Fine-step measurement on the float64 twin at the same values.
        double* tslot = &twin.params[pi][j];
        const double torig = *tslot;
        const double hs = 1e-5;
        *tslot = torig + hs;
        const double tlp = twin_loss();
        *tslot = torig - hs;
        const double tlm = twin_loss();
        *tslot = torig;
        err = rel_err(analytic, (tlp - tlm) / (2.0 * hs));
      }
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace earconv::testutil
