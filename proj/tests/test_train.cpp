#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "earconv/synthetic.hpp"
#include "earconv/train.hpp"
#include "test_util.hpp"

using namespace earconv;
using earconv::testutil::bit_equal;
using earconv::testutil::rel_err;

TEST_CASE("defaults match the training recipe") {
  TrainConfig cfg;
  CHECK(cfg.learning_rate == 0.001);
  CHECK(cfg.epochs == 100);
  CHECK(cfg.batch_size == 32);
  CHECK(cfg.dropout_rate == 0.2);
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.999);
  CHECK(cfg.epsilon == 1e-8);
  CHECK(cfg.augment);
  CHECK(cfg.flip_prob == 0.2);
  CHECK(cfg.rotation_frac == 0.2);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config invariants are enforced") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("binary cross-entropy") {
  SUBCASE("near-perfect prediction has near-zero loss") {
    auto probs =
        TensorT<double>::from_data(Shape{1, 2}, {1e-7, 1.0 - 1e-7});
    auto res = bce_loss(probs, {1});
    CHECK(res.loss < 2e-7);
    CHECK(res.loss >= 0.0);
  }
  SUBCASE("maximum uncertainty costs ln 2") {
    auto probs = TensorT<double>::from_data(Shape{1, 2}, {0.5, 0.5});
    auto res = bce_loss(probs, {1});
    CHECK(res.loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("symmetric batch also averages to ln 2") {
    auto probs =
        TensorT<double>::from_data(Shape{2, 2}, {0.5, 0.5, 0.5, 0.5});
    auto res = bce_loss(probs, {1, 0});
    CHECK(res.loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("labels must be binary") {
    auto probs = TensorT<double>::from_data(Shape{1, 2}, {0.5, 0.5});
    CHECK_THROWS_AS(bce_loss(probs, {2}), LabelError);
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(3);
    auto p1 = uniform_tensor<double>(rng, Shape{4}, 0.05, 0.95);
    TensorT<double> probs(Shape{4, 2});
    for (int i = 0; i < 4; ++i) {
      probs.at(i, 0) = 1.0 - p1[i];
      probs.at(i, 1) = p1[i];
    }
    const std::vector<int> labels = {0, 1, 1, 0};
    auto res = bce_loss(probs, labels);
    const double h = 1e-6;
    for (int i = 0; i < 4; ++i) {
      const double orig = probs.at(i, 1);
      probs.at(i, 1) = orig + h;
      const double lp = bce_loss(probs, labels).loss;
      probs.at(i, 1) = orig - h;
      const double lm = bce_loss(probs, labels).loss;
      probs.at(i, 1) = orig;
      CHECK(rel_err(res.grad_probs.at(i, 1), (lp - lm) / (2 * h)) < 1e-6);
      CHECK(res.grad_probs.at(i, 0) == 0.0);
    }
  }
  SUBCASE("non-negative and symmetric under class swap") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + static_cast<int>(rng.next_u64() % 8);
      TensorT<double> probs(Shape{n, 2});
      std::vector<int> labels(static_cast<std::size_t>(n));
      TensorT<double> swapped(Shape{n, 2});
      std::vector<int> swapped_labels(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        const double p = rng.uniform(0.001, 0.999);
        probs.at(i, 0) = 1.0 - p;
        probs.at(i, 1) = p;
        labels[static_cast<std::size_t>(i)] =
            rng.next_u64() % 2 == 0 ? 0 : 1;
        swapped.at(i, 0) = p;
        swapped.at(i, 1) = 1.0 - p;
        swapped_labels[static_cast<std::size_t>(i)] =
            1 - labels[static_cast<std::size_t>(i)];
      }
      const double a = bce_loss(probs, labels).loss;
      const double b = bce_loss(swapped, swapped_labels).loss;
      CHECK(a >= 0.0);
      CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
  }
}

TEST_CASE("adam") {
  TrainConfig cfg;
  SUBCASE("zero gradient is a no-op that still advances the step counter") {
    std::vector<TensorT<double>> params = {
        TensorT<double>::from_data(Shape{3}, {1.0, -2.0, 3.0})};
    std::vector<TensorT<double>> grads = {TensorT<double>(Shape{3}, 0.0)};
    auto state = adam_init(params);
    adam_step(params, grads, state, cfg);
    CHECK(state.t == 1);
    CHECK(params[0][0] == 1.0);
    CHECK(params[0][1] == -2.0);
    CHECK(params[0][2] == 3.0);
  }
  SUBCASE("first step matches the closed form for both gradient signs") {
    for (const double g : {0.1, -0.1}) {
      std::vector<TensorT<double>> params = {TensorT<double>(Shape{1}, 0.0)};
      std::vector<TensorT<double>> grads = {TensorT<double>(Shape{1}, g)};
      auto state = adam_init(params);
      adam_step(params, grads, state, cfg);
      const double expected =
          -cfg.learning_rate * g / (std::fabs(g) + cfg.epsilon);
      CHECK(std::fabs(params[0][0] - expected) < 1e-9);
    }
  }
  SUBCASE("beta1 = beta2 = 0 degenerates to sign-like SGD") {
    TrainConfig degenerate;
    degenerate.beta1 = 0.0;
    degenerate.beta2 = 0.0;
    std::vector<TensorT<double>> params = {TensorT<double>(Shape{1}, 1.0)};
    auto state = adam_init(params);
    Rng rng(5);
    for (int step = 0; step < 20; ++step) {
      const double g = rng.uniform(-2.0, 2.0);
      std::vector<TensorT<double>> grads = {TensorT<double>(Shape{1}, g)};
      const double before = params[0][0];
      adam_step(params, grads, state, degenerate);
      const double expected =
          -degenerate.learning_rate * g / (std::fabs(g) + degenerate.epsilon);
      CHECK(std::fabs((params[0][0] - before) - expected) < 1e-12);
    }
  }
  SUBCASE("lr 0 leaves parameters untouched at the optimizer level") {
    TrainConfig frozen;
    frozen.learning_rate = 0.0;  // rejected by validate(), legal here
    std::vector<TensorT<double>> params = {TensorT<double>(Shape{2}, 0.5)};
    std::vector<TensorT<double>> grads = {TensorT<double>(Shape{2}, 1.0)};
    auto state = adam_init(params);
    adam_step(params, grads, state, frozen);
    CHECK(params[0][0] == 0.5);
    CHECK(params[0][1] == 0.5);
  }
  SUBCASE("moment invariants hold under iteration") {
    std::vector<TensorT<double>> params = {TensorT<double>(Shape{4}, 0.0)};
    auto state = adam_init(params);
    Rng rng(6);
    for (int step = 0; step < 10; ++step) {
      auto g = uniform_tensor<double>(rng, Shape{4}, -1.0, 1.0);
      std::vector<TensorT<double>> grads = {g};
      adam_step(params, grads, state, cfg);
      for (std::int64_t i = 0; i < 4; ++i) {
        CHECK(state.v[0][i] >= 0.0);
      }
    }
    CHECK(state.t == 10);
  }
  SUBCASE("shape mismatch") {
    std::vector<TensorT<double>> params = {TensorT<double>(Shape{3})};
    std::vector<TensorT<double>> grads = {TensorT<double>(Shape{2})};
    auto state = adam_init(params);
    CHECK_THROWS_AS(adam_step(params, grads, state, cfg), ShapeError);
  }
}

TEST_CASE("train loop") {
  SUBCASE("empty training set is rejected") {
    auto model = build_earnet_small<float>(1);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train_loop(model, Dataset{}, Dataset{}, cfg), ConfigError);
  }
  SUBCASE("seeded runs are bit-identical") {
    const Dataset data = make_synthetic_dataset(8, 32, 11);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 99;
    auto run = [&]() {
      auto model = build_earnet_small<float>(99);
      train_loop(model, data, data, cfg);
      return model;
    };
    auto a = run();
    auto b = run();
    for (std::size_t i = 0; i < a.params.size(); ++i) {
      CHECK(bit_equal(a.params[i], b.params[i]));
    }
  }
  SUBCASE("loss trends down while overfitting a tiny set") {
    // Four samples per class, no augmentation, no dropout.
    const Dataset data = make_synthetic_dataset(8, 32, 7);
    auto model = build_earnet_small<float>(7);
    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.seed = 7;
    cfg.augment = false;
    cfg.dropout_rate = 0.0;
    const TrainLog log = train_loop(model, data, data, cfg);
    REQUIRE(log.size() == 60);
    for (const int e : {10, 50}) {
      CHECK(log[static_cast<std::size_t>(e + 10 - 1)].train_loss <=
            log[static_cast<std::size_t>(e - 1)].train_loss + 1e-3);
    }
    CHECK(log.back().train_acc == 1.0);
    // A fully fitted model scores perfectly on its own training set.
    const EvalReport report = evaluate(model, data, cfg.batch_size);
    CHECK(report.accuracy == 1.0);
  }
  SUBCASE("training labels must be binary") {
    Dataset bad = make_synthetic_dataset(4, 32, 1);
    bad.labels[2] = 7;
    auto model = build_earnet_small<float>(1);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(train_loop(model, bad, bad, cfg), LabelError);
  }
}

TEST_CASE("train log CSV") {
  const TrainLog log = {{1, 0.5, 0.75, 0.5}, {2, 0.25, 1.0, 0.625}};
  const auto path =
      (std::filesystem::temp_directory_path() / "earconv_log.csv").string();
  write_train_log_csv(path, log);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,train_loss,train_acc,test_acc");
  std::getline(in, line);
  CHECK(line == "1,0.500000,0.750000,0.500000");
  std::getline(in, line);
  CHECK(line == "2,0.250000,1.000000,0.625000");
}
