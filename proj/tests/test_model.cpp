#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"

#include "earconv/model.hpp"
#include "earconv/runtime.hpp"
#include "earconv/train.hpp"
#include "test_util.hpp"

using namespace earconv;
using earconv::testutil::bit_equal;
using earconv::testutil::model_gradcheck;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

template <typename T>
void zero_param(ModelGraph<T>& model, const std::string& name) {
  for (std::size_t i = 0; i < model.param_names.size(); ++i) {
    if (model.param_names[i] == name) {
      model.params[i] = TensorT<T>(model.params[i].shape());
      return;
    }
  }
  REQUIRE(false);
}

}  // namespace

TEST_CASE("reference architecture matches its frozen layer table") {
  auto model = build_earnet<float>(0);
  CHECK(model.total_params() == 2280578);

  const std::map<std::string, std::int64_t> expected_params = {
      {"Conv1", 38912},  {"Conv2", 1179904}, {"Conv3", 590080},
      {"Conv4", 295040}, {"Conv5", 65664},   {"Conv6", 73792},
      {"Conv7", 36928},  {"Dense", 258},
  };
  for (const auto& [id, count] : expected_params) {
    const int idx = model.find_layer(id);
    REQUIRE(idx >= 0);
    CHECK(model.layers[static_cast<std::size_t>(idx)].param_count() == count);
  }

  const auto shapes = infer_output_shapes(model.layers, 256, 256, 3);
  const std::map<std::string, Shape> expected_shapes = {
      {"Input", {256, 256, 3}},   {"Conv1", {126, 126, 512}},
      {"Conv2", {126, 126, 256}}, {"MaxPool1", {63, 63, 256}},
      {"MaxPool2", {31, 31, 256}}, {"Conv3", {31, 31, 256}},
      {"Add1", {31, 31, 256}},    {"Conv4", {31, 31, 128}},
      {"MaxPool3", {15, 15, 128}}, {"MaxPool4", {15, 15, 128}},
      {"Conv5", {15, 15, 128}},   {"Add2", {15, 15, 128}},
      {"Conv6", {15, 15, 64}},    {"MaxPool5", {7, 7, 64}},
      {"Conv7", {4, 4, 64}},      {"GAP", {64}},
      {"GMP", {64}},              {"Concat", {128}},
      {"Dense", {2}},             {"Softmax", {2}},
  };
  for (const auto& [id, shape] : expected_shapes) {
    const int idx = model.find_layer(id);
    REQUIRE(idx >= 0);
    CHECK(shapes[static_cast<std::size_t>(idx)] == shape);
  }
  // The report name of the last convolution repeats an earlier one; ids stay
  // unique.
  CHECK(model.layers[model.find_layer("Conv7")].display ==
        model.layers[model.find_layer("Conv6")].display);
}

TEST_CASE("full-size forward and feature maps") {
  auto model = build_earnet<float>(12);
  Rng rng(1);
  auto x = uniform_tensor<float>(rng, Shape{1, 256, 256, 3}, 0.0f, 1.0f);

  const auto maps = extract_feature_maps(model, x, {"Conv1", "Conv7"});
  CHECK(maps[0].shape() == Shape{1, 126, 126, 512});
  CHECK(maps[1].shape() == Shape{1, 4, 4, 64});

  const auto cache = forward(model, x, Mode::kEval);
  CHECK(cache.probs().shape() == Shape{1, 2});
  const double sum = static_cast<double>(cache.probs().at(0, 0)) +
                     static_cast<double>(cache.probs().at(0, 1));
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("zeroed classifier weights give symmetric probabilities") {
  auto model = build_earnet_small<float>(5);
  zero_param(model, "Dense.weights");
  zero_param(model, "Dense.bias");
  Rng rng(2);
  auto x = uniform_tensor<float>(rng, Shape{3, 32, 32, 3}, 0.0f, 1.0f);
  const auto cache = forward(model, x, Mode::kEval);
  for (int i = 0; i < 3; ++i) {
    CHECK(cache.probs().at(i, 0) == 0.5f);
    CHECK(cache.probs().at(i, 1) == 0.5f);
  }
}

TEST_CASE("eval forward is deterministic") {
  auto model = build_earnet_small<float>(9);
  Rng rng(3);
  auto x = uniform_tensor<float>(rng, Shape{2, 32, 32, 3}, 0.0f, 1.0f);
  const auto a = forward(model, x, Mode::kEval);
  const auto b = forward(model, x, Mode::kEval);
  CHECK(bit_equal(a.probs(), b.probs()));
}

TEST_CASE("probabilities are valid over many random inputs") {
  auto model = build_earnet_small<float>(13);
  Rng rng(4);
  int checked = 0;
  for (int batch = 0; batch < 20; ++batch) {
    auto x = uniform_tensor<float>(rng, Shape{50, 32, 32, 3}, 0.0f, 1.0f);
    const auto cache = forward(model, x, Mode::kEval);
    for (int i = 0; i < 50; ++i) {
      const float p0 = cache.probs().at(i, 0);
      const float p1 = cache.probs().at(i, 1);
      CHECK(p0 > 0.0f);
      CHECK(p0 < 1.0f);
      CHECK(p1 > 0.0f);
      CHECK(p1 < 1.0f);
      CHECK(std::fabs(1.0 - (static_cast<double>(p0) + p1)) < 1e-5);
      ++checked;
    }
  }
  CHECK(checked == 1000);
}

TEST_CASE("zeroed residual branches reproduce their skip inputs bit-exactly") {
  auto model = build_earnet_small<float>(21);
  zero_param(model, "Conv3.weights");
  zero_param(model, "Conv3.bias");
  zero_param(model, "Conv5.weights");
  zero_param(model, "Conv5.bias");
  Rng rng(5);
  auto x = uniform_tensor<float>(rng, Shape{2, 32, 32, 3}, 0.0f, 1.0f);
  const auto cache = forward(model, x, Mode::kEval);
  CHECK(bit_equal(cache.out[model.find_layer("Add1")],
                  cache.out[model.find_layer("MaxPool2")]));
  CHECK(bit_equal(cache.out[model.find_layer("Add2")],
                  cache.out[model.find_layer("MaxPool4")]));
}

TEST_CASE("gradients flow through both residual blocks") {
  auto model = build_earnet_small<float>(33);
  Rng rng(6);
  auto x = uniform_tensor<float>(rng, Shape{2, 32, 32, 3}, 0.0f, 1.0f);
  Rng drop(7);
  auto cache = forward(model, x, Mode::kTrain, &drop);
  auto bce = bce_loss(cache.probs(), {0, 1});
  auto grads = backward(model, cache, bce.grad_probs);
  for (const char* name : {"Conv3.weights", "Conv5.weights"}) {
    double norm = 0.0;
    for (std::size_t i = 0; i < model.param_names.size(); ++i) {
      if (model.param_names[i] == name) {
        for (std::int64_t j = 0; j < grads[i].numel(); ++j) {
          norm += std::fabs(static_cast<double>(grads[i][j]));
        }
      }
    }
    CHECK(norm > 0.0);
  }
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
  auto model = build_earnet_small<float>(34);
  Rng rng(8);
  auto x = uniform_tensor<float>(rng, Shape{1, 32, 32, 3}, 0.0f, 1.0f);
  Rng drop(9);
  auto cache = forward(model, x, Mode::kTrain, &drop);
  auto grads = backward(model, cache, Tensor(Shape{1, 2}, 0.0f));
  for (const auto& g : grads) {
    for (std::int64_t j = 0; j < g.numel(); ++j) {
      CHECK(g[j] == 0.0f);
    }
  }
}

TEST_CASE("backward demands a train-mode cache") {
  auto model = build_earnet_small<float>(35);
  Rng rng(10);
  auto x = uniform_tensor<float>(rng, Shape{1, 32, 32, 3}, 0.0f, 1.0f);
  auto cache = forward(model, x, Mode::kEval);
  CHECK_THROWS_AS(backward(model, cache, Tensor(Shape{1, 2}, 0.0f)), UsageError);
  CHECK_THROWS_AS(forward(model, x, Mode::kTrain, nullptr), UsageError);
}

TEST_CASE("input shape and feature-map ids are validated") {
  auto model = build_earnet_small<float>(36);
  CHECK_THROWS_AS(forward(model, Tensor(Shape{1, 16, 16, 3}), Mode::kEval),
                  ShapeError);
  Rng rng(11);
  auto x = uniform_tensor<float>(rng, Shape{1, 32, 32, 3}, 0.0f, 1.0f);
  CHECK_THROWS_WITH_AS(extract_feature_maps(model, x, {"Conv9"}),
                       doctest::Contains("Conv1"), LookupError);
  CHECK_THROWS_AS(extract_feature_maps(model, x, {"GAP"}), LookupError);
  // Identical eval passes return identical maps.
  auto a = extract_feature_maps(model, x, {"Conv2"});
  auto b = extract_feature_maps(model, x, {"Conv2"});
  CHECK(bit_equal(a[0], b[0]));
}

TEST_CASE("results do not depend on the worker-thread count") {
  auto model = build_earnet_small<float>(55);
  Rng rng(14);
  auto x = uniform_tensor<float>(rng, Shape{2, 32, 32, 3}, 0.0f, 1.0f);
  const int saved = thread_count();
  set_thread_count(1);
  const auto single = forward(model, x, Mode::kEval);
  set_thread_count(4);
  const auto multi = forward(model, x, Mode::kEval);
  set_thread_count(saved);
  for (std::size_t i = 0; i < single.out.size(); ++i) {
    CHECK(bit_equal(single.out[i], multi.out[i]));
  }
}

TEST_CASE("end-to-end gradients match finite differences on the clone") {
  CHECK(model_gradcheck<double>(1, 1e-6, 1e-6) < 1e-6);
  CHECK(model_gradcheck<float>(1, 1e-3, 1e-3) < 1e-3);
}

TEST_CASE("checkpoint round trip") {
  auto model = build_earnet_small<float>(40);
  const std::string path = temp_path("earconv_test_ckpt.earconv");
  model.trained_epochs = 3;
  save_checkpoint(model, path);
  auto loaded = load_checkpoint(path);

  CHECK(loaded.arch == "earnet-small");
  CHECK(loaded.seed == 40);
  CHECK(loaded.trained_epochs == 3);
  REQUIRE(loaded.params.size() == model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    CHECK(bit_equal(loaded.params[i], model.params[i]));
  }
  Rng rng(12);
  auto x = uniform_tensor<float>(rng, Shape{2, 32, 32, 3}, 0.0f, 1.0f);
  CHECK(bit_equal(forward(model, x, Mode::kEval).probs(),
                  forward(loaded, x, Mode::kEval).probs()));
}

TEST_CASE("checkpoint header carries the payload size") {
  auto model = build_earnet<float>(41);
  const std::string path = temp_path("earconv_test_full.earconv");
  save_checkpoint(model, path);

  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  CHECK(std::string(magic, 8) == "EARCONV1");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  const auto j = nlohmann::json::parse(header);
  CHECK(j.at("total_param_bytes").get<std::int64_t>() ==
        2280578ll * 4);
  CHECK(j.at("format_version").get<int>() == 1);
}

TEST_CASE("checkpoint load failures are distinct") {
  auto model = build_earnet_small<float>(42);
  const std::string path = temp_path("earconv_test_bad.earconv");
  save_checkpoint(model, path);

  SUBCASE("truncated payload") {
    std::error_code ec;
    const auto full = std::filesystem::file_size(path, ec);
    std::filesystem::resize_file(path, full - 64, ec);
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         doctest::Contains("truncated payload"),
                         CheckpointError);
  }
  SUBCASE("corrupt magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("NOTMAGIC", 8);
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         doctest::Contains("corrupt header"), CheckpointError);
  }
  SUBCASE("header/payload shape mismatch") {
    // Rewrite the header with a tampered parameter shape.
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    in.close();
    std::uint64_t len = 0;
    std::memcpy(&len, all.data() + 8, 8);
    auto j = nlohmann::json::parse(all.substr(16, len));
    j["params"][0]["shape"] = {1, 1, 1, 1};
    const std::string tampered = j.dump();
    std::ofstream out(path, std::ios::binary);
    out.write(all.data(), 8);
    const std::uint64_t new_len = tampered.size();
    out.write(reinterpret_cast<const char*>(&new_len), 8);
    out.write(tampered.data(), static_cast<std::streamsize>(tampered.size()));
    out.write(all.data() + 16 + static_cast<std::streamsize>(len),
              static_cast<std::streamsize>(all.size() - 16 - len));
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         doctest::Contains("shape mismatch"), CheckpointError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(temp_path("no_such.earconv")),
                    CheckpointError);
  }
  SUBCASE("absurd header length") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const std::uint64_t huge = ~0ull;
    f.write(reinterpret_cast<const char*>(&huge), 8);
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path),
                         doctest::Contains("corrupt header"), CheckpointError);
  }
}

TEST_CASE("clone factory validates its arguments") {
  CHECK_THROWS_AS(build_earnet_small<float>(0, 4, 8), ConfigError);
  // Works at other scales where no pool needs clamping.
  auto m = build_earnet_small<float>(0, 64, 8);
  CHECK(m.input_h == 64);
  CHECK(infer_output_shapes(m.layers, 64, 64, 3).back() == Shape{2});
}
