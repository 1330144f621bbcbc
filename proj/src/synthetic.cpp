#include "earconv/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "earconv/image_io.hpp"

namespace earconv {

namespace {

// Class 0: a few smooth radial bumps. Class 1: a fine checkerboard with a
// random phase. Both are roughly mean-0.5, so the classes differ in local
// structure rather than brightness, and the distinction survives flips,
// rotations and resizing.
Tensor synth_image(int hw, int label, Rng& rng) {
  Tensor img(Shape{hw, hw, 3}, 0.5f);
  if (label == 0) {
    const int bumps = 2 + static_cast<int>(rng.next_u64() % 3);
    for (int b = 0; b < bumps; ++b) {
      const double cy = rng.uniform(0.2, 0.8) * hw;
      const double cx = rng.uniform(0.2, 0.8) * hw;
      const double sigma = rng.uniform(hw / 6.0, hw / 3.0);
      const double amp = rng.uniform(0.25, 0.4) * (b % 2 == 0 ? 1.0 : -1.0);
      for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
          const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          const double v = amp * std::exp(-r2 / (2.0 * sigma * sigma));
          for (int c = 0; c < 3; ++c) {
            img.at(y, x, c) += static_cast<float>(v);
          }
        }
      }
    }
  } else {
    const int cell = 2 + static_cast<int>(rng.next_u64() % 3);
    const int py = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(cell));
    const int px = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(cell));
    const double amp = rng.uniform(0.25, 0.4);
    for (int y = 0; y < hw; ++y) {
      for (int x = 0; x < hw; ++x) {
        const int parity = (((y + py) / cell) + ((x + px) / cell)) % 2;
        const double v = parity == 0 ? amp : -amp;
        for (int c = 0; c < 3; ++c) {
          img.at(y, x, c) += static_cast<float>(v);
        }
      }
    }
  }
  // Mild per-pixel noise, then clamp into [0, 1].
  float* p = img.data();
  for (std::int64_t i = 0; i < img.numel(); ++i) {
    p[i] += static_cast<float>(rng.uniform(-0.03, 0.03));
    p[i] = std::clamp(p[i], 0.0f, 1.0f);
  }
  return img;
}

}  // namespace

Dataset make_synthetic_dataset(int count, int hw, std::uint64_t seed) {
  if (count < 1 || hw < 4) {
    throw ConfigError("synthetic corpus needs count >= 1 and size >= 4");
  }
  Dataset data;
  data.images.reserve(static_cast<std::size_t>(count));
  data.labels.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int label = i % 2;
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    data.images.push_back(synth_image(hw, label, rng));
    data.labels.push_back(label);
  }
  return data;
}

std::string write_synthetic_corpus(const std::string& dir, int count, int hw,
                                   std::uint64_t seed) {
  const Dataset data = make_synthetic_dataset(count, hw, seed);
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  const std::string manifest_path = (base / "manifest.csv").string();
  std::ofstream manifest(manifest_path);
  if (!manifest) {
    throw Error("cannot write '" + manifest_path + "'");
  }
  manifest << "image_path,label,subject_id\n";
  for (int i = 0; i < count; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "img_%04d.png", i);
    const Tensor& img = data.images[static_cast<std::size_t>(i)];
    ImageU8 u8;
    u8.h = hw;
    u8.w = hw;
    u8.data.resize(static_cast<std::size_t>(hw) * hw * 3);
    for (std::size_t j = 0; j < u8.data.size(); ++j) {
      u8.data[j] = static_cast<std::uint8_t>(
          std::lround(std::clamp(img[static_cast<std::int64_t>(j)], 0.0f, 1.0f) *
                      255.0f));
    }
    write_png_rgb((base / name).string(), u8);
    manifest << name << "," << data.labels[static_cast<std::size_t>(i)] << ",s"
             << i / 4 << "\n";
  }
  return manifest_path;
}

}  // namespace earconv
