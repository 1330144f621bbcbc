#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "earconv/tensor.hpp"

namespace earconv {

/// One manifest row. label: 0 = female, 1 = male.
struct ManifestRecord {
  std::string image_path;
  int label = 0;
  std::string subject_id;  // optional, empty when absent
};

/// Parses a CSV manifest with header image_path,label[,subject_id].
/// Relative image paths are resolved against the manifest's directory.
/// Malformed input throws ParseError naming the offending line.
std::vector<ManifestRecord> load_manifest(const std::string& path);

struct SplitAssignment {
  std::vector<int> train;
  std::vector<int> test;
  bool stratified = true;  // false when a class was empty and we fell back
};

/// Seeded shuffle stratified by label; |train| == floor(ratio * n) and each
/// class keeps its proportion within one sample. A class with no samples
/// triggers an unstratified fallback (stratified flag cleared).
SplitAssignment split_dataset(const std::vector<ManifestRecord>& records,
                              double ratio, std::uint64_t seed);

/// Stricter protocol: whole subjects are assigned to one side, so the split
/// sizes only approximate the ratio. Records without a subject_id form
/// singleton groups.
SplitAssignment split_dataset_subject_disjoint(
    const std::vector<ManifestRecord>& records, double ratio,
    std::uint64_t seed);

/// Decodes a PNG or JPEG file, resizes bilinearly (half-pixel centers,
/// clamped borders) and scales pixels to [0, 1]. Returns (out_hw, out_hw, 3).
Tensor decode_and_resize(const std::string& path, int out_hw = 256);

/// Bilinear resampling of an (h, w, c) tensor to (out_h, out_w, c).
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

/// Horizontal mirror of an (h, w, c) tensor.
Tensor hflip(const Tensor& x);

/// Rotation about the image center with bilinear sampling; coordinates that
/// fall outside the source are filled with zeros.
Tensor rotate_bilinear(const Tensor& x, double angle_rad);

struct AugmentParams {
  bool flip = false;
  double angle_rad = 0.0;
};

/// Draw order is fixed: the flip decision first, then the angle.
AugmentParams draw_augment_params(Rng& rng, double flip_prob,
                                  double rotation_frac);

/// Mirror (maybe), then rotate. angle 0 with no flip is a bit-exact no-op.
Tensor apply_augment(const Tensor& x, const AugmentParams& params);

/// Random flip with probability 0.2 and rotation uniform in
/// +/- 0.2 of a full turn; shape preserved.
Tensor augment(const Tensor& x, Rng& rng);
Tensor augment(const Tensor& x, Rng& rng, double flip_prob,
               double rotation_frac);

/// In-memory dataset: one (h, w, c) image tensor per record.
struct Dataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
};

/// Decodes the listed records (all of them when `indices` is empty).
Dataset load_dataset(const std::vector<ManifestRecord>& records,
                     const std::vector<int>& indices, int out_hw);

}  // namespace earconv
