#pragma once

#include <cstdint>
#include <string>

#include "earconv/data.hpp"

namespace earconv {

/// Two-class synthetic corpus with geometric textures the classifier can
/// separate: class 0 images carry a few smooth radial blobs, class 1 images
/// a fine checkerboard. Both share the same mean intensity and survive
/// flips, rotations and resizing, so smoke tests run with augmentation on.
/// Labels alternate 0,1,0,1,... so any prefix stays balanced.
Dataset make_synthetic_dataset(int count, int hw, std::uint64_t seed);

/// Writes `count` PNG images plus manifest.csv (with subject ids, four
/// images per subject) into `dir`; returns the manifest path.
std::string write_synthetic_corpus(const std::string& dir, int count, int hw,
                                   std::uint64_t seed);

}  // namespace earconv
