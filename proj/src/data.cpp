#include "earconv/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>

#include "earconv/image_io.hpp"

namespace earconv {

namespace {

constexpr std::uint64_t kSplitTag = 0x53504C54u;  // "SPLT"

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') {
    s.pop_back();
  }
  return s;
}

}  // namespace

std::vector<ManifestRecord> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError("manifest file not found: '" + path + "'");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("manifest '" + path + "' is empty");
  }
  line = strip_cr(line);
  bool with_subject = false;
  if (line == "image_path,label") {
    with_subject = false;
  } else if (line == "image_path,label,subject_id") {
    with_subject = true;
  } else {
    throw ParseError("bad header '" + line +
                     "'; expected image_path,label[,subject_id]");
  }

  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  std::vector<ManifestRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) {
      continue;
    }
    const auto fields = split_fields(line);
    const std::size_t want = with_subject ? 3 : 2;
    if (fields.size() != want) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(want) + " fields, got " +
                       std::to_string(fields.size()));
    }
    ManifestRecord rec;
    if (fields[0].empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty image path");
    }
    std::filesystem::path img(fields[0]);
    rec.image_path = img.is_absolute() ? img.string() : (base / img).string();
    if (fields[1] == "0") {
      rec.label = 0;
    } else if (fields[1] == "1") {
      rec.label = 1;
    } else {
      throw ParseError("line " + std::to_string(line_no) +
                       ": non-binary label '" + fields[1] + "'");
    }
    if (with_subject) {
      rec.subject_id = fields[2];
    }
    records.push_back(std::move(rec));
  }
  return records;
}

namespace {

void seeded_shuffle(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(v[i - 1], v[j]);
  }
}

// floor(ratio * n) with a nudge against products like 0.29 * 100 rounding
// to 28.999999999999996.
int floor_share(double ratio, int n) {
  return static_cast<int>(std::floor(ratio * n + 1e-9));
}

}  // namespace

SplitAssignment split_dataset(const std::vector<ManifestRecord>& records,
                              double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0) || !(ratio < 1.0)) {
    throw RangeError("split ratio must lie strictly between 0 and 1");
  }
  const int n = static_cast<int>(records.size());
  const int target = floor_share(ratio, n);
  Rng rng(mix_seed(seed, kSplitTag));

  std::vector<int> by_class[2];
  for (int i = 0; i < n; ++i) {
    const int y = records[static_cast<std::size_t>(i)].label;
    if (y != 0 && y != 1) {
      throw LabelError("record " + std::to_string(i) + " has non-binary label");
    }
    by_class[y].push_back(i);
  }

  SplitAssignment split;
  if (by_class[0].empty() || by_class[1].empty()) {
    // Degenerate class distribution; plain shuffled split instead.
    split.stratified = false;
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      all[static_cast<std::size_t>(i)] = i;
    }
    seeded_shuffle(all, rng);
    split.train.assign(all.begin(), all.begin() + target);
    split.test.assign(all.begin() + target, all.end());
  } else {
    // Per-class floors, with the leftover slot going to the class whose
    // fractional share is larger (class 0 on ties). Keeps each class within
    // one sample of its proportion while |train| == floor(ratio * n).
    int take[2];
    double frac[2];
    for (int c = 0; c < 2; ++c) {
      const int size = static_cast<int>(by_class[c].size());
      take[c] = floor_share(ratio, size);
      frac[c] = ratio * size - take[c];
    }
    int leftover = target - take[0] - take[1];
    while (leftover > 0) {
      const int c = frac[1] > frac[0] ? 1 : 0;
      ++take[c];
      frac[c] = -1.0;
      --leftover;
    }
    while (leftover < 0) {
      const int c = frac[1] < frac[0] ? 1 : 0;
      --take[c];
      frac[c] = 2.0;
      ++leftover;
    }
    for (int c = 0; c < 2; ++c) {
      take[c] = std::clamp(take[c], 0, static_cast<int>(by_class[c].size()));
    }
    for (int c = 0; c < 2; ++c) {
      seeded_shuffle(by_class[c], rng);
      split.train.insert(split.train.end(), by_class[c].begin(),
                         by_class[c].begin() + take[c]);
      split.test.insert(split.test.end(), by_class[c].begin() + take[c],
                        by_class[c].end());
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

SplitAssignment split_dataset_subject_disjoint(
    const std::vector<ManifestRecord>& records, double ratio,
    std::uint64_t seed) {
  if (!(ratio > 0.0) || !(ratio < 1.0)) {
    throw RangeError("split ratio must lie strictly between 0 and 1");
  }
  const int n = static_cast<int>(records.size());
  const int target = floor_share(ratio, n);
  Rng rng(mix_seed(seed, kSplitTag));

  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) {
    const auto& sid = records[static_cast<std::size_t>(i)].subject_id;
    // Records without a subject id form singleton groups.
    const std::string key =
        sid.empty() ? "\x01anon:" + std::to_string(i) : sid;
    groups[key].push_back(i);
  }
  std::vector<const std::vector<int>*> order;
  order.reserve(groups.size());
  for (const auto& [key, members] : groups) {
    order.push_back(&members);
  }
  std::vector<int> perm(order.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    perm[i] = static_cast<int>(i);
  }
  seeded_shuffle(perm, rng);

  SplitAssignment split;
  int assigned = 0;
  for (int gi : perm) {
    const auto& members = *order[static_cast<std::size_t>(gi)];
    if (assigned < target) {
      split.train.insert(split.train.end(), members.begin(), members.end());
      assigned += static_cast<int>(members.size());
    } else {
      split.test.insert(split.test.end(), members.begin(), members.end());
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 3) {
    throw ShapeError("resize expects an (h, w, c) tensor");
  }
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("resize target extents must be >= 1");
  }
  const int h = x.extent(0);
  const int w = x.extent(1);
  const int c = x.extent(2);
  Tensor out(Shape{out_h, out_w, c});
  const double sy_scale = static_cast<double>(h) / out_h;
  const double sx_scale = static_cast<double>(w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    // Half-pixel centers, clamped at the borders.
    double sy = (oy + 0.5) * sy_scale - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double sx = (ox + 0.5) * sx_scale - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double v00 = x.at(y0, x0, ch);
        const double v01 = x.at(y0, x1, ch);
        const double v10 = x.at(y1, x0, ch);
        const double v11 = x.at(y1, x1, ch);
        const double top = v00 + fx * (v01 - v00);
        const double bot = v10 + fx * (v11 - v10);
        out.at(oy, ox, ch) = static_cast<float>(top + fy * (bot - top));
      }
    }
  }
  return out;
}

Tensor hflip(const Tensor& x) {
  if (x.rank() != 3) {
    throw ShapeError("hflip expects an (h, w, c) tensor");
  }
  const int h = x.extent(0);
  const int w = x.extent(1);
  const int c = x.extent(2);
  Tensor out(x.shape());
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      for (int ch = 0; ch < c; ++ch) {
        out.at(y, xx, ch) = x.at(y, w - 1 - xx, ch);
      }
    }
  }
  return out;
}

Tensor rotate_bilinear(const Tensor& x, double angle_rad) {
  if (x.rank() != 3) {
    throw ShapeError("rotate expects an (h, w, c) tensor");
  }
  const int h = x.extent(0);
  const int w = x.extent(1);
  const int c = x.extent(2);
  Tensor out(x.shape());
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  const double cs = std::cos(angle_rad);
  const double sn = std::sin(angle_rad);
  auto sample = [&](int y, int xx, int ch) -> double {
    if (y < 0 || y >= h || xx < 0 || xx >= w) {
      return 0.0;  // zero fill outside the source
    }
    return x.at(y, xx, ch);
  };
  for (int oy = 0; oy < h; ++oy) {
    for (int ox = 0; ox < w; ++ox) {
      const double dy = oy - cy;
      const double dx = ox - cx;
      // Inverse map: the output pixel pulls from the source rotated by -angle.
      const double sx = cx + cs * dx + sn * dy;
      const double sy = cy - sn * dx + cs * dy;
      const double fy0 = std::floor(sy);
      const double fx0 = std::floor(sx);
      const int y0 = static_cast<int>(fy0);
      const int x0 = static_cast<int>(fx0);
      const double fy = sy - fy0;
      const double fx = sx - fx0;
      for (int ch = 0; ch < c; ++ch) {
        const double v00 = sample(y0, x0, ch);
        const double v01 = sample(y0, x0 + 1, ch);
        const double v10 = sample(y0 + 1, x0, ch);
        const double v11 = sample(y0 + 1, x0 + 1, ch);
        const double top = v00 + fx * (v01 - v00);
        const double bot = v10 + fx * (v11 - v10);
        out.at(oy, ox, ch) = static_cast<float>(top + fy * (bot - top));
      }
    }
  }
  return out;
}

AugmentParams draw_augment_params(Rng& rng, double flip_prob,
                                  double rotation_frac) {
  AugmentParams p;
  p.flip = rng.next_double() < flip_prob;
  if (rotation_frac > 0.0) {
    const double limit = rotation_frac * 2.0 * std::numbers::pi;
    p.angle_rad = rng.uniform(-limit, limit);
  }
  return p;
}

Tensor apply_augment(const Tensor& x, const AugmentParams& params) {
  Tensor out = params.flip ? hflip(x) : x;
  if (params.angle_rad != 0.0) {
    out = rotate_bilinear(out, params.angle_rad);
  }
  return out;
}

Tensor augment(const Tensor& x, Rng& rng) {
  return augment(x, rng, 0.2, 0.2);
}

Tensor augment(const Tensor& x, Rng& rng, double flip_prob,
               double rotation_frac) {
  return apply_augment(x, draw_augment_params(rng, flip_prob, rotation_frac));
}

Tensor decode_and_resize(const std::string& path, int out_hw) {
  const ImageU8 img = read_image(path);
  Tensor t(Shape{img.h, img.w, 3});
  float* p = t.data();
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    p[i] = static_cast<float>(img.data[i]) / 255.0f;
  }
  return bilinear_resize(t, out_hw, out_hw);
}

Dataset load_dataset(const std::vector<ManifestRecord>& records,
                     const std::vector<int>& indices, int out_hw) {
  Dataset data;
  auto push = [&](int i) {
    const auto& rec = records[static_cast<std::size_t>(i)];
    data.images.push_back(decode_and_resize(rec.image_path, out_hw));
    data.labels.push_back(rec.label);
  };
  if (indices.empty()) {
    for (int i = 0; i < static_cast<int>(records.size()); ++i) {
      push(i);
    }
  } else {
    for (int i : indices) {
      if (i < 0 || i >= static_cast<int>(records.size())) {
        throw LookupError("dataset index " + std::to_string(i) +
                          " out of range");
      }
      push(i);
    }
  }
  return data;
}

}  // namespace earconv
