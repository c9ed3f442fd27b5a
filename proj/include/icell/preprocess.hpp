#pragma once

// Preprocessing pipeline for raw multi-channel images or volumes:
// max-projection, modal-background subtraction, clamping, per-channel max
// rescaling, moment-based alignment, and stratified train/test splitting.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "icell/common.hpp"
#include "icell/image.hpp"
#include "icell/rng.hpp"
#include "icell/tensor.hpp"

namespace icell {

// "Most populous pixel intensity": histogram the channel into 256 equal bins
// over its value range, pick the fullest bin, then return the most frequent
// exact value inside that bin (ties to the smaller value). Exact on
// quantized data, robust on continuous data.
inline float modal_intensity(const float* p, std::size_t n) {
  check_value(n > 0, "modal_intensity: empty channel");
  float lo = p[0], hi = p[0];
  for (std::size_t i = 0; i < n; ++i) {
    lo = std::min(lo, p[i]);
    hi = std::max(hi, p[i]);
  }
  if (lo == hi) return lo;
  constexpr int kBins = 256;
  const double scale = kBins / (static_cast<double>(hi) - lo);
  std::vector<std::size_t> hist(kBins, 0);
  auto bin_of = [&](float v) {
    int b = static_cast<int>((static_cast<double>(v) - lo) * scale);
    return std::min(b, kBins - 1);
  };
  for (std::size_t i = 0; i < n; ++i) ++hist[static_cast<std::size_t>(bin_of(p[i]))];
  const int best =
      static_cast<int>(std::max_element(hist.begin(), hist.end()) - hist.begin());
  std::map<float, std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i)
    if (bin_of(p[i]) == best) ++counts[p[i]];
  float mode = 0;
  std::size_t top = 0;
  for (const auto& [v, c] : counts)
    if (c > top) {
      top = c;
      mode = v;
    }
  return mode;
}

// Per-pixel maximum along the depth axis: (C, D, H, W) -> (C, H, W).
inline Tensor<float> max_project(const Tensor<float>& volume) {
  check_shape(volume.rank() == 4, "max_project: expected (C,D,H,W)");
  const int C = volume.dim(0), D = volume.dim(1), H = volume.dim(2),
            W = volume.dim(3);
  Tensor<float> out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        float m = volume.at(c, 0, h, w);
        for (int d = 1; d < D; ++d) m = std::max(m, volume.at(c, d, h, w));
        out[(static_cast<std::size_t>(c) * H + h) * W + w] = m;
      }
  return out;
}

// Intensity normalization only (no geometry): subtract the modal intensity
// per channel, clamp negatives to zero, rescale the maximum to one. An
// all-zero channel stays zero.
inline Tensor<float> normalize_intensity(Tensor<float> image) {
  check_shape(image.rank() == 3, "normalize_intensity: expected (C,H,W)");
  const int C = image.dim(0);
  const std::size_t per = image.numel() / static_cast<std::size_t>(C);
  for (int c = 0; c < C; ++c) {
    float* p = image.data() + static_cast<std::size_t>(c) * per;
    const float mode = modal_intensity(p, per);
    float mx = 0;
    for (std::size_t i = 0; i < per; ++i) {
      p[i] = std::max(0.0f, p[i] - mode);
      mx = std::max(mx, p[i]);
    }
    if (mx > 0)
      for (std::size_t i = 0; i < per; ++i) p[i] /= mx;
  }
  return image;
}

// ---------------------------------------------------------------------------
// Alignment: rotate the cell-mask major axis (second-moment eigenvector)
// horizontal, put the nucleus center of mass at the image center, then flip
// so the cell mask's third central moment is nonnegative along each axis.

struct AlignResult {
  MultiChannelImage image;
  double rotation = 0;  // radians applied (counterclockwise)
  bool flipped_h = false;
  bool flipped_v = false;
  bool degenerate = false;  // circularly symmetric mask: rotation skipped
};

namespace detail {

struct MaskMoments {
  double mass = 0, mx = 0, my = 0;   // zeroth + centroid
  double mu20 = 0, mu02 = 0, mu11 = 0;
};

inline MaskMoments mask_moments(const Tensor<float>& plane, float thresh) {
  const int H = plane.dim(0), W = plane.dim(1);
  MaskMoments m;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      if (plane[static_cast<std::size_t>(h) * W + w] > thresh) {
        m.mass += 1;
        m.mx += w;
        m.my += h;
      }
  if (m.mass == 0) return m;
  m.mx /= m.mass;
  m.my /= m.mass;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      if (plane[static_cast<std::size_t>(h) * W + w] > thresh) {
        const double dx = w - m.mx, dy = h - m.my;
        m.mu20 += dx * dx;
        m.mu02 += dy * dy;
        m.mu11 += dx * dy;
      }
  m.mu20 /= m.mass;
  m.mu02 /= m.mass;
  m.mu11 /= m.mass;
  return m;
}

inline float bilinear(const Tensor<float>& plane, double x, double y) {
  const int H = plane.dim(0), W = plane.dim(1);
  if (x < 0 || y < 0 || x > W - 1 || y > H - 1) return 0;
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double fx = x - x0, fy = y - y0;
  const auto at = [&](int yy, int xx) {
    return static_cast<double>(plane[static_cast<std::size_t>(yy) * W + xx]);
  };
  return static_cast<float>((1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                            fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1)));
}

inline Tensor<float> channel_plane(const MultiChannelImage& img, int c) {
  const int H = img.height(), W = img.width();
  Tensor<float> plane({H, W});
  std::copy_n(img.pixels.data() + static_cast<std::size_t>(c) * H * W,
              static_cast<std::size_t>(H) * W, plane.data());
  return plane;
}

}  // namespace detail

// Major-axis angle of a mask from its second central moments, in (-pi/2,
// pi/2]. Degenerate (circular) masks report `degenerate`.
inline double mask_orientation(const detail::MaskMoments& m, bool* degenerate) {
  const double d = m.mu20 - m.mu02;
  const double denom = std::max(1.0, m.mu20 + m.mu02);
  if (degenerate)
    *degenerate = std::abs(d) / denom < 1e-3 && std::abs(m.mu11) / denom < 1e-3;
  return 0.5 * std::atan2(2 * m.mu11, d);
}

inline AlignResult align(const MultiChannelImage& input, int cell_channel = 0,
                         int nucleus_channel = 1, float thresh = 0.0f) {
  input.validate();
  check_value(cell_channel < input.n_channels() &&
                  nucleus_channel < input.n_channels(),
              "align: channel index out of range");
  const int H = input.height(), W = input.width(), C = input.n_channels();

  const Tensor<float> cell = detail::channel_plane(input, cell_channel);
  const Tensor<float> nuc = detail::channel_plane(input, nucleus_channel);
  const auto cm = detail::mask_moments(cell, thresh);
  const auto nm = detail::mask_moments(nuc, thresh);
  check_value(cm.mass > 0, "align: empty cell mask");
  check_value(nm.mass > 0, "align: empty nucleus mask");

  AlignResult res;
  double theta = mask_orientation(cm, &res.degenerate);
  if (res.degenerate) theta = 0;
  res.rotation = -theta;

  // output pixel (x,y) pulls from the input at: rotate by +theta about the
  // nucleus CoM after translating image center -> CoM
  const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  auto src = [&](double x, double y, double& sx, double& sy) {
    const double dx = x - cx, dy = y - cy;
    sx = nm.mx + ct * dx - st * dy;
    sy = nm.my + st * dx + ct * dy;
  };

  res.image.channels = input.channels;
  res.image.meta = input.meta;
  res.image.pixels = Tensor<float>({C, H, W});
  for (int c = 0; c < C; ++c) {
    const Tensor<float> plane = detail::channel_plane(input, c);
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        double sx, sy;
        src(w, h, sx, sy);
        res.image.at(c, h, w) = detail::bilinear(plane, sx, sy);
      }
  }

  // canonicalize handedness: third central moments of the rotated cell mask
  const Tensor<float> rcell = detail::channel_plane(res.image, cell_channel);
  double mu30 = 0, mu03 = 0, mass = 0, mx = 0, my = 0;
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w)
      if (rcell[static_cast<std::size_t>(h) * W + w] > thresh) {
        mass += 1;
        mx += w;
        my += h;
      }
  if (mass > 0) {
    mx /= mass;
    my /= mass;
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        if (rcell[static_cast<std::size_t>(h) * W + w] > thresh) {
          mu30 += std::pow(w - mx, 3);
          mu03 += std::pow(h - my, 3);
        }
  }
  res.flipped_h = mu30 < 0;
  res.flipped_v = mu03 < 0;
  if (res.flipped_h || res.flipped_v) {
    Tensor<float> flipped({C, H, W});
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const int sw = res.flipped_h ? W - 1 - w : w;
          const int sh = res.flipped_v ? H - 1 - h : h;
          flipped[(static_cast<std::size_t>(c) * H + h) * W + w] =
              res.image.at(c, sh, sw);
        }
    res.image.pixels = std::move(flipped);
  }
  return res;
}

// Center-pad (or center-crop) to side x side.
inline MultiChannelImage pad_to(const MultiChannelImage& input, int side) {
  input.validate();
  check_value(side > 0, "pad_to: side must be positive");
  const int C = input.n_channels(), H = input.height(), W = input.width();
  MultiChannelImage out;
  out.channels = input.channels;
  out.meta = input.meta;
  out.pixels = Tensor<float>({C, side, side});
  const int oh = (side - H) / 2, ow = (side - W) / 2;
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h) {
      const int th = h + oh;
      if (th < 0 || th >= side) continue;
      for (int w = 0; w < W; ++w) {
        const int tw = w + ow;
        if (tw < 0 || tw >= side) continue;
        out.at(c, th, tw) = input.at(c, h, w);
      }
    }
  return out;
}

struct PreprocessOptions {
  int target_side = 0;  // 0 = keep size
  bool do_align = true;
  int cell_channel = 0;
  int nucleus_channel = 1;
};

// Full pipeline: (optional) max-project, normalize intensities, (optional)
// align, (optional) pad to the target side.
inline MultiChannelImage preprocess(const Tensor<float>& raw,
                                    std::vector<std::string> channels = {},
                                    const PreprocessOptions& opt = {}) {
  check_value(!raw.empty(), "preprocess: empty image");
  Tensor<float> planar = raw.rank() == 4 ? max_project(raw) : raw;
  check_shape(planar.rank() == 3, "preprocess: expected (C,H,W) or (C,D,H,W)");
  MultiChannelImage img;
  img.pixels = normalize_intensity(std::move(planar));
  img.channels = std::move(channels);
  if (opt.do_align)
    img = align(img, opt.cell_channel, opt.nucleus_channel).image;
  if (opt.target_side > 0 &&
      (img.height() != opt.target_side || img.width() != opt.target_side))
    img = pad_to(img, opt.target_side);
  return img;
}

// ---------------------------------------------------------------------------
// Stratified splitting. Default 95/5 per label; per-label test counts can be
// pinned explicitly (e.g. to mirror a published realized split). Classes
// with fewer than 2 items go entirely to train with a warning flag.

struct SplitOptions {
  double train_fraction = 0.95;
  std::map<int, int> test_count_override;  // label -> exact test count
};

struct SplitReport {
  std::map<int, int> train_per_label;
  std::map<int, int> test_per_label;
  std::vector<int> warned_labels;  // < 2 items, forced to train
};

inline SplitReport split(CorpusManifest& manifest, std::uint64_t seed,
                         const SplitOptions& opt = {}) {
  check_value(opt.train_fraction > 0.0 && opt.train_fraction <= 1.0,
              "split: train_fraction must be in (0,1]");
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < manifest.records.size(); ++i)
    by_label[manifest.records[i].label].push_back(i);

  SplitReport report;
  for (auto& [label, idx] : by_label) {
    const int n = static_cast<int>(idx.size());
    int n_test;
    if (auto it = opt.test_count_override.find(label);
        it != opt.test_count_override.end()) {
      check_value(it->second >= 0 && it->second <= n,
                  "split: bad test-count override for label " +
                      std::to_string(label));
      n_test = it->second;
    } else {
      n_test = static_cast<int>(
          std::lround(n * (1.0 - opt.train_fraction)));
    }
    if (n < 2) {
      report.warned_labels.push_back(label);
      n_test = 0;
    }
    // label-keyed stream so the draw for one class is independent of the
    // others' sizes
    RandomStream rng(mix_seed(seed, static_cast<std::uint64_t>(label)));
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    for (int i = 0; i < n; ++i)
      manifest.records[idx[static_cast<std::size_t>(i)]].split =
          i < n_test ? "test" : "train";
    report.test_per_label[label] = n_test;
    report.train_per_label[label] = n - n_test;
  }
  return report;
}

}  // namespace icell
