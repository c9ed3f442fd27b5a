#pragma once

// Deterministic synthetic cell corpus: two reference channels (cell membrane,
// nucleus) plus one structure channel drawn from K localization archetypes.
// Every image is a pure function of (spec, index), so corpora are bit-stable
// across runs and machines.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icell/common.hpp"
#include "icell/image.hpp"
#include "icell/rng.hpp"
#include "icell/tensor.hpp"

namespace icell {

// Archetypes ordered so that small-K desk corpora keep the most mutually
// distinct localization patterns first (inside nucleus, nuclear rim, cell
// rim, cytoplasmic puncta). Display names follow the labeled-structure set.
inline const std::vector<std::string>& structure_names() {
  static const std::vector<std::string> names = {
      "fibrillarin",   "lamin B1",   "ZO1",        "TOM20",
      "alpha-tubulin", "Sec61 beta", "alpha-actinin", "beta-actin",
      "desmoplakin",   "myosin IIB"};
  return names;
}

struct SyntheticCellSpec {
  int n = 512;
  int side = 64;
  int n_classes = 4;  // K, uses the first K archetypes
  std::uint64_t seed = 7;
  double texture = 0.25;  // multiplicative speckle amplitude inside supports

  nlohmann::json to_json() const {
    return {{"n", n},
            {"side", side},
            {"n_classes", n_classes},
            {"seed", seed},
            {"texture", texture}};
  }
  static SyntheticCellSpec from_json(const nlohmann::json& j) {
    SyntheticCellSpec s;
    s.n = j.value("n", 512);
    s.side = j.value("side", 64);
    s.n_classes = j.value("n_classes", 4);
    s.seed = j.value("seed", std::uint64_t{7});
    s.texture = j.value("texture", 0.25);
    return s;
  }

  void validate() const {
    check_value(n > 0, "corpus size must be positive");
    check_value(side >= 8 && (side & (side - 1)) == 0,
                "image side must be a power of two >= 8");
    check_value(n_classes >= 1 &&
                    n_classes <= static_cast<int>(structure_names().size()),
                "n_classes must be in [1, " +
                    std::to_string(structure_names().size()) + "]");
    check_value(texture >= 0.0 && texture < 1.0, "texture must be in [0,1)");
  }
};

// Cell = ellipse (center, semi-axes a >= b, angle phi). Nucleus = disk of
// radius nr around offset (nox, noy) in the cell's normalized frame, where
// the cell boundary is the unit circle; |offset| + nr < 1 makes the nucleus
// a subset of the cell by construction.
struct CellGeometry {
  double cx = 0, cy = 0, a = 1, b = 1, phi = 0;
  double nr = 0.4, nox = 0, noy = 0;

  nlohmann::json to_json() const {
    return {{"cx", cx}, {"cy", cy}, {"a", a},     {"b", b},
            {"phi", phi}, {"nr", nr}, {"nox", nox}, {"noy", noy}};
  }
};

// Normalized coordinates of pixel (x, y) in the cell frame: the cell
// interior is u^2 + v^2 <= 1.
inline void cell_frame(const CellGeometry& g, double x, double y, double& u,
                       double& v) {
  const double dx = x - g.cx, dy = y - g.cy;
  const double c = std::cos(g.phi), s = std::sin(g.phi);
  u = (c * dx + s * dy) / g.a;
  v = (-s * dx + c * dy) / g.b;
}

inline double cell_rho(const CellGeometry& g, double x, double y) {
  double u, v;
  cell_frame(g, x, y, u, v);
  return std::sqrt(u * u + v * v);
}

inline double nucleus_rho(const CellGeometry& g, double x, double y) {
  double u, v;
  cell_frame(g, x, y, u, v);
  const double du = u - g.nox, dv = v - g.noy;
  return std::sqrt(du * du + dv * dv) / g.nr;
}

namespace detail {

inline CellGeometry draw_geometry(const SyntheticCellSpec& spec,
                                  RandomStream& rng) {
  CellGeometry g;
  const double S = spec.side;
  g.cx = 0.5 * S + rng.uniform(-0.04, 0.04) * S;
  g.cy = 0.5 * S + rng.uniform(-0.04, 0.04) * S;
  g.a = rng.uniform(0.30, 0.42) * S;
  g.b = rng.uniform(0.18, 0.27) * S;
  g.phi = rng.uniform(0.0, 3.14159265358979323846);
  g.nr = rng.uniform(0.34, 0.46);
  const double max_off = 0.90 - g.nr;
  const double off = rng.uniform(0.0, max_off);
  const double dir = rng.uniform(0.0, 6.28318530717958647692);
  g.nox = off * std::cos(dir);
  g.noy = off * std::sin(dir);
  return g;
}

// Additive Gaussian bump at normalized-frame center with given sigma (also
// in pixels), evaluated per pixel in image space.
struct Blob {
  double x, y, sigma, amp;
};

inline void paint_blobs(Tensor<float>& plane, const std::vector<Blob>& blobs) {
  const int H = plane.dim(0), W = plane.dim(1);
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      double v = plane[static_cast<std::size_t>(h) * W + w];
      for (const auto& b : blobs) {
        const double dx = w - b.x, dy = h - b.y;
        v += b.amp * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
      }
      plane[static_cast<std::size_t>(h) * W + w] = static_cast<float>(v);
    }
}

// A point at nucleus-frame polar (rho, theta), mapped to image coordinates.
inline void nucleus_point(const CellGeometry& g, double rho, double theta,
                          double& x, double& y) {
  const double u = g.nox + rho * g.nr * std::cos(theta);
  const double v = g.noy + rho * g.nr * std::sin(theta);
  const double c = std::cos(g.phi), s = std::sin(g.phi);
  x = g.cx + g.a * u * c - g.b * v * s;
  y = g.cy + g.a * u * s + g.b * v * c;
}

inline void cell_point(const CellGeometry& g, double rho, double theta,
                       double& x, double& y) {
  const double u = rho * std::cos(theta), v = rho * std::sin(theta);
  const double c = std::cos(g.phi), s = std::sin(g.phi);
  x = g.cx + g.a * u * c - g.b * v * s;
  y = g.cy + g.a * u * s + g.b * v * c;
}

}  // namespace detail

// Structure channel for archetype k (0-based), painted as a function of the
// geometry and the per-image stream. Supports are constructed to respect the
// archetype's localization rule exactly (e.g. archetype 0 is truncated to
// the nucleus interior), which the tests assert.
inline Tensor<float> paint_structure(int archetype, const CellGeometry& g,
                                     int side, RandomStream& rng) {
  Tensor<float> plane({side, side});
  std::vector<detail::Blob> blobs;
  auto mask_fill = [&](auto&& inside, auto&& value) {
    for (int h = 0; h < side; ++h)
      for (int w = 0; w < side; ++w)
        if (inside(static_cast<double>(w), static_cast<double>(h)))
          plane[static_cast<std::size_t>(h) * side + w] = static_cast<float>(
              value(static_cast<double>(w), static_cast<double>(h)));
  };
  const double S = side;
  switch (archetype) {
    case 0: {  // fibrillarin-like: blobs strictly inside the nucleus
      // Nucleolus positions are a fixed function of the nucleus frame (no
      // per-image randomness): the archetype's support is then fully
      // determined by the cell/nucleus geometry, which is what lets a
      // shape-conditioned model predict it.
      static constexpr double kSites[][2] = {
          {0.0, 0.0}, {0.42, 2.1}, {0.42, 4.6}};
      for (const auto& site : kSites) {
        double x, y;
        detail::nucleus_point(g, site[0], site[1], x, y);
        blobs.push_back({x, y, 0.04 * S, 1.0});
      }
      detail::paint_blobs(plane, blobs);
      // hard truncation: the support is a subset of the nucleus interior
      mask_fill([&](double x, double y) { return nucleus_rho(g, x, y) > 0.92; },
                [](double, double) { return 0.0; });
      break;
    }
    case 1: {  // lamin B1-like: band on the nuclear envelope
      mask_fill(
          [&](double x, double y) {
            const double r = nucleus_rho(g, x, y);
            return r >= 0.78 && r <= 1.0;
          },
          [&](double x, double y) {
            return 1.0 - 3.0 * std::abs(nucleus_rho(g, x, y) - 0.89);
          });
      break;
    }
    case 2: {  // ZO1-like: puncta at the cell rim, outside the nucleus
      const int k = 8 + static_cast<int>(rng.below(5));
      for (int i = 0; i < k; ++i) {
        double x, y;
        detail::cell_point(g, rng.uniform(0.86, 0.95), rng.uniform(0.0, 6.283),
                           x, y);
        blobs.push_back({x, y, 0.016 * S, 1.0});
      }
      detail::paint_blobs(plane, blobs);
      mask_fill(
          [&](double x, double y) {
            return cell_rho(g, x, y) > 1.0 || cell_rho(g, x, y) < 0.7;
          },
          [](double, double) { return 0.0; });
      break;
    }
    case 3: {  // TOM20-like: puncta spread through the cytoplasm
      const int k = 12 + static_cast<int>(rng.below(7));
      for (int i = 0; i < k; ++i) {
        double x = 0, y = 0;
        for (int tries = 0; tries < 64; ++tries) {
          detail::cell_point(g, rng.uniform(0.15, 0.8),
                             rng.uniform(0.0, 6.283), x, y);
          if (nucleus_rho(g, x, y) > 1.25) break;
        }
        blobs.push_back({x, y, 0.02 * S, 0.9});
      }
      detail::paint_blobs(plane, blobs);
      mask_fill(
          [&](double x, double y) {
            return cell_rho(g, x, y) > 0.95 || nucleus_rho(g, x, y) < 1.05;
          },
          [](double, double) { return 0.0; });
      break;
    }
    case 4: {  // alpha-tubulin-like: rays from the nucleus toward the rim
      const int k = 6 + static_cast<int>(rng.below(4));
      std::vector<double> angles;
      for (int i = 0; i < k; ++i) angles.push_back(rng.uniform(0.0, 6.283));
      mask_fill(
          [&](double x, double y) {
            const double rc = cell_rho(g, x, y);
            if (rc > 0.97 || nucleus_rho(g, x, y) < 1.0) return false;
            double u, v;
            cell_frame(g, x, y, u, v);
            const double th = std::atan2(v, u);
            for (double a : angles) {
              double d = std::abs(std::remainder(th - a, 6.28318530717958647692));
              if (d < 0.09) return true;
            }
            return false;
          },
          [](double, double) { return 0.85; });
      break;
    }
    case 5: {  // Sec61 beta-like: perinuclear shell
      mask_fill(
          [&](double x, double y) {
            const double rn = nucleus_rho(g, x, y);
            return rn >= 1.0 && rn <= 1.45 && cell_rho(g, x, y) <= 0.97;
          },
          [&](double x, double y) {
            return 1.0 - 1.8 * (nucleus_rho(g, x, y) - 1.0);
          });
      break;
    }
    case 6: {  // alpha-actinin-like: periodic bundles across the cytoplasm
      const double freq = rng.uniform(4.0, 6.0);
      const double phase = rng.uniform(0.0, 6.283);
      mask_fill(
          [&](double x, double y) {
            if (cell_rho(g, x, y) > 0.95 || nucleus_rho(g, x, y) < 1.05)
              return false;
            double u, v;
            cell_frame(g, x, y, u, v);
            return std::sin(freq * 3.14159 * u + phase) > 0.45;
          },
          [](double, double) { return 0.8; });
      break;
    }
    case 7: {  // beta-actin-like: broad band under the cell rim
      mask_fill(
          [&](double x, double y) {
            const double r = cell_rho(g, x, y);
            return r >= 0.68 && r <= 1.0 && nucleus_rho(g, x, y) > 1.0;
          },
          [&](double x, double y) {
            return 0.5 + 0.5 * (cell_rho(g, x, y) - 0.68) / 0.32;
          });
      break;
    }
    case 8: {  // desmoplakin-like: puncta pinned to the cell boundary
      const int k = 10 + static_cast<int>(rng.below(6));
      for (int i = 0; i < k; ++i) {
        double x, y;
        detail::cell_point(g, rng.uniform(0.96, 1.0), rng.uniform(0.0, 6.283),
                           x, y);
        blobs.push_back({x, y, 0.012 * S, 1.0});
      }
      detail::paint_blobs(plane, blobs);
      mask_fill([&](double x, double y) { return cell_rho(g, x, y) > 1.02; },
                [](double, double) { return 0.0; });
      break;
    }
    case 9: {  // myosin IIB-like: bundles orthogonal to the actinin pattern
      const double freq = rng.uniform(4.0, 6.0);
      const double phase = rng.uniform(0.0, 6.283);
      mask_fill(
          [&](double x, double y) {
            if (cell_rho(g, x, y) > 0.95 || nucleus_rho(g, x, y) < 1.05)
              return false;
            double u, v;
            cell_frame(g, x, y, u, v);
            return std::sin(freq * 3.14159 * v + phase) > 0.45;
          },
          [](double, double) { return 0.8; });
      break;
    }
    default:
      throw value_error("unknown archetype index " + std::to_string(archetype));
  }
  return plane;
}

// One corpus image. Label is 1-based; archetype = label - 1. Channel order:
// membrane, nucleus, structure. Background pixels are exactly 0 and every
// nonempty channel peaks at exactly 1 (already in canonical preprocessed
// form).
inline MultiChannelImage generate_image(const SyntheticCellSpec& spec,
                                        int index) {
  spec.validate();
  check_value(index >= 0 && index < spec.n, "image index out of range");
  RandomStream rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
  const CellGeometry g = detail::draw_geometry(spec, rng);
  const int label = 1 + index % spec.n_classes;
  const int S = spec.side;

  MultiChannelImage img;
  img.pixels = Tensor<float>({3, S, S});
  img.channels = {"membrane", "nucleus", structure_names()[label - 1]};

  for (int h = 0; h < S; ++h)
    for (int w = 0; w < S; ++w) {
      const double rc = cell_rho(g, w, h);
      if (rc <= 1.0) {
        // dim interior with a bright rim, the usual membrane-dye look
        const double rim = rc >= 0.82 ? 1.0 - 4.0 * std::abs(rc - 0.93) : 0.0;
        img.at(0, h, w) = static_cast<float>(std::max(0.35, rim));
      }
      const double rn = nucleus_rho(g, w, h);
      if (rn <= 1.0)
        img.at(1, h, w) = static_cast<float>(0.45 + 0.55 * (1.0 - rn * rn));
    }

  Tensor<float> structure = paint_structure(label - 1, g, S, rng);
  for (int i = 0; i < S * S; ++i) img.pixels[2 * S * S + i] = structure[i];

  // deterministic multiplicative speckle inside supports, then exact
  // per-channel max normalization (empty channels stay empty)
  for (int c = 0; c < 3; ++c) {
    float mx = 0;
    for (int i = 0; i < S * S; ++i) {
      float& v = img.pixels[static_cast<std::size_t>(c) * S * S + i];
      if (v > 0) {
        v = static_cast<float>(
            v * (1.0 - spec.texture + spec.texture * rng.uniform()));
        mx = std::max(mx, v);
      } else {
        v = 0;
      }
    }
    if (mx > 0)
      for (int i = 0; i < S * S; ++i)
        img.pixels[static_cast<std::size_t>(c) * S * S + i] /= mx;
  }

  img.meta = {{"id", index},
              {"label", label},
              {"structure", structure_names()[label - 1]},
              {"geometry", g.to_json()}};
  return img;
}

// ---------------------------------------------------------------------------
// Manifest: one JSON record per line.

struct ManifestRecord {
  int id = 0;
  int label = 1;  // 1..K
  std::string split;  // "train" | "test" | "" (unassigned)
  std::string path;
  nlohmann::json geometry;

  nlohmann::json to_json() const {
    nlohmann::json j{{"id", id}, {"label", label}, {"path", path}};
    if (!split.empty()) j["split"] = split;
    if (!geometry.is_null()) j["geometry"] = geometry;
    return j;
  }
  static ManifestRecord from_json(const nlohmann::json& j) {
    ManifestRecord r;
    r.id = j.at("id").get<int>();
    r.label = j.at("label").get<int>();
    r.split = j.value("split", std::string());
    r.path = j.value("path", std::string());
    if (j.contains("geometry")) r.geometry = j["geometry"];
    return r;
  }
};

struct CorpusManifest {
  std::vector<ManifestRecord> records;

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw io_error("cannot open for writing: " + path);
    for (const auto& r : records) os << r.to_json().dump() << "\n";
    if (!os) throw io_error("write failed: " + path);
  }
  static CorpusManifest load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open: " + path);
    CorpusManifest m;
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      try {
        m.records.push_back(ManifestRecord::from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw io_error("corrupt manifest line in " + path + ": " + e.what());
      }
    }
    return m;
  }
};

// In-memory corpus used by trainers and tests: (N, 3, S, S) with 1-based
// labels in parallel.
struct Dataset {
  Tensor<float> x;
  std::vector<int> labels;

  int size() const { return x.empty() ? 0 : x.dim(0); }

  // the two reference channels only: (N, 2, S, S)
  Tensor<float> reference_only() const {
    const int N = x.dim(0), S = x.dim(2);
    Tensor<float> out({N, 2, S, S});
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < 2; ++c)
        for (int h = 0; h < S; ++h)
          for (int w = 0; w < S; ++w) out.at(n, c, h, w) = x.at(n, c, h, w);
    return out;
  }

  Dataset subset(const std::vector<int>& idx) const {
    const int S = x.dim(2), C = x.dim(1);
    Dataset out;
    out.x = Tensor<float>({static_cast<int>(idx.size()), C, S, S});
    const std::size_t per = static_cast<std::size_t>(C) * S * S;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      check_value(idx[k] >= 0 && idx[k] < size(), "subset index out of range");
      std::copy_n(x.data() + idx[k] * per, per, out.x.data() + k * per);
      out.labels.push_back(labels[static_cast<std::size_t>(idx[k])]);
    }
    return out;
  }
};

inline Dataset generate_dataset(const SyntheticCellSpec& spec) {
  spec.validate();
  Dataset d;
  d.x = Tensor<float>({spec.n, 3, spec.side, spec.side});
  const std::size_t per = static_cast<std::size_t>(3) * spec.side * spec.side;
  for (int i = 0; i < spec.n; ++i) {
    MultiChannelImage img = generate_image(spec, i);
    std::copy_n(img.pixels.data(), per, d.x.data() + i * per);
    d.labels.push_back(img.meta.at("label").get<int>());
  }
  return d;
}

// Writes images as <out_dir>/img_00000.icimg ... plus manifest.jsonl.
inline CorpusManifest generate_corpus(const SyntheticCellSpec& spec,
                                      const std::string& out_dir) {
  spec.validate();
  CorpusManifest manifest;
  for (int i = 0; i < spec.n; ++i) {
    MultiChannelImage img = generate_image(spec, i);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d.icimg", i);
    const std::string path = out_dir + "/" + name;
    save_icimg(img, path);
    ManifestRecord r;
    r.id = i;
    r.label = img.meta.at("label").get<int>();
    r.path = name;
    r.geometry = img.meta.at("geometry");
    manifest.records.push_back(std::move(r));
  }
  manifest.save(out_dir + "/manifest.jsonl");
  return manifest;
}

inline Dataset load_dataset(const std::string& dir,
                            const CorpusManifest& manifest,
                            const std::string& split = "") {
  Dataset d;
  std::vector<const ManifestRecord*> sel;
  for (const auto& r : manifest.records)
    if (split.empty() || r.split == split) sel.push_back(&r);
  check_value(!sel.empty(), "no manifest records match split '" + split + "'");
  MultiChannelImage first = load_icimg(dir + "/" + sel[0]->path);
  const int C = first.n_channels(), S = first.height();
  d.x = Tensor<float>({static_cast<int>(sel.size()), C, S, S});
  const std::size_t per = static_cast<std::size_t>(C) * S * S;
  for (std::size_t k = 0; k < sel.size(); ++k) {
    MultiChannelImage img = k == 0 ? std::move(first)
                                   : load_icimg(dir + "/" + sel[k]->path);
    check_shape(img.pixels.shape() == std::vector<int>({C, S, S}),
                "corpus images must share one shape");
    std::copy_n(img.pixels.data(), per, d.x.data() + k * per);
    d.labels.push_back(sel[k]->label);
  }
  return d;
}

}  // namespace icell
