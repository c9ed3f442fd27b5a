#pragma once

// Inference services over trained models: structure integration (decode the
// most likely localization of unobserved structures conditioned on the
// reference channels), round-trip reconstruction, classification, and
// latent-space traversal grids.

#include <string>
#include <vector>

#include <json.hpp>

#include "icell/arch.hpp"
#include "icell/datagen.hpp"
#include "icell/image.hpp"
#include "icell/losses.hpp"
#include "icell/network.hpp"
#include "icell/train.hpp"

namespace icell {

// (N, K) one-hot rows from 1-based structure labels.
inline Tensor<float> one_hot(const std::vector<int>& labels, int k) {
  const int n = static_cast<int>(labels.size());
  Tensor<float> y({n, k});
  for (int i = 0; i < n; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    check_value(l >= 1 && l <= k,
                "one_hot: label " + std::to_string(l) + " outside {1.." +
                    std::to_string(k) + "}");
    y.at(i, l - 1) = 1.0f;
  }
  return y;
}

// Mode of the isotropic standard-normal prior: exactly the zero vector.
inline Tensor<float> mle_structure_code(int n, int d) {
  return Tensor<float>({n, d});
}

struct IntegratedCellImage {
  // (|r| + #labels, S, S): reference channels, then one predicted structure
  // channel per requested label, in request order.
  Tensor<float> pixels;
  std::vector<std::string> channels;
  std::vector<int> labels;
  nlohmann::json meta;
};

// Algorithm: z^r = Enc_r(x^r); for each requested label decode
// Dec_rs([z^r | one-hot(y) | 0]) and keep its structure channel. The label's
// one-hot is used directly since no structure image exists at prediction
// time.
inline IntegratedCellImage integrate_structures(const Component<float>& enc_r,
                                                const Component<float>& dec_rs,
                                                const ArchParams& arch,
                                                const Tensor<float>& x_ref,
                                                const std::vector<int>& labels) {
  check_value(!labels.empty(), "integrate_structures: no labels requested");
  Tensor<float> xb = x_ref;
  if (xb.rank() == 3) xb = xb.reshaped({1, xb.dim(0), xb.dim(1), xb.dim(2)});
  check_shape(xb.rank() == 4 && xb.dim(0) == 1,
              "integrate_structures: expected one reference image");
  check_shape(xb.dim(1) == arch.ref_channels,
              "integrate_structures: reference channel mismatch");
  const int S = xb.dim(2);

  const Tensor<float> zr = enc_r.eval(xb);
  const Tensor<float> zs = mle_structure_code(1, arch.latent_dim);

  IntegratedCellImage out;
  out.labels = labels;
  out.pixels = Tensor<float>(
      {arch.ref_channels + static_cast<int>(labels.size()), S, S});
  for (int c = 0; c < arch.ref_channels; ++c) {
    for (int h = 0; h < S; ++h)
      for (int w = 0; w < S; ++w)
        out.pixels[(static_cast<std::size_t>(c) * S + h) * S + w] =
            xb.at(0, c, h, w);
    out.channels.push_back("reference_" + std::to_string(c));
  }

  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Tensor<float> y = one_hot({labels[i]}, arch.n_classes);
    const Tensor<float> cat = concat_features({&zr, &y, &zs});
    const Tensor<float> xhat = dec_rs.eval(cat);  // (1, |r|+1, S, S)
    check_shape(xhat.dim(1) == arch.ref_channels + 1 && xhat.dim(2) == S,
                "integrate_structures: decoder output shape mismatch");
    const int c_out = arch.ref_channels + static_cast<int>(i);
    for (int h = 0; h < S; ++h)
      for (int w = 0; w < S; ++w)
        out.pixels[(static_cast<std::size_t>(c_out) * S + h) * S + w] =
            xhat.at(0, arch.ref_channels, h, w);
    const auto& names = structure_names();
    out.channels.push_back(
        labels[i] <= static_cast<int>(names.size())
            ? names[static_cast<std::size_t>(labels[i] - 1)]
            : "structure_" + std::to_string(labels[i]));
  }

  out.meta["labels"] = labels;
  out.meta["ref_channels"] = arch.ref_channels;
  return out;
}

// ---------------------------------------------------------------------------
// Classification

struct Classification {
  Tensor<float> probs;          // (N, K) class-head softmax output
  std::vector<int> predicted;   // 1-based argmax; ties -> lowest index
};

inline Classification classify(const Component<float>& enc_rs,
                               const Tensor<float>& x) {
  Classification out;
  out.probs = enc_rs.eval_all(x)[0];
  const int n = out.probs.dim(0), k = out.probs.dim(1);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (out.probs.at(i, j) > out.probs.at(i, best)) best = j;
    out.predicted.push_back(best + 1);
  }
  return out;
}

// 1-based argmax of one probability row; ties -> lowest index.
inline int argmax_label(const std::vector<float>& probs) {
  check_value(!probs.empty(), "argmax_label: empty distribution");
  int best = 0;
  for (int j = 1; j < static_cast<int>(probs.size()); ++j)
    if (probs[static_cast<std::size_t>(j)] >
        probs[static_cast<std::size_t>(best)])
      best = j;
  return best + 1;
}

// ---------------------------------------------------------------------------
// Reconstruction

struct Reconstruction {
  Tensor<float> images;          // (N, C, S, S) eval-mode round trips
  std::vector<double> bce;       // per-image mean binary cross-entropy
};

namespace detail {

inline std::vector<double> per_image_bce(const Tensor<float>& pred,
                                         const Tensor<float>& target) {
  const int n = pred.dim(0);
  const std::size_t per = pred.numel() / static_cast<std::size_t>(n);
  std::vector<double> out;
  for (int i = 0; i < n; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < per; ++j) {
      double p = static_cast<double>(pred[i * per + j]);
      p = std::min(1.0 - kBceEps, std::max(kBceEps, p));
      const double u = static_cast<double>(target[i * per + j]);
      acc -= u * std::log(p) + (1.0 - u) * std::log(1.0 - p);
    }
    out.push_back(acc / static_cast<double>(per));
  }
  return out;
}

}  // namespace detail

// Reference-only round trip: Dec_r(Enc_r(x)).
inline Reconstruction reconstruct_reference(const Component<float>& enc_r,
                                            const Component<float>& dec_r,
                                            const Tensor<float>& x) {
  Reconstruction out;
  out.images = dec_r.eval(enc_r.eval(x));
  out.bce = detail::per_image_bce(out.images, x);
  return out;
}

// Full round trip: Dec_rs([z_hat^r | y_hat | z^s]) from the conditional
// encoder's three heads.
inline Reconstruction reconstruct_full(const Component<float>& enc_rs,
                                       const Component<float>& dec_rs,
                                       const Tensor<float>& x) {
  auto outs = enc_rs.eval_all(x);
  const Tensor<float> cat = concat_features({&outs[1], &outs[0], &outs[2]});
  Reconstruction out;
  out.images = dec_rs.eval(cat);
  out.bce = detail::per_image_bce(out.images, x);
  return out;
}

// ---------------------------------------------------------------------------
// Latent traversal grids

struct TraversalOptions {
  int dim_i = 0;  // horizontal axis of the grid
  int dim_j = 1;  // vertical axis
  std::vector<double> grid = {-3.0, -1.5, 0.0, 1.5, 3.0};

  void validate(int latent_dim) const {
    check_value(dim_i >= 0 && dim_i < latent_dim &&
                    dim_j >= 0 && dim_j < latent_dim,
                "traversal: dim index out of range");
    check_value(!grid.empty(), "traversal: empty grid");
  }
};

namespace detail {

// Latent batch covering the grid in row-major tile order: tile (row, col)
// has z[dim_j] = grid[row] (vertical) and z[dim_i] = grid[col] (horizontal);
// all other entries stay zero.
inline Tensor<float> traversal_codes(int latent_dim,
                                     const TraversalOptions& opt) {
  const int g = static_cast<int>(opt.grid.size());
  Tensor<float> z({g * g, latent_dim});
  for (int row = 0; row < g; ++row)
    for (int col = 0; col < g; ++col) {
      const int t = row * g + col;
      z.at(t, opt.dim_i) = static_cast<float>(opt.grid[static_cast<std::size_t>(col)]);
      z.at(t, opt.dim_j) = static_cast<float>(opt.grid[static_cast<std::size_t>(row)]);
    }
  return z;
}

}  // namespace detail

// Decode a z^r grid: (G*G, |r|, S, S) tiles in row-major order.
inline Tensor<float> traverse_reference(const Component<float>& dec_r,
                                        const ArchParams& arch,
                                        const TraversalOptions& opt) {
  opt.validate(arch.latent_dim);
  return dec_r.eval(detail::traversal_codes(arch.latent_dim, opt));
}

// Decode a z^s grid with z^r and the one-hot label held fixed:
// (G*G, |r|+1, S, S) tiles in row-major order.
inline Tensor<float> traverse_structure(const Component<float>& dec_rs,
                                        const ArchParams& arch,
                                        const Tensor<float>& zr_context,
                                        int label,
                                        const TraversalOptions& opt) {
  opt.validate(arch.latent_dim);
  check_shape(zr_context.rank() == 2 && zr_context.dim(0) == 1 &&
                  zr_context.dim(1) == arch.latent_dim,
              "traverse_structure: context z^r must be (1, D)");
  const Tensor<float> zs = detail::traversal_codes(arch.latent_dim, opt);
  const int n = zs.dim(0);
  Tensor<float> zr({n, arch.latent_dim});
  Tensor<float> y = one_hot(std::vector<int>(static_cast<std::size_t>(n), label),
                            arch.n_classes);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < arch.latent_dim; ++d) zr.at(i, d) = zr_context.at(0, d);
  return dec_rs.eval(concat_features({&zr, &y, &zs}));
}

// Compose traversal tiles into one montage image, one grid row per row.
inline MultiChannelImage traversal_montage(const Tensor<float>& tiles,
                                           const TraversalOptions& opt) {
  const int g = static_cast<int>(opt.grid.size());
  check_shape(tiles.dim(0) == g * g, "traversal_montage: tile count mismatch");
  std::vector<MultiChannelImage> imgs;
  const int C = tiles.dim(1), S = tiles.dim(2);
  const std::size_t per = static_cast<std::size_t>(C) * S * S;
  for (int t = 0; t < g * g; ++t) {
    MultiChannelImage im;
    im.pixels = Tensor<float>({C, S, S});
    std::copy_n(tiles.data() + static_cast<std::size_t>(t) * per, per,
                im.pixels.data());
    for (int c = 0; c < C; ++c) im.channels.push_back("ch" + std::to_string(c));
    imgs.push_back(std::move(im));
  }
  return montage(imgs, g);
}

}  // namespace icell
