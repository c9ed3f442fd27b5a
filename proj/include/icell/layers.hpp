#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "icell/rng.hpp"
#include "icell/tensor.hpp"

namespace icell {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// Per-forward activation record. Layers stash whatever their backward needs;
// a cache is immutable once the forward that filled it returns, so several
// backward passes may reuse the same tape.
template <typename T>
struct LayerCache {
  Tensor<T> in;
  Tensor<T> out;
  std::vector<Tensor<T>> aux;
  bool train = false;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  // train=true selects batch statistics / noise injection where applicable.
  virtual Tensor<T> forward(const Tensor<T>& x, bool train,
                            LayerCache<T>& cache) = 0;

  // Returns d loss / d input; parameter gradients are accumulated into the
  // layer's grad buffers only when acc_param_grads is set.
  virtual Tensor<T> backward(const LayerCache<T>& cache, const Tensor<T>& gy,
                             bool acc_param_grads) = 0;

  virtual void init(RandomStream&) {}
  virtual std::vector<Tensor<T>*> params() { return {}; }
  virtual std::vector<Tensor<T>*> grads() { return {}; }
  // Non-trainable state that still belongs in checkpoints (BN running stats).
  virtual std::vector<Tensor<T>*> buffers() { return {}; }
  virtual std::string kind() const = 0;

  void zero_grad() {
    for (auto* g : grads()) g->fill(T(0));
  }
};

inline constexpr double kInitWeightStd = 0.02;

// ---------------------------------------------------------------------------
// Fully connected

template <typename T>
class Dense : public Layer<T> {
 public:
  Dense(int in_features, int out_features)
      : in_(in_features), out_(out_features),
        w_({out_features, in_features}), b_({out_features}),
        gw_({out_features, in_features}), gb_({out_features}) {}

  void init(RandomStream& rng) override {
    for (auto& v : w_.vec()) v = static_cast<T>(rng.normal(0.0, kInitWeightStd));
    b_.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    check_shape(x.rank() == 2 && x.dim(1) == in_,
                "Dense: expected (N," + std::to_string(in_) + "), got " +
                    x.shape_str());
    const int n = x.dim(0);
    Tensor<T> y({n, out_});
    CMapRM<T> xm(x.data(), n, in_);
    CMapRM<T> wm(w_.data(), out_, in_);
    MapRM<T> ym(y.data(), n, out_);
    ym.noalias() = xm * wm.transpose();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_; ++j) y.at(i, j) += b_[j];
    c.in = x;
    c.train = train;
    return y;
  }

  Tensor<T> backward(const LayerCache<T>& c, const Tensor<T>& gy,
                     bool acc) override {
    const int n = c.in.dim(0);
    check_shape(gy.rank() == 2 && gy.dim(0) == n && gy.dim(1) == out_,
                "Dense backward: bad grad shape");
    Tensor<T> gx({n, in_});
    CMapRM<T> gym(gy.data(), n, out_);
    CMapRM<T> wm(w_.data(), out_, in_);
    MapRM<T> gxm(gx.data(), n, in_);
    gxm.noalias() = gym * wm;
    if (acc) {
      CMapRM<T> xm(c.in.data(), n, in_);
      MapRM<T> gwm(gw_.data(), out_, in_);
      gwm.noalias() += gym.transpose() * xm;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_; ++j) gb_[j] += gy.at(i, j);
    }
    return gx;
  }

  std::vector<Tensor<T>*> params() override { return {&w_, &b_}; }
  std::vector<Tensor<T>*> grads() override { return {&gw_, &gb_}; }
  std::string kind() const override { return "fc"; }

 private:
  int in_, out_;
  Tensor<T> w_, b_, gw_, gb_;
};

// ---------------------------------------------------------------------------
// im2col / col2im for 4x4 kernels

template <typename T>
void im2col(const T* img, int ch, int h, int w, int k, int stride, int pad,
            int oh, int ow, T* cols) {
  // cols is (ch*k*k, oh*ow), row-major
  for (int ci = 0; ci < ch; ++ci) {
    const T* src = img + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) *
                            oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = T(0);
            continue;
          }
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[oy * ow + ox] =
                (ix >= 0 && ix < w) ? src[iy * w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int ch, int h, int w, int k, int stride, int pad,
            int oh, int ow, T* img) {
  // scatter-add the (ch*k*k, oh*ow) matrix back into (ch, h, w)
  for (int ci = 0; ci < ch; ++ci) {
    T* dst = img + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols + (static_cast<std::size_t>(ci) * k * k + ky * k +
                               kx) *
                                  oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 4x4 convolution. stride=2/pad=1 halves the spatial size; stride=1/pad=0
// ("valid") is used to reduce a 4x4 map to 1x1 in discriminator heads.

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int in_ch, int out_ch, int stride, int pad)
      : in_ch_(in_ch), out_ch_(out_ch), stride_(stride), pad_(pad),
        w_({out_ch, in_ch * k_ * k_}), b_({out_ch}),
        gw_({out_ch, in_ch * k_ * k_}), gb_({out_ch}) {}

  void init(RandomStream& rng) override {
    for (auto& v : w_.vec()) v = static_cast<T>(rng.normal(0.0, kInitWeightStd));
    b_.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    check_shape(x.rank() == 4 && x.dim(1) == in_ch_,
                "Conv2d: expected (N," + std::to_string(in_ch_) +
                    ",H,W), got " + x.shape_str());
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = out_size(h), ow = out_size(w);
    check_shape(oh > 0 && ow > 0, "Conv2d: input too small");
    if (stride_ == 2)
      check_shape(h % 2 == 0 && w % 2 == 0,
                  "Conv2d: stride-2 input size must be even");
    Tensor<T> y({n, out_ch_, oh, ow});
    const int kk = in_ch_ * k_ * k_;
    Tensor<T> cols({kk, oh * ow});
    CMapRM<T> wm(w_.data(), out_ch_, kk);
    for (int i = 0; i < n; ++i) {
      im2col(x.data() + slice(x, i), in_ch_, h, w, k_, stride_, pad_, oh, ow,
             cols.data());
      CMapRM<T> cm(cols.data(), kk, oh * ow);
      MapRM<T> ym(y.data() + slice(y, i), out_ch_, oh * ow);
      ym.noalias() = wm * cm;
      for (int co = 0; co < out_ch_; ++co)
        ym.row(co).array() += static_cast<T>(b_[co]);
    }
    c.in = x;
    c.train = train;
    return y;
  }

  Tensor<T> backward(const LayerCache<T>& c, const Tensor<T>& gy,
                     bool acc) override {
    const Tensor<T>& x = c.in;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = out_size(h), ow = out_size(w);
    check_shape(gy.rank() == 4 && gy.dim(1) == out_ch_ && gy.dim(2) == oh &&
                    gy.dim(3) == ow,
                "Conv2d backward: bad grad shape");
    const int kk = in_ch_ * k_ * k_;
    Tensor<T> gx(x.shape());
    Tensor<T> cols({kk, oh * ow});
    Tensor<T> gcols({kk, oh * ow});
    CMapRM<T> wm(w_.data(), out_ch_, kk);
    MapRM<T> gwm(gw_.data(), out_ch_, kk);
    for (int i = 0; i < n; ++i) {
      CMapRM<T> gym(gy.data() + slice(gy, i), out_ch_, oh * ow);
      if (acc) {
        im2col(x.data() + slice(x, i), in_ch_, h, w, k_, stride_, pad_, oh, ow,
               cols.data());
        CMapRM<T> cm(cols.data(), kk, oh * ow);
        gwm.noalias() += gym * cm.transpose();
        for (int co = 0; co < out_ch_; ++co) gb_[co] += gym.row(co).sum();
      }
      MapRM<T> gcm(gcols.data(), kk, oh * ow);
      gcm.noalias() = wm.transpose() * gym;
      col2im(gcols.data(), in_ch_, h, w, k_, stride_, pad_, oh, ow,
             gx.data() + slice(gx, i));
    }
    return gx;
  }

  std::vector<Tensor<T>*> params() override { return {&w_, &b_}; }
  std::vector<Tensor<T>*> grads() override { return {&gw_, &gb_}; }
  std::string kind() const override { return "conv"; }

 private:
  int out_size(int s) const { return (s + 2 * pad_ - k_) / stride_ + 1; }
  static std::size_t slice(const Tensor<T>& t, int i) {
    return static_cast<std::size_t>(i) * t.dim(1) * t.dim(2) * t.dim(3);
  }

  static constexpr int k_ = 4;
  int in_ch_, out_ch_, stride_, pad_;
  Tensor<T> w_, b_, gw_, gb_;
};

// ---------------------------------------------------------------------------
// Fractionally strided 4x4 convolution, stride 2, pad 1: exact shape inverse
// of the downsampling conv (doubles each spatial dimension).

template <typename T>
class ConvTranspose2d : public Layer<T> {
 public:
  ConvTranspose2d(int in_ch, int out_ch)
      : in_ch_(in_ch), out_ch_(out_ch),
        w_({in_ch, out_ch * k_ * k_}), b_({out_ch}),
        gw_({in_ch, out_ch * k_ * k_}), gb_({out_ch}) {}

  void init(RandomStream& rng) override {
    for (auto& v : w_.vec()) v = static_cast<T>(rng.normal(0.0, kInitWeightStd));
    b_.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    check_shape(x.rank() == 4 && x.dim(1) == in_ch_,
                "ConvTranspose2d: expected (N," + std::to_string(in_ch_) +
                    ",H,W), got " + x.shape_str());
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = 2 * h, ow = 2 * w;
    Tensor<T> y({n, out_ch_, oh, ow});
    const int kk = out_ch_ * k_ * k_;
    Tensor<T> cols({kk, h * w});
    CMapRM<T> wm(w_.data(), in_ch_, kk);
    for (int i = 0; i < n; ++i) {
      CMapRM<T> xm(x.data() + slice(x, i), in_ch_, h * w);
      MapRM<T> cm(cols.data(), kk, h * w);
      cm.noalias() = wm.transpose() * xm;
      T* yp = y.data() + slice(y, i);
      // y starts zeroed; overlap-add the columns, then bias
      col2im(cols.data(), out_ch_, oh, ow, k_, stride_, pad_, h, w, yp);
      for (int co = 0; co < out_ch_; ++co) {
        T* chp = yp + static_cast<std::size_t>(co) * oh * ow;
        for (int p = 0; p < oh * ow; ++p) chp[p] += b_[co];
      }
    }
    c.in = x;
    c.train = train;
    return y;
  }

  Tensor<T> backward(const LayerCache<T>& c, const Tensor<T>& gy,
                     bool acc) override {
    const Tensor<T>& x = c.in;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = 2 * h, ow = 2 * w;
    check_shape(gy.rank() == 4 && gy.dim(1) == out_ch_ && gy.dim(2) == oh &&
                    gy.dim(3) == ow,
                "ConvTranspose2d backward: bad grad shape");
    const int kk = out_ch_ * k_ * k_;
    Tensor<T> gx(x.shape());
    Tensor<T> gcols({kk, h * w});
    CMapRM<T> wm(w_.data(), in_ch_, kk);
    MapRM<T> gwm(gw_.data(), in_ch_, kk);
    for (int i = 0; i < n; ++i) {
      im2col(gy.data() + slice(gy, i), out_ch_, oh, ow, k_, stride_, pad_, h,
             w, gcols.data());
      CMapRM<T> gcm(gcols.data(), kk, h * w);
      MapRM<T> gxm(gx.data() + slice(gx, i), in_ch_, h * w);
      gxm.noalias() = wm * gcm;
      if (acc) {
        CMapRM<T> xm(x.data() + slice(x, i), in_ch_, h * w);
        gwm.noalias() += xm * gcm.transpose();
        const T* gyp = gy.data() + slice(gy, i);
        for (int co = 0; co < out_ch_; ++co) {
          const T* chp = gyp + static_cast<std::size_t>(co) * oh * ow;
          double s = 0;
          for (int p = 0; p < oh * ow; ++p) s += static_cast<double>(chp[p]);
          gb_[co] += static_cast<T>(s);
        }
      }
    }
    return gx;
  }

  std::vector<Tensor<T>*> params() override { return {&w_, &b_}; }
  std::vector<Tensor<T>*> grads() override { return {&gw_, &gb_}; }
  std::string kind() const override { return "convT"; }

 private:
  static std::size_t slice(const Tensor<T>& t, int i) {
    return static_cast<std::size_t>(i) * t.dim(1) * t.dim(2) * t.dim(3);
  }

  static constexpr int k_ = 4;
  static constexpr int stride_ = 2;
  static constexpr int pad_ = 1;
  int in_ch_, out_ch_;
  Tensor<T> w_, b_, gw_, gb_;
};

// ---------------------------------------------------------------------------
// Batch normalization over dim 1 of (N,C,H,W) or (N,F). Train mode uses
// batch statistics and maintains running averages (momentum 0.1); eval mode
// normalizes with the running averages.

template <typename T>
class BatchNorm : public Layer<T> {
 public:
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5)
      : ch_(channels), momentum_(momentum), eps_(eps),
        gamma_({channels}), beta_({channels}), ggamma_({channels}),
        gbeta_({channels}), run_mean_({channels}), run_var_({channels}) {
    gamma_.fill(T(1));
    run_var_.fill(T(1));
  }

  void init(RandomStream&) override {
    gamma_.fill(T(1));
    beta_.fill(T(0));
    run_mean_.fill(T(0));
    run_var_.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    check_shape((x.rank() == 2 || x.rank() == 4) && x.dim(1) == ch_,
                "BatchNorm: bad input shape " + x.shape_str());
    const std::size_t m = x.numel() / ch_;  // samples per channel
    Tensor<T> mean({ch_}), invstd({ch_});
    if (train) {
      check_value(m >= 2, "BatchNorm: needs at least 2 samples per channel");
      for (int cc = 0; cc < ch_; ++cc) {
        double s = 0, s2 = 0;
        for_channel(x, cc, [&](T v) {
          s += v;
          s2 += static_cast<double>(v) * v;
        });
        const double mu = s / static_cast<double>(m);
        const double var = s2 / static_cast<double>(m) - mu * mu;
        mean[cc] = static_cast<T>(mu);
        invstd[cc] = static_cast<T>(1.0 / std::sqrt(std::max(var, 0.0) + eps_));
        // unbiased variance feeds the running estimate
        const double uvar = var * static_cast<double>(m) / std::max<double>(1.0, static_cast<double>(m) - 1.0);
        run_mean_[cc] = static_cast<T>((1.0 - momentum_) * run_mean_[cc] +
                                       momentum_ * mu);
        run_var_[cc] = static_cast<T>((1.0 - momentum_) * run_var_[cc] +
                                      momentum_ * uvar);
      }
    } else {
      for (int cc = 0; cc < ch_; ++cc) {
        mean[cc] = run_mean_[cc];
        invstd[cc] = static_cast<T>(
            1.0 / std::sqrt(static_cast<double>(run_var_[cc]) + eps_));
      }
    }
    Tensor<T> xhat(x.shape());
    Tensor<T> y(x.shape());
    apply_channels(x, [&](int cc, std::size_t idx, T v) {
      const T xh = (v - mean[cc]) * invstd[cc];
      xhat[idx] = xh;
      y[idx] = gamma_[cc] * xh + beta_[cc];
    });
    c.train = train;
    c.aux.clear();
    c.aux.push_back(std::move(xhat));
    c.aux.push_back(std::move(invstd));
    return y;
  }

  Tensor<T> backward(const LayerCache<T>& c, const Tensor<T>& gy,
                     bool acc) override {
    const Tensor<T>& xhat = c.aux[0];
    const Tensor<T>& invstd = c.aux[1];
    check_shape(gy.same_shape(xhat), "BatchNorm backward: bad grad shape");
    const std::size_t m = gy.numel() / ch_;
    std::vector<double> sg(ch_, 0.0), sgx(ch_, 0.0);
    apply_channels(gy, [&](int cc, std::size_t idx, T v) {
      sg[cc] += v;
      sgx[cc] += static_cast<double>(v) * xhat[idx];
    });
    if (acc) {
      for (int cc = 0; cc < ch_; ++cc) {
        ggamma_[cc] += static_cast<T>(sgx[cc]);
        gbeta_[cc] += static_cast<T>(sg[cc]);
      }
    }
    Tensor<T> gx(gy.shape());
    if (c.train) {
      const double dm = static_cast<double>(m);
      apply_channels(gy, [&](int cc, std::size_t idx, T v) {
        const double t = dm * v - sg[cc] - static_cast<double>(xhat[idx]) * sgx[cc];
        gx[idx] = static_cast<T>(static_cast<double>(gamma_[cc]) * invstd[cc] /
                                 dm * t);
      });
    } else {
      apply_channels(gy, [&](int cc, std::size_t idx, T v) {
        gx[idx] = static_cast<T>(static_cast<double>(gamma_[cc]) * invstd[cc] *
                                 v);
      });
    }
    return gx;
  }

  std::vector<Tensor<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<Tensor<T>*> grads() override { return {&ggamma_, &gbeta_}; }
  std::vector<Tensor<T>*> buffers() override { return {&run_mean_, &run_var_}; }
  std::string kind() const override { return "bnorm"; }

 private:
  template <typename F>
  void for_channel(const Tensor<T>& x, int cc, F&& f) const {
    if (x.rank() == 2) {
      const int n = x.dim(0);
      for (int i = 0; i < n; ++i) f(x.at(i, cc));
    } else {
      const int n = x.dim(0), hw = x.dim(2) * x.dim(3);
      for (int i = 0; i < n; ++i) {
        const T* p = x.data() +
                     (static_cast<std::size_t>(i) * ch_ + cc) * hw;
        for (int j = 0; j < hw; ++j) f(p[j]);
      }
    }
  }

  template <typename F>
  void apply_channels(const Tensor<T>& x, F&& f) const {
    if (x.rank() == 2) {
      const int n = x.dim(0);
      for (int i = 0; i < n; ++i)
        for (int cc = 0; cc < ch_; ++cc)
          f(cc, static_cast<std::size_t>(i) * ch_ + cc, x.at(i, cc));
    } else {
      const int n = x.dim(0), hw = x.dim(2) * x.dim(3);
      for (int i = 0; i < n; ++i)
        for (int cc = 0; cc < ch_; ++cc) {
          const std::size_t base = (static_cast<std::size_t>(i) * ch_ + cc) * hw;
          for (int j = 0; j < hw; ++j) f(cc, base + j, x[base + j]);
        }
    }
  }

  int ch_;
  double momentum_, eps_;
  Tensor<T> gamma_, beta_, ggamma_, gbeta_;
  Tensor<T> run_mean_, run_var_;
};

// ---------------------------------------------------------------------------
// Activations

template <typename T>
class PReLU : public Layer<T> {
 public:
  explicit PReLU(int channels, double init_slope = 0.25)
      : ch_(channels), init_slope_(init_slope), a_({channels}), ga_({channels}) {
    a_.fill(static_cast<T>(init_slope));
  }

  void init(RandomStream&) override { a_.fill(static_cast<T>(init_slope_)); }

  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    check_shape(x.dim(1) == ch_, "PReLU: channel mismatch");
    Tensor<T> y(x.shape());
    const std::size_t per = x.numel() / (x.dim(0) * ch_);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const int cc = static_cast<int>((i / per) % ch_);
      y[i] = x[i] >= T(0) ? x[i] : a_[cc] * x[i];
    }
    c.in = x;
    c.train = train;
    return y;
  }

  Tensor<T> backward(const LayerCache<T>& c, const Tensor<T>& gy,
                     bool acc) override {
    const Tensor<T>& x = c.in;
    check_shape(gy.same_shape(x), "PReLU backward: bad grad shape");
    Tensor<T> gx(x.shape());
    const std::size_t per = x.numel() / (x.dim(0) * ch_);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const int cc = static_cast<int>((i / per) % ch_);
      if (x[i] >= T(0)) {
        gx[i] = gy[i];
      } else {
        gx[i] = a_[cc] * gy[i];
        if (acc) ga_[cc] += gy[i] * x[i];
      }
    }
    return gx;
  }

  std::vector<Tensor<T>*> params() override { return {&a_}; }
  std::vector<Tensor<T>*> grads() override { return {&ga_}; }
  std::string kind() const override { return "prelu"; }

 private:
  int ch_;
  double init_slope_;
  Tensor<T> a_, ga_;
};

template <typename T>
class LeakyReLU : public Layer<T> {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(static_cast<T>(slope)) {}

  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
      y[i] = x[i] >= T(0) ? x[i] : slope_ * x[i];
    c.in = x;
    c.train = train;
    return y;
  }

  Tensor<T> backward(const LayerCache<T>& c, const Tensor<T>& gy,
                     bool) override {
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.numel(); ++i)
      gx[i] = c.in[i] >= T(0) ? gy[i] : slope_ * gy[i];
    return gx;
  }

  std::string kind() const override { return "lrelu"; }

 private:
  T slope_;
};

template <typename T>
class Sigmoid : public Layer<T> {
 public:
  // temp > 1 steepens the response: y = sigmoid(temp * x). Decoder output
  // rows use this so pixel values can reach saturation within a small
  // optimizer step budget.
  explicit Sigmoid(double temp = 1.0) : temp_(static_cast<T>(temp)) {}

  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
      y[i] = static_cast<T>(
          1.0 / (1.0 + std::exp(-static_cast<double>(temp_ * x[i]))));
    c.out = y;
    c.train = train;
    return y;
  }

  Tensor<T> backward(const LayerCache<T>& c, const Tensor<T>& gy,
                     bool) override {
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.numel(); ++i)
      gx[i] = gy[i] * temp_ * c.out[i] * (T(1) - c.out[i]);
    return gx;
  }

  std::string kind() const override { return "sigmoid"; }

 private:
  T temp_;
};

template <typename T>
class Softmax : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    check_shape(x.rank() == 2, "Softmax: expected (N,K)");
    const int n = x.dim(0), k = x.dim(1);
    Tensor<T> y(x.shape());
    for (int i = 0; i < n; ++i) {
      double mx = x.at(i, 0);
      for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(x.at(i, j)));
      double z = 0;
      for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(x.at(i, j)) - mx);
      for (int j = 0; j < k; ++j)
        y.at(i, j) = static_cast<T>(std::exp(static_cast<double>(x.at(i, j)) - mx) / z);
    }
    c.out = y;
    c.train = train;
    return y;
  }

  Tensor<T> backward(const LayerCache<T>& c, const Tensor<T>& gy,
                     bool) override {
    const Tensor<T>& y = c.out;
    const int n = y.dim(0), k = y.dim(1);
    Tensor<T> gx(y.shape());
    for (int i = 0; i < n; ++i) {
      double dot = 0;
      for (int j = 0; j < k; ++j) dot += static_cast<double>(gy.at(i, j)) * y.at(i, j);
      for (int j = 0; j < k; ++j)
        gx.at(i, j) = static_cast<T>(y.at(i, j) * (gy.at(i, j) - dot));
    }
    return gx;
  }

  std::string kind() const override { return "softmax"; }
};

// ---------------------------------------------------------------------------
// Additive white noise on discriminator inputs, train mode only.

template <typename T>
class GaussianNoise : public Layer<T> {
 public:
  explicit GaussianNoise(double sigma) : sigma_(sigma) {}

  void set_rng(RandomStream* rng) { rng_ = rng; }
  double sigma() const { return sigma_; }

  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    c.train = train;
    if (!train || sigma_ == 0.0) return x;
    check_value(rng_ != nullptr, "GaussianNoise: no RNG bound in train mode");
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
      y[i] = x[i] + static_cast<T>(rng_->normal(0.0, sigma_));
    return y;
  }

  Tensor<T> backward(const LayerCache<T>&, const Tensor<T>& gy,
                     bool) override {
    return gy;  // additive noise: identity gradient
  }

  std::string kind() const override { return "noise"; }

 private:
  double sigma_;
  RandomStream* rng_ = nullptr;
};

// ---------------------------------------------------------------------------
// Shape plumbing

template <typename T>
class Flatten : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    check_shape(x.rank() >= 2, "Flatten: rank < 2");
    c.train = train;
    c.aux.clear();
    c.aux.push_back(Tensor<T>({x.rank()},
                              std::vector<T>(x.shape().begin(), x.shape().end())));
    int f = 1;
    for (int i = 1; i < x.rank(); ++i) f *= x.dim(i);
    return x.reshaped({x.dim(0), f});
  }

  Tensor<T> backward(const LayerCache<T>& c, const Tensor<T>& gy,
                     bool) override {
    std::vector<int> shape;
    for (std::size_t i = 0; i < c.aux[0].numel(); ++i)
      shape.push_back(static_cast<int>(c.aux[0][i]));
    return gy.reshaped(shape);
  }

  std::string kind() const override { return "flatten"; }
};

template <typename T>
class Reshape : public Layer<T> {
 public:
  Reshape(int ch, int h, int w) : ch_(ch), h_(h), w_(w) {}

  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    check_shape(x.rank() == 2 && x.dim(1) == ch_ * h_ * w_,
                "Reshape: feature size mismatch");
    c.train = train;
    return x.reshaped({x.dim(0), ch_, h_, w_});
  }

  Tensor<T> backward(const LayerCache<T>&, const Tensor<T>& gy,
                     bool) override {
    return gy.reshaped({gy.dim(0), ch_ * h_ * w_});
  }

  std::string kind() const override { return "reshape"; }

 private:
  int ch_, h_, w_;
};

// Global average pool: (N,C,H,W) -> (N,C). Reduces the discriminator's
// spatial verdict map to one score per image.
template <typename T>
class GlobalAvgPool : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool train, LayerCache<T>& c) override {
    check_shape(x.rank() == 4, "GlobalAvgPool: expected (N,C,H,W)");
    const int n = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({n, ch});
    for (int i = 0; i < n; ++i)
      for (int cc = 0; cc < ch; ++cc) {
        const T* p = x.data() + (static_cast<std::size_t>(i) * ch + cc) * hw;
        double s = 0;
        for (int j = 0; j < hw; ++j) s += static_cast<double>(p[j]);
        y.at(i, cc) = static_cast<T>(s / hw);
      }
    c.train = train;
    c.aux.clear();
    c.aux.push_back(Tensor<T>({2}, {static_cast<T>(x.dim(2)), static_cast<T>(x.dim(3))}));
    return y;
  }

  Tensor<T> backward(const LayerCache<T>& c, const Tensor<T>& gy,
                     bool) override {
    const int h = static_cast<int>(c.aux[0][0]);
    const int w = static_cast<int>(c.aux[0][1]);
    const int n = gy.dim(0), ch = gy.dim(1), hw = h * w;
    Tensor<T> gx({n, ch, h, w});
    for (int i = 0; i < n; ++i)
      for (int cc = 0; cc < ch; ++cc) {
        const T g = gy.at(i, cc) / static_cast<T>(hw);
        T* p = gx.data() + (static_cast<std::size_t>(i) * ch + cc) * hw;
        for (int j = 0; j < hw; ++j) p[j] = g;
      }
    return gx;
  }

  std::string kind() const override { return "gap"; }
};

// ---------------------------------------------------------------------------
// Sequential stack with an explicit tape per forward call.

template <typename T>
struct Tape {
  std::vector<LayerCache<T>> caches;
  bool train = false;
};

template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

  Tensor<T> forward(const Tensor<T>& x, bool train, Tape<T>& tape) const {
    tape.caches.assign(layers_.size(), LayerCache<T>{});
    tape.train = train;
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      cur = layers_[i]->forward(cur, train, tape.caches[i]);
    return cur;
  }

  Tensor<T> backward(const Tape<T>& tape, const Tensor<T>& gy,
                     bool acc_param_grads) const {
    check_shape(tape.caches.size() == layers_.size(),
                "Sequential backward: tape/layer mismatch");
    Tensor<T> cur = gy;
    for (std::size_t i = layers_.size(); i-- > 0;)
      cur = layers_[i]->backward(tape.caches[i], cur, acc_param_grads);
    return cur;
  }

  void init(RandomStream& rng) {
    for (auto& l : layers_) l->init(rng);
  }

  std::vector<Tensor<T>*> params() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  std::vector<Tensor<T>*> grads() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_)
      for (auto* g : l->grads()) out.push_back(g);
    return out;
  }

  std::vector<Tensor<T>*> buffers() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_)
      for (auto* b : l->buffers()) out.push_back(b);
    return out;
  }

  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }

  void set_noise_rng(RandomStream* rng) {
    for (auto& l : layers_)
      if (auto* g = dynamic_cast<GaussianNoise<T>*>(l.get())) g->set_rng(rng);
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace icell
