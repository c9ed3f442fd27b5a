#pragma once

// Trainers for the two model stages: the reference shape model (encoder /
// decoder with latent- and image-space adversaries) and the conditional
// structure model driven by a frozen reference encoder. Per minibatch, every
// loss and gradient is computed against the pre-update parameters, then the
// four per-component Adam updates are applied in the listed order. Gradient
// routing: decoding-discriminator gradients reach only the decoder;
// encoding-discriminator gradients reach only the encoder; each adversarial
// contribution is weighted by gamma_enc / gamma_dec.

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "icell/adam.hpp"
#include "icell/checkpoint.hpp"
#include "icell/common.hpp"
#include "icell/curves.hpp"
#include "icell/datagen.hpp"
#include "icell/losses.hpp"
#include "icell/network.hpp"
#include "icell/rng.hpp"

namespace icell {

struct TrainingConfig {
  int batch_size = 32;
  double learning_rate = 2e-4;
  double gamma_enc = 1e-4;
  double gamma_dec = 1e-5;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int epochs = 20;
  std::uint64_t init_seed = 1;
  std::uint64_t shuffle_seed = 2;
  std::uint64_t prior_seed = 3;
  std::uint64_t noise_seed = 4;

  void validate() const {
    check_value(batch_size >= 2, "batch_size must be >= 2 (batch norm)");
    check_value(gamma_enc >= 0 && gamma_dec >= 0, "gamma must be nonnegative");
    check_value(learning_rate > 0, "learning rate must be positive");
    check_value(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 &&
                    adam_beta2 < 1,
                "adam betas must be in [0,1)");
    check_value(epochs >= 0, "epochs must be nonnegative");
  }

  nlohmann::json to_json() const {
    return {{"batch_size", batch_size},   {"learning_rate", learning_rate},
            {"gamma_enc", gamma_enc},     {"gamma_dec", gamma_dec},
            {"adam_beta1", adam_beta1},   {"adam_beta2", adam_beta2},
            {"epochs", epochs},           {"init_seed", init_seed},
            {"shuffle_seed", shuffle_seed}, {"prior_seed", prior_seed},
            {"noise_seed", noise_seed}};
  }
  static TrainingConfig from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.batch_size = j.value("batch_size", 32);
    c.learning_rate = j.value("learning_rate", 2e-4);
    c.gamma_enc = j.value("gamma_enc", 1e-4);
    c.gamma_dec = j.value("gamma_dec", 1e-5);
    c.adam_beta1 = j.value("adam_beta1", 0.5);
    c.adam_beta2 = j.value("adam_beta2", 0.999);
    c.epochs = j.value("epochs", 20);
    c.init_seed = j.value("init_seed", std::uint64_t{1});
    c.shuffle_seed = j.value("shuffle_seed", std::uint64_t{2});
    c.prior_seed = j.value("prior_seed", std::uint64_t{3});
    c.noise_seed = j.value("noise_seed", std::uint64_t{4});
    return c;
  }
};

// Which component updates a step applies; grads are always computed for all
// four. Tests use partial masks to snapshot cross-contamination.
struct StepOptions {
  bool update_encd = true;
  bool update_decd = true;
  bool update_enc = true;
  bool update_dec = true;
};

inline Tensor<float> draw_prior(int n, int d, RandomStream& rng) {
  Tensor<float> z({n, d});
  for (std::size_t i = 0; i < z.numel(); ++i)
    z[i] = static_cast<float>(rng.normal());
  return z;
}

inline Tensor<float> concat_features(const std::vector<const Tensor<float>*>& parts) {
  const int n = parts[0]->dim(0);
  int f = 0;
  for (const auto* p : parts) {
    check_shape(p->rank() == 2 && p->dim(0) == n,
                "concat_features: rank-2 tensors with equal batch required");
    f += p->dim(1);
  }
  Tensor<float> out({n, f});
  for (int i = 0; i < n; ++i) {
    int o = 0;
    for (const auto* p : parts)
      for (int j = 0; j < p->dim(1); ++j) out.at(i, o++) = p->at(i, j);
  }
  return out;
}

inline std::vector<Tensor<float>> split_features(const Tensor<float>& x,
                                                 const std::vector<int>& widths) {
  const int n = x.dim(0);
  std::vector<Tensor<float>> out;
  int o = 0;
  for (int w : widths) {
    Tensor<float> t({n, w});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j) t.at(i, j) = x.at(i, o + j);
    o += w;
    out.push_back(std::move(t));
  }
  check_shape(o == x.dim(1), "split_features: widths must cover the input");
  return out;
}

namespace detail {

inline void check_finite_loss(double v, const char* name, std::int64_t step) {
  if (!std::isfinite(v))
    throw value_error(std::string("non-finite loss ") + name + " at step " +
                      std::to_string(step) + "; aborting training");
}

inline void save_component(Checkpoint& ck, const std::string& prefix,
                           Component<float>& comp, Adam<float>* opt) {
  auto state = comp.state();
  for (std::size_t i = 0; i < state.size(); ++i)
    ck.add_tensor(prefix + "/s" + std::to_string(i), *state[i]);
  if (opt) {
    auto& m = opt->moments1();
    auto& v = opt->moments2();
    for (std::size_t i = 0; i < m.size(); ++i) {
      ck.add_tensor(prefix + "/m" + std::to_string(i), m[i]);
      ck.add_tensor(prefix + "/v" + std::to_string(i), v[i]);
    }
    ck.meta["adam_t"][prefix] = opt->steps();
  }
}

inline void load_component(const Checkpoint& ck, const std::string& prefix,
                           Component<float>& comp, Adam<float>* opt) {
  auto state = comp.state();
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& t = ck.tensor(prefix + "/s" + std::to_string(i));
    check_shape(t.shape() == state[i]->shape(),
                "checkpoint/component shape mismatch at " + prefix);
    *state[i] = t;
  }
  if (opt) {
    auto& m = opt->moments1();
    auto& v = opt->moments2();
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = ck.tensor(prefix + "/m" + std::to_string(i));
      v[i] = ck.tensor(prefix + "/v" + std::to_string(i));
    }
    opt->set_steps(ck.meta.at("adam_t").at(prefix).get<std::int64_t>());
  }
}

// Deterministic minibatch scheduler: full batches, per-epoch Fisher-Yates
// reshuffle without replacement; (perm, pos) are checkpointed.
class BatchSchedule {
 public:
  explicit BatchSchedule(std::uint64_t seed) : rng_(seed) {}

  std::vector<int> next(int n, int batch) {
    check_value(batch <= n, "batch size exceeds corpus size");
    if (static_cast<int>(perm_.size()) != n) {
      perm_.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) perm_[static_cast<std::size_t>(i)] = i;
      pos_ = n;  // force a shuffle before the first batch
    }
    if (pos_ + batch > n) {
      for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng_.below(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm_[static_cast<std::size_t>(i)],
                  perm_[static_cast<std::size_t>(j)]);
      }
      pos_ = 0;
    }
    std::vector<int> idx(perm_.begin() + pos_, perm_.begin() + pos_ + batch);
    pos_ += batch;
    return idx;
  }

  RandomStream& rng() { return rng_; }
  std::vector<int>& perm() { return perm_; }
  int& pos() { return pos_; }

 private:
  RandomStream rng_;
  std::vector<int> perm_;
  int pos_ = 0;
};

inline Tensor<float> gather_images(const Tensor<float>& images,
                                   const std::vector<int>& idx) {
  std::vector<int> shape = images.shape();
  shape[0] = static_cast<int>(idx.size());
  Tensor<float> out(shape);
  const std::size_t per = images.numel() / static_cast<std::size_t>(images.dim(0));
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(images.data() + static_cast<std::size_t>(idx[k]) * per, per,
                out.data() + k * per);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: reference shape model.

struct ReferenceStepLosses {
  double recon = 0;      // L_xr
  double encd = 0;       // discriminator objective, latent
  double decd = 0;       // discriminator objective, image
  double enc_adv = 0;    // encoder's adversarial term
  double dec_adv = 0;    // decoder's adversarial term
};

class ReferenceTrainer {
 public:
  ReferenceTrainer(const ArchParams& arch, const TrainingConfig& cfg)
      : arch_(arch),
        cfg_(cfg),
        enc_(Component<float>::build(
            make_enc_r(arch), {arch.ref_channels, arch.side, arch.side},
            mix_seed(cfg.init_seed, 0))),
        dec_(Component<float>::build(make_dec_r(arch), {arch.latent_dim},
                                     mix_seed(cfg.init_seed, 1))),
        encd_(Component<float>::build(make_encd_r(arch), {arch.latent_dim},
                                      mix_seed(cfg.init_seed, 2))),
        decd_(Component<float>::build(
            make_decd_r(arch), {arch.ref_channels, arch.side, arch.side},
            mix_seed(cfg.init_seed, 3))),
        schedule_(cfg.shuffle_seed),
        prior_rng_(cfg.prior_seed),
        noise_rng_(cfg.noise_seed) {
    cfg.validate();
    AdamParams<float> ap;
    ap.lr = static_cast<float>(cfg.learning_rate);
    ap.beta1 = static_cast<float>(cfg.adam_beta1);
    ap.beta2 = static_cast<float>(cfg.adam_beta2);
    for (auto* o : {&opt_enc_, &opt_dec_, &opt_encd_, &opt_decd_})
      *o = Adam<float>(ap);
    opt_enc_.bind(enc_.params());
    opt_dec_.bind(dec_.params());
    opt_encd_.bind(encd_.params());
    opt_decd_.bind(decd_.params());
    decd_.set_noise_rng(&noise_rng_);
  }

  ReferenceStepLosses step(const Tensor<float>& batch,
                           const StepOptions& opts = {}) {
    const float ge = static_cast<float>(cfg_.gamma_enc);
    const float gd = static_cast<float>(cfg_.gamma_dec);

    // ---- forwards (all against pre-update parameters)
    ComponentTape<float> t_enc, t_dec, t_ed_gen, t_ed_obs, t_dec_gen, t_dd_obs,
        t_dd_gen, t_dd_rec;
    Tensor<float> z = enc_.forward1(batch, true, t_enc);
    Tensor<float> xhat = dec_.forward1(z, true, t_dec);
    Tensor<float> ztilde = draw_prior(batch.dim(0), arch_.latent_dim, prior_rng_);
    Tensor<float> v_gen = encd_.forward1(ztilde, true, t_ed_gen);
    Tensor<float> v_obs = encd_.forward1(z, true, t_ed_obs);
    Tensor<float> xtilde = dec_.forward1(ztilde, true, t_dec_gen);
    Tensor<float> vd_obs = decd_.forward1(batch, true, t_dd_obs);
    Tensor<float> vd_gen = decd_.forward1(xtilde, true, t_dd_gen);
    Tensor<float> vd_rec = decd_.forward1(xhat, true, t_dd_rec);

    // ---- losses
    auto recon = bce(xhat, batch);
    auto d_enc = discriminator_loss(v_gen, v_obs);
    auto d_dec = discriminator_loss(vd_gen, vd_obs);
    // fool terms: observed codes scored with generated labels; decoded
    // images (both prior-decoded and reconstructed) scored as observed
    auto enc_adv = bce_const(v_obs, verdict::kGenerated);
    auto dec_adv_gen = bce_const(vd_gen, verdict::kObserved);
    auto dec_adv_rec = bce_const(vd_rec, verdict::kObserved);

    ReferenceStepLosses out;
    out.recon = recon.value;
    out.encd = d_enc.value;
    out.decd = d_dec.value;
    out.enc_adv = enc_adv.value;
    out.dec_adv = dec_adv_gen.value + dec_adv_rec.value;
    detail::check_finite_loss(out.recon, "L_xr", step_);
    detail::check_finite_loss(out.encd, "L_EncD_r", step_);
    detail::check_finite_loss(out.decd, "L_DecD_r", step_);
    detail::check_finite_loss(out.enc_adv + out.dec_adv, "adversarial terms",
                              step_);

    // ---- gradients
    enc_.zero_grad();
    dec_.zero_grad();
    encd_.zero_grad();
    decd_.zero_grad();

    // discriminator parameter grads (inputs treated as constants)
    decd_.backward(t_dd_obs, {d_dec.grad_obs}, true);
    decd_.backward(t_dd_gen, {d_dec.grad_gen}, true);
    encd_.backward(t_ed_gen, {d_enc.grad_gen}, true);
    encd_.backward(t_ed_obs, {d_enc.grad_obs}, true);

    // adversarial input grads, without touching discriminator params
    Tensor<float> g_z_adv = encd_.backward(t_ed_obs, {enc_adv.grad}, false);
    Tensor<float> g_xtilde = decd_.backward(t_dd_gen, {dec_adv_gen.grad}, false);
    Tensor<float> g_xhat_adv = decd_.backward(t_dd_rec, {dec_adv_rec.grad}, false);

    // decoder: reconstruction (grad continues into the encoder) plus the
    // gamma-weighted adversarial terms (input grads dropped — the decoding
    // discriminator's signal stops at the decoder)
    Tensor<float> gz = dec_.backward(t_dec, {recon.grad}, true);
    g_xhat_adv *= gd;
    dec_.backward(t_dec, {g_xhat_adv}, true);
    g_xtilde *= gd;
    dec_.backward(t_dec_gen, {g_xtilde}, true);

    // encoder: reconstruction + gamma-weighted latent-adversarial signal
    gz.axpy(ge, g_z_adv);
    enc_.backward(t_enc, {gz}, true);

    // ---- Adam updates, in the listed order
    if (opts.update_decd) opt_decd_.step(decd_.params(), decd_.grads());
    if (opts.update_encd) opt_encd_.step(encd_.params(), encd_.grads());
    if (opts.update_enc) opt_enc_.step(enc_.params(), enc_.grads());
    if (opts.update_dec) opt_dec_.step(dec_.params(), dec_.grads());

    curves_.add(step_, "L_xr", out.recon);
    curves_.add(step_, "L_EncD_r", out.encd);
    curves_.add(step_, "L_DecD_r", out.decd);
    curves_.add(step_, "L_EncD_r_adv", out.enc_adv);
    curves_.add(step_, "L_DecD_r_adv", out.dec_adv);
    ++step_;
    return out;
  }

  // Runs until `total_epochs` full passes worth of steps have happened
  // (counting steps already taken, so resumed trainers continue seamlessly).
  void run(const Tensor<float>& images, int total_epochs) {
    check_value(images.dim(0) >= cfg_.batch_size, "corpus smaller than a batch");
    const int spe = images.dim(0) / cfg_.batch_size;
    const std::int64_t target = static_cast<std::int64_t>(total_epochs) * spe;
    while (step_ < target) {
      auto idx = schedule_.next(images.dim(0), cfg_.batch_size);
      step(detail::gather_images(images, idx));
      if (step_ % spe == 0) record_epoch_means(spe);
    }
  }

  // Exactly n further steps, regardless of epoch boundaries.
  void run_steps(const Tensor<float>& images, int n) {
    for (int i = 0; i < n; ++i) {
      auto idx = schedule_.next(images.dim(0), cfg_.batch_size);
      step(detail::gather_images(images, idx));
    }
  }

  Component<float>& enc_r() { return enc_; }
  Component<float>& dec_r() { return dec_; }
  Component<float>& encd_r() { return encd_; }
  Component<float>& decd_r() { return decd_; }
  TrainingCurves& curves() { return curves_; }
  std::int64_t steps() const { return step_; }
  const ArchParams& arch() const { return arch_; }
  const TrainingConfig& config() const { return cfg_; }

  void save(const std::string& path, const nlohmann::json& extra_meta = {}) {
    Checkpoint ck;
    ck.meta["kind"] = "reference";
    ck.meta["arch"] = arch_.to_json();
    ck.meta["train"] = cfg_.to_json();
    ck.meta["step"] = step_;
    ck.meta["perm"] = schedule_.perm();
    ck.meta["pos"] = schedule_.pos();
    ck.meta["curves"] = curves_.to_json();
    if (!extra_meta.is_null())
      for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it)
        ck.meta[it.key()] = it.value();
    detail::save_component(ck, "enc_r", enc_, &opt_enc_);
    detail::save_component(ck, "dec_r", dec_, &opt_dec_);
    detail::save_component(ck, "encd_r", encd_, &opt_encd_);
    detail::save_component(ck, "decd_r", decd_, &opt_decd_);
    ck.add_rng("shuffle", schedule_.rng().serialize());
    ck.add_rng("prior", prior_rng_.serialize());
    ck.add_rng("noise", noise_rng_.serialize());
    ck.save(path);
  }

  static ReferenceTrainer load(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.meta.value("kind", std::string()) != "reference")
      throw io_error("not a reference-model checkpoint: " + path);
    ReferenceTrainer t(ArchParams::from_json(ck.meta.at("arch")),
                       TrainingConfig::from_json(ck.meta.at("train")));
    detail::load_component(ck, "enc_r", t.enc_, &t.opt_enc_);
    detail::load_component(ck, "dec_r", t.dec_, &t.opt_dec_);
    detail::load_component(ck, "encd_r", t.encd_, &t.opt_encd_);
    detail::load_component(ck, "decd_r", t.decd_, &t.opt_decd_);
    t.step_ = ck.meta.at("step").get<std::int64_t>();
    t.schedule_.perm() = ck.meta.at("perm").get<std::vector<int>>();
    t.schedule_.pos() = ck.meta.at("pos").get<int>();
    t.schedule_.rng().deserialize(ck.rng("shuffle"));
    t.prior_rng_.deserialize(ck.rng("prior"));
    t.noise_rng_.deserialize(ck.rng("noise"));
    t.curves_ = TrainingCurves::from_json(ck.meta.at("curves"));
    return t;
  }

 private:
  void record_epoch_means(int spe) {
    for (const char* name :
         {"L_xr", "L_EncD_r", "L_DecD_r", "L_EncD_r_adv", "L_DecD_r_adv"}) {
      auto s = curves_.series(name);
      double m = 0;
      for (std::size_t i = s.size() - static_cast<std::size_t>(spe);
           i < s.size(); ++i)
        m += s[i];
      curves_.add(step_ - 1, std::string(name) + "_epoch", m / spe);
    }
  }

  ArchParams arch_;
  TrainingConfig cfg_;
  Component<float> enc_, dec_, encd_, decd_;
  Adam<float> opt_enc_, opt_dec_, opt_encd_, opt_decd_;
  detail::BatchSchedule schedule_;
  RandomStream prior_rng_, noise_rng_;
  TrainingCurves curves_;
  std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Stage 2: conditional structure model on top of a frozen reference encoder.

struct ConditionalStepLosses {
  double recon = 0;    // L_xrs
  double class_y = 0;  // L_Y
  double zr = 0;       // L_zr
  double encd = 0;     // EncD_s discriminator objective
  double decd = 0;     // DecD_rs discriminator objective
  double enc_adv = 0;
  double dec_adv = 0;
};

class ConditionalTrainer {
 public:
  ConditionalTrainer(const ArchParams& arch, const TrainingConfig& cfg,
                     Component<float> frozen_enc_r)
      : arch_(arch),
        cfg_(cfg),
        enc_r_(std::move(frozen_enc_r)),
        enc_(Component<float>::build(
            make_enc_rs(arch), {arch.ref_channels + 1, arch.side, arch.side},
            mix_seed(cfg.init_seed, 4))),
        dec_(Component<float>::build(
            make_dec_rs(arch), {2 * arch.latent_dim + arch.n_classes},
            mix_seed(cfg.init_seed, 5))),
        encd_(Component<float>::build(make_encd_s(arch), {arch.latent_dim},
                                      mix_seed(cfg.init_seed, 6))),
        decd_(Component<float>::build(
            make_decd_rs(arch), {arch.ref_channels + 1, arch.side, arch.side},
            mix_seed(cfg.init_seed, 7))),
        schedule_(cfg.shuffle_seed),
        prior_rng_(cfg.prior_seed),
        noise_rng_(cfg.noise_seed) {
    cfg.validate();
    AdamParams<float> ap;
    ap.lr = static_cast<float>(cfg.learning_rate);
    ap.beta1 = static_cast<float>(cfg.adam_beta1);
    ap.beta2 = static_cast<float>(cfg.adam_beta2);
    for (auto* o : {&opt_enc_, &opt_dec_, &opt_encd_, &opt_decd_})
      *o = Adam<float>(ap);
    opt_enc_.bind(enc_.params());
    opt_dec_.bind(dec_.params());
    opt_encd_.bind(encd_.params());
    opt_decd_.bind(decd_.params());
    decd_.set_noise_rng(&noise_rng_);
  }

  // labels are 1-based (manifest convention)
  ConditionalStepLosses step(const Tensor<float>& batch,
                             const std::vector<int>& labels,
                             const StepOptions& opts = {}) {
    const int B = batch.dim(0), D = arch_.latent_dim, K = arch_.n_classes;
    check_shape(static_cast<int>(labels.size()) == B,
                "label count must match batch size");
    std::vector<int> y0;  // 0-based
    for (int y : labels) {
      check_value(y >= 1 && y <= K,
                  "label " + std::to_string(y) + " outside 1.." +
                      std::to_string(K));
      y0.push_back(y - 1);
    }
    const float ge = static_cast<float>(cfg_.gamma_enc);
    const float gd = static_cast<float>(cfg_.gamma_dec);

    // target codes from the frozen reference encoder (eval mode, no grads)
    Tensor<float> zr_target = enc_r_.eval(reference_channels(batch));

    // ---- forwards
    ComponentTape<float> t_enc, t_dec, t_dec_gen, t_ed_gen, t_ed_obs, t_dd_obs,
        t_dd_gen, t_dd_rec;
    auto outs = enc_.forward(batch, true, t_enc);  // [y_hat, zr_hat, zs]
    Tensor<float>& y_hat = outs[0];
    Tensor<float>& zr_hat = outs[1];
    Tensor<float>& zs = outs[2];
    Tensor<float> cat = concat_features({&zr_hat, &y_hat, &zs});
    Tensor<float> xhat = dec_.forward1(cat, true, t_dec);
    Tensor<float> zs_tilde = draw_prior(B, D, prior_rng_);
    Tensor<float> cat_gen = concat_features({&zr_hat, &y_hat, &zs_tilde});
    Tensor<float> x_gen = dec_.forward1(cat_gen, true, t_dec_gen);
    Tensor<float> v_gen = encd_.forward1(zs_tilde, true, t_ed_gen);
    Tensor<float> v_obs = encd_.forward1(zs, true, t_ed_obs);
    Tensor<float> s_obs = decd_.forward1(batch, true, t_dd_obs);
    Tensor<float> s_gen = decd_.forward1(x_gen, true, t_dd_gen);
    Tensor<float> s_rec = decd_.forward1(xhat, true, t_dd_rec);

    // ---- losses
    auto recon = bce(xhat, batch);
    auto l_y = nll_probs(y_hat, y0);
    auto l_zr = mse(zr_hat, zr_target);
    auto d_enc = discriminator_loss(v_gen, v_obs);
    auto d_obs = class_loss(s_obs, y0);
    auto d_gen = class_loss(s_gen, std::vector<int>(static_cast<std::size_t>(B), K));
    auto enc_adv = bce_const(v_obs, verdict::kGenerated);
    auto adv_gen = class_loss(s_gen, y0);  // fool: true labels on generated
    auto adv_rec = class_loss(s_rec, y0);

    ConditionalStepLosses out;
    out.recon = recon.value;
    out.class_y = l_y.value;
    out.zr = l_zr.value;
    out.encd = d_enc.value;
    out.decd = d_obs.value + d_gen.value;
    out.enc_adv = enc_adv.value;
    out.dec_adv = adv_gen.value + adv_rec.value;
    detail::check_finite_loss(out.recon, "L_xrs", step_);
    detail::check_finite_loss(out.class_y, "L_Y", step_);
    detail::check_finite_loss(out.zr, "L_zr", step_);
    detail::check_finite_loss(out.encd + out.decd, "discriminator terms", step_);
    detail::check_finite_loss(out.enc_adv + out.dec_adv, "adversarial terms",
                              step_);

    // ---- gradients
    enc_.zero_grad();
    dec_.zero_grad();
    encd_.zero_grad();
    decd_.zero_grad();

    encd_.backward(t_ed_gen, {d_enc.grad_gen}, true);
    encd_.backward(t_ed_obs, {d_enc.grad_obs}, true);
    decd_.backward(t_dd_obs, {d_obs.grad}, true);
    decd_.backward(t_dd_gen, {d_gen.grad}, true);

    Tensor<float> g_zs_adv = encd_.backward(t_ed_obs, {enc_adv.grad}, false);
    Tensor<float> g_xgen_adv = decd_.backward(t_dd_gen, {adv_gen.grad}, false);
    Tensor<float> g_xhat_adv = decd_.backward(t_dd_rec, {adv_rec.grad}, false);

    // decoder: reconstruction grad flows back to the conditioning vector;
    // adversarial grads stop at the decoder (inputs dropped)
    Tensor<float> g_cat = dec_.backward(t_dec, {recon.grad}, true);
    g_xhat_adv *= gd;
    dec_.backward(t_dec, {g_xhat_adv}, true);
    g_xgen_adv *= gd;
    dec_.backward(t_dec_gen, {g_xgen_adv}, true);

    // encoder heads: split the conditioning grad back into (zr, y, zs) and
    // add each head's own loss term
    auto parts = split_features(g_cat, {D, K, D});
    Tensor<float>& g_zr = parts[0];
    Tensor<float>& g_y = parts[1];
    Tensor<float>& g_zs = parts[2];
    g_zr += l_zr.grad;
    g_y += l_y.grad;
    g_zs.axpy(ge, g_zs_adv);
    enc_.backward(t_enc, {g_y, g_zr, g_zs}, true);

    // ---- Adam updates, in the listed order
    if (opts.update_encd) opt_encd_.step(encd_.params(), encd_.grads());
    if (opts.update_decd) opt_decd_.step(decd_.params(), decd_.grads());
    if (opts.update_enc) opt_enc_.step(enc_.params(), enc_.grads());
    if (opts.update_dec) opt_dec_.step(dec_.params(), dec_.grads());

    curves_.add(step_, "L_xrs", out.recon);
    curves_.add(step_, "L_Y", out.class_y);
    curves_.add(step_, "L_zr", out.zr);
    curves_.add(step_, "L_EncD_s", out.encd);
    curves_.add(step_, "L_DecD_rs", out.decd);
    curves_.add(step_, "L_EncD_s_adv", out.enc_adv);
    curves_.add(step_, "L_DecD_rs_adv", out.dec_adv);
    ++step_;
    return out;
  }

  void run(const Dataset& data, int total_epochs) {
    check_value(data.size() >= cfg_.batch_size, "corpus smaller than a batch");
    const int spe = data.size() / cfg_.batch_size;
    const std::int64_t target = static_cast<std::int64_t>(total_epochs) * spe;
    while (step_ < target) {
      auto idx = schedule_.next(data.size(), cfg_.batch_size);
      Tensor<float> bx = detail::gather_images(data.x, idx);
      std::vector<int> by;
      for (int i : idx) by.push_back(data.labels[static_cast<std::size_t>(i)]);
      step(bx, by);
      if (step_ % spe == 0) record_epoch_means(spe);
    }
  }

  Tensor<float> reference_channels(const Tensor<float>& batch) const {
    const int B = batch.dim(0), S = batch.dim(2);
    Tensor<float> out({B, arch_.ref_channels, S, S});
    for (int n = 0; n < B; ++n)
      for (int c = 0; c < arch_.ref_channels; ++c)
        for (int h = 0; h < S; ++h)
          for (int w = 0; w < S; ++w) out.at(n, c, h, w) = batch.at(n, c, h, w);
    return out;
  }

  void run_steps(const Dataset& data, int n) {
    for (int i = 0; i < n; ++i) {
      auto idx = schedule_.next(data.size(), cfg_.batch_size);
      Tensor<float> bx = detail::gather_images(data.x, idx);
      std::vector<int> by;
      for (int j : idx) by.push_back(data.labels[static_cast<std::size_t>(j)]);
      step(bx, by);
    }
  }

  Component<float>& enc_r() { return enc_r_; }
  Component<float>& enc_rs() { return enc_; }
  Component<float>& dec_rs() { return dec_; }
  Component<float>& encd_s() { return encd_; }
  Component<float>& decd_rs() { return decd_; }
  TrainingCurves& curves() { return curves_; }
  std::int64_t steps() const { return step_; }
  const ArchParams& arch() const { return arch_; }
  const TrainingConfig& config() const { return cfg_; }

  void save(const std::string& path, const nlohmann::json& extra_meta = {}) {
    Checkpoint ck;
    ck.meta["kind"] = "conditional";
    ck.meta["arch"] = arch_.to_json();
    ck.meta["train"] = cfg_.to_json();
    ck.meta["step"] = step_;
    ck.meta["perm"] = schedule_.perm();
    ck.meta["pos"] = schedule_.pos();
    ck.meta["curves"] = curves_.to_json();
    if (!extra_meta.is_null())
      for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it)
        ck.meta[it.key()] = it.value();
    detail::save_component(ck, "enc_r", enc_r_, nullptr);  // frozen
    detail::save_component(ck, "enc_rs", enc_, &opt_enc_);
    detail::save_component(ck, "dec_rs", dec_, &opt_dec_);
    detail::save_component(ck, "encd_s", encd_, &opt_encd_);
    detail::save_component(ck, "decd_rs", decd_, &opt_decd_);
    ck.add_rng("shuffle", schedule_.rng().serialize());
    ck.add_rng("prior", prior_rng_.serialize());
    ck.add_rng("noise", noise_rng_.serialize());
    ck.save(path);
  }

  static ConditionalTrainer load(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.meta.value("kind", std::string()) != "conditional")
      throw io_error("not a conditional-model checkpoint: " + path);
    const ArchParams arch = ArchParams::from_json(ck.meta.at("arch"));
    Component<float> enc_r = Component<float>::build(
        make_enc_r(arch), {arch.ref_channels, arch.side, arch.side}, 0);
    detail::load_component(ck, "enc_r", enc_r, nullptr);
    ConditionalTrainer t(arch, TrainingConfig::from_json(ck.meta.at("train")),
                         std::move(enc_r));
    detail::load_component(ck, "enc_rs", t.enc_, &t.opt_enc_);
    detail::load_component(ck, "dec_rs", t.dec_, &t.opt_dec_);
    detail::load_component(ck, "encd_s", t.encd_, &t.opt_encd_);
    detail::load_component(ck, "decd_rs", t.decd_, &t.opt_decd_);
    t.step_ = ck.meta.at("step").get<std::int64_t>();
    t.schedule_.perm() = ck.meta.at("perm").get<std::vector<int>>();
    t.schedule_.pos() = ck.meta.at("pos").get<int>();
    t.schedule_.rng().deserialize(ck.rng("shuffle"));
    t.prior_rng_.deserialize(ck.rng("prior"));
    t.noise_rng_.deserialize(ck.rng("noise"));
    t.curves_ = TrainingCurves::from_json(ck.meta.at("curves"));
    return t;
  }

 private:
  void record_epoch_means(int spe) {
    for (const char* name : {"L_xrs", "L_Y", "L_zr", "L_EncD_s", "L_DecD_rs",
                             "L_EncD_s_adv", "L_DecD_rs_adv"}) {
      auto s = curves_.series(name);
      double m = 0;
      for (std::size_t i = s.size() - static_cast<std::size_t>(spe);
           i < s.size(); ++i)
        m += s[i];
      curves_.add(step_ - 1, std::string(name) + "_epoch", m / spe);
    }
  }

  ArchParams arch_;
  TrainingConfig cfg_;
  Component<float> enc_r_;  // frozen, eval-mode targets only
  Component<float> enc_, dec_, encd_, decd_;
  Adam<float> opt_enc_, opt_dec_, opt_encd_, opt_decd_;
  detail::BatchSchedule schedule_;
  RandomStream prior_rng_, noise_rng_;
  TrainingCurves curves_;
  std::int64_t step_ = 0;
};

}  // namespace icell
