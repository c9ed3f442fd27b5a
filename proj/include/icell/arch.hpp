#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "icell/common.hpp"

namespace icell {

// Declarative layer rows. Architecture tables are data: the same builder
// emits the paper-scale stacks at 256x256 and smaller desk stacks, because
// the number of stride-2 stages is derived from the image side.
enum class Act { none, prelu, lrelu, sigmoid, softmax };

inline std::string to_string(Act a) {
  switch (a) {
    case Act::none: return "none";
    case Act::prelu: return "prelu";
    case Act::lrelu: return "lrelu";
    case Act::sigmoid: return "sigmoid";
    case Act::softmax: return "softmax";
  }
  return "none";
}

inline Act act_from_string(const std::string& s) {
  if (s == "none") return Act::none;
  if (s == "prelu") return Act::prelu;
  if (s == "lrelu") return Act::lrelu;
  if (s == "sigmoid") return Act::sigmoid;
  if (s == "softmax") return Act::softmax;
  throw value_error("unknown activation: " + s);
}

struct LayerSpec {
  enum class Kind { conv_down, conv_up, conv_valid, fc, noise, flatten, reshape, gap };

  Kind kind = Kind::fc;
  int width = 0;       // output channels / features
  double sigma = 0.0;  // noise rows
  bool bnorm = false;
  Act act = Act::none;
  double act_temp = 1.0;  // sigmoid temperature (output rows)

  static LayerSpec conv_down(int width, bool bnorm, Act act) {
    return {Kind::conv_down, width, 0.0, bnorm, act};
  }
  static LayerSpec conv_up(int width, bool bnorm, Act act) {
    return {Kind::conv_up, width, 0.0, bnorm, act};
  }
  static LayerSpec conv_valid(int width, bool bnorm, Act act) {
    return {Kind::conv_valid, width, 0.0, bnorm, act};
  }
  static LayerSpec fc(int width, bool bnorm, Act act) {
    return {Kind::fc, width, 0.0, bnorm, act};
  }
  static LayerSpec noise(double sigma) { return {Kind::noise, 0, sigma, false, Act::none}; }
  static LayerSpec flatten() { return {Kind::flatten, 0, 0.0, false, Act::none}; }
  static LayerSpec reshape(int width) {
    // reshape (N, width*16) -> (N, width, 4, 4)
    return {Kind::reshape, width, 0.0, false, Act::none};
  }
  static LayerSpec gap() { return {Kind::gap, 0, 0.0, false, Act::none}; }
};

inline std::string kind_to_string(LayerSpec::Kind k) {
  using K = LayerSpec::Kind;
  switch (k) {
    case K::conv_down: return "conv_down";
    case K::conv_up: return "conv_up";
    case K::conv_valid: return "conv_valid";
    case K::fc: return "fc";
    case K::noise: return "noise";
    case K::flatten: return "flatten";
    case K::reshape: return "reshape";
    case K::gap: return "gap";
  }
  return "fc";
}

inline LayerSpec::Kind kind_from_string(const std::string& s) {
  using K = LayerSpec::Kind;
  if (s == "conv_down") return K::conv_down;
  if (s == "conv_up") return K::conv_up;
  if (s == "conv_valid") return K::conv_valid;
  if (s == "fc") return K::fc;
  if (s == "noise") return K::noise;
  if (s == "flatten") return K::flatten;
  if (s == "reshape") return K::reshape;
  if (s == "gap") return K::gap;
  throw value_error("unknown layer kind: " + s);
}

// A table is a trunk plus optional parallel heads (the conditional encoder
// splits into class / z_r / z_s heads after the shared conv stack).
struct ArchitectureTable {
  std::string name;
  std::vector<LayerSpec> rows;
  std::vector<std::vector<LayerSpec>> heads;

  nlohmann::json to_json() const;
  static ArchitectureTable from_json(const nlohmann::json& j);
};

inline nlohmann::json row_to_json(const LayerSpec& r) {
  nlohmann::json j;
  j["kind"] = kind_to_string(r.kind);
  if (r.kind == LayerSpec::Kind::noise) {
    j["sigma"] = r.sigma;
  } else if (r.kind != LayerSpec::Kind::flatten &&
             r.kind != LayerSpec::Kind::gap) {
    j["width"] = r.width;
  }
  if (r.bnorm) j["bnorm"] = true;
  if (r.act != Act::none) j["act"] = to_string(r.act);
  if (r.act_temp != 1.0) j["act_temp"] = r.act_temp;
  return j;
}

inline LayerSpec row_from_json(const nlohmann::json& j) {
  LayerSpec r;
  r.kind = kind_from_string(j.at("kind").get<std::string>());
  r.width = j.value("width", 0);
  r.sigma = j.value("sigma", 0.0);
  r.bnorm = j.value("bnorm", false);
  r.act = act_from_string(j.value("act", std::string("none")));
  r.act_temp = j.value("act_temp", 1.0);
  return r;
}

inline nlohmann::json ArchitectureTable::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back(row_to_json(r));
  if (!heads.empty()) {
    j["heads"] = nlohmann::json::array();
    for (const auto& h : heads) {
      nlohmann::json jh = nlohmann::json::array();
      for (const auto& r : h) jh.push_back(row_to_json(r));
      j["heads"].push_back(jh);
    }
  }
  return j;
}

inline ArchitectureTable ArchitectureTable::from_json(const nlohmann::json& j) {
  ArchitectureTable t;
  t.name = j.value("name", std::string());
  for (const auto& r : j.at("rows")) t.rows.push_back(row_from_json(r));
  if (j.contains("heads"))
    for (const auto& h : j.at("heads")) {
      std::vector<LayerSpec> rows;
      for (const auto& r : h) rows.push_back(row_from_json(r));
      t.heads.push_back(std::move(rows));
    }
  return t;
}

// ---------------------------------------------------------------------------
// Table builders. side is the square image size; stages = ceil(log2 side)-2,
// so every stack funnels down to (or up from) a 4x4 map. base_width scales
// the channel schedule; base_width=64 at side=256 reproduces the published
// stacks (64,128,...,1024 capped at 16x base for encoders/decoders, 8x base
// for decoder adversaries).

inline int stages_for_side(int side) {
  check_value(side >= 8, "image side must be >= 8");
  check_value((side & (side - 1)) == 0, "image side must be a power of two");
  int d = 0;
  for (int s = side; s > 4; s /= 2) ++d;
  return d;
}

inline int stage_width(int base, int stage, int cap_factor) {
  const long long w = static_cast<long long>(base) << (stage - 1);
  return static_cast<int>(std::min<long long>(w, static_cast<long long>(base) * cap_factor));
}

struct ArchParams {
  int side = 64;
  int base_width = 16;
  int latent_dim = 16;
  int n_classes = 10;
  int ref_channels = 2;
  double noise_sigma = 0.05;

  nlohmann::json to_json() const {
    return {{"side", side},
            {"base_width", base_width},
            {"latent_dim", latent_dim},
            {"n_classes", n_classes},
            {"ref_channels", ref_channels},
            {"noise_sigma", noise_sigma}};
  }
  static ArchParams from_json(const nlohmann::json& j) {
    ArchParams p;
    p.side = j.value("side", 64);
    p.base_width = j.value("base_width", 16);
    p.latent_dim = j.value("latent_dim", 16);
    p.n_classes = j.value("n_classes", 10);
    p.ref_channels = j.value("ref_channels", 2);
    p.noise_sigma = j.value("noise_sigma", 0.05);
    return p;
  }
};

inline ArchitectureTable make_enc_r(const ArchParams& p) {
  ArchitectureTable t;
  t.name = "enc_r";
  const int d = stages_for_side(p.side);
  for (int i = 1; i <= d; ++i)
    t.rows.push_back(LayerSpec::conv_down(stage_width(p.base_width, i, 16), true, Act::prelu));
  t.rows.push_back(LayerSpec::flatten());
  t.rows.push_back(LayerSpec::fc(p.latent_dim, true, Act::none));
  return t;
}

inline std::vector<LayerSpec> decoder_rows(const ArchParams& p, int out_channels) {
  std::vector<LayerSpec> rows;
  const int d = stages_for_side(p.side);
  const int top = stage_width(p.base_width, d, 16);
  rows.push_back(LayerSpec::fc(top * 16, true, Act::prelu));
  rows.push_back(LayerSpec::reshape(top));
  for (int i = d - 1; i >= 1; --i)
    rows.push_back(LayerSpec::conv_up(stage_width(p.base_width, i, 16), true, Act::prelu));
  // Output row: no batch norm, and a steepened sigmoid. Adam's
  // scale-invariant updates move each parameter by about one learning rate
  // per step, so within a small step budget the output logits can only
  // swing a couple of units; a unit-temperature sigmoid then cannot reach
  // the near-zero backgrounds of the corpus. Temperature 4 widens the
  // reachable pixel range without touching the optimizer.
  LayerSpec out_row = LayerSpec::conv_up(out_channels, false, Act::sigmoid);
  out_row.act_temp = 8.0;
  rows.push_back(out_row);
  return rows;
}

inline ArchitectureTable make_dec_r(const ArchParams& p) {
  ArchitectureTable t;
  t.name = "dec_r";
  t.rows = decoder_rows(p, p.ref_channels);
  return t;
}

inline ArchitectureTable make_encd(const std::string& name) {
  ArchitectureTable t;
  t.name = name;
  t.rows.push_back(LayerSpec::fc(1024, false, Act::lrelu));
  t.rows.push_back(LayerSpec::fc(1024, true, Act::lrelu));
  t.rows.push_back(LayerSpec::fc(512, true, Act::lrelu));
  t.rows.push_back(LayerSpec::fc(1, false, Act::sigmoid));
  return t;
}

inline ArchitectureTable make_encd_r(const ArchParams&) { return make_encd("encd_r"); }
inline ArchitectureTable make_encd_s(const ArchParams&) { return make_encd("encd_s"); }

inline std::vector<LayerSpec> decd_rows(const ArchParams& p, int out_channels, Act final_act) {
  std::vector<LayerSpec> rows;
  const int d = stages_for_side(p.side);
  rows.push_back(LayerSpec::noise(p.noise_sigma));
  for (int i = 1; i <= d - 1; ++i)
    rows.push_back(LayerSpec::conv_down(stage_width(p.base_width, i, 8), true, Act::lrelu));
  rows.push_back(LayerSpec::conv_down(out_channels, false, final_act));
  rows.push_back(LayerSpec::gap());
  return rows;
}

inline ArchitectureTable make_decd_r(const ArchParams& p) {
  ArchitectureTable t;
  t.name = "decd_r";
  t.rows = decd_rows(p, 1, Act::sigmoid);
  return t;
}

inline ArchitectureTable make_enc_rs(const ArchParams& p) {
  ArchitectureTable t;
  t.name = "enc_rs";
  const int d = stages_for_side(p.side);
  for (int i = 1; i <= d; ++i)
    t.rows.push_back(LayerSpec::conv_down(stage_width(p.base_width, i, 16), true, Act::prelu));
  t.rows.push_back(LayerSpec::flatten());
  // heads: class probabilities, z_r estimate, z_s
  t.heads.push_back({LayerSpec::fc(p.n_classes, true, Act::softmax)});
  t.heads.push_back({LayerSpec::fc(p.latent_dim, true, Act::none)});
  t.heads.push_back({LayerSpec::fc(p.latent_dim, true, Act::none)});
  return t;
}

inline ArchitectureTable make_dec_rs(const ArchParams& p) {
  ArchitectureTable t;
  t.name = "dec_rs";
  t.rows = decoder_rows(p, p.ref_channels + 1);
  return t;
}

// The K+1-way decoder adversary scores classes with log-softmax, so its last
// conv emits raw scores; the published table's "sigmoid" row conflicts with
// the loss and is not used.
inline ArchitectureTable make_decd_rs(const ArchParams& p) {
  ArchitectureTable t;
  t.name = "decd_rs";
  t.rows = decd_rows(p, p.n_classes + 1, Act::none);
  return t;
}

}  // namespace icell
