#pragma once

#include <memory>
#include <string>
#include <vector>

#include "icell/arch.hpp"
#include "icell/layers.hpp"

namespace icell {

// Shape of one sample while threading a table: either an image (C,H,W) or a
// flat feature vector (F).
struct SampleShape {
  bool image = false;
  int c = 0, h = 0, w = 0;
  int f = 0;

  static SampleShape of_image(int c, int h, int w) { return {true, c, h, w, 0}; }
  static SampleShape of_features(int f) { return {false, 0, 0, 0, f}; }

  std::string str() const {
    if (image)
      return "(" + std::to_string(c) + "," + std::to_string(h) + "," +
             std::to_string(w) + ")";
    return "(" + std::to_string(f) + ")";
  }
};

namespace detail {

template <typename T>
SampleShape append_row(Sequential<T>& seq, const LayerSpec& row,
                       SampleShape s, const std::string& where) {
  using K = LayerSpec::Kind;
  switch (row.kind) {
    case K::noise:
      seq.add(std::make_unique<GaussianNoise<T>>(row.sigma));
      return s;
    case K::flatten:
      check_shape(s.image, where + ": flatten expects an image");
      seq.add(std::make_unique<Flatten<T>>());
      s = SampleShape::of_features(s.c * s.h * s.w);
      break;
    case K::reshape:
      check_shape(!s.image && s.f == row.width * 16,
                  where + ": reshape expects " + std::to_string(row.width * 16) +
                      " features, have " + s.str());
      seq.add(std::make_unique<Reshape<T>>(row.width, 4, 4));
      s = SampleShape::of_image(row.width, 4, 4);
      break;
    case K::gap:
      check_shape(s.image, where + ": gap expects an image");
      seq.add(std::make_unique<GlobalAvgPool<T>>());
      s = SampleShape::of_features(s.c);
      break;
    case K::conv_down:
      check_shape(s.image, where + ": conv expects an image");
      check_shape(s.h % 2 == 0 && s.w % 2 == 0 && s.h >= 2 && s.w >= 2,
                  where + ": side " + std::to_string(s.h) +
                      " not divisible by 2 at a stride-2 stage");
      check_value(row.width > 0, where + ": non-positive conv width");
      seq.add(std::make_unique<Conv2d<T>>(s.c, row.width, 2, 1));
      s = SampleShape::of_image(row.width, s.h / 2, s.w / 2);
      break;
    case K::conv_valid:
      check_shape(s.image && s.h == 4 && s.w == 4,
                  where + ": valid conv expects a 4x4 map, have " + s.str());
      seq.add(std::make_unique<Conv2d<T>>(s.c, row.width, 1, 0));
      s = SampleShape::of_image(row.width, 1, 1);
      break;
    case K::conv_up:
      check_shape(s.image, where + ": conv expects an image");
      check_value(row.width > 0, where + ": non-positive conv width");
      seq.add(std::make_unique<ConvTranspose2d<T>>(s.c, row.width));
      s = SampleShape::of_image(row.width, s.h * 2, s.w * 2);
      break;
    case K::fc:
      check_shape(!s.image, where + ": fc expects flat features, have image " + s.str());
      check_value(row.width > 0, where + ": non-positive fc width");
      seq.add(std::make_unique<Dense<T>>(s.f, row.width));
      s = SampleShape::of_features(row.width);
      break;
  }
  if (row.bnorm) {
    const int ch = s.image ? s.c : s.f;
    seq.add(std::make_unique<BatchNorm<T>>(ch));
  }
  switch (row.act) {
    case Act::none:
      break;
    case Act::prelu:
      seq.add(std::make_unique<PReLU<T>>(s.image ? s.c : s.f));
      break;
    case Act::lrelu:
      seq.add(std::make_unique<LeakyReLU<T>>(0.2));
      break;
    case Act::sigmoid:
      seq.add(std::make_unique<Sigmoid<T>>(row.act_temp));
      break;
    case Act::softmax:
      check_shape(!s.image, where + ": softmax on image output unsupported");
      seq.add(std::make_unique<Softmax<T>>());
      break;
  }
  return s;
}

}  // namespace detail

template <typename T>
struct ComponentTape {
  Tape<T> trunk;
  std::vector<Tape<T>> heads;
  Tensor<T> trunk_out;  // kept when heads exist, to size head grad sums
};

// A network component built from a declarative table. Multi-output tables
// (parallel heads over a shared trunk) return one tensor per head.
template <typename T>
class Component {
 public:
  Component() = default;
  Component(Component&&) = default;
  Component& operator=(Component&&) = default;

  static Component build(const ArchitectureTable& table,
                         const std::vector<int>& input_shape,
                         std::uint64_t seed) {
    Component comp;
    comp.table_ = table;
    comp.input_shape_ = input_shape;
    SampleShape s;
    if (input_shape.size() == 3)
      s = SampleShape::of_image(input_shape[0], input_shape[1], input_shape[2]);
    else if (input_shape.size() == 1)
      s = SampleShape::of_features(input_shape[0]);
    else
      throw shape_error(table.name + ": input shape must be (C,H,W) or (F)");
    for (const auto& row : table.rows)
      s = detail::append_row(comp.trunk_, row, s, table.name);
    comp.trunk_out_shape_ = s;
    for (std::size_t hi = 0; hi < table.heads.size(); ++hi) {
      Sequential<T> head;
      SampleShape hs = s;
      for (const auto& row : table.heads[hi])
        hs = detail::append_row(head, row, hs,
                                table.name + ".head" + std::to_string(hi));
      comp.head_out_shapes_.push_back(hs);
      comp.heads_.push_back(std::move(head));
    }
    RandomStream rng(seed);
    comp.trunk_.init(rng);
    for (auto& h : comp.heads_) h.init(rng);
    return comp;
  }

  const ArchitectureTable& table() const { return table_; }
  const std::vector<int>& input_shape() const { return input_shape_; }
  std::size_t n_outputs() const { return heads_.empty() ? 1 : heads_.size(); }
  SampleShape output_shape(std::size_t i = 0) const {
    return heads_.empty() ? trunk_out_shape_ : head_out_shapes_[i];
  }

  std::vector<Tensor<T>> forward(const Tensor<T>& x, bool train,
                                 ComponentTape<T>& tape) const {
    check_input(x);
    check_value(x.all_finite(), table_.name + ": non-finite input");
    Tensor<T> t = trunk_.forward(x, train, tape.trunk);
    if (heads_.empty()) return {std::move(t)};
    tape.heads.assign(heads_.size(), Tape<T>{});
    tape.trunk_out = t;
    std::vector<Tensor<T>> outs;
    for (std::size_t i = 0; i < heads_.size(); ++i)
      outs.push_back(heads_[i].forward(t, train, tape.heads[i]));
    return outs;
  }

  // Convenience for single-output components.
  Tensor<T> forward1(const Tensor<T>& x, bool train, ComponentTape<T>& tape) const {
    return forward(x, train, tape)[0];
  }

  Tensor<T> eval(const Tensor<T>& x) const {
    ComponentTape<T> tape;
    return forward1(x, false, tape);
  }

  std::vector<Tensor<T>> eval_all(const Tensor<T>& x) const {
    ComponentTape<T> tape;
    return forward(x, false, tape);
  }

  Tensor<T> backward(const ComponentTape<T>& tape,
                     const std::vector<Tensor<T>>& gouts,
                     bool acc_param_grads) {
    check_shape(gouts.size() == n_outputs(),
                table_.name + ": wrong number of output grads");
    if (heads_.empty())
      return trunk_.backward(tape.trunk, gouts[0], acc_param_grads);
    Tensor<T> gt(tape.trunk_out.shape());
    for (std::size_t i = 0; i < heads_.size(); ++i)
      gt += heads_[i].backward(tape.heads[i], gouts[i], acc_param_grads);
    return trunk_.backward(tape.trunk, gt, acc_param_grads);
  }

  std::vector<Tensor<T>*> params() {
    auto out = trunk_.params();
    for (auto& h : heads_)
      for (auto* p : h.params()) out.push_back(p);
    return out;
  }
  std::vector<Tensor<T>*> grads() {
    auto out = trunk_.grads();
    for (auto& h : heads_)
      for (auto* g : h.grads()) out.push_back(g);
    return out;
  }
  std::vector<Tensor<T>*> buffers() {
    auto out = trunk_.buffers();
    for (auto& h : heads_)
      for (auto* b : h.buffers()) out.push_back(b);
    return out;
  }
  // params + buffers: everything a checkpoint must capture
  std::vector<Tensor<T>*> state() {
    auto out = params();
    for (auto* b : buffers()) out.push_back(b);
    return out;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->numel();
    return n;
  }

  std::vector<unsigned char> state_bytes() {
    std::vector<unsigned char> out;
    for (auto* p : state()) {
      const auto* raw = reinterpret_cast<const unsigned char*>(p->data());
      out.insert(out.end(), raw, raw + p->numel() * sizeof(T));
    }
    return out;
  }

  void zero_grad() {
    trunk_.zero_grad();
    for (auto& h : heads_) h.zero_grad();
  }

  void set_noise_rng(RandomStream* rng) {
    trunk_.set_noise_rng(rng);
    for (auto& h : heads_) h.set_noise_rng(rng);
  }

 private:
  void check_input(const Tensor<T>& x) const {
    if (input_shape_.size() == 3) {
      check_shape(x.rank() == 4 && x.dim(1) == input_shape_[0] &&
                      x.dim(2) == input_shape_[1] && x.dim(3) == input_shape_[2],
                  table_.name + ": expected batch of " +
                      std::to_string(input_shape_[0]) + "x" +
                      std::to_string(input_shape_[1]) + "x" +
                      std::to_string(input_shape_[2]) + " inputs, got " +
                      x.shape_str());
    } else {
      check_shape(x.rank() == 2 && x.dim(1) == input_shape_[0],
                  table_.name + ": expected batch of " +
                      std::to_string(input_shape_[0]) + "-vectors, got " +
                      x.shape_str());
    }
  }

  ArchitectureTable table_;
  std::vector<int> input_shape_;
  Sequential<T> trunk_;
  std::vector<Sequential<T>> heads_;
  SampleShape trunk_out_shape_;
  std::vector<SampleShape> head_out_shapes_;
};

}  // namespace icell
