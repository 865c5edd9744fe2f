#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "ncpo/math.hpp"
#include "ncpo/rng.hpp"

namespace ncpo {

struct Condition {
  int id = 0;
};

// Layer sizes of the denoiser. The network consumes the data vector, a fixed
// sinusoidal encoding of the timestep, and a learned per-condition embedding,
// all concatenated at the input stage.
struct Arch {
  int data_dim = 2;       // D
  int hidden = 32;        // H
  int embed_dim = 8;      // E
  int conditions = 4;     // C
  int time_features = 8;  // sinusoidal width, must be even
  int cond_features = 8;  // learned embedding width

  int input_dim() const { return data_dim + time_features + cond_features; }

  void validate() const {
    require(data_dim > 0 && hidden > 0 && embed_dim > 0 && conditions > 0,
            "Arch: all layer sizes must be positive");
    require(time_features > 0 && time_features % 2 == 0,
            "Arch: time_features must be positive and even");
    require(cond_features > 0, "Arch: cond_features must be positive");
  }

  int param_count() const {
    int in = input_dim();
    return hidden * in + hidden +          // encoder layer 1
           hidden * hidden + hidden +      // encoder layer 2
           embed_dim * hidden + embed_dim +  // embedding head
           data_dim * embed_dim + data_dim +  // decoder head
           conditions * cond_features;     // condition table
  }

  bool operator==(const Arch&) const = default;
};

// Offsets of each weight block inside the flat parameter vector.
struct ParamLayout {
  int w1, b1, w2, b2, w3, b3, dec_w, dec_b, cond_table, total;

  explicit ParamLayout(const Arch& a) {
    int in = a.input_dim();
    w1 = 0;
    b1 = w1 + a.hidden * in;
    w2 = b1 + a.hidden;
    b2 = w2 + a.hidden * a.hidden;
    w3 = b2 + a.hidden;
    b3 = w3 + a.embed_dim * a.hidden;
    dec_w = b3 + a.embed_dim;
    dec_b = dec_w + a.data_dim * a.embed_dim;
    cond_table = dec_b + a.data_dim;
    total = cond_table + a.conditions * a.cond_features;
  }
};

inline Vec sinusoidal_time_features(int t, int width) {
  Vec f(width);
  for (int k = 0; k < width / 2; ++k) {
    double omega = std::pow(10000.0, -2.0 * k / width);
    f[2 * k] = std::sin(t * omega);
    f[2 * k + 1] = std::cos(t * omega);
  }
  return f;
}

struct Embedding {
  Vec e;
};

// Conditional noise predictor with an explicit encoder/decoder split:
//
//   encode : (x, c, t) -> embedding      two tanh layers, linear output
//   decode : embedding -> noise estimate  single linear head
//
// All weights live in one flat vector so optimizers and finite-difference
// probes can treat the model as a point in R^P. A frozen model rejects
// parameter loads but evaluates exactly like a trainable one.
class DenoiserModel {
 public:
  static DenoiserModel init(const Arch& arch, std::uint64_t seed) {
    arch.validate();
    ParamLayout lay(arch);
    Vec p(lay.total, 0.0);
    Rng rng(derive_seed(seed, "denoiser_init"));
    int in = arch.input_dim();
    fill_gaussian(p, lay.w1, arch.hidden * in, 1.0 / std::sqrt(in), rng);
    fill_gaussian(p, lay.w2, arch.hidden * arch.hidden, 1.0 / std::sqrt(arch.hidden), rng);
    fill_gaussian(p, lay.w3, arch.embed_dim * arch.hidden, 1.0 / std::sqrt(arch.hidden), rng);
    fill_gaussian(p, lay.dec_w, arch.data_dim * arch.embed_dim, 1.0 / std::sqrt(arch.embed_dim), rng);
    fill_gaussian(p, lay.cond_table, arch.conditions * arch.cond_features, 1.0, rng);
    return DenoiserModel(arch, std::move(p), false);
  }

  const Arch& arch() const { return arch_; }
  const ParamLayout& layout() const { return layout_; }
  bool frozen() const { return frozen_; }
  int param_count() const { return layout_.total; }

  // Flat view over all trainable weights.
  const Vec& params() const { return params_; }

  void load_params(const Vec& v) {
    require(!frozen_, "load_params: model is frozen");
    require(static_cast<int>(v.size()) == layout_.total,
            "load_params: expected " + std::to_string(layout_.total) +
                " values, got " + std::to_string(v.size()));
    params_ = v;
  }

  DenoiserModel clone_frozen() const { return DenoiserModel(arch_, params_, true); }
  DenoiserModel clone_trainable() const { return DenoiserModel(arch_, params_, false); }

  Embedding encode(const Vec& x, Condition c, int t) const {
    Activations act = run_encoder(x, c, t);
    return Embedding{std::move(act.e)};
  }

  // The linear decoder head on its own, for factorization checks.
  Vec decode_head(const Vec& embedding) const {
    require(static_cast<int>(embedding.size()) == arch_.embed_dim,
            "decode_head: embedding dimension mismatch");
    Vec out(arch_.data_dim);
    matvec(layout_.dec_w, arch_.data_dim, arch_.embed_dim, embedding, out);
    add_bias(layout_.dec_b, out);
    return out;
  }

  Vec predict_noise(const Vec& x, Condition c, int t) const {
    Activations act = run_encoder(x, c, t);
    return decode_head(act.e);
  }

  // Accumulates scale * d<cot, predict_noise(x, c, t)> / dparams into grad.
  void backprop_params_into(const Vec& x, Condition c, int t, const Vec& cot,
                            Vec& grad, double scale) const {
    require(static_cast<int>(cot.size()) == arch_.data_dim,
            "backprop_params_into: cotangent dimension mismatch");
    require(static_cast<int>(grad.size()) == layout_.total,
            "backprop_params_into: gradient buffer size mismatch");
    Activations act = run_encoder(x, c, t);

    // decoder: out = Wd e + bd
    Vec d_e(arch_.embed_dim, 0.0);
    for (int i = 0; i < arch_.data_dim; ++i) {
      double ci = scale * cot[i];
      const double* wrow = &params_[layout_.dec_w + i * arch_.embed_dim];
      double* grow = &grad[layout_.dec_w + i * arch_.embed_dim];
      for (int j = 0; j < arch_.embed_dim; ++j) {
        grow[j] += ci * act.e[j];
        d_e[j] += cot[i] * wrow[j];
      }
      grad[layout_.dec_b + i] += ci;
    }
    backprop_encoder(act, c, d_e, &grad, nullptr, scale);
  }

  Vec backprop_params(const Vec& x, Condition c, int t, const Vec& cot) const {
    Vec grad(layout_.total, 0.0);
    backprop_params_into(x, c, t, cot, grad, 1.0);
    return grad;
  }

  // d<cot, encode(x, c, t)> / dx with parameters held fixed. This is the path
  // a perceptual objective differentiates through when the encoder is frozen.
  Vec encode_input_gradient(const Vec& x, Condition c, int t, const Vec& cot) const {
    require(static_cast<int>(cot.size()) == arch_.embed_dim,
            "encode_input_gradient: cotangent dimension mismatch");
    Activations act = run_encoder(x, c, t);
    Vec d_x(arch_.data_dim, 0.0);
    backprop_encoder(act, c, cot, nullptr, &d_x, 1.0);
    return d_x;
  }

 private:
  DenoiserModel(Arch a, Vec params, bool frozen)
      : arch_(a), layout_(a), params_(std::move(params)), frozen_(frozen) {}

  static void fill_gaussian(Vec& p, int offset, int count, double stddev, Rng& rng) {
    for (int i = 0; i < count; ++i) p[offset + i] = stddev * rng.normal();
  }

  struct Activations {
    Vec in, h1, h2, e;  // h layers are post-tanh
  };

  void check_inputs(const Vec& x, Condition c, int t) const {
    require(static_cast<int>(x.size()) == arch_.data_dim,
            "denoiser: input dimension mismatch");
    require(c.id >= 0 && c.id < arch_.conditions,
            "denoiser: condition " + std::to_string(c.id) + " out of range");
    require(t >= 0, "denoiser: negative timestep");
  }

  // y = W x + b over a block of the flat parameter vector (row-major W).
  void matvec(int w_offset, int rows, int cols, const Vec& x, Vec& y) const {
    for (int i = 0; i < rows; ++i) {
      const double* row = &params_[w_offset + i * cols];
      double s = 0.0;
      for (int j = 0; j < cols; ++j) s += row[j] * x[j];
      y[i] = s;
    }
  }

  void add_bias(int b_offset, Vec& y) const {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += params_[b_offset + i];
  }

  Activations run_encoder(const Vec& x, Condition c, int t) const {
    check_inputs(x, c, t);
    Activations act;
    act.in.resize(arch_.input_dim());
    int pos = 0;
    for (int i = 0; i < arch_.data_dim; ++i) act.in[pos++] = x[i];
    Vec tf = sinusoidal_time_features(t, arch_.time_features);
    for (double v : tf) act.in[pos++] = v;
    const double* crow = &params_[layout_.cond_table + c.id * arch_.cond_features];
    for (int i = 0; i < arch_.cond_features; ++i) act.in[pos++] = crow[i];

    act.h1.resize(arch_.hidden);
    matvec(layout_.w1, arch_.hidden, arch_.input_dim(), act.in, act.h1);
    add_bias(layout_.b1, act.h1);
    for (double& v : act.h1) v = std::tanh(v);

    act.h2.resize(arch_.hidden);
    matvec(layout_.w2, arch_.hidden, arch_.hidden, act.h1, act.h2);
    add_bias(layout_.b2, act.h2);
    for (double& v : act.h2) v = std::tanh(v);

    act.e.resize(arch_.embed_dim);
    matvec(layout_.w3, arch_.embed_dim, arch_.hidden, act.h2, act.e);
    add_bias(layout_.b3, act.e);
    return act;
  }

  // Shared reverse pass below the embedding. d_e is the cotangent on the
  // embedding; writes parameter gradients into *grad (scaled) and/or the
  // input-x gradient into *d_x.
  void backprop_encoder(const Activations& act, Condition c, const Vec& d_e,
                        Vec* grad, Vec* d_x, double scale) const {
    int H = arch_.hidden;
    int in_dim = arch_.input_dim();

    // e = W3 h2 + b3
    Vec d_h2(H, 0.0);
    for (int i = 0; i < arch_.embed_dim; ++i) {
      const double* wrow = &params_[layout_.w3 + i * H];
      for (int j = 0; j < H; ++j) d_h2[j] += d_e[i] * wrow[j];
      if (grad) {
        double* grow = &(*grad)[layout_.w3 + i * H];
        double ci = scale * d_e[i];
        for (int j = 0; j < H; ++j) grow[j] += ci * act.h2[j];
        (*grad)[layout_.b3 + i] += ci;
      }
    }
    // h2 = tanh(a2)
    Vec d_a2(H);
    for (int j = 0; j < H; ++j) d_a2[j] = d_h2[j] * (1.0 - act.h2[j] * act.h2[j]);

    // a2 = W2 h1 + b2
    Vec d_h1(H, 0.0);
    for (int i = 0; i < H; ++i) {
      const double* wrow = &params_[layout_.w2 + i * H];
      for (int j = 0; j < H; ++j) d_h1[j] += d_a2[i] * wrow[j];
      if (grad) {
        double* grow = &(*grad)[layout_.w2 + i * H];
        double ci = scale * d_a2[i];
        for (int j = 0; j < H; ++j) grow[j] += ci * act.h1[j];
        (*grad)[layout_.b2 + i] += ci;
      }
    }
    // h1 = tanh(a1)
    Vec d_a1(H);
    for (int j = 0; j < H; ++j) d_a1[j] = d_h1[j] * (1.0 - act.h1[j] * act.h1[j]);

    // a1 = W1 in + b1
    Vec d_in(in_dim, 0.0);
    for (int i = 0; i < H; ++i) {
      const double* wrow = &params_[layout_.w1 + i * in_dim];
      for (int j = 0; j < in_dim; ++j) d_in[j] += d_a1[i] * wrow[j];
      if (grad) {
        double* grow = &(*grad)[layout_.w1 + i * in_dim];
        double ci = scale * d_a1[i];
        for (int j = 0; j < in_dim; ++j) grow[j] += ci * act.in[j];
        (*grad)[layout_.b1 + i] += ci;
      }
    }
    if (grad) {
      int cond_base = layout_.cond_table + c.id * arch_.cond_features;
      int in_base = arch_.data_dim + arch_.time_features;
      for (int i = 0; i < arch_.cond_features; ++i) {
        (*grad)[cond_base + i] += scale * d_in[in_base + i];
      }
    }
    if (d_x) {
      for (int i = 0; i < arch_.data_dim; ++i) (*d_x)[i] = d_in[i];
    }
  }

  Arch arch_;
  ParamLayout layout_;
  Vec params_;
  bool frozen_ = false;
};

}  // namespace ncpo
