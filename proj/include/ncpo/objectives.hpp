#pragma once

#include <concepts>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ncpo/denoiser.hpp"
#include "ncpo/math.hpp"
#include "ncpo/rng.hpp"
#include "ncpo/schedule.hpp"

namespace ncpo {

enum class ObjectiveKind { SFT, DPO, CPO, NCP_SFT, NCP_DPO, NCP_CPO };

inline const char* to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::SFT: return "sft";
    case ObjectiveKind::DPO: return "dpo";
    case ObjectiveKind::CPO: return "cpo";
    case ObjectiveKind::NCP_SFT: return "ncp-sft";
    case ObjectiveKind::NCP_DPO: return "ncp-dpo";
    case ObjectiveKind::NCP_CPO: return "ncp-cpo";
  }
  return "?";
}

inline ObjectiveKind parse_objective(const std::string& s) {
  if (s == "sft") return ObjectiveKind::SFT;
  if (s == "dpo") return ObjectiveKind::DPO;
  if (s == "cpo") return ObjectiveKind::CPO;
  if (s == "ncp-sft") return ObjectiveKind::NCP_SFT;
  if (s == "ncp-dpo") return ObjectiveKind::NCP_DPO;
  if (s == "ncp-cpo") return ObjectiveKind::NCP_CPO;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

inline bool is_perceptual(ObjectiveKind k) {
  return k == ObjectiveKind::NCP_SFT || k == ObjectiveKind::NCP_DPO ||
         k == ObjectiveKind::NCP_CPO;
}

inline bool needs_reference(ObjectiveKind k) {
  return k == ObjectiveKind::DPO || k == ObjectiveKind::NCP_DPO;
}

// Everything a single loss evaluation depends on besides the batch itself.
// beta_T_product is the coefficient inside the pairwise sigmoid; lambda only
// matters for the CPO variants. share_z draws one reverse-step noise per
// branch (model, reference, and truth reconstructions all see it), which makes
// a perfect denoiser score exactly zero perceptual loss.
struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::DPO;
  double beta = 1.0;
  double lambda = 0.1;
  double beta_T_product = 1.0;
  bool share_z = true;
  bool share_t_within_pair = true;

  void validate() const {
    require(std::isfinite(beta) && beta > 0, "ObjectiveConfig: beta must be positive");
    require(std::isfinite(lambda) && lambda >= 0, "ObjectiveConfig: lambda must be non-negative");
    require(std::isfinite(beta_T_product) && beta_T_product > 0,
            "ObjectiveConfig: beta_T_product must be positive");
  }
};

template <class M>
concept NoisePredictor = requires(const M& m, const Vec& x, Condition c, int t) {
  { m.predict_noise(x, c, t) } -> std::convertible_to<Vec>;
  { m.param_count() } -> std::convertible_to<int>;
};

template <class M>
concept TrainableModel =
    NoisePredictor<M> &&
    requires(const M& m, const Vec& x, Condition c, int t, const Vec& cot, Vec& g, double s) {
      m.backprop_params_into(x, c, t, cot, g, s);
    };

template <class F>
concept PerceptualEncoder = requires(const F& f, const Vec& x, Condition c, int t, const Vec& cot) {
  { f.embed(x, c, t) } -> std::convertible_to<Vec>;
  { f.input_gradient(x, c, t, cot) } -> std::convertible_to<Vec>;
};

// Embedding view of a frozen denoiser copy. Gradients may flow through the
// input argument of embed (via input_gradient) but never into its weights.
class FrozenEncoder {
 public:
  explicit FrozenEncoder(const DenoiserModel& m) : model_(m.clone_frozen()) {}

  Vec embed(const Vec& x, Condition c, int t) const { return model_.encode(x, c, t).e; }

  Vec input_gradient(const Vec& x, Condition c, int t, const Vec& cot) const {
    return model_.encode_input_gradient(x, c, t, cot);
  }

  const DenoiserModel& model() const { return model_; }

 private:
  DenoiserModel model_;
};

static_assert(NoisePredictor<DenoiserModel>);
static_assert(TrainableModel<DenoiserModel>);
static_assert(PerceptualEncoder<FrozenEncoder>);

struct PairPrompt {
  Condition c;
  Vec x_w;  // clean winner point
  Vec x_l;  // clean loser point
};

// One training pair with every noise draw it will ever need. t_l equals t_w
// when timesteps are shared within the pair. The *_ref / *_truth draws are
// consulted only when a loss runs with share_z=false; with sharing on, z_w
// (resp. z_l) serves the model, reference, and truth reconstructions alike.
struct PairItem {
  Condition c;
  Vec x_w, x_l;
  int t_w = 1, t_l = 1;
  Vec eps_w, eps_l;
  Vec z_w, z_l;
  Vec z_w_ref, z_w_truth;
  Vec z_l_ref, z_l_truth;
};

struct PairBatch {
  std::vector<PairItem> items;
};

inline PairBatch make_pair_batch(const VarianceSchedule& sched,
                                 const std::vector<PairPrompt>& prompts,
                                 const ObjectiveConfig& cfg, std::uint64_t seed) {
  require(!prompts.empty(), "make_pair_batch: empty prompt list");
  Rng rng(seed);
  PairBatch batch;
  batch.items.reserve(prompts.size());
  for (const PairPrompt& p : prompts) {
    require_same_size(p.x_w, p.x_l, "make_pair_batch");
    std::size_t d = p.x_w.size();
    PairItem it;
    it.c = p.c;
    it.x_w = p.x_w;
    it.x_l = p.x_l;
    it.t_w = rng.uniform_int(1, sched.timesteps());
    it.t_l = cfg.share_t_within_pair ? it.t_w : rng.uniform_int(1, sched.timesteps());
    it.eps_w = rng.normal_vec(d);
    it.eps_l = rng.normal_vec(d);
    it.z_w = rng.normal_vec(d);
    it.z_l = rng.normal_vec(d);
    it.z_w_ref = rng.normal_vec(d);
    it.z_w_truth = rng.normal_vec(d);
    it.z_l_ref = rng.normal_vec(d);
    it.z_l_truth = rng.normal_vec(d);
    batch.items.push_back(std::move(it));
  }
  return batch;
}

// One reverse step from the model's own noise prediction: corrupt x0 to x_t
// with eps, predict, step back to t-1 with reverse noise z.
template <NoisePredictor M>
Sample reverse_sample(const VarianceSchedule& sched, const M& model, const Vec& x0,
                      Condition c, int t, const Vec& eps, const Vec& z) {
  Sample xt = forward_diffuse(sched, Sample{x0, 0}, t, eps);
  Vec eps_hat = model.predict_noise(xt.x, c, t);
  return ddpm_reverse_step(sched, xt, eps_hat, z);
}

// Same step but fed the true forward noise; the reconstruction target.
inline Sample ground_truth_sample(const VarianceSchedule& sched, const Vec& x0, int t,
                                  const Vec& eps, const Vec& z) {
  Sample xt = forward_diffuse(sched, Sample{x0, 0}, t, eps);
  return ddpm_reverse_step(sched, xt, eps, z);
}

// Squared embedding distance between the model's reverse-step reconstruction
// and the truth reconstruction, with one shared reverse draw z.
template <NoisePredictor M, PerceptualEncoder F>
double perceptual_loss(const F& f, const VarianceSchedule& sched, const M& model,
                       const Vec& x0, Condition c, int t, const Vec& eps, const Vec& z) {
  Sample xq = reverse_sample(sched, model, x0, c, t, eps, z);
  Sample xg = ground_truth_sample(sched, x0, t, eps, z);
  Vec eq = f.embed(xq.x, c, xq.t);
  Vec eg = f.embed(xg.x, c, xg.t);
  return squared_distance(eq, eg);
}

struct LossReport {
  double loss = 0.0;
  std::map<std::string, double> per_term;  // batch-mean scalars
  Vec grad;                                // aligned with model.params
};

namespace detail {

inline void check_term(double v, const std::string& term, std::size_t item) {
  if (!std::isfinite(v)) {
    throw std::runtime_error("non-finite value in term " + term + " at batch item " +
                             std::to_string(item));
  }
}

// A branch evaluation holds everything needed to later push a scalar weight
// through the model: value, and the cotangent on eps_hat at (xt, c, t) such
// that d(value)/dparams = backprop_params(xt, c, t, cot).
struct Branch {
  double value = 0.0;
  Vec xt;
  Vec cot;
  int t = 0;
};

template <TrainableModel M>
Branch latent_branch(const VarianceSchedule& sched, const M& model, const Vec& x0,
                     Condition c, int t, const Vec& eps) {
  Branch b;
  b.t = t;
  b.xt = forward_diffuse(sched, Sample{x0, 0}, t, eps).x;
  Vec eps_hat = model.predict_noise(b.xt, c, t);
  b.value = squared_distance(eps_hat, eps);
  b.cot = sub(eps_hat, eps);
  for (double& v : b.cot) v *= 2.0;
  return b;
}

template <NoisePredictor M>
double latent_value(const VarianceSchedule& sched, const M& model, const Vec& x0,
                    Condition c, int t, const Vec& eps) {
  Vec xt = forward_diffuse(sched, Sample{x0, 0}, t, eps).x;
  return squared_distance(model.predict_noise(xt, c, t), eps);
}

template <TrainableModel M, PerceptualEncoder F>
Branch perceptual_branch(const VarianceSchedule& sched, const M& model, const F& f,
                         const Vec& x0, Condition c, int t, const Vec& eps,
                         const Vec& z_model, const Vec& z_truth) {
  Branch b;
  b.t = t;
  Sample xt = forward_diffuse(sched, Sample{x0, 0}, t, eps);
  b.xt = xt.x;
  Vec eps_hat = model.predict_noise(b.xt, c, t);
  Sample xq = ddpm_reverse_step(sched, xt, eps_hat, z_model);
  Sample xg = ddpm_reverse_step(sched, xt, eps, z_truth);
  Vec eq = f.embed(xq.x, c, xq.t);
  Vec eg = f.embed(xg.x, c, xg.t);
  b.value = squared_distance(eq, eg);
  Vec d_e = sub(eq, eg);
  for (double& v : d_e) v *= 2.0;
  // Only the model branch depends on params: d xq / d eps_hat = -k_t I.
  Vec d_x = f.input_gradient(xq.x, c, xq.t, d_e);
  b.cot = scaled(d_x, -sched.eps_step_gain(t));
  return b;
}

template <NoisePredictor M, PerceptualEncoder F>
double perceptual_value(const VarianceSchedule& sched, const M& model, const F& f,
                        const Vec& x0, Condition c, int t, const Vec& eps,
                        const Vec& z_model, const Vec& z_truth) {
  Sample xt = forward_diffuse(sched, Sample{x0, 0}, t, eps);
  Vec eps_hat = model.predict_noise(xt.x, c, t);
  Sample xq = ddpm_reverse_step(sched, xt, eps_hat, z_model);
  Sample xg = ddpm_reverse_step(sched, xt, eps, z_truth);
  return squared_distance(f.embed(xq.x, c, xq.t), f.embed(xg.x, c, xg.t));
}

// Winner-only mean of the given branches (the two SFT variants).
template <TrainableModel M>
LossReport assemble_winner_mean(const M& model, const PairBatch& batch,
                                const std::vector<Branch>& w, const std::string& prefix) {
  std::size_t n = batch.items.size();
  LossReport rep;
  rep.grad.assign(static_cast<std::size_t>(model.param_count()), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    check_term(w[i].value, prefix + "_w_theta", i);
    sum += w[i].value;
    model.backprop_params_into(w[i].xt, batch.items[i].c, w[i].t, w[i].cot, rep.grad,
                               1.0 / n);
  }
  rep.loss = sum / n;
  rep.per_term[prefix + "_w_theta"] = rep.loss;
  check_term(rep.loss, "loss", n);
  return rep;
}

// Shared pairwise core:
//   loss = mean_i softplus(u_i) + lambda * mean_i w_i.value
//   u_i  = betaT * ((w_i - ref_w_i) - (l_i - ref_l_i))
// Reference terms enter only when with_ref; the lambda anchor only when
// lambda > 0. Gradient weights per item follow from d softplus = sigmoid.
template <TrainableModel M>
LossReport assemble_pairwise(const M& model, const PairBatch& batch,
                             const std::vector<Branch>& w, const std::vector<Branch>& l,
                             const Vec& ref_w, const Vec& ref_l, bool with_ref,
                             double lambda, const ObjectiveConfig& cfg,
                             const std::string& prefix) {
  std::size_t n = batch.items.size();
  double betaT = cfg.beta_T_product;
  LossReport rep;
  rep.grad.assign(static_cast<std::size_t>(model.param_count()), 0.0);
  double nll_sum = 0.0, arg_sum = 0.0, anchor_sum = 0.0;
  double wt_sum = 0.0, lt_sum = 0.0, wr_sum = 0.0, lr_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const PairItem& it = batch.items[i];
    check_term(w[i].value, prefix + "_w_theta", i);
    check_term(l[i].value, prefix + "_l_theta", i);
    double d = w[i].value - l[i].value;
    if (with_ref) {
      check_term(ref_w[i], prefix + "_w_ref", i);
      check_term(ref_l[i], prefix + "_l_ref", i);
      d -= ref_w[i] - ref_l[i];
      wr_sum += ref_w[i];
      lr_sum += ref_l[i];
    }
    double u = betaT * d;
    check_term(u, "sigmoid_arg", i);
    nll_sum += softplus(u);
    arg_sum += u;
    wt_sum += w[i].value;
    lt_sum += l[i].value;
    anchor_sum += w[i].value;
    double s = sigmoid(u);
    double a_w = (betaT * s + lambda) / n;
    double a_l = -betaT * s / n;
    model.backprop_params_into(w[i].xt, it.c, w[i].t, w[i].cot, rep.grad, a_w);
    model.backprop_params_into(l[i].xt, it.c, l[i].t, l[i].cot, rep.grad, a_l);
  }
  double pairwise_nll = nll_sum / n;
  double lambda_term = lambda * anchor_sum / n;
  rep.loss = pairwise_nll + lambda_term;
  check_term(rep.loss, "loss", n);
  rep.per_term[prefix + "_w_theta"] = wt_sum / n;
  rep.per_term[prefix + "_l_theta"] = lt_sum / n;
  if (with_ref) {
    rep.per_term[prefix + "_w_ref"] = wr_sum / n;
    rep.per_term[prefix + "_l_ref"] = lr_sum / n;
  }
  // Reported as the literal argument of the sigmoid inside -log(sigmoid(.)).
  rep.per_term["sigmoid_arg"] = -arg_sum / n;
  rep.per_term["pairwise_nll"] = pairwise_nll;
  if (lambda > 0) rep.per_term["lambda_term"] = lambda_term;
  return rep;
}

// Reverse-draw selection for the winner/loser perceptual branches.
struct ZTriple {
  const Vec* model;
  const Vec* ref;
  const Vec* truth;
};

inline ZTriple winner_z(const PairItem& it, bool share_z) {
  if (share_z) return {&it.z_w, &it.z_w, &it.z_w};
  return {&it.z_w, &it.z_w_ref, &it.z_w_truth};
}

inline ZTriple loser_z(const PairItem& it, bool share_z) {
  if (share_z) return {&it.z_l, &it.z_l, &it.z_l};
  return {&it.z_l, &it.z_l_ref, &it.z_l_truth};
}

}  // namespace detail

template <TrainableModel M>
LossReport sft_loss(const VarianceSchedule& sched, const M& model, const PairBatch& batch) {
  require(!batch.items.empty(), "sft_loss: empty batch");
  std::vector<detail::Branch> w;
  w.reserve(batch.items.size());
  for (const PairItem& it : batch.items) {
    w.push_back(detail::latent_branch(sched, model, it.x_w, it.c, it.t_w, it.eps_w));
  }
  return detail::assemble_winner_mean(model, batch, w, "L");
}

template <TrainableModel M, PerceptualEncoder F>
LossReport ncp_sft_loss(const VarianceSchedule& sched, const M& model, const F& f,
                        const PairBatch& batch, const ObjectiveConfig& cfg) {
  require(!batch.items.empty(), "ncp_sft_loss: empty batch");
  std::vector<detail::Branch> w;
  w.reserve(batch.items.size());
  for (const PairItem& it : batch.items) {
    detail::ZTriple z = detail::winner_z(it, cfg.share_z);
    w.push_back(detail::perceptual_branch(sched, model, f, it.x_w, it.c, it.t_w, it.eps_w,
                                          *z.model, *z.truth));
  }
  return detail::assemble_winner_mean(model, batch, w, "PL");
}

template <TrainableModel M, NoisePredictor R>
LossReport dpo_loss(const VarianceSchedule& sched, const M& model, const R& ref,
                    const PairBatch& batch, const ObjectiveConfig& cfg) {
  require(!batch.items.empty(), "dpo_loss: empty batch");
  cfg.validate();
  std::size_t n = batch.items.size();
  std::vector<detail::Branch> w, l;
  Vec rw(n), rl(n);
  w.reserve(n);
  l.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const PairItem& it = batch.items[i];
    w.push_back(detail::latent_branch(sched, model, it.x_w, it.c, it.t_w, it.eps_w));
    l.push_back(detail::latent_branch(sched, model, it.x_l, it.c, it.t_l, it.eps_l));
    rw[i] = detail::latent_value(sched, ref, it.x_w, it.c, it.t_w, it.eps_w);
    rl[i] = detail::latent_value(sched, ref, it.x_l, it.c, it.t_l, it.eps_l);
  }
  return detail::assemble_pairwise(model, batch, w, l, rw, rl, true, 0.0, cfg, "L");
}

template <TrainableModel M>
LossReport cpo_loss(const VarianceSchedule& sched, const M& model, const PairBatch& batch,
                    const ObjectiveConfig& cfg) {
  require(!batch.items.empty(), "cpo_loss: empty batch");
  cfg.validate();
  std::size_t n = batch.items.size();
  std::vector<detail::Branch> w, l;
  w.reserve(n);
  l.reserve(n);
  for (const PairItem& it : batch.items) {
    w.push_back(detail::latent_branch(sched, model, it.x_w, it.c, it.t_w, it.eps_w));
    l.push_back(detail::latent_branch(sched, model, it.x_l, it.c, it.t_l, it.eps_l));
  }
  return detail::assemble_pairwise(model, batch, w, l, Vec(), Vec(), false, cfg.lambda, cfg,
                                   "L");
}

template <TrainableModel M, NoisePredictor R, PerceptualEncoder F>
LossReport ncp_dpo_loss(const VarianceSchedule& sched, const M& model, const R& ref,
                        const F& f, const PairBatch& batch, const ObjectiveConfig& cfg) {
  require(!batch.items.empty(), "ncp_dpo_loss: empty batch");
  cfg.validate();
  std::size_t n = batch.items.size();
  std::vector<detail::Branch> w, l;
  Vec rw(n), rl(n);
  w.reserve(n);
  l.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const PairItem& it = batch.items[i];
    detail::ZTriple zw = detail::winner_z(it, cfg.share_z);
    detail::ZTriple zl = detail::loser_z(it, cfg.share_z);
    w.push_back(detail::perceptual_branch(sched, model, f, it.x_w, it.c, it.t_w, it.eps_w,
                                          *zw.model, *zw.truth));
    l.push_back(detail::perceptual_branch(sched, model, f, it.x_l, it.c, it.t_l, it.eps_l,
                                          *zl.model, *zl.truth));
    rw[i] = detail::perceptual_value(sched, ref, f, it.x_w, it.c, it.t_w, it.eps_w,
                                     *zw.ref, *zw.truth);
    rl[i] = detail::perceptual_value(sched, ref, f, it.x_l, it.c, it.t_l, it.eps_l,
                                     *zl.ref, *zl.truth);
  }
  return detail::assemble_pairwise(model, batch, w, l, rw, rl, true, 0.0, cfg, "PL");
}

template <TrainableModel M, PerceptualEncoder F>
LossReport ncp_cpo_loss(const VarianceSchedule& sched, const M& model, const F& f,
                        const PairBatch& batch, const ObjectiveConfig& cfg) {
  require(!batch.items.empty(), "ncp_cpo_loss: empty batch");
  cfg.validate();
  std::size_t n = batch.items.size();
  std::vector<detail::Branch> w, l;
  w.reserve(n);
  l.reserve(n);
  for (const PairItem& it : batch.items) {
    detail::ZTriple zw = detail::winner_z(it, cfg.share_z);
    detail::ZTriple zl = detail::loser_z(it, cfg.share_z);
    w.push_back(detail::perceptual_branch(sched, model, f, it.x_w, it.c, it.t_w, it.eps_w,
                                          *zw.model, *zw.truth));
    l.push_back(detail::perceptual_branch(sched, model, f, it.x_l, it.c, it.t_l, it.eps_l,
                                          *zl.model, *zl.truth));
  }
  return detail::assemble_pairwise(model, batch, w, l, Vec(), Vec(), false, cfg.lambda, cfg,
                                   "PL");
}

// Single entry point used by the training loop; reference and encoder are
// ignored by the kinds that do not consume them.
template <TrainableModel M, NoisePredictor R, PerceptualEncoder F>
LossReport evaluate_objective(const VarianceSchedule& sched, const M& model, const R& ref,
                              const F& f, const PairBatch& batch,
                              const ObjectiveConfig& cfg) {
  switch (cfg.kind) {
    case ObjectiveKind::SFT: return sft_loss(sched, model, batch);
    case ObjectiveKind::DPO: return dpo_loss(sched, model, ref, batch, cfg);
    case ObjectiveKind::CPO: return cpo_loss(sched, model, batch, cfg);
    case ObjectiveKind::NCP_SFT: return ncp_sft_loss(sched, model, f, batch, cfg);
    case ObjectiveKind::NCP_DPO: return ncp_dpo_loss(sched, model, ref, f, batch, cfg);
    case ObjectiveKind::NCP_CPO: return ncp_cpo_loss(sched, model, f, batch, cfg);
  }
  throw std::logic_error("evaluate_objective: unhandled kind");
}

}  // namespace ncpo
