// Shared test scaffolding: stub models, the identity encoder, and the
// closures that recover ground-truth quantities independently of the
// library's own bookkeeping.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ncpo/denoiser.hpp"
#include "ncpo/objectives.hpp"
#include "ncpo/rng.hpp"
#include "ncpo/schedule.hpp"

namespace testsup {

using namespace ncpo;

// Parameter-free predictor whose output is whatever the closure says.
struct StubModel {
  std::function<Vec(const Vec&, Condition, int)> fn;

  Vec predict_noise(const Vec& x, Condition c, int t) const { return fn(x, c, t); }
  int param_count() const { return 0; }
  void backprop_params_into(const Vec&, Condition, int, const Vec&, Vec&, double) const {}
};

static_assert(TrainableModel<StubModel>);

// Encoder that returns the point unchanged; collapses perceptual losses onto
// plain coordinate distances.
struct IdentityEncoder {
  Vec embed(const Vec& x, Condition, int) const { return x; }
  Vec input_gradient(const Vec&, Condition, int, const Vec& cot) const { return cot; }
};

static_assert(PerceptualEncoder<IdentityEncoder>);

// A perfect denoiser for one specific batch: recomputes each branch's noisy
// point and answers with the exact noise that produced the query.
inline StubModel true_noise_oracle(const VarianceSchedule& sched, PairBatch batch) {
  return StubModel{[&sched, batch = std::move(batch)](const Vec& x, Condition, int t) -> Vec {
    for (const PairItem& it : batch.items) {
      if (it.t_w == t && forward_diffuse(sched, Sample{it.x_w, 0}, t, it.eps_w).x == x) {
        return it.eps_w;
      }
      if (it.t_l == t && forward_diffuse(sched, Sample{it.x_l, 0}, t, it.eps_l).x == x) {
        return it.eps_l;
      }
    }
    throw std::logic_error("oracle: query matches no batch branch");
  }};
}

// Stub that always predicts a fixed vector.
inline StubModel constant_model(Vec value) {
  return StubModel{[value = std::move(value)](const Vec&, Condition, int) { return value; }};
}

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double softplus_ref(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

inline std::vector<PairPrompt> random_prompts(Rng& rng, int n, int dim, int conditions) {
  std::vector<PairPrompt> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PairPrompt p;
    p.c = Condition{rng.uniform_int(0, conditions - 1)};
    p.x_w = rng.normal_vec(static_cast<std::size_t>(dim));
    p.x_l = rng.normal_vec(static_cast<std::size_t>(dim));
    out.push_back(std::move(p));
  }
  return out;
}

inline VarianceSchedule random_schedule(Rng& rng, int max_t = 30) {
  int T = rng.uniform_int(2, max_t);
  Vec betas(static_cast<std::size_t>(T));
  for (double& b : betas) b = 1e-4 + 0.4 * rng.uniform();
  return VarianceSchedule(T, betas);
}

// Winner and loser columns exchanged, including every auxiliary draw.
inline PairBatch swap_pairs(const PairBatch& b) {
  PairBatch out;
  for (const PairItem& it : b.items) {
    PairItem s = it;
    std::swap(s.x_w, s.x_l);
    std::swap(s.t_w, s.t_l);
    std::swap(s.eps_w, s.eps_l);
    std::swap(s.z_w, s.z_l);
    std::swap(s.z_w_ref, s.z_l_ref);
    std::swap(s.z_w_truth, s.z_l_truth);
    out.items.push_back(std::move(s));
  }
  return out;
}

// Independent recompute of the latent per-branch loss ||eps - eps_hat||^2.
template <class M>
double latent_loss_ref(const VarianceSchedule& sched, const M& model, const Vec& x0, Condition c,
                       int t, const Vec& eps) {
  Sample xt = forward_diffuse(sched, Sample{x0, 0}, t, eps);
  Vec eps_hat = model.predict_noise(xt.x, c, t);
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    double d = eps[i] - eps_hat[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace testsup
