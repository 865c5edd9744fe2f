#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "ncpo/math.hpp"

namespace ncpo {

// Precomputed per-timestep coefficients of the corruption process.
//
// Timesteps are 1-based: beta(t), alpha(t), sigma(t) accept t in [1, T].
// alpha_bar(t) additionally accepts t = 0 and returns 1, the uncorrupted
// anchor of the running product.
class VarianceSchedule {
 public:
  VarianceSchedule(int timesteps, Vec betas)
      : T_(timesteps), betas_(std::move(betas)) {
    require(T_ >= 1, "VarianceSchedule: need at least one timestep");
    require(static_cast<int>(betas_.size()) == T_,
            "VarianceSchedule: beta count must equal the horizon");
    alphas_.resize(T_);
    alpha_bars_.resize(T_);
    sigmas_.resize(T_);
    double bar = 1.0;
    for (int i = 0; i < T_; ++i) {
      double b = betas_[i];
      require(std::isfinite(b) && b >= 0.0 && b < 1.0,
              "VarianceSchedule: beta out of [0, 1) at step " + std::to_string(i + 1));
      alphas_[i] = 1.0 - b;
      double prev_bar = bar;
      bar *= alphas_[i];
      alpha_bars_[i] = bar;
      // Posterior noise scale; the first reverse step is deterministic.
      double denom = 1.0 - bar;
      sigmas_[i] = (i == 0 || denom <= 0.0)
                       ? 0.0
                       : std::sqrt(b * (1.0 - prev_bar) / denom);
      if (bar <= 0.0 || bar > 1.0 || (b > 0.0 && bar >= prev_bar)) {
        throw std::logic_error("VarianceSchedule: running product left (0, 1]");
      }
    }
  }

  int timesteps() const { return T_; }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  double sigma(int t) const { return sigmas_[index(t)]; }

  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars_[index(t)];
  }

  // Gain linking a noise-estimate error to the shift it produces in the
  // reverse-step output: (1 - alpha_t) / (sqrt(alpha_t) * sqrt(1 - alpha_bar_t)).
  double eps_step_gain(int t) const {
    int i = index(t);
    double residual = 1.0 - alpha_bars_[i];
    if (residual <= 0.0) return 0.0;  // no noise ever entered x_t
    return (1.0 - alphas_[i]) / (std::sqrt(alphas_[i]) * std::sqrt(residual));
  }

  const Vec& betas() const { return betas_; }
  const Vec& alphas() const { return alphas_; }
  const Vec& alpha_bars() const { return alpha_bars_; }
  const Vec& sigmas() const { return sigmas_; }

 private:
  int index(int t) const {
    require(t >= 1 && t <= T_,
            "timestep " + std::to_string(t) + " outside [1, " + std::to_string(T_) + "]");
    return t - 1;
  }

  int T_;
  Vec betas_, alphas_, alpha_bars_, sigmas_;
};

// Linear beta ramp between the given bounds. Zero bounds are allowed and give
// the no-corruption schedule.
inline VarianceSchedule build_schedule(int timesteps, double beta_start = 1e-4,
                                       double beta_end = 0.02) {
  require(timesteps >= 1, "build_schedule: need at least one timestep");
  require(std::isfinite(beta_start) && std::isfinite(beta_end),
          "build_schedule: non-finite beta bounds");
  require(beta_start >= 0.0 && beta_start <= beta_end && beta_end < 1.0,
          "build_schedule: need 0 <= beta_start <= beta_end < 1");
  Vec betas(timesteps);
  for (int i = 0; i < timesteps; ++i) {
    double frac = timesteps == 1 ? 0.0 : static_cast<double>(i) / (timesteps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * frac;
  }
  return VarianceSchedule(timesteps, std::move(betas));
}

// A point in data space tagged with how corrupted it is; t = 0 is clean data.
struct Sample {
  Vec x;
  int t = 0;
};

// x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps
inline Sample forward_diffuse(const VarianceSchedule& sched, const Sample& x0,
                              int t, const Vec& eps) {
  require(x0.t == 0, "forward_diffuse: input must be a clean sample (t = 0)");
  require(t >= 1 && t <= sched.timesteps(), "forward_diffuse: timestep out of range");
  require_same_size(x0.x, eps, "forward_diffuse");
  double bar = sched.alpha_bar(t);
  double a = std::sqrt(bar);
  double b = std::sqrt(1.0 - bar);
  Sample out;
  out.t = t;
  out.x.resize(x0.x.size());
  for (std::size_t i = 0; i < x0.x.size(); ++i) out.x[i] = a * x0.x[i] + b * eps[i];
  return out;
}

// x_{t-1} = (x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
//           + sigma_t * z
inline Sample ddpm_reverse_step(const VarianceSchedule& sched, const Sample& xt,
                                const Vec& eps_hat, const Vec& z) {
  require(xt.t >= 1 && xt.t <= sched.timesteps(),
          "ddpm_reverse_step: timestep out of range");
  require_same_size(xt.x, eps_hat, "ddpm_reverse_step");
  require_same_size(xt.x, z, "ddpm_reverse_step");
  int t = xt.t;
  double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  double residual = 1.0 - sched.alpha_bar(t);
  double eps_coeff = residual <= 0.0 ? 0.0 : (1.0 - sched.alpha(t)) / std::sqrt(residual);
  double s = sched.sigma(t);
  Sample out;
  out.t = t - 1;
  out.x.resize(xt.x.size());
  for (std::size_t i = 0; i < xt.x.size(); ++i) {
    out.x[i] = inv_sqrt_alpha * (xt.x[i] - eps_coeff * eps_hat[i]) + s * z[i];
  }
  return out;
}

// Squared error between true and predicted noise, summed over components.
inline double diffusion_loss(const Vec& eps, const Vec& eps_hat) {
  require_same_size(eps, eps_hat, "diffusion_loss");
  return squared_distance(eps, eps_hat);
}

}  // namespace ncpo
