#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "asymcycle/tensor.hpp"

namespace asymcycle {

enum class CycleMode { SYMMETRIC, ASYMMETRIC };

inline const char* to_string(CycleMode m) {
  return m == CycleMode::SYMMETRIC ? "symmetric" : "asymmetric";
}
inline CycleMode cycle_mode_from_string(const std::string& s) {
  if (s == "symmetric") return CycleMode::SYMMETRIC;
  if (s == "asymmetric") return CycleMode::ASYMMETRIC;
  throw std::invalid_argument("unknown cycle mode: " + s);
}

struct LossConfig {
  CycleMode cycle_mode = CycleMode::SYMMETRIC;
  double w_c = 1.0;                 // cycle weight multiplier
  double gan_weight = 1.0;
  double identity_weight = -1.0;    // negative -> gan_weight / 2

  double effective_identity_weight() const {
    return identity_weight < 0.0 ? gan_weight / 2.0 : identity_weight;
  }
  void validate() const {
    if (w_c < 0.0) throw std::invalid_argument("LossConfig: w_c must be >= 0");
    if (gan_weight < 0.0) throw std::invalid_argument("LossConfig: gan_weight must be >= 0");
  }
};

/// Per-iteration scalar decomposition of the objective. Generator adversarial
/// terms are stored unweighted; cycle and identity carry their weights.
struct LossBreakdown {
  double adv_heal = 0.0;       // generator loss against the healthy-domain critic
  double adv_path = 0.0;       // generator loss against the pathological-domain critic
  double cycle = 0.0;
  double identity = 0.0;
  double total_generators = 0.0;
  double disc_path = 0.0;
  double disc_heal = 0.0;
};

namespace detail {

template <typename T>
double l1_mean(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  require_same_shape(a, b, where);
  if (a.size() == 0) throw std::invalid_argument(std::string(where) + ": empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
  return acc / static_cast<double>(a.size());
}

/// d/da of scale * mean|a - b|, with sign(0) = 0.
template <typename T>
Tensor<T> l1_mean_grad(const Tensor<T>& a, const Tensor<T>& b, double scale) {
  Tensor<T> g(a.n(), a.c(), a.h(), a.w());
  const double inv = scale / static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    g[i] = static_cast<T>(d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0));
  }
  return g;
}

template <typename T>
double sq_mean_to(const Tensor<T>& d, double target, const char* where) {
  if (d.size() == 0) throw std::invalid_argument(std::string(where) + ": empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double r = static_cast<double>(d[i]) - target;
    acc += r * r;
  }
  return acc / static_cast<double>(d.size());
}

/// d/dd of scale * mean (d - target)^2.
template <typename T>
Tensor<T> sq_mean_to_grad(const Tensor<T>& d, double target, double scale) {
  Tensor<T> g(d.n(), d.c(), d.h(), d.w());
  const double inv = 2.0 * scale / static_cast<double>(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    g[i] = static_cast<T>(inv * (static_cast<double>(d[i]) - target));
  return g;
}

}  // namespace detail

/// Symmetric cycle loss: w_c * (mean|F(G(y)) - y| + mean|G(F(x)) - x|).
template <typename T>
double cycle_symmetric(const Tensor<T>& recon_y, const Tensor<T>& y, const Tensor<T>& recon_x,
                       const Tensor<T>& x, double w_c) {
  return w_c * (detail::l1_mean(recon_y, y, "cycle_symmetric") +
                detail::l1_mean(recon_x, x, "cycle_symmetric"));
}

/// Asymmetric cycle loss: 2 * w_c * mean|F(G(y)) - y|. No X-cycle term, so the
/// value and gradient are independent of the pathological batch.
template <typename T>
double cycle_asymmetric(const Tensor<T>& recon_y, const Tensor<T>& y, double w_c) {
  return 2.0 * w_c * detail::l1_mean(recon_y, y, "cycle_asymmetric");
}

/// Least-squares generator criterion: mean (decision - 1)^2.
template <typename T>
double gan_loss_generator(const Tensor<T>& fake_decisions) {
  return detail::sq_mean_to(fake_decisions, 1.0, "gan_loss_generator");
}

/// Least-squares discriminator criterion:
/// 0.5 * (mean (real - 1)^2 + mean fake^2).
template <typename T>
double gan_loss_discriminator(const Tensor<T>& real_decisions, const Tensor<T>& fake_decisions) {
  return 0.5 * (detail::sq_mean_to(real_decisions, 1.0, "gan_loss_discriminator") +
                detail::sq_mean_to(fake_decisions, 0.0, "gan_loss_discriminator"));
}

/// identity_weight * (mean|F(y) - y| + mean|G(x) - x|).
template <typename T>
double identity_loss(const Tensor<T>& f_of_y, const Tensor<T>& y, const Tensor<T>& g_of_x,
                     const Tensor<T>& x, double identity_weight) {
  return identity_weight * (detail::l1_mean(f_of_y, y, "identity_loss") +
                            detail::l1_mean(g_of_x, x, "identity_loss"));
}

struct GeneratorLossParts {
  double adv_heal = 0.0;
  double adv_path = 0.0;
  double cycle = 0.0;      // already weighted
  double identity = 0.0;   // already weighted
};

/// Composes the weighted generator objective. In ASYMMETRIC mode the cycle
/// component passed in must already be the Y-cycle-only term.
inline LossBreakdown total_generator_loss(const GeneratorLossParts& parts,
                                          const LossConfig& config) {
  config.validate();
  LossBreakdown out;
  out.adv_heal = parts.adv_heal;
  out.adv_path = parts.adv_path;
  out.cycle = parts.cycle;
  out.identity = parts.identity;
  out.total_generators =
      config.gan_weight * (parts.adv_heal + parts.adv_path) + parts.cycle + parts.identity;
  return out;
}

}  // namespace asymcycle
