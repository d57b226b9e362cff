#pragma once

// Loss families for M-estimation: Huber, Tukey bisquare and exponential
// squared loss (ESL). Each family provides rho, psi, psi' and the IRLS
// weight W(u) = psi(u) / u.
//
// psi uses the conventional kernels rather than the literal derivative
// of rho: d rho / du equals psi for Huber, (6 / c^2) psi for Tukey and
// (2 / c) psi for ESL. Estimating equations, IRLS fixed points and the
// efficiency factor are all invariant to that positive rescaling.

#include "robpanel/error.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace robpanel {

enum class LossFamily { Huber, Tukey, Esl };

inline std::string_view to_string(LossFamily f) {
  switch (f) {
    case LossFamily::Huber: return "Huber";
    case LossFamily::Tukey: return "Tukey";
    case LossFamily::Esl: return "ESL";
  }
  return "?";
}

struct LossSpec {
  LossFamily family;
  double c;

  LossSpec(LossFamily f, double tuning) : family(f), c(tuning) {
    if (!(tuning > 0.0) || !std::isfinite(tuning))
      throw std::invalid_argument("tuning constant must be positive and finite, got " +
                                  std::to_string(tuning));
  }

  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

inline double rho(const LossSpec& spec, double u) {
  const double a = std::abs(u);
  const double c = spec.c;
  switch (spec.family) {
    case LossFamily::Huber:
      return a <= c ? 0.5 * u * u : c * a - 0.5 * c * c;
    case LossFamily::Tukey: {
      if (a > c) return 1.0;
      const double r = 1.0 - (u / c) * (u / c);
      return 1.0 - r * r * r;
    }
    case LossFamily::Esl:
      return 1.0 - std::exp(-u * u / c);
  }
  return 0.0;
}

inline double psi(const LossSpec& spec, double u) {
  const double a = std::abs(u);
  const double c = spec.c;
  switch (spec.family) {
    case LossFamily::Huber:
      return a <= c ? u : std::copysign(c, u);
    case LossFamily::Tukey: {
      if (a > c) return 0.0;
      const double r = 1.0 - (u / c) * (u / c);
      return u * r * r;
    }
    case LossFamily::Esl:
      return u * std::exp(-u * u / c);
  }
  return 0.0;
}

// At Huber's kink |u| = c the linear branch is closed, so psi'(+-c) = 1.
inline double psi_prime(const LossSpec& spec, double u) {
  const double a = std::abs(u);
  const double c = spec.c;
  switch (spec.family) {
    case LossFamily::Huber:
      return a <= c ? 1.0 : 0.0;
    case LossFamily::Tukey: {
      if (a > c) return 0.0;
      const double r = (u / c) * (u / c);
      return (1.0 - r) * (1.0 - 5.0 * r);
    }
    case LossFamily::Esl: {
      const double q = u * u / c;
      return std::exp(-q) * (1.0 - 2.0 * q);
    }
  }
  return 0.0;
}

// psi(u) / u, continuously extended to u = 0 by psi'(0).
inline double weight(const LossSpec& spec, double u) {
  const double a = std::abs(u);
  const double c = spec.c;
  switch (spec.family) {
    case LossFamily::Huber:
      return a <= c ? 1.0 : c / a;
    case LossFamily::Tukey: {
      if (a > c) return 0.0;
      const double r = 1.0 - (u / c) * (u / c);
      return r * r;
    }
    case LossFamily::Esl:
      return std::exp(-u * u / c);
  }
  return 0.0;
}

// sup_u |psi(u)| for the family at the given constant.
inline double psi_bound(const LossSpec& spec) {
  switch (spec.family) {
    case LossFamily::Huber: return spec.c;
    case LossFamily::Tukey: return 16.0 * spec.c / (25.0 * std::sqrt(5.0));
    case LossFamily::Esl: return std::sqrt(spec.c / 2.0) * std::exp(-0.5);
  }
  return 0.0;
}

}  // namespace robpanel
