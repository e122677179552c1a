#pragma once

#include <algorithm>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <string>
#include <vector>

#include "cdl/errors.hpp"
#include "cdl/evaluation.hpp"
#include "cdl/network.hpp"
#include "cdl/rng.hpp"

namespace cdl {

struct GaussianSpec {
  double mu = 0.0;
  double sigma = 1.0;

  void validate() const {
    if (!(sigma > 0)) throw ValidationError("gaussian sigma must be > 0");
  }
};

inline double gaussian_pdf(double x, const GaussianSpec& g) {
  const double z = (x - g.mu) / g.sigma;
  return std::exp(-0.5 * z * z) / (g.sigma * std::sqrt(2.0 * M_PI));
}

namespace detail {

// inverse map h and |h'| of the activation, on the open support
inline double act_inverse(Activation act, double y) {
  if (act == Activation::tanh) return std::atanh(y);  // 1/2 ln((1+y)/(1-y))
  return std::log(y / (1.0 - y));                     // logit
}

inline double act_inverse_deriv(Activation act, double y) {
  if (act == Activation::tanh) return 1.0 / (1.0 - y * y);
  return 1.0 / (y * (1.0 - y));
}

inline bool in_open_support(Activation act, double y) {
  if (act == Activation::tanh) return y > -1.0 && y < 1.0;
  return y > 0.0 && y < 1.0;
}

}  // namespace detail

// Density of Y = act(X), X ~ N(mu, sigma^2): f(h(y)) |h'(y)|.
inline double transformed_density(double y, const GaussianSpec& g, Activation act) {
  g.validate();
  if (!detail::in_open_support(act, y))
    throw ValidationError("transformed_density: y outside the open support");
  return gaussian_pdf(detail::act_inverse(act, y), g) * detail::act_inverse_deriv(act, y);
}

// Exact CDF via the monotone change of variables.
inline double transformed_cdf(double y, const GaussianSpec& g, Activation act) {
  if (act == Activation::tanh) {
    if (y <= -1.0) return 0.0;
    if (y >= 1.0) return 1.0;
  } else {
    if (y <= 0.0) return 0.0;
    if (y >= 1.0) return 1.0;
  }
  return normal_cdf((detail::act_inverse(act, y) - g.mu) / g.sigma);
}

// Numerical mass of the closed-form density over its support. The mass near
// the endpoints lives in a double-exponentially thin layer (the inverse map
// blows up there), which is exactly the regime tanh-sinh quadrature handles.
inline double integrate_transformed_density(const GaussianSpec& g, Activation act) {
  boost::math::quadrature::tanh_sinh<double> integrator;
  const double lo = act == Activation::tanh ? -1.0 : 0.0;
  const double hi = 1.0;
  const auto f = [&](double y) {
    if (!detail::in_open_support(act, y)) return 0.0;
    return transformed_density(y, g, act);
  };
  return integrator.integrate(f, lo, hi, 1e-9);
}

// Partial sum of the odd power series u + u^3/3 + u^5/5 + ... for the inverse
// activation; tanh expands in y itself, sigmoid in u = 2y - 1 (converging to
// artanh(y) and 1/2 logit(y) respectively).
inline double taylor_inverse(double y, Activation act, int order) {
  if (order < 1 || order % 2 == 0) throw ValidationError("taylor order must be odd and >= 1");
  double u;
  if (act == Activation::tanh) {
    if (!(y > -1.0 && y < 1.0)) throw ValidationError("taylor_inverse: |y| must be < 1");
    u = y;
  } else {
    if (!(y > 0.0 && y < 1.0)) throw ValidationError("taylor_inverse: y must be in (0,1)");
    u = 2.0 * y - 1.0;
  }
  double sum = 0.0;
  double upow = u;
  const double u2 = u * u;
  for (int j = 1; j <= order; j += 2) {
    sum += upow / j;
    upow *= u2;
  }
  return sum;
}

struct GaussianityReport {
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  double ks_closed_form = 0.0;  // empirical CDF vs. exact transformed CDF
  double ks_gaussian = 0.0;     // empirical CDF vs. moment-matched Gaussian
};

// Sample X, push through the activation, and compare the empirical law
// against (i) the closed-form density and (ii) a moment-matched Gaussian.
inline GaussianityReport gaussianity_check(const GaussianSpec& g, Activation act,
                                           int n_samples, std::uint64_t seed) {
  g.validate();
  if (n_samples < 10000) throw ValidationError("gaussianity_check needs n_samples >= 1e4");
  Rng rng(seed);
  std::vector<double> y(static_cast<std::size_t>(n_samples));
  for (auto& v : y) v = activate(act, rng.normal(g.mu, g.sigma));

  const double n = static_cast<double>(n_samples);
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : y) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  const double sd = std::sqrt(m2);

  GaussianityReport rep;
  rep.skewness = m3 / (sd * sd * sd);
  rep.excess_kurtosis = m4 / (m2 * m2) - 3.0;

  std::sort(y.begin(), y.end());
  const GaussianSpec matched{mean, sd};
  double ks_closed = 0.0, ks_gauss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double fc = transformed_cdf(y[i], g, act);
    const double fg = normal_cdf((y[i] - matched.mu) / matched.sigma);
    const double hi = static_cast<double>(i + 1) / n;
    const double lo = static_cast<double>(i) / n;
    ks_closed = std::max({ks_closed, std::abs(hi - fc), std::abs(fc - lo)});
    ks_gauss = std::max({ks_gauss, std::abs(hi - fg), std::abs(fg - lo)});
  }
  rep.ks_closed_form = ks_closed;
  rep.ks_gaussian = ks_gauss;
  return rep;
}

}  // namespace cdl
