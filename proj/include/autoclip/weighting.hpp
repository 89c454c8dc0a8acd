#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "autoclip/errors.hpp"

namespace autoclip {

/// softmax(scale * x) with max-shift.
inline std::vector<double> softmax(const std::vector<double>& x,
                                   double scale = 1.0) {
  if (x.empty()) throw ShapeError("softmax of empty vector");
  double m = scale * x[0];
  for (double v : x) m = std::max(m, scale * v);
  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(scale * x[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

/// Shannon entropy in bits, with 0 * log2(0) = 0.
inline double entropy_bits(const std::vector<double>& w) {
  if (w.empty()) throw ShapeError("entropy of empty vector");
  double h = 0.0;
  for (double p : w) {
    if (p < -1e-6) throw ConfigError("entropy_bits: negative weight entry");
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

/// Bisection bracket and stopping parameters; converged when the bracket
/// width is below xtol + rtol * |midpoint|.
struct BisectionParams {
  double lo = 0.0;
  double hi = 1e10;
  int maxiter = 100;
  double xtol = 1e-2;
  double rtol = 1e-2;
};

struct StepSizeSolution {
  double alpha = 0.0;
  double achieved_entropy_bits = 0.0;
  int iterations = 0;
  bool degenerate = false;
};

/// Finds scale >= 0 with entropy_bits(softmax(scale * m)) = beta * log2(K).
/// entropy(softmax(scale * m)) decreases monotonically in scale for
/// non-constant m, so a sign change is bracketed on [lo, hi]. Constant m
/// (entropy pinned at log2 K) returns scale 0 with the degenerate flag set.
inline StepSizeSolution solve_entropy_scale(const std::vector<double>& m,
                                            double beta,
                                            const BisectionParams& params = {}) {
  if (m.empty()) throw ShapeError("solve_entropy_scale: empty input");
  if (beta <= 0.0 || beta > 1.0) {
    throw ConfigError("solve_entropy_scale: beta must be in (0, 1]");
  }
  if (params.lo >= params.hi || params.maxiter < 1 || params.xtol <= 0.0 ||
      params.rtol <= 0.0) {
    throw ConfigError("solve_entropy_scale: invalid bisection parameters");
  }
  const std::size_t k = m.size();
  const double max_entropy = std::log2(static_cast<double>(k));
  const double target = beta * max_entropy;

  if (beta == 1.0) {
    return {0.0, max_entropy, 0, false};
  }
  // If even the upper bracket cannot push entropy below the target, the
  // input is (numerically) constant and weighting cannot matter; fall back
  // to uniform weights.
  if (k < 2 || entropy_bits(softmax(m, params.hi)) >= target) {
    return {0.0, max_entropy, 0, true};
  }

  double lo = params.lo;
  double hi = params.hi;
  double mid = 0.5 * (lo + hi);
  int iter = 0;
  while (iter < params.maxiter) {
    mid = 0.5 * (lo + hi);
    ++iter;
    const double h = entropy_bits(softmax(m, mid));
    if (h > target) {
      lo = mid;  // entropy still above target: sharpen further
    } else {
      hi = mid;
    }
    if ((hi - lo) <= params.xtol + params.rtol * std::abs(mid)) break;
  }
  mid = 0.5 * (lo + hi);
  return {mid, entropy_bits(softmax(m, mid)), iter, false};
}

}  // namespace autoclip
