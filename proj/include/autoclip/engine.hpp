#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "autoclip/aggregate.hpp"
#include "autoclip/embedding.hpp"
#include "autoclip/errors.hpp"
#include "autoclip/weighting.hpp"

namespace autoclip {

enum class ObjectiveKind { LogSumExp, NegEntropy, Mean, Max };

inline const char* objective_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::LogSumExp: return "logsumexp";
    case ObjectiveKind::NegEntropy: return "entropy";
    case ObjectiveKind::Mean: return "mean";
    case ObjectiveKind::Max: return "max";
  }
  return "?";
}

struct AutoclipConfig {
  double beta = 0.85;  // target entropy rate in (0, 1]
  double tau = 100.0;  // logit scale applied inside the objective
  ObjectiveKind objective = ObjectiveKind::LogSumExp;
  BisectionParams bisection;
  std::optional<double> fixed_alpha;  // when set, skip bisection

  void validate() const {
    if (beta <= 0.0 || beta > 1.0) throw ConfigError("beta must be in (0, 1]");
    if (tau <= 0.0) throw ConfigError("tau must be positive");
    if (fixed_alpha && *fixed_alpha < 0.0) {
      throw ConfigError("fixed alpha must be non-negative");
    }
  }
};

/// log(sum_j exp(x_j)) with max-shift.
inline double logsumexp(const std::vector<double>& x) {
  if (x.empty()) throw ShapeError("logsumexp of empty vector");
  const double m = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - m);
  return m + std::log(sum);
}

namespace detail {

/// df/ds for the given objective, evaluated at class scores s. All kinds are
/// oriented so that larger objective values are better.
inline std::vector<double> score_gradient(const std::vector<double>& s,
                                          ObjectiveKind kind, double tau) {
  const std::size_t c = s.size();
  std::vector<double> g(c, 0.0);
  switch (kind) {
    case ObjectiveKind::LogSumExp: {
      const std::vector<double> p = softmax(s, tau);
      for (std::size_t j = 0; j < c; ++j) g[j] = tau * p[j];
      break;
    }
    case ObjectiveKind::Mean: {
      for (std::size_t j = 0; j < c; ++j) g[j] = 1.0 / static_cast<double>(c);
      break;
    }
    case ObjectiveKind::Max: {
      // Subgradient at the lowest-index maximizer.
      g[predict(s)] = 1.0;
      break;
    }
    case ObjectiveKind::NegEntropy: {
      const std::vector<double> p = softmax(s, tau);
      double mean_log = 0.0;
      for (double q : p) {
        if (q > 0.0) mean_log += q * std::log(q);
      }
      for (std::size_t j = 0; j < c; ++j) {
        g[j] = (p[j] > 0.0) ? tau * p[j] * (std::log(p[j]) - mean_log) : 0.0;
      }
      break;
    }
  }
  return g;
}

}  // namespace detail

/// Objective over template logits rho: with w = softmax(rho) and
/// s = class_scores(S, w), returns logsumexp(tau*s), mean(s), max(s), or the
/// negated natural-log entropy of softmax(tau*s).
inline double objective_value(const SimilarityMatrix& sim,
                              const std::vector<double>& rho,
                              ObjectiveKind kind, double tau) {
  const std::vector<double> w = softmax(rho);
  const std::vector<double> s = class_scores(sim, w);
  switch (kind) {
    case ObjectiveKind::LogSumExp: {
      std::vector<double> scaled(s.size());
      for (std::size_t j = 0; j < s.size(); ++j) scaled[j] = tau * s[j];
      return logsumexp(scaled);
    }
    case ObjectiveKind::Mean: {
      double sum = 0.0;
      for (double v : s) sum += v;
      return sum / static_cast<double>(s.size());
    }
    case ObjectiveKind::Max:
      return *std::max_element(s.begin(), s.end());
    case ObjectiveKind::NegEntropy: {
      const std::vector<double> p = softmax(s, tau);
      double sum = 0.0;
      for (double q : p) {
        if (q > 0.0) sum += q * std::log(q);
      }
      return sum;  // -H_nat
    }
  }
  throw ConfigError("unknown objective kind");
}

/// Closed-form gradient of objective_value with respect to rho:
/// g_i = w_i * (u_i - sum_k w_k u_k) with u_i = sum_j (df/ds_j) * S_ij.
inline std::vector<double> grad_rho(const SimilarityMatrix& sim,
                                    const std::vector<double>& rho,
                                    ObjectiveKind kind, double tau) {
  if (rho.size() != sim.num_templates) {
    throw ShapeError("grad_rho: logits length does not match template count");
  }
  const std::vector<double> w = softmax(rho);
  const std::vector<double> s = class_scores(sim, w);
  const std::vector<double> ds = detail::score_gradient(s, kind, tau);

  std::vector<double> u(sim.num_templates, 0.0);
  for (std::size_t i = 0; i < sim.num_templates; ++i) {
    for (std::size_t j = 0; j < sim.num_classes; ++j) {
      u[i] += ds[j] * sim.at(i, j);
    }
  }
  double pullback_mean = 0.0;
  for (std::size_t i = 0; i < sim.num_templates; ++i) {
    pullback_mean += w[i] * u[i];
  }
  std::vector<double> g(sim.num_templates);
  for (std::size_t i = 0; i < sim.num_templates; ++i) {
    g[i] = w[i] * (u[i] - pullback_mean);
  }
  return g;
}

/// Central finite differences of objective_value, (f(rho+h e_i) - f(rho-h e_i)) / 2h.
inline std::vector<double> grad_fd(const SimilarityMatrix& sim,
                                   const std::vector<double>& rho,
                                   ObjectiveKind kind, double tau, double h) {
  if (h <= 0.0) throw ConfigError("grad_fd: h must be positive");
  std::vector<double> g(rho.size());
  std::vector<double> probe = rho;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    probe[i] = rho[i] + h;
    const double fp = objective_value(sim, probe, kind, tau);
    probe[i] = rho[i] - h;
    const double fm = objective_value(sim, probe, kind, tau);
    probe[i] = rho[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Step size from the entropy target: alpha with
/// entropy_bits(softmax(alpha * g)) = beta * log2(K).
inline StepSizeSolution solve_step_size(const std::vector<double>& g,
                                        double beta,
                                        const BisectionParams& params = {}) {
  return solve_entropy_scale(g, beta, params);
}

struct AutoclipResult {
  PredictionResult prediction;
  std::vector<double> logits;  // final rho
  StepSizeSolution step;
  double objective_before = 0.0;
  double objective_after = 0.0;
};

/// One auto-tuning pass over a precomputed similarity matrix: gradient at
/// rho = 0, entropy-targeted step size (or the configured fixed alpha), one
/// ascent step, rescore, predict.
inline AutoclipResult autoclip_classify_sim(const SimilarityMatrix& sim,
                                            const AutoclipConfig& config = {}) {
  config.validate();
  const std::size_t k = sim.num_templates;

  std::vector<double> rho(k, 0.0);
  const double before = objective_value(sim, rho, config.objective, config.tau);
  const std::vector<double> g = grad_rho(sim, rho, config.objective, config.tau);

  StepSizeSolution step;
  if (config.fixed_alpha) {
    step.alpha = *config.fixed_alpha;
    step.iterations = 0;
    step.degenerate = false;
    step.achieved_entropy_bits = entropy_bits(softmax(g, step.alpha));
  } else {
    step = solve_step_size(g, config.beta, config.bisection);
  }

  for (std::size_t i = 0; i < k; ++i) rho[i] = step.alpha * g[i];
  const std::vector<double> w = softmax(rho);
  const std::vector<double> scores = class_scores(sim, w);
  const double after = objective_value(sim, rho, config.objective, config.tau);

  AutoclipResult result;
  result.prediction =
      PredictionResult{predict(scores), scores, w, entropy_bits(w)};
  result.logits = std::move(rho);
  result.step = step;
  result.objective_before = before;
  result.objective_after = after;
  return result;
}

/// autoclip_classify_sim on the cosine similarities of one raw image
/// embedding against raw descriptors.
inline AutoclipResult autoclip_classify(const DescriptorTensor& desc,
                                        const EmbeddingVector& img,
                                        const AutoclipConfig& config = {}) {
  return autoclip_classify_sim(pairwise_similarities(desc, img), config);
}

/// Worker cap: AUTOCLIP_THREADS when set, hardware concurrency otherwise.
inline unsigned worker_count() {
  if (const char* env = std::getenv("AUTOCLIP_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

/// Elementwise autoclip_classify over a batch. Results are identical to
/// sequential evaluation regardless of worker count; per-sample failures
/// carry the sample index.
inline std::vector<AutoclipResult> batch_classify(
    const DescriptorTensor& desc, const std::vector<EmbeddingVector>& imgs,
    const AutoclipConfig& config = {}, unsigned workers = 0) {
  if (workers == 0) workers = worker_count();
  const std::size_t n = imgs.size();
  std::vector<AutoclipResult> results(n);
  if (n == 0) return results;

  std::vector<std::string> failures(n);
  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      try {
        results[s] = autoclip_classify(desc, imgs[s], config);
      } catch (const std::exception& e) {
        failures[s] = e.what();
      }
    }
  };

  if (workers <= 1 || n == 1) {
    run_range(0, n);
  } else {
    const unsigned used = static_cast<unsigned>(
        std::min<std::size_t>(workers, n));
    std::vector<std::thread> pool;
    pool.reserve(used);
    for (unsigned t = 0; t < used; ++t) {
      const std::size_t begin = n * t / used;
      const std::size_t end = n * (t + 1) / used;
      pool.emplace_back(run_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  for (std::size_t s = 0; s < n; ++s) {
    if (!failures[s].empty()) {
      throw Error("sample " + std::to_string(s) + ": " + failures[s]);
    }
  }
  return results;
}

}  // namespace autoclip
