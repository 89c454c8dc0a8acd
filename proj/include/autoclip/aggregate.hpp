#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "autoclip/embedding.hpp"
#include "autoclip/errors.hpp"
#include "autoclip/weighting.hpp"

namespace autoclip {

struct PredictionResult {
  std::size_t predicted_class = 0;  // 0-based argmax, lowest index on ties
  std::vector<double> scores;
  std::optional<std::vector<double>> weights;
  std::optional<double> weight_entropy_bits;
};

/// Lowest index achieving the maximum score.
inline std::size_t predict(const std::vector<double>& scores) {
  if (scores.empty()) throw ShapeError("predict: empty scores");
  for (double s : scores) {
    if (std::isnan(s)) throw ScoreError("predict: NaN score");
  }
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j) {
    if (scores[j] > scores[best]) best = j;
  }
  return best;
}

/// s_j = (1/K) sum_i S_ij
inline std::vector<double> aggregate_mean(const SimilarityMatrix& sim) {
  std::vector<double> scores(sim.num_classes, 0.0);
  for (std::size_t i = 0; i < sim.num_templates; ++i) {
    for (std::size_t j = 0; j < sim.num_classes; ++j) {
      scores[j] += sim.at(i, j);
    }
  }
  for (double& s : scores) s /= static_cast<double>(sim.num_templates);
  return scores;
}

/// s_j = max_i S_ij
inline std::vector<double> aggregate_max(const SimilarityMatrix& sim) {
  std::vector<double> scores(sim.num_classes,
                             -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < sim.num_templates; ++i) {
    for (std::size_t j = 0; j < sim.num_classes; ++j) {
      scores[j] = std::max(scores[j], sim.at(i, j));
    }
  }
  return scores;
}

/// Per-template mean similarity over classes, (1/C) sum_j S_ij.
inline std::vector<double> template_row_means(const SimilarityMatrix& sim) {
  std::vector<double> means(sim.num_templates, 0.0);
  for (std::size_t i = 0; i < sim.num_templates; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < sim.num_classes; ++j) s += sim.at(i, j);
    means[i] = s / static_cast<double>(sim.num_classes);
  }
  return means;
}

/// Column means over the R templates with largest row mean, ties broken by
/// lowest row index.
inline std::vector<double> aggregate_topr(const SimilarityMatrix& sim,
                                          std::size_t r) {
  if (r < 1 || r > sim.num_templates) {
    throw ConfigError("TopR: R must satisfy 1 <= R <= K, got R=" +
                      std::to_string(r) + ", K=" +
                      std::to_string(sim.num_templates));
  }
  if (r == sim.num_templates) return aggregate_mean(sim);  // full selection
  const std::vector<double> means = template_row_means(sim);
  std::vector<std::size_t> order(sim.num_templates);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return means[a] > means[b];
                   });
  std::vector<double> scores(sim.num_classes, 0.0);
  for (std::size_t sel = 0; sel < r; ++sel) {
    const std::size_t i = order[sel];
    for (std::size_t j = 0; j < sim.num_classes; ++j) {
      scores[j] += sim.at(i, j);
    }
  }
  for (double& s : scores) s /= static_cast<double>(r);
  return scores;
}

struct SoftmaxWeightingResult {
  std::vector<double> weights;
  std::vector<double> scores;
  bool degenerate = false;  // constant row means: entropy target unreachable
};

/// w = softmax(tau' * rowmean) with tau' solved by bisection so that the
/// weight entropy hits beta * log2(K). Constant row means fall back to
/// uniform weights with the degenerate flag set.
inline SoftmaxWeightingResult aggregate_softmax_weighting(
    const SimilarityMatrix& sim, double beta,
    const BisectionParams& params = {}) {
  if (beta <= 0.0 || beta > 1.0) {
    throw ConfigError("softmax weighting: beta must be in (0, 1]");
  }
  const std::vector<double> means = template_row_means(sim);
  const StepSizeSolution sol = solve_entropy_scale(means, beta, params);
  const std::vector<double> w = softmax(means, sol.alpha);
  return {w, class_scores(sim, w), sol.degenerate};
}

}  // namespace autoclip
