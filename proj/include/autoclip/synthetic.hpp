#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "autoclip/aggregate.hpp"
#include "autoclip/embedding.hpp"
#include "autoclip/engine.hpp"
#include "autoclip/errors.hpp"
#include "autoclip/rng.hpp"

namespace autoclip {

struct ControlledConfig {
  std::size_t num_classes = 5;    // C
  std::size_t dim = 128;          // d
  std::size_t num_templates = 10; // K
  std::size_t num_instances = 200;
  double entanglement = 0.0;      // in [0, 1]
  double instance_noise = 0.0;    // per-coordinate std of the image perturbation
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2 || dim < 1 || num_templates < 1 || num_instances < 1) {
      throw ConfigError("controlled config: invalid sizes");
    }
    if (entanglement < 0.0 || entanglement > 1.0) {
      throw ConfigError("entanglement must be in [0, 1]");
    }
    if (instance_noise < 0.0) {
      throw ConfigError("instance noise must be non-negative");
    }
  }
};

struct ControlledInstanceSet {
  DescriptorTensor descriptors;           // raw (unnormalized) K x C x d
  std::vector<EmbeddingVector> images;    // raw, N x d
  std::vector<std::size_t> labels;        // 0-based class indices
  std::vector<std::size_t> template_assignments;  // 0-based template indices
};

/// Samples the controlled setting. Draw order from one stream seeded by
/// config.seed: class means c_j (C x d), template means p_i (K x d), coupling
/// terms Psi_ij (K x C x d), then per instance the label, the template index,
/// and d noise coordinates. Raw descriptor (i, j) is
/// (1 - ent) * (c_j + p_i) + ent * Psi_ij; the image is descriptor(i, j) plus
/// Normal(0, noise) per coordinate. Vectors are emitted raw; classification
/// normalizes.
inline ControlledInstanceSet sample_controlled(const ControlledConfig& config) {
  config.validate();
  const std::size_t c = config.num_classes;
  const std::size_t k = config.num_templates;
  const std::size_t d = config.dim;
  const std::size_t n = config.num_instances;
  SplitMix64 rng(config.seed);

  std::vector<double> class_means(c * d);
  for (double& v : class_means) v = rng.next_normal();
  std::vector<double> template_means(k * d);
  for (double& v : template_means) v = rng.next_normal();
  std::vector<double> coupling(k * c * d);
  for (double& v : coupling) v = rng.next_normal();

  const double ent = config.entanglement;
  std::vector<double> desc(k * c * d);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t x = 0; x < d; ++x) {
        const std::size_t idx = (i * c + j) * d + x;
        desc[idx] = (1.0 - ent) * (class_means[j * d + x] +
                                   template_means[i * d + x]) +
                    ent * coupling[idx];
      }
    }
  }

  ControlledInstanceSet set;
  set.descriptors = DescriptorTensor(k, c, d, std::move(desc));
  set.images.reserve(n);
  set.labels.reserve(n);
  set.template_assignments.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t label = rng.next_index(c);
    const std::size_t tmpl = rng.next_index(k);
    EmbeddingVector img(d);
    const auto row = set.descriptors.row(tmpl, label);
    for (std::size_t x = 0; x < d; ++x) {
      img[x] = row[x] + config.instance_noise * rng.next_normal();
    }
    set.images.push_back(std::move(img));
    set.labels.push_back(label);
    set.template_assignments.push_back(tmpl);
  }
  return set;
}

struct AggregationMethod {
  enum class Kind { Mean, Max, TopR, SoftmaxWeighting, AutoClip };
  Kind kind = Kind::Mean;
  std::size_t topr_r = 1;                   // TopR only
  double beta = 0.85;                       // SoftmaxWeighting only
  BisectionParams bisection;                // SoftmaxWeighting only
  AutoclipConfig autoclip_config;           // AutoClip only
  std::string label;                        // display name for tables

  static AggregationMethod mean() { return {Kind::Mean, 1, 0.85, {}, {}, "mean"}; }
  static AggregationMethod max() { return {Kind::Max, 1, 0.85, {}, {}, "max"}; }
  static AggregationMethod topr(std::size_t r) {
    return {Kind::TopR, r, 0.85, {}, {}, "topr"};
  }
  static AggregationMethod softmax_weighting(double beta = 0.85) {
    return {Kind::SoftmaxWeighting, 1, beta, {}, {}, "softmax"};
  }
  static AggregationMethod autoclip(AutoclipConfig config = {}) {
    return {Kind::AutoClip, 1, 0.85, {}, config, "autoclip"};
  }
};

/// Classifies one precomputed similarity matrix with the given aggregation
/// method.
inline PredictionResult classify_sim(const SimilarityMatrix& sim,
                                     const AggregationMethod& method) {
  switch (method.kind) {
    case AggregationMethod::Kind::Mean: {
      std::vector<double> scores = aggregate_mean(sim);
      const std::size_t j = predict(scores);
      return {j, std::move(scores), std::nullopt, std::nullopt};
    }
    case AggregationMethod::Kind::Max: {
      std::vector<double> scores = aggregate_max(sim);
      const std::size_t j = predict(scores);
      return {j, std::move(scores), std::nullopt, std::nullopt};
    }
    case AggregationMethod::Kind::TopR: {
      std::vector<double> scores = aggregate_topr(sim, method.topr_r);
      const std::size_t j = predict(scores);
      return {j, std::move(scores), std::nullopt, std::nullopt};
    }
    case AggregationMethod::Kind::SoftmaxWeighting: {
      SoftmaxWeightingResult r =
          aggregate_softmax_weighting(sim, method.beta, method.bisection);
      const std::size_t j = predict(r.scores);
      const double h = entropy_bits(r.weights);
      return {j, std::move(r.scores), std::move(r.weights), h};
    }
    case AggregationMethod::Kind::AutoClip:
      return autoclip_classify_sim(sim, method.autoclip_config).prediction;
  }
  throw ConfigError("unknown aggregation method");
}

/// Classifies one raw image embedding against raw descriptors with the given
/// aggregation method.
inline PredictionResult classify_one(const DescriptorTensor& desc,
                                     const EmbeddingVector& img,
                                     const AggregationMethod& method) {
  return classify_sim(pairwise_similarities(desc, img), method);
}

struct GridSpec {
  std::vector<double> entanglement_values;
  std::vector<double> noise_values;
  std::size_t seeds = 100;
  std::vector<AggregationMethod> methods;

  void validate() const {
    if (entanglement_values.empty() || noise_values.empty() ||
        methods.empty() || seeds < 1) {
      throw ConfigError("grid spec: empty axis or zero seeds");
    }
    for (double e : entanglement_values) {
      if (e < 0.0 || e > 1.0) {
        throw ConfigError("grid spec: entanglement outside [0, 1]");
      }
    }
    for (double v : noise_values) {
      if (v < 0.0) throw ConfigError("grid spec: negative noise");
    }
  }
};

struct GridCellResult {
  double entanglement = 0.0;
  double noise = 0.0;
  std::string method;
  double mean_accuracy = 0.0;
  double stderr_accuracy = 0.0;
};

struct GridResult {
  std::vector<GridCellResult> rows;  // cell-major, then method order
};

namespace detail {

inline double accuracy(const std::vector<std::size_t>& predicted,
                       const std::vector<std::size_t>& labels) {
  std::size_t hits = 0;
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if (predicted[s] == labels[s]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Mean and standard error of the mean over replicates.
inline std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  if (xs.size() < 2) return {mean, 0.0};
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

}  // namespace detail

/// Runs every (entanglement, noise) cell with `seeds` replicates. Replicate r
/// of cell index c (entanglement-major) uses a fresh instance set with seed
/// derive_stream(base.seed, c, r); every method classifies the same set.
/// Parallel execution over (cell, replicate) pairs reduces in fixed order, so
/// the result is identical for any worker count.
inline GridResult run_grid(const GridSpec& spec,
                           const ControlledConfig& base,
                           unsigned workers = 0) {
  spec.validate();
  base.validate();
  if (workers == 0) workers = worker_count();

  const std::size_t num_cells =
      spec.entanglement_values.size() * spec.noise_values.size();
  const std::size_t num_methods = spec.methods.size();
  const std::size_t tasks = num_cells * spec.seeds;

  // accuracy[(cell * seeds + replicate) * num_methods + m]
  std::vector<double> acc(tasks * num_methods, 0.0);
  std::vector<std::string> failures(tasks);

  auto run_task = [&](std::size_t task) {
    const std::size_t cell = task / spec.seeds;
    const std::size_t replicate = task % spec.seeds;
    const std::size_t ei = cell / spec.noise_values.size();
    const std::size_t ni = cell % spec.noise_values.size();
    try {
      ControlledConfig cfg = base;
      cfg.entanglement = spec.entanglement_values[ei];
      cfg.instance_noise = spec.noise_values[ni];
      cfg.seed = derive_stream(base.seed, cell, replicate);
      const ControlledInstanceSet set = sample_controlled(cfg);
      // One similarity matrix per sample, shared by every method.
      std::vector<std::vector<std::size_t>> predicted(
          num_methods, std::vector<std::size_t>(set.images.size()));
      for (std::size_t s = 0; s < set.images.size(); ++s) {
        const SimilarityMatrix sim =
            pairwise_similarities(set.descriptors, set.images[s]);
        for (std::size_t m = 0; m < num_methods; ++m) {
          predicted[m][s] = classify_sim(sim, spec.methods[m]).predicted_class;
        }
      }
      for (std::size_t m = 0; m < num_methods; ++m) {
        acc[task * num_methods + m] =
            detail::accuracy(predicted[m], set.labels);
      }
    } catch (const std::exception& e) {
      failures[task] = e.what();
    }
  };

  if (workers <= 1 || tasks == 1) {
    for (std::size_t t = 0; t < tasks; ++t) run_task(t);
  } else {
    const unsigned used =
        static_cast<unsigned>(std::min<std::size_t>(workers, tasks));
    std::vector<std::thread> pool;
    pool.reserve(used);
    for (unsigned w = 0; w < used; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < tasks; t += used) run_task(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (std::size_t t = 0; t < tasks; ++t) {
    if (!failures[t].empty()) {
      throw Error("grid task " + std::to_string(t) + ": " + failures[t]);
    }
  }

  GridResult result;
  result.rows.reserve(num_cells * num_methods);
  for (std::size_t cell = 0; cell < num_cells; ++cell) {
    const std::size_t ei = cell / spec.noise_values.size();
    const std::size_t ni = cell % spec.noise_values.size();
    for (std::size_t m = 0; m < num_methods; ++m) {
      std::vector<double> per_seed(spec.seeds);
      for (std::size_t r = 0; r < spec.seeds; ++r) {
        per_seed[r] = acc[(cell * spec.seeds + r) * num_methods + m];
      }
      const auto [mean, se] = detail::mean_stderr(per_seed);
      result.rows.push_back({spec.entanglement_values[ei],
                             spec.noise_values[ni], spec.methods[m].label,
                             mean, se});
    }
  }
  return result;
}

enum class AblationKind { Beta, Objective };

struct AblationRow {
  std::string value;  // the swept value, printed
  double entanglement = 0.0;
  double noise = 0.0;
  double mean_accuracy = 0.0;
  double stderr_accuracy = 0.0;
};

/// Sweeps AutoCLIP's beta or objective over the grid cells of `spec`
/// (spec.methods is ignored; one AutoCLIP variant per swept value).
inline std::vector<AblationRow> run_ablation(
    AblationKind kind, const std::vector<double>& beta_values,
    const std::vector<ObjectiveKind>& objective_values,
    const ControlledConfig& base, GridSpec spec, unsigned workers = 0) {
  spec.methods.clear();
  std::vector<std::string> names;
  if (kind == AblationKind::Beta) {
    if (beta_values.empty()) throw ConfigError("beta ablation: no values");
    for (double b : beta_values) {
      if (b <= 0.0 || b > 1.0) {
        throw ConfigError("beta ablation: value outside (0, 1]");
      }
      AutoclipConfig cfg;
      cfg.beta = b;
      AggregationMethod m = AggregationMethod::autoclip(cfg);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%g", b);
      m.label = buf;
      spec.methods.push_back(m);
      names.emplace_back(buf);
    }
  } else {
    if (objective_values.empty()) {
      throw ConfigError("objective ablation: no values");
    }
    for (ObjectiveKind o : objective_values) {
      AutoclipConfig cfg;
      cfg.objective = o;
      AggregationMethod m = AggregationMethod::autoclip(cfg);
      m.label = objective_name(o);
      spec.methods.push_back(m);
      names.emplace_back(objective_name(o));
    }
  }
  const GridResult grid = run_grid(spec, base, workers);
  std::vector<AblationRow> rows;
  rows.reserve(grid.rows.size());
  for (const auto& r : grid.rows) {
    rows.push_back({r.method, r.entanglement, r.noise, r.mean_accuracy,
                    r.stderr_accuracy});
  }
  return rows;
}

}  // namespace autoclip
