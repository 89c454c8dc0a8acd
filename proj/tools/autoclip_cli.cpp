// autoclip: per-sample prompt-template weight tuning for zero-shot embedding
// classifiers, baseline aggregators, and the controlled-setting experiment.
//
// Exit codes: 0 success, 1 user error, 2 internal error.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "autoclip/aggregate.hpp"
#include "autoclip/embedding.hpp"
#include "autoclip/engine.hpp"
#include "autoclip/errors.hpp"
#include "autoclip/io.hpp"
#include "autoclip/rng.hpp"
#include "autoclip/synthetic.hpp"
#include "autoclip/weighting.hpp"

namespace {

using namespace autoclip;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ObjectiveKind parse_objective(const std::string& name) {
  if (name == "logsumexp") return ObjectiveKind::LogSumExp;
  if (name == "entropy") return ObjectiveKind::NegEntropy;
  if (name == "mean") return ObjectiveKind::Mean;
  if (name == "max") return ObjectiveKind::Max;
  throw UsageError("unknown objective: " + name);
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// classify

struct ClassifyOptions {
  std::string manifest;
  std::string method = "autoclip";
  double beta = 0.85;
  double tau = 100.0;
  std::string objective = "logsumexp";
  int topr = 0;
  std::optional<double> fixed_alpha;
  std::string out;
  std::string format = "csv";
};

int run_classify(const ClassifyOptions& opt) {
  if (opt.method != "autoclip" && opt.fixed_alpha) {
    throw UsageError("--fixed-alpha only applies to method autoclip");
  }
  if (opt.method == "topr" && opt.topr < 1) {
    throw UsageError("method topr requires --topr");
  }
  if (opt.method != "topr" && opt.topr != 0) {
    throw UsageError("--topr only applies to method topr");
  }
  if (opt.fixed_alpha && *opt.fixed_alpha < 0.0) {
    throw UsageError("--fixed-alpha must be non-negative");
  }

  const LoadedTask task = load_task(opt.manifest);
  const double tau = task.manifest.temperature.value_or(opt.tau);

  AggregationMethod method;
  if (opt.method == "mean") {
    method = AggregationMethod::mean();
  } else if (opt.method == "max") {
    method = AggregationMethod::max();
  } else if (opt.method == "topr") {
    method = AggregationMethod::topr(static_cast<std::size_t>(opt.topr));
  } else if (opt.method == "softmax") {
    method = AggregationMethod::softmax_weighting(opt.beta);
  } else if (opt.method == "autoclip") {
    AutoclipConfig cfg;
    cfg.beta = opt.beta;
    cfg.tau = tau;
    cfg.objective = parse_objective(opt.objective);
    cfg.fixed_alpha = opt.fixed_alpha;
    method = AggregationMethod::autoclip(cfg);
  } else {
    throw UsageError("unknown method: " + opt.method);
  }

  std::vector<ResultsRow> rows;
  rows.reserve(task.images.size());
  std::size_t hits = 0;
  if (method.kind == AggregationMethod::Kind::AutoClip) {
    const std::vector<AutoclipResult> results =
        batch_classify(task.descriptors, task.images, method.autoclip_config);
    for (std::size_t s = 0; s < results.size(); ++s) {
      const auto& r = results[s];
      ResultsRow row;
      row.sample_index = static_cast<std::int64_t>(s);
      row.predicted_class = task.manifest.classes[r.prediction.predicted_class];
      row.top_score = r.prediction.scores[r.prediction.predicted_class];
      row.weight_entropy_bits = r.prediction.weight_entropy_bits;
      row.alpha = r.step.alpha;
      if (task.manifest.labels) {
        const std::size_t truth = (*task.manifest.labels)[s];
        row.true_class = task.manifest.classes[truth];
        if (truth == r.prediction.predicted_class) ++hits;
      }
      rows.push_back(std::move(row));
    }
  } else {
    for (std::size_t s = 0; s < task.images.size(); ++s) {
      const PredictionResult p =
          classify_one(task.descriptors, task.images[s], method);
      ResultsRow row;
      row.sample_index = static_cast<std::int64_t>(s);
      row.predicted_class = task.manifest.classes[p.predicted_class];
      row.top_score = p.scores[p.predicted_class];
      row.weight_entropy_bits = p.weight_entropy_bits;
      if (task.manifest.labels) {
        const std::size_t truth = (*task.manifest.labels)[s];
        row.true_class = task.manifest.classes[truth];
        if (truth == p.predicted_class) ++hits;
      }
      rows.push_back(std::move(row));
    }
  }

  write_results(std::move(rows), opt.out,
                opt.format == "json" ? ResultsFormat::Json
                                     : ResultsFormat::Csv);
  if (task.manifest.labels) {
    std::cout << "accuracy="
              << format_g(static_cast<double>(hits) /
                          static_cast<double>(task.images.size()))
              << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::vector<double> entanglement = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> noise = {0.25, 0.5, 0.75, 1.0};
  std::size_t seeds = 100;
  std::vector<std::string> methods = {"mean", "max", "autoclip"};
  std::size_t classes = 5;
  std::size_t dim = 128;
  std::size_t templates = 10;
  std::size_t instances = 200;
  std::uint64_t seed = 0;
  std::string out;
  std::string export_synthetic;
};

AggregationMethod parse_method(const std::string& name, std::size_t k) {
  if (name == "mean") return AggregationMethod::mean();
  if (name == "max") return AggregationMethod::max();
  if (name == "softmax") return AggregationMethod::softmax_weighting();
  if (name == "autoclip") return AggregationMethod::autoclip();
  if (name.starts_with("topr")) {
    // topr or toprN; bare topr uses the A.2 sweep's best fraction of K.
    std::size_t r = std::max<std::size_t>(1, k / 5);
    if (name.size() > 4) r = static_cast<std::size_t>(std::stoul(name.substr(4)));
    AggregationMethod m = AggregationMethod::topr(r);
    m.label = name;
    return m;
  }
  throw UsageError("unknown method: " + name);
}

void export_synthetic_task(const ControlledInstanceSet& set,
                           const std::filesystem::path& manifest_path) {
  const auto& desc = set.descriptors;
  const std::filesystem::path dir = manifest_path.parent_path();
  const std::string stem = manifest_path.stem().string();

  Tensor desc_t;
  desc_t.dims = {desc.num_templates, desc.num_classes, desc.dim};
  desc_t.data.assign(desc.data.begin(), desc.data.end());
  Tensor img_t;
  img_t.dims = {set.images.size(), desc.dim};
  img_t.data.reserve(set.images.size() * desc.dim);
  for (const auto& img : set.images) {
    img_t.data.insert(img_t.data.end(), img.begin(), img.end());
  }
  const std::string desc_file = stem + "_descriptors.aemb";
  const std::string img_file = stem + "_images.aemb";
  write_tensor(dir / desc_file, desc_t);
  write_tensor(dir / img_file, img_t);

  nlohmann::json doc;
  std::vector<std::string> classes, templates;
  for (std::size_t j = 0; j < desc.num_classes; ++j) {
    classes.push_back("class_" + std::to_string(j));
  }
  for (std::size_t i = 0; i < desc.num_templates; ++i) {
    templates.push_back("template_" + std::to_string(i));
  }
  doc["classes"] = classes;
  doc["templates"] = templates;
  doc["descriptor_file"] = desc_file;
  doc["image_file"] = img_file;
  doc["labels"] = set.labels;
  doc["mode"] = "zero-shot";
  io_detail::atomic_write(manifest_path, doc.dump(2) + "\n");
}

int run_simulate(const SimulateOptions& opt) {
  ControlledConfig base;
  base.num_classes = opt.classes;
  base.dim = opt.dim;
  base.num_templates = opt.templates;
  base.num_instances = opt.instances;
  base.seed = opt.seed;

  GridSpec spec;
  spec.entanglement_values = opt.entanglement;
  spec.noise_values = opt.noise;
  spec.seeds = opt.seeds;
  for (const auto& name : opt.methods) {
    spec.methods.push_back(parse_method(name, opt.templates));
  }
  try {
    spec.validate();
    base.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  if (!opt.export_synthetic.empty()) {
    ControlledConfig cfg = base;
    cfg.entanglement = spec.entanglement_values.front();
    cfg.instance_noise = spec.noise_values.front();
    export_synthetic_task(sample_controlled(cfg), opt.export_synthetic);
  }

  const GridResult grid = run_grid(spec, base);
  std::string out = "entanglement,noise,method,mean_accuracy,stderr\n";
  for (const auto& r : grid.rows) {
    out += format_g(r.entanglement) + "," + format_g(r.noise) + "," + r.method +
           "," + format_g(r.mean_accuracy) + "," +
           format_g(r.stderr_accuracy) + "\n";
  }
  io_detail::atomic_write(opt.out, out);
  std::cout << "cells=" << grid.rows.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateOptions {
  std::string kind;
  std::vector<std::string> values;
  bool aggregate = false;
  SimulateOptions sim;
};

int run_ablate(const AblateOptions& opt) {
  ControlledConfig base;
  base.num_classes = opt.sim.classes;
  base.dim = opt.sim.dim;
  base.num_templates = opt.sim.templates;
  base.num_instances = opt.sim.instances;
  base.seed = opt.sim.seed;

  GridSpec spec;
  spec.entanglement_values = opt.sim.entanglement;
  spec.noise_values = opt.sim.noise;
  spec.seeds = opt.sim.seeds;

  std::vector<AblationRow> rows;
  try {
    if (opt.kind == "beta") {
      std::vector<double> betas;
      for (const auto& v : opt.values) betas.push_back(std::stod(v));
      rows = run_ablation(AblationKind::Beta, betas, {}, base, spec);
    } else if (opt.kind == "objective") {
      std::vector<ObjectiveKind> kinds;
      for (const auto& v : opt.values) kinds.push_back(parse_objective(v));
      rows = run_ablation(AblationKind::Objective, {}, kinds, base, spec);
    } else {
      throw UsageError("unknown ablation kind: " + opt.kind);
    }
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  std::string out;
  if (opt.aggregate) {
    out = "value,mean_accuracy,stderr\n";
    // Average cell means per value; stderr pooled as RMS/sqrt(cells).
    std::vector<std::string> seen;
    for (const auto& r : rows) {
      if (std::find(seen.begin(), seen.end(), r.value) == seen.end()) {
        seen.push_back(r.value);
      }
    }
    for (const auto& value : seen) {
      double mean = 0.0, sesq = 0.0;
      std::size_t count = 0;
      for (const auto& r : rows) {
        if (r.value == value) {
          mean += r.mean_accuracy;
          sesq += r.stderr_accuracy * r.stderr_accuracy;
          ++count;
        }
      }
      mean /= static_cast<double>(count);
      const double se = std::sqrt(sesq) / static_cast<double>(count);
      out += value + "," + format_g(mean) + "," + format_g(se) + "\n";
    }
  } else {
    out = "value,entanglement,noise,mean_accuracy,stderr\n";
    for (const auto& r : rows) {
      out += r.value + "," + format_g(r.entanglement) + "," +
             format_g(r.noise) + "," + format_g(r.mean_accuracy) + "," +
             format_g(r.stderr_accuracy) + "\n";
    }
  }
  io_detail::atomic_write(opt.sim.out, out);
  std::cout << "rows=" << rows.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::string manifest;
  bool synthetic = false;
  int repeats = 1000;
  std::string out;
};

struct LatencyStats {
  double median_us = 0.0;
  double p95_us = 0.0;
};

LatencyStats summarize(std::vector<double>& us) {
  std::sort(us.begin(), us.end());
  LatencyStats st;
  st.median_us = us[us.size() / 2];
  st.p95_us = us[std::min(us.size() - 1,
                          static_cast<std::size_t>(0.95 * us.size()))];
  return st;
}

int run_bench(const BenchOptions& opt) {
  DescriptorTensor desc;
  std::vector<EmbeddingVector> images;
  if (opt.synthetic) {
    ControlledConfig cfg;
    cfg.entanglement = 0.5;
    cfg.instance_noise = 0.5;
    cfg.seed = 0;
    ControlledInstanceSet set = sample_controlled(cfg);
    desc = std::move(set.descriptors);
    images = std::move(set.images);
  } else if (!opt.manifest.empty()) {
    LoadedTask task = load_task(opt.manifest);
    desc = std::move(task.descriptors);
    images = std::move(task.images);
  } else {
    throw UsageError("bench requires --manifest or --synthetic");
  }
  if (opt.repeats < 1) throw UsageError("--repeats must be >= 1");

  AutoclipConfig fixed_cfg;
  fixed_cfg.fixed_alpha = 1.0;
  AutoclipConfig bisect_cfg;

  using clock = std::chrono::steady_clock;
  auto time_one = [](auto&& fn) {
    const auto t0 = clock::now();
    fn();
    const auto t1 = clock::now();
    return std::chrono::duration<double, std::micro>(t1 - t0).count();
  };

  std::vector<double> mean_us, fixed_us, bisect_us;
  mean_us.reserve(opt.repeats);
  fixed_us.reserve(opt.repeats);
  bisect_us.reserve(opt.repeats);
  double iter_sum = 0.0;
  for (int r = 0; r < opt.repeats; ++r) {
    const EmbeddingVector& img = images[r % images.size()];
    mean_us.push_back(time_one([&] {
      const SimilarityMatrix sim = pairwise_similarities(desc, img);
      (void)predict(aggregate_mean(sim));
    }));
    fixed_us.push_back(
        time_one([&] { (void)autoclip_classify(desc, img, fixed_cfg); }));
    bisect_us.push_back(time_one([&] {
      const AutoclipResult res = autoclip_classify(desc, img, bisect_cfg);
      iter_sum += res.step.iterations;
    }));
  }

  const LatencyStats mean_st = summarize(mean_us);
  const LatencyStats fixed_st = summarize(fixed_us);
  const LatencyStats bisect_st = summarize(bisect_us);

  nlohmann::json report;
  report["repeats"] = opt.repeats;
  report["templates"] = desc.num_templates;
  report["classes"] = desc.num_classes;
  report["dim"] = desc.dim;
  report["mean_baseline"] = {{"median_us", mean_st.median_us},
                             {"p95_us", mean_st.p95_us}};
  report["autoclip_fixed_alpha"] = {{"median_us", fixed_st.median_us},
                                    {"p95_us", fixed_st.p95_us}};
  report["autoclip_bisection"] = {{"median_us", bisect_st.median_us},
                                  {"p95_us", bisect_st.p95_us}};
  report["mean_bisection_iterations"] = iter_sum / opt.repeats;
  io_detail::atomic_write(opt.out, report.dump(2) + "\n");
  std::cout << "bisection_median_us=" << format_g(bisect_st.median_us) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckOptions {
  int trials = 100;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradcheckOptions& opt) {
  if (opt.trials < 1) throw UsageError("--trials must be >= 1");
  constexpr double kTaus[] = {1.0, 10.0, 100.0};
  constexpr ObjectiveKind kKinds[] = {ObjectiveKind::LogSumExp,
                                      ObjectiveKind::NegEntropy,
                                      ObjectiveKind::Mean, ObjectiveKind::Max};
  double worst = 0.0;
  for (int t = 0; t < opt.trials; ++t) {
    const std::uint64_t trial_seed = derive_stream(opt.seed, 0, t);
    SplitMix64 rng(trial_seed);
    const std::size_t k = 2 + rng.next_index(19);   // [2, 20]
    const std::size_t c = 2 + rng.next_index(9);    // [2, 10]
    const std::size_t d = 8 + rng.next_index(57);   // [8, 64]
    const double tau = kTaus[rng.next_index(3)];
    const ObjectiveKind kind = kKinds[rng.next_index(4)];

    std::vector<double> data(k * c * d);
    for (double& v : data) v = rng.next_normal();
    const DescriptorTensor desc(k, c, d, std::move(data));
    EmbeddingVector img(d);
    for (double& v : img) v = rng.next_normal();
    const SimilarityMatrix sim = pairwise_similarities(desc, img);
    std::vector<double> rho(k);
    for (double& v : rho) v = 0.5 * rng.next_normal();

    const std::vector<double> g = grad_rho(sim, rho, kind, tau);
    const std::vector<double> gfd = grad_fd(sim, rho, kind, tau, 1e-5);
    double dev = 0.0;
    for (std::size_t i = 0; i < k; ++i) dev = std::max(dev, std::abs(g[i] - gfd[i]));
    worst = std::max(worst, dev);
    if (dev > opt.tolerance) {
      std::cerr << "gradcheck failed: deviation " << format_g(dev)
                << " exceeds tolerance " << format_g(opt.tolerance)
                << " (trial " << t << ", seed " << trial_seed << ")\n";
      std::cout << "max_deviation=" << format_g(worst) << "\n";
      return 2;
    }
  }
  std::cout << "max_deviation=" << format_g(worst) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auto-tuned zero-shot embedding classifier"};
  app.require_subcommand(1);

  ClassifyOptions classify_opt;
  auto* classify = app.add_subcommand(
      "classify", "classify embeddings from a task manifest");
  classify->add_option("--manifest", classify_opt.manifest)->required();
  classify->add_option("--method", classify_opt.method)
      ->check(CLI::IsMember({"mean", "max", "topr", "softmax", "autoclip"}));
  classify->add_option("--beta", classify_opt.beta);
  classify->add_option("--tau", classify_opt.tau);
  classify->add_option("--objective", classify_opt.objective)
      ->check(CLI::IsMember({"logsumexp", "entropy", "mean", "max"}));
  classify->add_option("--topr", classify_opt.topr);
  double fixed_alpha_value = -1.0;
  auto* fixed_alpha_opt =
      classify->add_option("--fixed-alpha", fixed_alpha_value);
  classify->add_option("--out", classify_opt.out)->required();
  classify->add_option("--format", classify_opt.format)
      ->check(CLI::IsMember({"csv", "json"}));

  SimulateOptions sim_opt;
  auto* simulate = app.add_subcommand(
      "simulate", "run the controlled-setting comparison grid");
  auto add_sim_flags = [](CLI::App* cmd, SimulateOptions& o) {
    cmd->add_option("--entanglement", o.entanglement)->delimiter(',');
    cmd->add_option("--noise", o.noise)->delimiter(',');
    cmd->add_option("--seeds", o.seeds);
    cmd->add_option("--classes", o.classes);
    cmd->add_option("--dim", o.dim);
    cmd->add_option("--templates", o.templates);
    cmd->add_option("--instances", o.instances);
    cmd->add_option("--seed", o.seed);
    cmd->add_option("--out", o.out)->required();
  };
  add_sim_flags(simulate, sim_opt);
  simulate->add_option("--methods", sim_opt.methods)->delimiter(',');
  simulate->add_option("--export-synthetic", sim_opt.export_synthetic);

  AblateOptions ablate_opt;
  auto* ablate = app.add_subcommand(
      "ablate", "sweep autoclip's beta or objective over the grid");
  ablate->add_option("--kind", ablate_opt.kind)
      ->required()
      ->check(CLI::IsMember({"beta", "objective"}));
  ablate->add_option("--values", ablate_opt.values)->delimiter(',')->required();
  ablate->add_flag("--aggregate", ablate_opt.aggregate);
  add_sim_flags(ablate, ablate_opt.sim);

  BenchOptions bench_opt;
  auto* bench = app.add_subcommand(
      "bench", "measure per-sample aggregation latency");
  bench->add_option("--manifest", bench_opt.manifest);
  bench->add_flag("--synthetic", bench_opt.synthetic);
  bench->add_option("--repeats", bench_opt.repeats);
  bench->add_option("--out", bench_opt.out)->required();

  GradcheckOptions grad_opt;
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "compare the closed-form gradient to finite differences");
  gradcheck->add_option("--trials", grad_opt.trials);
  gradcheck->add_option("--seed", grad_opt.seed);
  gradcheck->add_option("--tolerance", grad_opt.tolerance);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*classify) {
      if (*fixed_alpha_opt) classify_opt.fixed_alpha = fixed_alpha_value;
      return run_classify(classify_opt);
    }
    if (*simulate) return run_simulate(sim_opt);
    if (*ablate) return run_ablate(ablate_opt);
    if (*bench) return run_bench(bench_opt);
    if (*gradcheck) return run_gradcheck(grad_opt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ManifestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
