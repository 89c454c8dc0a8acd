#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "autoclip/errors.hpp"

namespace autoclip {

using EmbeddingVector = std::vector<double>;

/// K x C x d tensor of class-descriptor embeddings, row (i, j) holding the
/// embedding of template i instantiated with class j. Rows may be raw;
/// similarity computation normalizes.
struct DescriptorTensor {
  std::size_t num_templates = 0;  // K
  std::size_t num_classes = 0;    // C
  std::size_t dim = 0;            // d
  std::vector<double> data;       // K*C*d, row-major (i, j, :)

  DescriptorTensor() = default;
  DescriptorTensor(std::size_t k, std::size_t c, std::size_t d,
                   std::vector<double> values)
      : num_templates(k), num_classes(c), dim(d), data(std::move(values)) {
    if (k < 1 || c < 2 || d < 1) {
      throw ShapeError("DescriptorTensor requires K >= 1, C >= 2, d >= 1");
    }
    if (data.size() != k * c * d) {
      throw ShapeError("DescriptorTensor data size does not match K*C*d");
    }
  }

  std::span<const double> row(std::size_t i, std::size_t j) const {
    return {data.data() + (i * num_classes + j) * dim, dim};
  }
  std::span<double> row(std::size_t i, std::size_t j) {
    return {data.data() + (i * num_classes + j) * dim, dim};
  }
};

/// K x C matrix of descriptor-image cosine similarities for one image.
struct SimilarityMatrix {
  std::size_t num_templates = 0;  // K
  std::size_t num_classes = 0;    // C
  std::vector<double> data;       // row-major

  SimilarityMatrix() = default;
  SimilarityMatrix(std::size_t k, std::size_t c)
      : num_templates(k), num_classes(c), data(k * c, 0.0) {}
  SimilarityMatrix(std::size_t k, std::size_t c, std::vector<double> values)
      : num_templates(k), num_classes(c), data(std::move(values)) {
    if (data.size() != k * c) {
      throw ShapeError("SimilarityMatrix data size does not match K*C");
    }
  }

  double at(std::size_t i, std::size_t j) const {
    return data[i * num_classes + j];
  }
  double& at(std::size_t i, std::size_t j) { return data[i * num_classes + j]; }
};

inline double l2_norm(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// L2-normalizes v. Direction preserved; zero or non-finite input rejected.
inline EmbeddingVector normalize(const EmbeddingVector& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NormalizationError("cannot normalize vector with non-finite entries");
    }
  }
  const double norm = l2_norm(v);
  if (norm == 0.0 || !std::isfinite(norm)) {
    throw NormalizationError("cannot normalize zero-norm vector");
  }
  EmbeddingVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

/// Cosine similarities between every descriptor row and the image embedding.
/// Both sides are normalized here, so raw inputs are accepted.
inline SimilarityMatrix pairwise_similarities(const DescriptorTensor& desc,
                                              const EmbeddingVector& img) {
  if (img.size() != desc.dim) {
    throw ShapeError("image dimension " + std::to_string(img.size()) +
                     " does not match descriptor dimension " +
                     std::to_string(desc.dim));
  }
  const EmbeddingVector x = normalize(img);
  SimilarityMatrix sim(desc.num_templates, desc.num_classes);
  for (std::size_t i = 0; i < desc.num_templates; ++i) {
    for (std::size_t j = 0; j < desc.num_classes; ++j) {
      const auto r = desc.row(i, j);
      const double norm = l2_norm(r);
      if (norm == 0.0 || !std::isfinite(norm)) {
        throw NormalizationError("descriptor row has zero or non-finite norm");
      }
      sim.at(i, j) = dot(r, x) / norm;
    }
  }
  return sim;
}

/// Weighted class scores s_j = sum_i w_i S_ij for simplex weights w.
inline std::vector<double> class_scores(const SimilarityMatrix& sim,
                                        const std::vector<double>& weights) {
  if (weights.size() != sim.num_templates) {
    throw ShapeError("weight length " + std::to_string(weights.size()) +
                     " does not match template count " +
                     std::to_string(sim.num_templates));
  }
  std::vector<double> scores(sim.num_classes, 0.0);
  for (std::size_t i = 0; i < sim.num_templates; ++i) {
    for (std::size_t j = 0; j < sim.num_classes; ++j) {
      scores[j] += weights[i] * sim.at(i, j);
    }
  }
  return scores;
}

}  // namespace autoclip
