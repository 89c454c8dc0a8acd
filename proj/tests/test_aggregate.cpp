#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "autoclip/aggregate.hpp"
#include "autoclip/rng.hpp"

using namespace autoclip;

namespace {

SimilarityMatrix random_sim(std::size_t k, std::size_t c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  SimilarityMatrix s(k, c);
  for (double& x : s.data) x = rng.next_unit() * 2.0 - 1.0;
  return s;
}

}  // namespace

TEST_CASE("aggregate_mean") {
  SUBCASE("K=1 returns the single row") {
    const SimilarityMatrix s(1, 3, {0.3, -0.1, 0.9});
    const auto scores = aggregate_mean(s);
    CHECK(scores == std::vector<double>{0.3, -0.1, 0.9});
  }
  SUBCASE("symmetric example") {
    const SimilarityMatrix s(2, 2, {1.0, 0.0, 0.0, 1.0});
    const auto scores = aggregate_mean(s);
    CHECK(scores[0] == doctest::Approx(0.5));
    CHECK(scores[1] == doctest::Approx(0.5));
  }
  SUBCASE("matches naive double loop") {
    const SimilarityMatrix s = random_sim(3, 4, 17);
    const auto scores = aggregate_mean(s);
    for (std::size_t j = 0; j < 4; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < 3; ++i) sum += s.at(i, j);
      CHECK(scores[j] == doctest::Approx(sum / 3.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("aggregate_max") {
  SUBCASE("K=1 equals mean") {
    const SimilarityMatrix s(1, 3, {0.3, -0.1, 0.9});
    CHECK(aggregate_max(s) == aggregate_mean(s));
  }
  SUBCASE("hand example") {
    const SimilarityMatrix s(2, 2, {0.9, 0.1, 0.2, 0.8});
    const auto scores = aggregate_max(s);
    CHECK(scores[0] == doctest::Approx(0.9));
    CHECK(scores[1] == doctest::Approx(0.8));
  }
  SUBCASE("constant matrix") {
    const SimilarityMatrix s(3, 2, std::vector<double>(6, 0.4));
    const auto scores = aggregate_max(s);
    CHECK(scores[0] == doctest::Approx(0.4));
    CHECK(scores[1] == doctest::Approx(0.4));
  }
}

TEST_CASE("max dominates mean elementwise") {
  const SimilarityMatrix s = random_sim(5, 4, 23);
  const auto mx = aggregate_max(s);
  const auto mn = aggregate_mean(s);
  for (std::size_t j = 0; j < 4; ++j) CHECK(mx[j] >= mn[j]);
}

TEST_CASE("aggregate_topr") {
  SUBCASE("R=K equals mean") {
    const SimilarityMatrix s = random_sim(4, 3, 31);
    const auto topr = aggregate_topr(s, 4);
    const auto mean = aggregate_mean(s);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(topr[j] == doctest::Approx(mean[j]).epsilon(1e-12));
    }
  }
  SUBCASE("tie broken by lowest row index") {
    const SimilarityMatrix s(2, 2, {0.9, 0.1, 0.2, 0.8});
    const auto scores = aggregate_topr(s, 1);  // row means tie at 0.5
    CHECK(scores[0] == doctest::Approx(0.9));
    CHECK(scores[1] == doctest::Approx(0.1));
  }
  SUBCASE("matches brute force over subsets") {
    const SimilarityMatrix s = random_sim(5, 3, 37);
    const auto scores = aggregate_topr(s, 2);
    // Oracle: enumerate all C(5,2) subsets and pick the one maximizing the
    // summed row means (lexicographically smallest among maxima).
    std::vector<double> means(5, 0.0);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 3; ++j) means[i] += s.at(i, j);
      means[i] /= 3.0;
    }
    double best = -1e9;
    std::pair<std::size_t, std::size_t> pick{0, 1};
    for (std::size_t a = 0; a < 5; ++a) {
      for (std::size_t b = a + 1; b < 5; ++b) {
        if (means[a] + means[b] > best + 1e-15) {
          best = means[a] + means[b];
          pick = {a, b};
        }
      }
    }
    for (std::size_t j = 0; j < 3; ++j) {
      const double expect = 0.5 * (s.at(pick.first, j) + s.at(pick.second, j));
      CHECK(scores[j] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("R out of range") {
    const SimilarityMatrix s = random_sim(3, 2, 41);
    CHECK_THROWS_AS(aggregate_topr(s, 0), ConfigError);
    CHECK_THROWS_AS(aggregate_topr(s, 4), ConfigError);
  }
}

TEST_CASE("entropy_bits") {
  CHECK(entropy_bits({0.25, 0.25, 0.25, 0.25}) == doctest::Approx(2.0));
  CHECK(entropy_bits({1.0, 0.0, 0.0}) == doctest::Approx(0.0));
  CHECK(entropy_bits({0.5, 0.5}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(entropy_bits({1.1, -0.1}), ConfigError);
}

TEST_CASE("softmax entropy is non-increasing in the scale") {
  SplitMix64 rng(47);
  std::vector<double> m(6);
  for (double& x : m) x = rng.next_normal();
  double prev = entropy_bits(softmax(m, 0.0));
  CHECK(prev == doctest::Approx(std::log2(6.0)));
  for (double scale : {0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0}) {
    const double h = entropy_bits(softmax(m, scale));
    CHECK(h <= prev + 1e-12);
    prev = h;
  }
}

TEST_CASE("aggregate_softmax_weighting") {
  SUBCASE("beta=1 gives uniform weights and mean scores") {
    const SimilarityMatrix s = random_sim(4, 3, 51);
    const auto r = aggregate_softmax_weighting(s, 1.0);
    CHECK_FALSE(r.degenerate);
    for (double w : r.weights) CHECK(w == doctest::Approx(0.25));
    const auto mean = aggregate_mean(s);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(r.scores[j] == doctest::Approx(mean[j]).epsilon(1e-9));
    }
  }
  SUBCASE("binary entropy target") {
    // Row means (1, 0); half-bit entropy is hit at w ~ (0.8899, 0.1101).
    const SimilarityMatrix s(2, 1, {1.0, 0.0});
    const auto r = aggregate_softmax_weighting(s, 0.5);
    CHECK_FALSE(r.degenerate);
    CHECK(std::abs(entropy_bits(r.weights) - 0.5) <= 0.05);
    CHECK(r.weights[0] == doctest::Approx(0.8899).epsilon(0.02));
  }
  SUBCASE("constant matrix is degenerate") {
    const SimilarityMatrix s(3, 2, std::vector<double>(6, 0.2));
    const auto r = aggregate_softmax_weighting(s, 0.5);
    CHECK(r.degenerate);
    for (double w : r.weights) CHECK(w == doctest::Approx(1.0 / 3.0));
  }
}

TEST_CASE("predict") {
  CHECK(predict({0.2, 0.9, 0.9}) == 1);
  CHECK(predict({1.0}) == 0);
  CHECK_THROWS_AS(predict({0.1, std::nan("")}), ScoreError);
  SUBCASE("random vector matches linear scan") {
    SplitMix64 rng(61);
    std::vector<double> v(20);
    for (double& x : v) x = rng.next_normal();
    CHECK(predict(v) == static_cast<std::size_t>(std::distance(
                            v.begin(), std::max_element(v.begin(), v.end()))));
  }
}

TEST_CASE("template permutation leaves aggregator scores unchanged") {
  const SimilarityMatrix s = random_sim(5, 4, 71);
  SimilarityMatrix p(5, 4);
  const std::size_t perm[5] = {3, 0, 4, 1, 2};
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) p.at(i, j) = s.at(perm[i], j);
  }
  for (auto agg : {&aggregate_mean, &aggregate_max}) {
    const auto a = agg(s);
    const auto b = agg(p);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(a[j] - b[j]) <= 1e-12);
  }
  const auto ta = aggregate_topr(s, 2);
  const auto tb = aggregate_topr(p, 2);
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(ta[j] - tb[j]) <= 1e-12);
}

TEST_CASE("class permutation permutes scores") {
  const SimilarityMatrix s = random_sim(3, 4, 79);
  SimilarityMatrix p(3, 4);
  const std::size_t perm[4] = {2, 3, 1, 0};  // column j of p is perm[j] of s
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) p.at(i, j) = s.at(i, perm[j]);
  }
  const auto a = aggregate_mean(s);
  const auto b = aggregate_mean(p);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(b[j] == doctest::Approx(a[perm[j]]).epsilon(1e-12));
  }
  CHECK(perm[predict(b)] == predict(a));
}
