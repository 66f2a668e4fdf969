#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "doctest.h"
#include "seqmetric/baselines.hpp"

using namespace seqmetric;

namespace {

MotionSequence seq1d(std::vector<double> v) {
  MotionSequence s;
  const std::size_t n = v.size();
  s.frames = Array(n, 1, std::move(v));
  return s;
}

MotionSequence random_seq(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> g;
  MotionSequence s;
  s.frames = Array(n, d);
  for (double& v : s.frames.values()) v = g(rng);
  return s;
}

// Minimum cost over every monotone continuous path, by explicit recursion.
double enumerate_paths(const MotionSequence& x, const MotionSequence& y, LocalCost cost) {
  const std::size_t n = x.length(), m = y.length();
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
    acc += local_cost(x.frames, i, y.frames, j, cost);
    if (i == n - 1 && j == m - 1) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < n) walk(i + 1, j, acc);
    if (j + 1 < m) walk(i, j + 1, acc);
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

double path_cost(const MotionSequence& x, const MotionSequence& y, const WarpPath& p, LocalCost cost) {
  double acc = 0.0;
  for (auto [i, j] : p) acc += local_cost(x.frames, i, y.frames, j, cost);
  return acc;
}

}  // namespace

TEST_CASE("l2 examples") {
  const auto a = seq1d({0, 0, 0});
  const auto b = seq1d({1, 1, 1});
  CHECK(l2_sequence_distance(a, a) == 0.0);
  CHECK(l2_sequence_distance(a, b) == 1.0);
  CHECK(l2_sequence_distance(b, a) == 1.0);
  CHECK_THROWS_AS(l2_sequence_distance(a, seq1d({1, 1})), std::invalid_argument);
}

TEST_CASE("dtw examples") {
  const auto r = dtw_distance(seq1d({0, 1, 2}), seq1d({0, 1, 1, 2}), LocalCost::Manhattan);
  CHECK(r.distance == 0.0);
  CHECK(is_valid_warp_path(r.path, 3, 4));

  const auto single = dtw_distance(seq1d({0}), seq1d({5}));
  CHECK(single.distance == 5.0);
  CHECK(single.path == WarpPath{{0, 0}});

  std::mt19937_64 rng(1);
  const auto x = random_seq(rng, 7, 3);
  const auto self = dtw_distance(x, x);
  CHECK(self.distance == 0.0);
  REQUIRE(self.path.size() == 7);
  for (std::size_t k = 0; k < 7; ++k) CHECK(self.path[k] == std::pair<std::size_t, std::size_t>{k, k});

  MotionSequence wide;
  wide.frames = Array(3, 2);
  CHECK_THROWS_AS(dtw_distance(x, wide), std::invalid_argument);
}

TEST_CASE("dtw matches exhaustive path enumeration") {
  std::mt19937_64 rng(77);
  const LocalCost costs[] = {LocalCost::Euclidean, LocalCost::SquaredEuclidean, LocalCost::Manhattan};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 6, m = 1 + rng() % 6, d = 1 + rng() % 3;
    const LocalCost cost = costs[trial % 3];
    const auto x = random_seq(rng, n, d), y = random_seq(rng, m, d);
    const DtwResult r = dtw_distance(x, y, cost);
    const double brute = enumerate_paths(x, y, cost);
    CHECK(r.distance == doctest::Approx(brute).epsilon(1e-12));
    REQUIRE(is_valid_warp_path(r.path, n, m));
    CHECK(path_cost(x, y, r.path, cost) == doctest::Approx(r.distance).epsilon(1e-12));
    CHECK(dtw_distance(y, x, cost).distance == doctest::Approx(r.distance).epsilon(1e-12));
  }
}

TEST_CASE("dtw bounded by identity path") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    const auto x = random_seq(rng, n, 4), y = random_seq(rng, n, 4);
    const double dtw = dtw_distance(x, y, LocalCost::SquaredEuclidean).distance;
    CHECK(dtw <= l2_sequence_distance(x, y) * static_cast<double>(n) + 1e-12);
  }
}

TEST_CASE("warp path validity checks") {
  CHECK(is_valid_warp_path({{0, 0}, {1, 1}, {1, 2}}, 2, 3));
  CHECK_FALSE(is_valid_warp_path({{0, 0}, {1, 2}}, 2, 3));
  CHECK_FALSE(is_valid_warp_path({{0, 0}, {1, 1}}, 2, 3));
  CHECK_FALSE(is_valid_warp_path({{0, 1}, {1, 2}}, 2, 3));
  CHECK_FALSE(is_valid_warp_path({{0, 0}, {1, 1}, {0, 2}, {1, 2}}, 2, 3));
  CHECK_FALSE(is_valid_warp_path({}, 1, 1));
}

TEST_CASE("local cost names") {
  for (LocalCost c : {LocalCost::Euclidean, LocalCost::SquaredEuclidean, LocalCost::Manhattan})
    CHECK(local_cost_from_string(to_string(c)) == c);
  CHECK_THROWS_AS(local_cost_from_string("cosine"), std::invalid_argument);
}
