#include "seqmetric/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace seqmetric {

std::string to_string(LocalCost c) {
  switch (c) {
    case LocalCost::Euclidean: return "euclidean";
    case LocalCost::SquaredEuclidean: return "squared";
    case LocalCost::Manhattan: return "manhattan";
  }
  return "?";
}

LocalCost local_cost_from_string(const std::string& name) {
  for (LocalCost c : {LocalCost::Euclidean, LocalCost::SquaredEuclidean, LocalCost::Manhattan}) {
    if (to_string(c) == name) return c;
  }
  throw std::invalid_argument("unknown local cost '" + name + "'");
}

double local_cost(const Array& x, std::size_t i, const Array& y, std::size_t j, LocalCost cost) {
  double acc = 0.0;
  const std::size_t d = x.cols();
  for (std::size_t c = 0; c < d; ++c) {
    const double diff = x(i, c) - y(j, c);
    acc += cost == LocalCost::Manhattan ? std::abs(diff) : diff * diff;
  }
  return cost == LocalCost::Euclidean ? std::sqrt(acc) : acc;
}

double l2_sequence_distance(const MotionSequence& x, const MotionSequence& y) {
  if (x.length() != y.length()) {
    throw std::invalid_argument("l2_sequence_distance: lengths differ (" + std::to_string(x.length()) + " vs " +
                                std::to_string(y.length()) + ")");
  }
  if (x.dim() != y.dim()) throw std::invalid_argument("l2_sequence_distance: dimensions differ");
  if (x.length() == 0) throw std::invalid_argument("l2_sequence_distance: empty sequences");
  double total = 0.0;
  for (std::size_t t = 0; t < x.length(); ++t) total += local_cost(x.frames, t, y.frames, t, LocalCost::SquaredEuclidean);
  return total / static_cast<double>(x.length());
}

DtwResult dtw_distance(const MotionSequence& x, const MotionSequence& y, LocalCost cost) {
  const std::size_t n = x.length(), m = y.length();
  if (n == 0 || m == 0) throw std::invalid_argument("dtw_distance: empty sequence");
  if (x.dim() != y.dim()) {
    throw std::invalid_argument("dtw_distance: dimension mismatch (" + std::to_string(x.dim()) + " vs " +
                                std::to_string(y.dim()) + ")");
  }
  Array acc(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double c = local_cost(x.frames, i, y.frames, j, cost);
      double best;
      if (i == 0 && j == 0) best = 0.0;
      else if (i == 0) best = acc(0, j - 1);
      else if (j == 0) best = acc(i - 1, 0);
      else best = std::min({acc(i - 1, j - 1), acc(i - 1, j), acc(i, j - 1)});
      acc(i, j) = best + c;
    }
  }
  DtwResult r;
  r.distance = acc(n - 1, m - 1);
  std::size_t i = n - 1, j = m - 1;
  r.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) --j;
    else if (j == 0) --i;
    else {
      // Prefer the diagonal on ties.
      const double diag = acc(i - 1, j - 1), up = acc(i - 1, j), left = acc(i, j - 1);
      if (diag <= up && diag <= left) { --i; --j; }
      else if (up <= left) --i;
      else --j;
    }
    r.path.emplace_back(i, j);
  }
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

bool is_valid_warp_path(const WarpPath& path, std::size_t n, std::size_t m) {
  if (path.empty() || path.front() != std::pair<std::size_t, std::size_t>{0, 0}) return false;
  if (path.back() != std::pair<std::size_t, std::size_t>{n - 1, m - 1}) return false;
  for (std::size_t k = 1; k < path.size(); ++k) {
    const auto [pi, pj] = path[k - 1];
    const auto [ci, cj] = path[k];
    const std::size_t di = ci - pi, dj = cj - pj;
    if (ci < pi || cj < pj || di > 1 || dj > 1 || (di == 0 && dj == 0)) return false;
  }
  return true;
}

}  // namespace seqmetric
