#pragma once

#include <string>
#include <utility>
#include <vector>

#include "seqmetric/motion.hpp"

namespace seqmetric {

enum class LocalCost {
  Euclidean,         // |x - y|
  SquaredEuclidean,  // |x - y|^2
  Manhattan,         // sum |x_i - y_i| (absolute difference in 1-D)
};

std::string to_string(LocalCost c);
LocalCost local_cost_from_string(const std::string& name);

double local_cost(const Array& x, std::size_t i, const Array& y, std::size_t j, LocalCost cost);

/// Mean over frames of the squared pose distance; lengths must match.
double l2_sequence_distance(const MotionSequence& x, const MotionSequence& y);

using WarpPath = std::vector<std::pair<std::size_t, std::size_t>>;

struct DtwResult {
  double distance = 0.0;
  WarpPath path;
};

/// Minimum cumulative local cost over monotone, continuous warp paths from
/// (0,0) to (n-1,m-1); O(nm) time and memory.
DtwResult dtw_distance(const MotionSequence& x, const MotionSequence& y,
                       LocalCost cost = LocalCost::Euclidean);

bool is_valid_warp_path(const WarpPath& path, std::size_t n, std::size_t m);

}  // namespace seqmetric
