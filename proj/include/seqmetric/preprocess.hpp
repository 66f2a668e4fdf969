#pragma once

#include <random>
#include <set>
#include <string>
#include <vector>

#include "seqmetric/motion.hpp"

namespace seqmetric {

struct PreprocessConfig {
  double target_rate_hz = 30.0;
  /// Allowed distance of source/target from an integer stride.
  double stride_tolerance = 1e-3;
  bool remove_root_yaw = false;
  /// Joint names to leave out of the output features.
  std::set<std::string> excluded_joints;
};

/// Drops root translation, converts each joint's rotation channels to an
/// exponential-map triple, and decimates to the target rate.
/// Output dimension is 3 x (joints carrying three rotation channels).
MotionSequence preprocess(const SkeletonHierarchy& skeleton, const MotionSequence& raw,
                          const PreprocessConfig& config);

/// Integer decimation stride from source to target rate.
std::size_t decimation_stride(double source_hz, double target_hz, double tolerance);

enum class WindowMode { Train, Test };

/// Train: windows of exactly window_len starting every window_len + gap
/// frames; a final partial window is dropped. Test: sequences no longer than
/// min_split_seconds pass through unchanged, longer ones are split the same way.
std::vector<MotionSequence> window(const MotionSequence& seq, std::size_t window_len,
                                   std::size_t gap, WindowMode mode, double min_split_seconds);

/// Joints (3 columns each) whose channels have variance below threshold over
/// all frames of all sequences. Returned indices are ascending.
std::vector<std::size_t> find_static_joints(const std::vector<MotionSequence>& seqs,
                                            double threshold = 1e-10);
/// Removes the given joints' 3-column groups from every sequence.
void drop_joints(std::vector<MotionSequence>& seqs, const std::vector<std::size_t>& joints);

/// Curriculum noise: linear ramp from 0 to sigma_max over the first
/// ramp_fraction * total_updates updates, constant afterwards.
struct NoiseSchedule {
  double sigma_max = 0.05;
  std::size_t total_updates = 1000;
  double ramp_fraction = 0.8;

  double std_at(std::size_t update_index) const;
};

MotionSequence add_curriculum_noise(const MotionSequence& seq, std::size_t update_index,
                                    const NoiseSchedule& schedule, std::mt19937_64& rng);

}  // namespace seqmetric
