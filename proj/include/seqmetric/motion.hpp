#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqmetric/tensor.hpp"

namespace seqmetric {

enum class FeatureKind {
  Generic,     // arbitrary real features
  RawChannels, // BVH channel values (positions and Euler degrees)
  ExpMap,      // exponential-map triples per joint, radians
};

/// A variable-length sequence of d-dimensional pose frames.
struct MotionSequence {
  Array frames;  // n x d, one row per frame
  double frame_rate_hz = 30.0;
  std::string category;
  std::optional<std::string> subject;
  std::string source_id;
  FeatureKind kind = FeatureKind::Generic;

  std::size_t length() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
  double duration_seconds() const { return static_cast<double>(length()) / frame_rate_hz; }

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

enum class Channel { Xposition, Yposition, Zposition, Xrotation, Yrotation, Zrotation };

std::string to_string(Channel c);
std::optional<Channel> channel_from_string(const std::string& name);
inline bool is_rotation(Channel c) {
  return c == Channel::Xrotation || c == Channel::Yrotation || c == Channel::Zrotation;
}

struct Joint {
  std::string name;
  int parent = -1;  // -1 for the root
  std::array<double, 3> offset{0.0, 0.0, 0.0};
  std::vector<Channel> channels;
  std::optional<std::array<double, 3>> end_site;
};

struct SkeletonHierarchy {
  std::vector<Joint> joints;  // topological order: parent index < own index
  std::size_t total_channels = 0;

  /// Column offset of each joint's first channel in a frame row.
  std::vector<std::size_t> channel_offsets() const;
  void validate() const;
};

}  // namespace seqmetric
