#pragma once

#include <string>
#include <utility>

#include "seqmetric/motion.hpp"

namespace seqmetric {

class BvhError : public std::runtime_error {
 public:
  BvhError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct BvhDocument {
  SkeletonHierarchy skeleton;
  MotionSequence motion;  // raw channel values, one column per channel
};

/// Parses the HIERARCHY/MOTION subset: ROOT/JOINT/End Site blocks with
/// position and rotation channels (degrees).
BvhDocument parse_bvh(const std::string& text);
BvhDocument load_bvh(const std::string& path);

std::string serialize_bvh(const SkeletonHierarchy& skeleton, const MotionSequence& motion);

}  // namespace seqmetric
