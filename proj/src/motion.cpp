#include "seqmetric/motion.hpp"

#include <cmath>
#include <numbers>

namespace seqmetric {

void MotionSequence::validate() const {
  if (frames.rows() == 0) throw std::invalid_argument("sequence '" + source_id + "': no frames");
  if (frames.cols() == 0) throw std::invalid_argument("sequence '" + source_id + "': zero-dimensional frames");
  if (!(frame_rate_hz > 0.0)) throw std::invalid_argument("sequence '" + source_id + "': frame rate must be positive");
  if (!frames.all_finite()) throw std::invalid_argument("sequence '" + source_id + "': non-finite frame values");
  if (kind == FeatureKind::ExpMap) {
    if (frames.cols() % 3 != 0) {
      throw std::invalid_argument("sequence '" + source_id + "': exp-map dimension not a multiple of 3");
    }
    for (std::size_t t = 0; t < frames.rows(); ++t) {
      for (std::size_t j = 0; j < frames.cols(); j += 3) {
        const double n = std::hypot(frames(t, j), frames(t, j + 1), frames(t, j + 2));
        if (n > std::numbers::pi + 1e-9) {
          throw std::invalid_argument("sequence '" + source_id + "': exp-map norm exceeds pi at frame " +
                                      std::to_string(t));
        }
      }
    }
  }
}

std::string to_string(Channel c) {
  switch (c) {
    case Channel::Xposition: return "Xposition";
    case Channel::Yposition: return "Yposition";
    case Channel::Zposition: return "Zposition";
    case Channel::Xrotation: return "Xrotation";
    case Channel::Yrotation: return "Yrotation";
    case Channel::Zrotation: return "Zrotation";
  }
  return "?";
}

std::optional<Channel> channel_from_string(const std::string& name) {
  for (Channel c : {Channel::Xposition, Channel::Yposition, Channel::Zposition, Channel::Xrotation,
                    Channel::Yrotation, Channel::Zrotation}) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

std::vector<std::size_t> SkeletonHierarchy::channel_offsets() const {
  std::vector<std::size_t> out;
  std::size_t off = 0;
  for (const Joint& j : joints) {
    out.push_back(off);
    off += j.channels.size();
  }
  return out;
}

void SkeletonHierarchy::validate() const {
  std::size_t total = 0;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const int p = joints[i].parent;
    if (i == 0 && p != -1) throw std::invalid_argument("skeleton: root must not have a parent");
    if (i > 0 && (p < 0 || static_cast<std::size_t>(p) >= i)) {
      throw std::invalid_argument("skeleton: joint '" + joints[i].name + "' breaks topological order");
    }
    total += joints[i].channels.size();
  }
  if (total != total_channels) throw std::invalid_argument("skeleton: channel total mismatch");
}

}  // namespace seqmetric
