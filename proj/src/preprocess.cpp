#include "seqmetric/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "seqmetric/rotation.hpp"

namespace seqmetric {

std::size_t decimation_stride(double source_hz, double target_hz, double tolerance) {
  if (!(target_hz > 0.0) || !(source_hz > 0.0)) throw std::invalid_argument("preprocess: rates must be positive");
  if (target_hz > source_hz * (1.0 + 1e-12)) {
    throw std::invalid_argument("preprocess: target rate " + std::to_string(target_hz) +
                                " Hz exceeds source rate " + std::to_string(source_hz) + " Hz");
  }
  const double ratio = source_hz / target_hz;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > tolerance) {
    throw std::invalid_argument("preprocess: source rate " + std::to_string(source_hz) +
                                " Hz is not an integer multiple of " + std::to_string(target_hz) + " Hz");
  }
  return static_cast<std::size_t>(rounded);
}

MotionSequence preprocess(const SkeletonHierarchy& skeleton, const MotionSequence& raw,
                          const PreprocessConfig& config) {
  skeleton.validate();
  if (raw.dim() != skeleton.total_channels) {
    throw std::invalid_argument("preprocess: frame width " + std::to_string(raw.dim()) +
                                " does not match skeleton channel count " +
                                std::to_string(skeleton.total_channels));
  }
  const std::size_t stride = decimation_stride(raw.frame_rate_hz, config.target_rate_hz, config.stride_tolerance);
  const auto offsets = skeleton.channel_offsets();

  struct RotJoint {
    std::size_t joint;
    std::array<std::size_t, 3> cols;
    std::array<Channel, 3> order;
  };
  std::vector<RotJoint> rot;
  for (std::size_t j = 0; j < skeleton.joints.size(); ++j) {
    const Joint& joint = skeleton.joints[j];
    if (config.excluded_joints.count(joint.name)) continue;
    RotJoint rj{j, {}, {}};
    std::size_t k = 0;
    for (std::size_t c = 0; c < joint.channels.size(); ++c) {
      if (!is_rotation(joint.channels[c])) continue;
      if (k == 3) throw std::invalid_argument("preprocess: joint '" + joint.name + "' has more than 3 rotations");
      rj.cols[k] = offsets[j] + c;
      rj.order[k] = joint.channels[c];
      ++k;
    }
    if (k == 3) rot.push_back(rj);
    else if (k != 0) throw std::invalid_argument("preprocess: joint '" + joint.name + "' needs 0 or 3 rotation channels");
  }

  const std::size_t n_out = (raw.length() + stride - 1) / stride;
  MotionSequence out;
  out.frames = Array(n_out, 3 * rot.size());
  out.frame_rate_hz = raw.frame_rate_hz / static_cast<double>(stride);
  out.category = raw.category;
  out.subject = raw.subject;
  out.source_id = raw.source_id;
  out.kind = FeatureKind::ExpMap;
  for (std::size_t t = 0; t < n_out; ++t) {
    const std::size_t src = t * stride;
    for (std::size_t r = 0; r < rot.size(); ++r) {
      const RotJoint& rj = rot[r];
      const Vec3 angles{raw.frames(src, rj.cols[0]), raw.frames(src, rj.cols[1]), raw.frames(src, rj.cols[2])};
      Mat3 m = euler_to_matrix(angles, rj.order);
      if (config.remove_root_yaw && skeleton.joints[rj.joint].parent < 0) m = remove_yaw(m);
      const Vec3 w = matrix_to_expmap(m);
      for (int c = 0; c < 3; ++c) out.frames(t, 3 * r + c) = w[c];
    }
  }
  return out;
}

namespace {

MotionSequence sub_sequence(const MotionSequence& seq, std::size_t begin, std::size_t len, std::size_t index) {
  MotionSequence w = seq;
  w.frames = Array(len, seq.dim());
  std::copy_n(seq.frames.storage().begin() + static_cast<std::ptrdiff_t>(begin * seq.dim()), len * seq.dim(),
              w.frames.storage().begin());
  w.source_id = seq.source_id + "#w" + std::to_string(index);
  return w;
}

}  // namespace

std::vector<MotionSequence> window(const MotionSequence& seq, std::size_t window_len, std::size_t gap,
                                   WindowMode mode, double min_split_seconds) {
  if (window_len == 0) throw std::invalid_argument("window: window_len must be >= 1");
  if (mode == WindowMode::Test &&
      (seq.duration_seconds() <= min_split_seconds || window_len > seq.length())) {
    return {seq};
  }
  std::vector<MotionSequence> out;
  const std::size_t stride = window_len + gap;
  for (std::size_t start = 0; start + window_len <= seq.length(); start += stride) {
    out.push_back(sub_sequence(seq, start, window_len, out.size()));
  }
  return out;
}

std::vector<std::size_t> find_static_joints(const std::vector<MotionSequence>& seqs, double threshold) {
  if (seqs.empty()) return {};
  const std::size_t d = seqs.front().dim();
  if (d % 3 != 0) throw std::invalid_argument("find_static_joints: dimension not a multiple of 3");
  std::vector<double> mean(d, 0.0), m2(d, 0.0);
  double count = 0.0;
  // Welford accumulation over every frame of every sequence.
  for (const auto& s : seqs) {
    if (s.dim() != d) throw std::invalid_argument("find_static_joints: mixed dimensions");
    for (std::size_t t = 0; t < s.length(); ++t) {
      count += 1.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double x = s.frames(t, c);
        const double delta = x - mean[c];
        mean[c] += delta / count;
        m2[c] += delta * (x - mean[c]);
      }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < d / 3; ++j) {
    bool still = true;
    for (std::size_t c = 3 * j; c < 3 * j + 3; ++c) still = still && m2[c] / count < threshold;
    if (still) out.push_back(j);
  }
  return out;
}

void drop_joints(std::vector<MotionSequence>& seqs, const std::vector<std::size_t>& joints) {
  if (joints.empty()) return;
  for (auto& s : seqs) {
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < s.dim(); ++c) {
      if (std::find(joints.begin(), joints.end(), c / 3) == joints.end()) keep.push_back(c);
    }
    Array f(s.length(), keep.size());
    for (std::size_t t = 0; t < s.length(); ++t)
      for (std::size_t k = 0; k < keep.size(); ++k) f(t, k) = s.frames(t, keep[k]);
    s.frames = std::move(f);
  }
}

double NoiseSchedule::std_at(std::size_t update_index) const {
  const double ramp = ramp_fraction * static_cast<double>(total_updates);
  if (sigma_max <= 0.0) return 0.0;
  if (ramp <= 0.0) return sigma_max;
  return sigma_max * std::min(1.0, static_cast<double>(update_index) / ramp);
}

MotionSequence add_curriculum_noise(const MotionSequence& seq, std::size_t update_index,
                                    const NoiseSchedule& schedule, std::mt19937_64& rng) {
  const double sd = schedule.std_at(update_index);
  if (sd == 0.0) return seq;
  MotionSequence out = seq;
  std::normal_distribution<double> noise(0.0, sd);
  for (double& v : out.frames.values()) v += noise(rng);
  return out;
}

}  // namespace seqmetric
