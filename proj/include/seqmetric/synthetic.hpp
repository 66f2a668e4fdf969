#pragma once

// Synthetic motion classes: per-joint sinusoids plus an optional
// class-specific burst inside a marked segment.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqmetric/motion.hpp"

namespace seqmetric {

struct SegmentSpec {
  double start_fraction = 1.0 / 3.0;
  double end_fraction = 2.0 / 3.0;
  double amplitude_boost = 1.0;
  double frequency_hz = 2.0;
  std::vector<std::size_t> joints;  // empty means every joint
};

/// Class-independent bursts placed outside the discriminative segment.
/// Each sequence gets `count` bursts with joint, frequency and side drawn
/// uniformly from the candidates.
struct DistractorSpec {
  std::vector<std::size_t> joints;
  std::vector<double> frequencies_hz;
  double amplitude = 1.0;
  double length_fraction = 0.2;  // burst length relative to the sequence
  std::size_t count = 1;
};

struct SyntheticClassSpec {
  std::string name;
  std::size_t joint_count = 1;
  std::vector<double> amplitude;     // per joint
  std::vector<double> frequency_hz;  // per joint
  std::vector<double> phase;         // per joint, radians
  std::optional<SegmentSpec> discriminative_segment;
  std::optional<DistractorSpec> distractors;
  std::size_t min_length = 60;
  std::size_t max_length = 90;
  double noise_std = 0.0;
  /// Per-sequence, per-joint phase offset drawn from U(-phase_jitter, phase_jitter).
  double phase_jitter = 0.5;
  /// Relative per-sequence jitter of base amplitudes and frequencies.
  double amplitude_jitter = 0.0;
  double frequency_jitter = 0.0;
  double frame_rate_hz = 30.0;
  std::optional<std::string> subject;

  void validate() const;
};

/// Deterministic in (spec, count, seed). Frame j of joint k is
/// a_k sin(2 pi f_k j / rate + phase_k + jitter_k) + segment burst + distractor bursts + N(0, noise_std).
std::vector<MotionSequence> generate_synthetic(const SyntheticClassSpec& spec, std::size_t count,
                                               std::uint64_t seed);

struct SyntheticClassEntry {
  SyntheticClassSpec spec;
  std::size_t count = 40;
  std::string split = "train";
};

struct SyntheticSuite {
  std::vector<SyntheticClassEntry> classes;
};

SyntheticClassSpec class_spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json class_spec_to_json(const SyntheticClassSpec& spec);
SyntheticSuite load_synthetic_suite(const std::string& path);
SyntheticSuite synthetic_suite_from_json(const nlohmann::json& j);

struct GeneratedSplit {
  std::vector<MotionSequence> train;
  std::vector<MotionSequence> test;
};

/// Generates every class; class i uses a seed derived from (seed, i).
GeneratedSplit generate_suite(const SyntheticSuite& suite, std::uint64_t seed);

struct DtwSeparation {
  double within = 0.0;  // mean DTW over same-class pairs
  double cross = 0.0;   // mean DTW over cross-class pairs
};

/// Mean DTW within and across two classes on a probe of count sequences each.
DtwSeparation probe_dtw_separation(const SyntheticClassSpec& a, const SyntheticClassSpec& b,
                                   std::size_t count, std::uint64_t seed);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace seqmetric
