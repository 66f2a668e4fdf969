#include "seqmetric/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "seqmetric/baselines.hpp"

namespace seqmetric {

using nlohmann::json;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void SyntheticClassSpec::validate() const {
  const std::string who = "synthetic class '" + name + "': ";
  if (joint_count == 0) throw std::invalid_argument(who + "joint_count must be >= 1");
  if (amplitude.size() != joint_count || frequency_hz.size() != joint_count || phase.size() != joint_count) {
    throw std::invalid_argument(who + "amplitude/frequency/phase need one entry per joint");
  }
  for (double f : frequency_hz) {
    if (!(f > 0.0)) throw std::invalid_argument(who + "frequencies must be positive");
  }
  if (min_length < 10) throw std::invalid_argument(who + "min_length must be >= 10");
  if (max_length < min_length) throw std::invalid_argument(who + "max_length < min_length");
  if (noise_std < 0.0) throw std::invalid_argument(who + "noise_std must be nonnegative");
  if (!(frame_rate_hz > 0.0)) throw std::invalid_argument(who + "frame rate must be positive");
  if (discriminative_segment) {
    const SegmentSpec& s = *discriminative_segment;
    if (!(s.start_fraction >= 0.0 && s.start_fraction < s.end_fraction && s.end_fraction <= 1.0)) {
      throw std::invalid_argument(who + "segment fractions must satisfy 0 <= start < end <= 1");
    }
    if (!(s.frequency_hz > 0.0)) throw std::invalid_argument(who + "segment frequency must be positive");
    for (std::size_t j : s.joints) {
      if (j >= joint_count) throw std::invalid_argument(who + "segment joint index out of range");
    }
  }
  if (distractors) {
    const DistractorSpec& d = *distractors;
    if (d.joints.empty() || d.frequencies_hz.empty()) {
      throw std::invalid_argument(who + "distractors need candidate joints and frequencies");
    }
    for (std::size_t j : d.joints) {
      if (j >= joint_count) throw std::invalid_argument(who + "distractor joint index out of range");
    }
    for (double f : d.frequencies_hz) {
      if (!(f > 0.0)) throw std::invalid_argument(who + "distractor frequencies must be positive");
    }
    if (!(d.length_fraction > 0.0 && d.length_fraction <= 1.0)) {
      throw std::invalid_argument(who + "distractor length_fraction must be in (0,1]");
    }
  }
}

std::vector<MotionSequence> generate_synthetic(const SyntheticClassSpec& spec, std::size_t count,
                                               std::uint64_t seed) {
  spec.validate();
  if (count == 0) throw std::invalid_argument("generate_synthetic: count must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> length_dist(spec.min_length, spec.max_length);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  const std::size_t joints = spec.joint_count;

  std::vector<bool> in_segment(joints, false);
  if (spec.discriminative_segment) {
    const auto& seg = *spec.discriminative_segment;
    for (std::size_t k = 0; k < joints; ++k) {
      in_segment[k] = seg.joints.empty() ||
                      std::find(seg.joints.begin(), seg.joints.end(), k) != seg.joints.end();
    }
  }

  std::vector<MotionSequence> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t len = length_dist(rng);
    std::vector<double> phase(joints), amp(joints), freq(joints);
    for (std::size_t k = 0; k < joints; ++k) {
      phase[k] = spec.phase[k] + spec.phase_jitter * unit(rng);
      amp[k] = spec.amplitude[k] * (1.0 + spec.amplitude_jitter * unit(rng));
      freq[k] = spec.frequency_hz[k] * (1.0 + spec.frequency_jitter * unit(rng));
    }
    struct Burst {
      std::size_t joint, begin, end;
      double freq;
    };
    std::vector<Burst> bursts;
    std::size_t seg_begin = len, seg_end = len;
    if (spec.discriminative_segment) {
      seg_begin = static_cast<std::size_t>(std::floor(spec.discriminative_segment->start_fraction * len));
      seg_end = static_cast<std::size_t>(std::floor(spec.discriminative_segment->end_fraction * len));
    }
    if (spec.distractors) {
      const DistractorSpec& d = *spec.distractors;
      const auto blen = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(d.length_fraction * len)));
      // Free stretches before and after the segment.
      const std::size_t before = seg_begin, after = len - std::min(seg_end, len);
      for (std::size_t b = 0; b < d.count; ++b) {
        Burst burst{};
        burst.joint = d.joints[std::uniform_int_distribution<std::size_t>(0, d.joints.size() - 1)(rng)];
        burst.freq = d.frequencies_hz[std::uniform_int_distribution<std::size_t>(0, d.frequencies_hz.size() - 1)(rng)];
        const bool fits_before = before >= blen, fits_after = after >= blen;
        if (!fits_before && !fits_after) continue;
        bool use_before = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
        if (!fits_before) use_before = false;
        if (!fits_after) use_before = true;
        const std::size_t lo = use_before ? 0 : len - after;
        const std::size_t room = (use_before ? before : after) - blen;
        burst.begin = lo + std::uniform_int_distribution<std::size_t>(0, room)(rng);
        burst.end = burst.begin + blen;
        bursts.push_back(burst);
      }
    }
    MotionSequence seq;
    seq.frames = Array(len, joints);
    seq.frame_rate_hz = spec.frame_rate_hz;
    seq.category = spec.name;
    seq.subject = spec.subject;
    seq.source_id = spec.name + "/" + std::to_string(s);
    seq.kind = FeatureKind::Generic;
    for (std::size_t j = 0; j < len; ++j) {
      const double t = static_cast<double>(j) / spec.frame_rate_hz;
      for (std::size_t k = 0; k < joints; ++k) {
        double v = amp[k] * std::sin(two_pi * freq[k] * t + phase[k]);
        if (j >= seg_begin && j < seg_end && in_segment[k]) {
          const auto& seg = *spec.discriminative_segment;
          const double local = static_cast<double>(j - seg_begin) / spec.frame_rate_hz;
          v += seg.amplitude_boost * std::sin(two_pi * seg.frequency_hz * local);
        }
        for (const Burst& b : bursts) {
          if (b.joint == k && j >= b.begin && j < b.end) {
            const double local = static_cast<double>(j - b.begin) / spec.frame_rate_hz;
            v += spec.distractors->amplitude * std::sin(two_pi * b.freq * local);
          }
        }
        if (spec.noise_std > 0.0) v += spec.noise_std * noise(rng);
        seq.frames(j, k) = v;
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

namespace {

std::vector<double> per_joint(const json& j, const char* key, std::size_t joints, double fallback) {
  if (!j.contains(key)) return std::vector<double>(joints, fallback);
  const json& v = j.at(key);
  if (v.is_number()) return std::vector<double>(joints, v.get<double>());
  return v.get<std::vector<double>>();
}

}  // namespace

SyntheticClassSpec class_spec_from_json(const json& j) {
  SyntheticClassSpec s;
  s.name = j.at("name").get<std::string>();
  s.joint_count = j.at("joint_count").get<std::size_t>();
  s.amplitude = per_joint(j, "amplitude", s.joint_count, 1.0);
  s.frequency_hz = per_joint(j, "frequency_hz", s.joint_count, 1.0);
  s.phase = per_joint(j, "phase", s.joint_count, 0.0);
  s.min_length = j.value("min_length", s.min_length);
  s.max_length = j.value("max_length", s.max_length);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.phase_jitter = j.value("phase_jitter", s.phase_jitter);
  s.amplitude_jitter = j.value("amplitude_jitter", s.amplitude_jitter);
  s.frequency_jitter = j.value("frequency_jitter", s.frequency_jitter);
  s.frame_rate_hz = j.value("frame_rate_hz", s.frame_rate_hz);
  if (j.contains("subject")) s.subject = j.at("subject").get<std::string>();
  if (j.contains("segment") && !j.at("segment").is_null()) {
    const json& g = j.at("segment");
    SegmentSpec seg;
    seg.start_fraction = g.value("start_fraction", seg.start_fraction);
    seg.end_fraction = g.value("end_fraction", seg.end_fraction);
    seg.amplitude_boost = g.value("amplitude_boost", seg.amplitude_boost);
    seg.frequency_hz = g.value("frequency_hz", seg.frequency_hz);
    seg.joints = g.value("joints", std::vector<std::size_t>{});
    s.discriminative_segment = seg;
  }
  if (j.contains("distractors") && !j.at("distractors").is_null()) {
    const json& g = j.at("distractors");
    DistractorSpec d;
    d.joints = g.at("joints").get<std::vector<std::size_t>>();
    d.frequencies_hz = g.at("frequencies_hz").get<std::vector<double>>();
    d.amplitude = g.value("amplitude", d.amplitude);
    d.length_fraction = g.value("length_fraction", d.length_fraction);
    d.count = g.value("count", d.count);
    s.distractors = d;
  }
  s.validate();
  return s;
}

nlohmann::ordered_json class_spec_to_json(const SyntheticClassSpec& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["joint_count"] = s.joint_count;
  j["amplitude"] = s.amplitude;
  j["frequency_hz"] = s.frequency_hz;
  j["phase"] = s.phase;
  j["min_length"] = s.min_length;
  j["max_length"] = s.max_length;
  j["noise_std"] = s.noise_std;
  j["phase_jitter"] = s.phase_jitter;
  j["amplitude_jitter"] = s.amplitude_jitter;
  j["frequency_jitter"] = s.frequency_jitter;
  j["frame_rate_hz"] = s.frame_rate_hz;
  if (s.subject) j["subject"] = *s.subject;
  if (s.discriminative_segment) {
    const auto& g = *s.discriminative_segment;
    j["segment"] = {{"start_fraction", g.start_fraction},
                    {"end_fraction", g.end_fraction},
                    {"amplitude_boost", g.amplitude_boost},
                    {"frequency_hz", g.frequency_hz},
                    {"joints", g.joints}};
  }
  if (s.distractors) {
    const auto& d = *s.distractors;
    j["distractors"] = {{"joints", d.joints},
                        {"frequencies_hz", d.frequencies_hz},
                        {"amplitude", d.amplitude},
                        {"length_fraction", d.length_fraction},
                        {"count", d.count}};
  }
  return j;
}

SyntheticSuite synthetic_suite_from_json(const json& j) {
  SyntheticSuite suite;
  // Optional "defaults" object is merged under every class entry.
  const json defaults = j.value("defaults", json::object());
  for (const json& c : j.at("classes")) {
    json merged = defaults;
    merged.update(c);
    SyntheticClassEntry e;
    e.spec = class_spec_from_json(merged);
    e.count = merged.value("count", e.count);
    e.split = merged.value("split", e.split);
    if (e.split != "train" && e.split != "test") {
      throw std::invalid_argument("synthetic class '" + e.spec.name + "': split must be train or test");
    }
    suite.classes.push_back(std::move(e));
  }
  if (suite.classes.empty()) throw std::invalid_argument("synthetic suite: no classes");
  return suite;
}

SyntheticSuite load_synthetic_suite(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open synthetic spec '" + path + "'");
  return synthetic_suite_from_json(json::parse(in));
}

GeneratedSplit generate_suite(const SyntheticSuite& suite, std::uint64_t seed) {
  GeneratedSplit out;
  for (std::size_t i = 0; i < suite.classes.size(); ++i) {
    const auto& e = suite.classes[i];
    auto seqs = generate_synthetic(e.spec, e.count, mix_seed(seed, i));
    auto& dst = e.split == "train" ? out.train : out.test;
    for (auto& s : seqs) dst.push_back(std::move(s));
  }
  return out;
}

DtwSeparation probe_dtw_separation(const SyntheticClassSpec& a, const SyntheticClassSpec& b,
                                   std::size_t count, std::uint64_t seed) {
  const auto xa = generate_synthetic(a, count, mix_seed(seed, 0));
  const auto xb = generate_synthetic(b, count, mix_seed(seed, 1));
  double within = 0.0, cross = 0.0;
  std::size_t nw = 0, nc = 0;
  for (const auto* set : {&xa, &xb}) {
    for (std::size_t i = 0; i < set->size(); ++i) {
      for (std::size_t j = i + 1; j < set->size(); ++j) {
        within += dtw_distance((*set)[i], (*set)[j]).distance;
        ++nw;
      }
    }
  }
  for (const auto& x : xa) {
    for (const auto& y : xb) {
      cross += dtw_distance(x, y).distance;
      ++nc;
    }
  }
  return {nw ? within / static_cast<double>(nw) : 0.0, nc ? cross / static_cast<double>(nc) : 0.0};
}

}  // namespace seqmetric
