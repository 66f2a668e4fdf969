#pragma once

#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "seqmetric/motion.hpp"

namespace seqmetric {

/// Sequences grouped by category label. Category order is first appearance.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<MotionSequence> sequences);

  const std::vector<MotionSequence>& sequences() const { return sequences_; }
  const std::vector<std::string>& categories() const { return categories_; }
  /// Indices into sequences() for one category, in insertion order.
  const std::vector<std::size_t>& members(const std::string& category) const;
  std::size_t size() const { return sequences_.size(); }
  std::size_t dim() const;
  std::vector<std::string> labels() const;

 private:
  std::vector<MotionSequence> sequences_;
  std::vector<std::string> categories_;
  std::map<std::string, std::vector<std::size_t>> index_;
};

/// One record of a line-delimited JSON manifest. Either path (BVH or a
/// whitespace matrix) or inline frames is given.
struct ManifestRecord {
  std::string id;
  std::string path;
  std::vector<std::vector<double>> frames;
  std::string category;
  std::optional<std::string> subject;
  double frame_rate_hz = 30.0;
  std::string split;  // "train", "test" or empty
};

std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<MotionSequence>& seqs, const std::string& split);

struct ManifestLoadOptions {
  double target_rate_hz = 30.0;
  bool remove_root_yaw = false;
};

/// Materializes records: BVH paths go through preprocess(), relative paths
/// resolve against the manifest's directory.
std::vector<MotionSequence> load_manifest_sequences(const std::string& manifest_path,
                                                    const std::string& split,
                                                    const ManifestLoadOptions& options = {});

struct Episode {
  std::vector<std::size_t> anchors;
  std::vector<std::size_t> positives;
  std::vector<std::vector<std::size_t>> negatives;  // M lists of P indices
  std::string positive_category;
  std::vector<std::string> negative_categories;

  std::size_t P() const { return anchors.size(); }
  std::size_t M() const { return negatives.size(); }
  /// Dataset indices in embedding order: anchors, positives, then each negative list.
  std::vector<std::size_t> flatten() const;
};

Episode sample_episode(const Dataset& data, std::size_t P, std::size_t M, std::mt19937_64& rng);

}  // namespace seqmetric
