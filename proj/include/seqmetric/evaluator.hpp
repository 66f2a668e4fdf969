#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqmetric/baselines.hpp"
#include "seqmetric/encoder.hpp"

namespace seqmetric {

enum class Metric { Learned, L2, Dtw };

std::string to_string(Metric m);
Metric metric_from_string(const std::string& name);

struct DistanceMatrix {
  Array values;  // n x n, symmetric, zero diagonal
  std::string metric;
  std::vector<std::string> notes;

  std::size_t size() const { return values.rows(); }
};

/// Squared Euclidean distances between embedding rows.
DistanceMatrix embedding_distances(const Array& embeddings);

struct DistanceOptions {
  LocalCost dtw_cost = LocalCost::Euclidean;
};

/// The learned metric needs params and config; L2 truncates each pair to the shorter length.
DistanceMatrix pairwise_distances(const std::vector<MotionSequence>& seqs, Metric metric,
                                  const EncoderParams* params = nullptr, const EncoderConfig* config = nullptr,
                                  const DistanceOptions& options = {});

struct FprPoint {
  double tpr_level = 0.0;
  double fpr = 0.0;
  double threshold = 0.0;
  double tpr = 0.0;  // achieved at the threshold
};

struct FprResult {
  std::vector<FprPoint> points;  // in the requested level order
  std::size_t positive_pairs = 0;
  std::size_t negative_pairs = 0;
  std::vector<std::string> warnings;
};

/// Over all unordered pairs i < j: for each level t, the smallest observed
/// distance tau with TPR(tau) >= t, and the FPR at that tau.
FprResult fpr_at_tpr(const DistanceMatrix& dist, const std::vector<std::string>& labels,
                     const std::vector<double>& tpr_levels);

const std::vector<double>& default_tpr_levels();

struct KMeansResult {
  std::vector<std::size_t> assignment;
  Array centroids;
  double inertia = 0.0;
};

/// Lloyd's algorithm from k-means++ seeds; best inertia over restarts.
KMeansResult kmeans(const Array& points, std::size_t k, std::uint64_t seed, std::size_t restarts = 10,
                    std::size_t max_iterations = 300);

double normalized_mutual_information(const std::vector<std::size_t>& clusters, const std::vector<std::string>& labels);

struct PairScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

PairScores pairwise_f1(const std::vector<std::size_t>& clusters, const std::vector<std::string>& labels);

struct ClusterScores {
  double nmi = 0.0;
  double f1 = 0.0;
  std::vector<std::size_t> assignment;
};

/// k = 0 uses the number of distinct labels.
ClusterScores cluster_and_score(const Array& embeddings, const std::vector<std::string>& labels, std::size_t k,
                                std::uint64_t seed);

/// k-medoids (alternating assignment / medoid update from k-means++ style
/// seeds, best cost over restarts) for metrics that have no embedding space.
ClusterScores cluster_distances_and_score(const DistanceMatrix& dist, const std::vector<std::string>& labels,
                                          std::size_t k, std::uint64_t seed, std::size_t restarts = 10);

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

/// k smallest entries, ascending, ties by index. k larger than the row returns everything.
std::vector<Neighbor> rank_neighbors(std::span<const double> distances, std::size_t k);

std::vector<Neighbor> retrieve(const MotionSequence& query, const std::vector<MotionSequence>& gallery, Metric metric,
                               std::size_t k = 4, const EncoderParams* params = nullptr,
                               const EncoderConfig* config = nullptr, const DistanceOptions& options = {});

struct AttentionTrace {
  std::string source_id;
  std::vector<double> scores;
  std::size_t peak = 0;                // first index of the maximum
  std::vector<std::size_t> highlight;  // peak and up to 2 frames either side
  std::vector<std::size_t> subsampled; // every subsample-th frame index
};

std::vector<AttentionTrace> export_attention(const std::vector<MotionSequence>& seqs, const EncoderParams& params,
                                             const EncoderConfig& config, std::size_t subsample = 4);

/// Fraction of attention mass on frames [floor(n/3), floor(2n/3)).
double middle_third_mass(const std::vector<double>& scores);

struct EvalReport {
  std::string metric;
  FprResult fpr;
  double nmi = 0.0;
  double f1 = 0.0;
  std::size_t sequences = 0;
  std::size_t classes = 0;
  std::vector<std::string> notes;

  /// FPR at a level, or nullopt when the level was not requested.
  std::optional<double> fpr_at(double level) const;
  nlohmann::ordered_json to_json() const;
  /// "metric | FPR-90 | FPR-80 | ... | NMI | F1" with percentages.
  std::string table_row() const;
  static std::string table_header(const std::vector<double>& levels);
};

EvalReport evaluate(const DistanceMatrix& dist, const std::vector<std::string>& labels,
                    const std::vector<double>& tpr_levels, const std::optional<Array>& embeddings,
                    std::uint64_t seed);

}  // namespace seqmetric
