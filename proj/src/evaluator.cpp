#include "seqmetric/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "seqmetric/synthetic.hpp"

namespace seqmetric {

std::string to_string(Metric m) {
  switch (m) {
    case Metric::Learned: return "learned";
    case Metric::L2: return "l2";
    case Metric::Dtw: return "dtw";
  }
  return "?";
}

Metric metric_from_string(const std::string& name) {
  for (Metric m : {Metric::Learned, Metric::L2, Metric::Dtw}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown metric '" + name + "' (learned|l2|dtw)");
}

DistanceMatrix embedding_distances(const Array& e) {
  const std::size_t n = e.rows();
  DistanceMatrix d{Array(n, n, 0.0), "learned", {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < e.cols(); ++c) {
        const double diff = e(i, c) - e(j, c);
        s += diff * diff;
      }
      d.values(i, j) = d.values(j, i) = s;
    }
  }
  return d;
}

namespace {

double truncated_l2(const MotionSequence& x, const MotionSequence& y) {
  const std::size_t n = std::min(x.length(), y.length());
  if (x.dim() != y.dim()) throw std::invalid_argument("l2 distance: dimension mismatch");
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) total += local_cost(x.frames, t, y.frames, t, LocalCost::SquaredEuclidean);
  return total / static_cast<double>(n);
}

void require_learned(const EncoderParams* params, const EncoderConfig* config) {
  if (params == nullptr || config == nullptr) {
    throw std::invalid_argument("learned metric requires trained parameters and an encoder config");
  }
}

}  // namespace

DistanceMatrix pairwise_distances(const std::vector<MotionSequence>& seqs, Metric metric, const EncoderParams* params,
                                  const EncoderConfig* config, const DistanceOptions& options) {
  if (metric == Metric::Learned) {
    require_learned(params, config);
    return embedding_distances(embed_all(seqs, *params, *config));
  }
  const std::size_t n = seqs.size();
  DistanceMatrix d{Array(n, n, 0.0), to_string(metric), {}};
  bool truncated = false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double v;
      if (metric == Metric::L2) {
        truncated = truncated || seqs[i].length() != seqs[j].length();
        v = truncated_l2(seqs[i], seqs[j]);
      } else {
        v = dtw_distance(seqs[i], seqs[j], options.dtw_cost).distance;
      }
      d.values(i, j) = d.values(j, i) = v;
    }
  }
  if (metric == Metric::L2 && truncated) d.notes.push_back("l2: unequal-length pairs truncated to the shorter length");
  if (metric == Metric::Dtw) d.notes.push_back("dtw: local cost " + to_string(options.dtw_cost));
  return d;
}

const std::vector<double>& default_tpr_levels() {
  static const std::vector<double> levels{0.90, 0.80, 0.70};
  return levels;
}

FprResult fpr_at_tpr(const DistanceMatrix& dist, const std::vector<std::string>& labels,
                     const std::vector<double>& tpr_levels) {
  const std::size_t n = dist.size();
  if (labels.size() != n) throw std::invalid_argument("fpr_at_tpr: label count does not match matrix size");
  FprResult r;
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  if (counts.size() < 2) throw std::invalid_argument("fpr_at_tpr: need at least 2 distinct labels");
  for (const auto& [label, c] : counts) {
    if (c == 1) r.warnings.push_back("label '" + label + "' has a single sample and contributes no positive pairs");
  }
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) (labels[i] == labels[j] ? pos : neg).push_back(dist.values(i, j));
  }
  if (pos.empty()) throw std::invalid_argument("fpr_at_tpr: no positive pairs");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  r.positive_pairs = pos.size();
  r.negative_pairs = neg.size();
  const double np = static_cast<double>(pos.size());
  const double smallest = std::min(pos.front(), neg.empty() ? pos.front() : neg.front());
  for (double t : tpr_levels) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("fpr_at_tpr: TPR level outside [0,1]");
    std::size_t k = 0;
    while (static_cast<double>(k) / np < t - 1e-12) ++k;
    FprPoint p;
    p.tpr_level = t;
    p.threshold = k == 0 ? smallest : pos[k - 1];
    const auto pos_hits = static_cast<std::size_t>(std::upper_bound(pos.begin(), pos.end(), p.threshold) - pos.begin());
    const auto neg_hits = static_cast<std::size_t>(std::upper_bound(neg.begin(), neg.end(), p.threshold) - neg.begin());
    p.tpr = static_cast<double>(pos_hits) / np;
    p.fpr = neg.empty() ? 0.0 : static_cast<double>(neg_hits) / static_cast<double>(neg.size());
    r.points.push_back(p);
  }
  return r;
}

namespace {

double sq_dist_row(const Array& x, std::size_t i, const Array& c, std::size_t j) {
  double s = 0.0;
  for (std::size_t d = 0; d < x.cols(); ++d) {
    const double diff = x(i, d) - c(j, d);
    s += diff * diff;
  }
  return s;
}

// Index drawn with probability proportional to weights (all-zero weights: uniform).
std::size_t weighted_draw(const std::vector<double>& w, std::mt19937_64& rng) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) return std::uniform_int_distribution<std::size_t>(0, w.size() - 1)(rng);
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  return w.size() - 1;
}

KMeansResult kmeans_once(const Array& x, std::size_t k, std::mt19937_64& rng, std::size_t max_iterations) {
  const std::size_t n = x.rows(), d = x.cols();
  Array c(k, d);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t pick = j == 0 ? first : weighted_draw(nearest, rng);
    for (std::size_t q = 0; q < d; ++q) c(j, q) = x(pick, q);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist_row(x, i, c, j));
  }
  KMeansResult r;
  r.assignment.assign(n, k);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double dj = sq_dist_row(x, i, c, j);
        if (dj < bd) {
          bd = dj;
          best = j;
        }
      }
      if (r.assignment[i] != best) changed = true;
      r.assignment[i] = best;
    }
    if (!changed) break;
    Array sums(k, d, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[r.assignment[i]];
      for (std::size_t q = 0; q < d; ++q) sums(r.assignment[i], q) += x(i, q);
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] == 0) {
        // Re-seed an empty cluster at the point farthest from its centroid.
        std::size_t far = 0;
        double fd = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double di = sq_dist_row(x, i, c, r.assignment[i]);
          if (di > fd) {
            fd = di;
            far = i;
          }
        }
        for (std::size_t q = 0; q < d; ++q) c(j, q) = x(far, q);
        r.assignment[far] = j;
        continue;
      }
      for (std::size_t q = 0; q < d; ++q) c(j, q) = sums(j, q) / static_cast<double>(count[j]);
    }
  }
  r.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) r.inertia += sq_dist_row(x, i, c, r.assignment[i]);
  r.centroids = std::move(c);
  return r;
}

std::size_t resolve_k(std::size_t k, const std::vector<std::string>& labels, std::size_t n) {
  if (k == 0) k = std::set<std::string>(labels.begin(), labels.end()).size();
  if (k == 0 || k > n) {
    throw std::invalid_argument("clustering: k = " + std::to_string(k) + " exceeds sample count " + std::to_string(n));
  }
  return k;
}

}  // namespace

KMeansResult kmeans(const Array& points, std::size_t k, std::uint64_t seed, std::size_t restarts,
                    std::size_t max_iterations) {
  if (k == 0 || k > points.rows()) {
    throw std::invalid_argument("kmeans: k = " + std::to_string(k) + " but " + std::to_string(points.rows()) +
                                " points");
  }
  if (!points.all_finite()) throw std::invalid_argument("kmeans: non-finite input");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    std::mt19937_64 rng(mix_seed(seed, r));
    KMeansResult run = kmeans_once(points, k, rng, max_iterations);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

double normalized_mutual_information(const std::vector<std::size_t>& clusters, const std::vector<std::string>& labels) {
  if (clusters.size() != labels.size() || clusters.empty()) throw std::invalid_argument("nmi: size mismatch");
  const double n = static_cast<double>(clusters.size());
  std::map<std::size_t, double> pc;
  std::map<std::string, double> pl;
  std::map<std::pair<std::size_t, std::string>, double> joint;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    pc[clusters[i]] += 1.0;
    pl[labels[i]] += 1.0;
    joint[{clusters[i], labels[i]}] += 1.0;
  }
  double hc = 0.0, hl = 0.0, mi = 0.0;
  for (const auto& [_, c] : pc) hc -= c / n * std::log(c / n);
  for (const auto& [_, c] : pl) hl -= c / n * std::log(c / n);
  for (const auto& [key, c] : joint) mi += c / n * std::log((c / n) / ((pc[key.first] / n) * (pl[key.second] / n)));
  if (hc + hl == 0.0) return 1.0;
  return std::clamp(2.0 * mi / (hc + hl), 0.0, 1.0);
}

PairScores pairwise_f1(const std::vector<std::size_t>& clusters, const std::vector<std::string>& labels) {
  if (clusters.size() != labels.size()) throw std::invalid_argument("pairwise_f1: size mismatch");
  double tp = 0.0, same_cluster = 0.0, same_label = 0.0;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    for (std::size_t j = i + 1; j < clusters.size(); ++j) {
      const bool c = clusters[i] == clusters[j], l = labels[i] == labels[j];
      same_cluster += c;
      same_label += l;
      tp += c && l;
    }
  }
  PairScores s;
  s.precision = same_cluster > 0.0 ? tp / same_cluster : 0.0;
  s.recall = same_label > 0.0 ? tp / same_label : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

ClusterScores cluster_and_score(const Array& embeddings, const std::vector<std::string>& labels, std::size_t k,
                                std::uint64_t seed) {
  if (embeddings.rows() != labels.size()) throw std::invalid_argument("cluster_and_score: size mismatch");
  k = resolve_k(k, labels, labels.size());
  ClusterScores s;
  s.assignment = kmeans(embeddings, k, seed).assignment;
  s.nmi = normalized_mutual_information(s.assignment, labels);
  s.f1 = pairwise_f1(s.assignment, labels).f1;
  return s;
}

ClusterScores cluster_distances_and_score(const DistanceMatrix& dist, const std::vector<std::string>& labels,
                                          std::size_t k, std::uint64_t seed, std::size_t restarts) {
  const std::size_t n = dist.size();
  if (labels.size() != n) throw std::invalid_argument("cluster_distances_and_score: size mismatch");
  k = resolve_k(k, labels, n);
  const Array& D = dist.values;
  std::vector<std::size_t> best_assign;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    std::mt19937_64 rng(mix_seed(seed, r));
    std::vector<std::size_t> medoids{std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)};
    std::vector<double> nearest(n);
    while (medoids.size() < k) {
      for (std::size_t i = 0; i < n; ++i) {
        nearest[i] = std::numeric_limits<double>::infinity();
        for (std::size_t m : medoids) nearest[i] = std::min(nearest[i], D(i, m));
      }
      medoids.push_back(weighted_draw(nearest, rng));
    }
    std::vector<std::size_t> assign(n, 0);
    double cost = 0.0;
    for (int it = 0; it < 100; ++it) {
      cost = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
          if (D(i, medoids[j]) < D(i, medoids[best])) best = j;
        assign[i] = best;
        cost += D(i, medoids[best]);
      }
      bool moved = false;
      for (std::size_t j = 0; j < k; ++j) {
        std::size_t arg = medoids[j];
        double low = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n; ++c) {
          if (assign[c] != j) continue;
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            if (assign[i] == j) s += D(i, c);
          if (s < low) {
            low = s;
            arg = c;
          }
        }
        if (arg != medoids[j]) {
          medoids[j] = arg;
          moved = true;
        }
      }
      if (!moved) break;
    }
    if (cost < best_cost) {
      best_cost = cost;
      best_assign = assign;
    }
  }
  ClusterScores s;
  s.assignment = std::move(best_assign);
  s.nmi = normalized_mutual_information(s.assignment, labels);
  s.f1 = pairwise_f1(s.assignment, labels).f1;
  return s;
}

std::vector<Neighbor> rank_neighbors(std::span<const double> distances, std::size_t k) {
  std::vector<Neighbor> all;
  all.reserve(distances.size());
  for (std::size_t i = 0; i < distances.size(); ++i) all.push_back({i, distances[i]});
  std::stable_sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance; });
  if (k < all.size()) all.resize(k);
  return all;
}

std::vector<Neighbor> retrieve(const MotionSequence& query, const std::vector<MotionSequence>& gallery, Metric metric,
                               std::size_t k, const EncoderParams* params, const EncoderConfig* config,
                               const DistanceOptions& options) {
  if (gallery.empty()) throw std::invalid_argument("retrieve: empty gallery");
  std::vector<double> d(gallery.size());
  if (metric == Metric::Learned) {
    require_learned(params, config);
    const Array q = embed(query, *params, *config);
    const Array g = embed_all(gallery, *params, *config);
    for (std::size_t i = 0; i < gallery.size(); ++i) d[i] = sq_dist_row(g, i, q, 0);
  } else {
    for (std::size_t i = 0; i < gallery.size(); ++i) {
      d[i] = metric == Metric::L2 ? truncated_l2(query, gallery[i])
                                  : dtw_distance(query, gallery[i], options.dtw_cost).distance;
    }
  }
  return rank_neighbors(d, k);
}

std::vector<AttentionTrace> export_attention(const std::vector<MotionSequence>& seqs, const EncoderParams& params,
                                             const EncoderConfig& config, std::size_t subsample) {
  if (subsample == 0) throw std::invalid_argument("export_attention: subsample must be >= 1");
  const auto scores = attention_scores(seqs, params, config);
  std::vector<AttentionTrace> out;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    AttentionTrace t;
    t.source_id = seqs[s].source_id;
    t.scores = scores[s];
    t.peak = static_cast<std::size_t>(std::max_element(t.scores.begin(), t.scores.end()) - t.scores.begin());
    const std::size_t lo = t.peak >= 2 ? t.peak - 2 : 0;
    const std::size_t hi = std::min(t.scores.size() - 1, t.peak + 2);
    for (std::size_t i = lo; i <= hi; ++i) t.highlight.push_back(i);
    for (std::size_t i = 0; i < t.scores.size(); i += subsample) t.subsampled.push_back(i);
    out.push_back(std::move(t));
  }
  return out;
}

double middle_third_mass(const std::vector<double>& scores) {
  const std::size_t n = scores.size();
  double total = 0.0, inside = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += scores[i];
    if (i >= n / 3 && i < 2 * n / 3) inside += scores[i];
  }
  return total > 0.0 ? inside / total : 0.0;
}

std::optional<double> EvalReport::fpr_at(double level) const {
  for (const auto& p : fpr.points) {
    if (std::abs(p.tpr_level - level) < 1e-9) return p.fpr;
  }
  return std::nullopt;
}

namespace {

std::string level_name(double level) {
  return "FPR-" + std::to_string(static_cast<int>(std::lround(level * 100.0)));
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["metric"] = metric;
  j["sequences"] = sequences;
  j["classes"] = classes;
  j["positive_pairs"] = fpr.positive_pairs;
  j["negative_pairs"] = fpr.negative_pairs;
  nlohmann::ordered_json levels = nlohmann::ordered_json::object();
  for (const auto& p : fpr.points) {
    levels[level_name(p.tpr_level)] = {{"tpr_level", p.tpr_level}, {"fpr", p.fpr}, {"threshold", p.threshold},
                                       {"tpr", p.tpr}};
  }
  j["fpr_at_tpr"] = std::move(levels);
  j["nmi"] = nmi;
  j["f1"] = f1;
  j["notes"] = notes;
  j["warnings"] = fpr.warnings;
  return j;
}

std::string EvalReport::table_header(const std::vector<double>& levels) {
  std::string s = "metric";
  for (double l : levels) s += " | " + level_name(l);
  return s + " | NMI | F1";
}

std::string EvalReport::table_row() const {
  std::string s = metric;
  for (const auto& p : fpr.points) s += " | " + fixed(100.0 * p.fpr, 2);
  return s + " | " + fixed(nmi, 4) + " | " + fixed(f1, 4);
}

EvalReport evaluate(const DistanceMatrix& dist, const std::vector<std::string>& labels,
                    const std::vector<double>& tpr_levels, const std::optional<Array>& embeddings,
                    std::uint64_t seed) {
  EvalReport r;
  r.metric = dist.metric;
  r.sequences = labels.size();
  r.classes = std::set<std::string>(labels.begin(), labels.end()).size();
  r.notes = dist.notes;
  r.fpr = fpr_at_tpr(dist, labels, tpr_levels);
  const ClusterScores c = embeddings ? cluster_and_score(*embeddings, labels, 0, seed)
                                     : cluster_distances_and_score(dist, labels, 0, seed);
  if (!embeddings) r.notes.push_back(dist.metric + ": clustering by k-medoids on the distance matrix");
  r.nmi = c.nmi;
  r.f1 = c.f1;
  return r;
}

}  // namespace seqmetric
