#include "seqmetric/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "seqmetric/bvh.hpp"
#include "seqmetric/preprocess.hpp"

namespace seqmetric {

using nlohmann::json;

Dataset::Dataset(std::vector<MotionSequence> sequences) : sequences_(std::move(sequences)) {
  for (std::size_t i = 0; i < sequences_.size(); ++i) {
    const std::string& c = sequences_[i].category;
    auto [it, fresh] = index_.try_emplace(c);
    if (fresh) categories_.push_back(c);
    it->second.push_back(i);
  }
  if (!sequences_.empty()) {
    const std::size_t d = sequences_.front().dim();
    for (const auto& s : sequences_) {
      if (s.dim() != d) {
        throw std::invalid_argument("dataset: sequence '" + s.source_id + "' has dimension " +
                                    std::to_string(s.dim()) + ", expected " + std::to_string(d));
      }
      if (s.length() == 0) throw std::invalid_argument("dataset: sequence '" + s.source_id + "' is empty");
    }
  }
}

const std::vector<std::size_t>& Dataset::members(const std::string& category) const {
  auto it = index_.find(category);
  if (it == index_.end()) throw std::out_of_range("dataset: unknown category '" + category + "'");
  return it->second;
}

std::size_t Dataset::dim() const { return sequences_.empty() ? 0 : sequences_.front().dim(); }

std::vector<std::string> Dataset::labels() const {
  std::vector<std::string> out;
  out.reserve(sequences_.size());
  for (const auto& s : sequences_) out.push_back(s.category);
  return out;
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(where + e.what());
    }
    ManifestRecord r;
    if (!j.contains("category")) throw std::runtime_error(where + "record has no category label");
    r.category = j.at("category").get<std::string>();
    r.id = j.value("id", "line" + std::to_string(lineno));
    r.path = j.value("path", "");
    if (j.contains("frames")) r.frames = j.at("frames").get<std::vector<std::vector<double>>>();
    if (r.path.empty() == r.frames.empty()) throw std::runtime_error(where + "exactly one of path or frames is required");
    if (j.contains("subject") && !j.at("subject").is_null()) r.subject = j.at("subject").get<std::string>();
    r.frame_rate_hz = j.value("frame_rate_hz", r.frame_rate_hz);
    r.split = j.value("split", "");
    out.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<MotionSequence>& seqs, const std::string& split) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest '" + path + "'");
  for (const auto& s : seqs) {
    nlohmann::ordered_json j;
    j["id"] = s.source_id;
    j["category"] = s.category;
    if (s.subject) j["subject"] = *s.subject;
    j["frame_rate_hz"] = s.frame_rate_hz;
    if (!split.empty()) j["split"] = split;
    json rows = json::array();
    for (std::size_t t = 0; t < s.length(); ++t) {
      std::vector<double> row(s.dim());
      for (std::size_t c = 0; c < s.dim(); ++c) row[c] = s.frames(t, c);
      rows.push_back(row);
    }
    j["frames"] = std::move(rows);
    out << j.dump() << '\n';
  }
}

namespace {

Array read_matrix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::size_t count = 0;
    double v;
    while (ss >> v) {
      values.push_back(v);
      ++count;
    }
    if (count == 0) continue;
    if (cols == 0) cols = count;
    if (count != cols) throw std::runtime_error("'" + path + "': ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows == 0) throw std::runtime_error("'" + path + "': no frames");
  return Array(rows, cols, std::move(values));
}

}  // namespace

std::vector<MotionSequence> load_manifest_sequences(const std::string& manifest_path, const std::string& split,
                                                    const ManifestLoadOptions& options) {
  const auto base = std::filesystem::path(manifest_path).parent_path();
  std::vector<MotionSequence> out;
  for (const ManifestRecord& r : read_manifest(manifest_path)) {
    if (!split.empty() && !r.split.empty() && r.split != split) continue;
    MotionSequence s;
    if (!r.path.empty()) {
      std::filesystem::path p(r.path);
      if (p.is_relative()) p = base / p;
      if (p.extension() == ".bvh") {
        const BvhDocument doc = load_bvh(p.string());
        PreprocessConfig pc;
        pc.target_rate_hz = options.target_rate_hz;
        pc.remove_root_yaw = options.remove_root_yaw;
        s = preprocess(doc.skeleton, doc.motion, pc);
      } else {
        s.frames = read_matrix_file(p.string());
        s.frame_rate_hz = r.frame_rate_hz;
      }
    } else {
      const std::size_t n = r.frames.size(), d = r.frames.front().size();
      s.frames = Array(n, d);
      for (std::size_t t = 0; t < n; ++t) {
        if (r.frames[t].size() != d) throw std::runtime_error("manifest record '" + r.id + "': ragged frames");
        for (std::size_t c = 0; c < d; ++c) s.frames(t, c) = r.frames[t][c];
      }
      s.frame_rate_hz = r.frame_rate_hz;
    }
    s.category = r.category;
    s.subject = r.subject;
    s.source_id = r.id;
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> Episode::flatten() const {
  std::vector<std::size_t> out(anchors);
  out.insert(out.end(), positives.begin(), positives.end());
  for (const auto& n : negatives) out.insert(out.end(), n.begin(), n.end());
  return out;
}

namespace {

std::size_t draw(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// First k entries of a partial Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> draw_distinct(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + draw(rng, n - i)]);
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> draw_members(std::mt19937_64& rng, const std::vector<std::size_t>& pool, std::size_t P) {
  std::vector<std::size_t> out(P);
  if (pool.size() >= P) {
    const auto pick = draw_distinct(rng, pool.size(), P);
    for (std::size_t i = 0; i < P; ++i) out[i] = pool[pick[i]];
  } else {
    for (std::size_t i = 0; i < P; ++i) out[i] = pool[draw(rng, pool.size())];
  }
  return out;
}

}  // namespace

Episode sample_episode(const Dataset& data, std::size_t P, std::size_t M, std::mt19937_64& rng) {
  if (P == 0 || M == 0) throw std::invalid_argument("sample_episode: P and M must be >= 1");
  const auto& cats = data.categories();
  if (cats.size() < M + 1) {
    throw std::invalid_argument("sample_episode: need at least " + std::to_string(M + 1) + " categories, dataset has " +
                                std::to_string(cats.size()));
  }
  const auto chosen = draw_distinct(rng, cats.size(), M + 1);
  Episode ep;
  ep.positive_category = cats[chosen[0]];
  const auto& pool = data.members(ep.positive_category);
  if (pool.size() >= 2 * P) {
    const auto pick = draw_distinct(rng, pool.size(), 2 * P);
    for (std::size_t i = 0; i < P; ++i) {
      ep.anchors.push_back(pool[pick[i]]);
      ep.positives.push_back(pool[pick[P + i]]);
    }
  } else {
    ep.anchors = draw_members(rng, pool, P);
    ep.positives = draw_members(rng, pool, P);
  }
  for (std::size_t m = 1; m <= M; ++m) {
    ep.negative_categories.push_back(cats[chosen[m]]);
    ep.negatives.push_back(draw_members(rng, data.members(cats[chosen[m]]), P));
  }
  return ep;
}

}  // namespace seqmetric
