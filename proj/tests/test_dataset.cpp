#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "seqmetric/dataset.hpp"

using namespace seqmetric;

namespace {

Dataset make_dataset(std::size_t categories, std::size_t per_category) {
  std::vector<MotionSequence> seqs;
  for (std::size_t c = 0; c < categories; ++c) {
    for (std::size_t i = 0; i < per_category; ++i) {
      MotionSequence s;
      s.frames = Array(5, 2, static_cast<double>(c));
      s.category = "c" + std::to_string(c);
      s.source_id = s.category + "/" + std::to_string(i);
      seqs.push_back(std::move(s));
    }
  }
  return Dataset(std::move(seqs));
}

void check_episode(const Dataset& d, const Episode& ep, std::size_t P, std::size_t M) {
  REQUIRE(ep.P() == P);
  REQUIRE(ep.M() == M);
  std::set<std::string> negs(ep.negative_categories.begin(), ep.negative_categories.end());
  CHECK(negs.size() == M);
  CHECK(negs.count(ep.positive_category) == 0);
  for (std::size_t i = 0; i < P; ++i) {
    CHECK(d.sequences()[ep.anchors[i]].category == ep.positive_category);
    CHECK(d.sequences()[ep.positives[i]].category == ep.positive_category);
  }
  for (std::size_t m = 0; m < M; ++m) {
    REQUIRE(ep.negatives[m].size() == P);
    for (std::size_t idx : ep.negatives[m]) CHECK(d.sequences()[idx].category == ep.negative_categories[m]);
  }
}

}  // namespace

TEST_CASE("full-size episode has 175 sequences") {
  const Dataset d = make_dataset(8, 60);
  std::mt19937_64 rng(1);
  const Episode ep = sample_episode(d, 25, 5, rng);
  check_episode(d, ep, 25, 5);
  CHECK(ep.flatten().size() == 175);
  std::set<std::size_t> ap(ep.anchors.begin(), ep.anchors.end());
  ap.insert(ep.positives.begin(), ep.positives.end());
  CHECK(ap.size() == 50);
}

TEST_CASE("minimal episode") {
  const Dataset d = make_dataset(2, 1);
  std::mt19937_64 rng(2);
  const Episode ep = sample_episode(d, 1, 1, rng);
  check_episode(d, ep, 1, 1);
  CHECK(ep.flatten().size() == 3);
  CHECK(ep.anchors == ep.positives);  // a single window is reused
}

TEST_CASE("episode sampling is deterministic and never reuses the positive category") {
  const Dataset d = make_dataset(6, 7);
  std::mt19937_64 a(99), b(99);
  for (int i = 0; i < 10000; ++i) {
    const Episode x = sample_episode(d, 3, 4, a);
    const Episode y = sample_episode(d, 3, 4, b);
    REQUIRE(x.flatten() == y.flatten());
    REQUIRE(x.negative_categories == y.negative_categories);
    std::set<std::string> negs(x.negative_categories.begin(), x.negative_categories.end());
    REQUIRE(negs.size() == 4);
    REQUIRE(negs.count(x.positive_category) == 0);
    std::set<std::size_t> ap(x.anchors.begin(), x.anchors.end());
    ap.insert(x.positives.begin(), x.positives.end());
    REQUIRE(ap.size() == 6);
  }
}

TEST_CASE("every category gets chosen as positive") {
  const Dataset d = make_dataset(5, 4);
  std::mt19937_64 rng(4);
  std::map<std::string, int> hits;
  for (int i = 0; i < 2000; ++i) ++hits[sample_episode(d, 2, 2, rng).positive_category];
  REQUIRE(hits.size() == 5);
  for (const auto& [c, n] : hits) CHECK(n > 300);
}

TEST_CASE("too few categories is an error") {
  const Dataset d = make_dataset(3, 4);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(sample_episode(d, 2, 3, rng), std::invalid_argument);
  CHECK_NOTHROW(sample_episode(d, 2, 2, rng));
}

TEST_CASE("dataset rejects mixed dimensions") {
  std::vector<MotionSequence> seqs(2);
  seqs[0].frames = Array(3, 2);
  seqs[1].frames = Array(3, 4);
  CHECK_THROWS_AS(Dataset{seqs}, std::invalid_argument);
}

TEST_CASE("manifest round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "seqmetric_manifest_test";
  std::filesystem::create_directories(dir);
  const Dataset d = make_dataset(2, 2);
  std::vector<MotionSequence> seqs = d.sequences();
  seqs[1].subject = "s7";
  seqs[1].frames(3, 1) = 0.1234567890123456789;
  write_manifest((dir / "m.jsonl").string(), seqs, "test");
  const auto back = load_manifest_sequences((dir / "m.jsonl").string(), "test");
  REQUIRE(back.size() == 4);
  CHECK(back[1].frames == seqs[1].frames);
  CHECK(back[1].subject == std::optional<std::string>("s7"));
  CHECK(back[2].category == "c1");
  CHECK(load_manifest_sequences((dir / "m.jsonl").string(), "train").empty());

  {
    std::ofstream mat(dir / "clip.txt");
    mat << "1 2\n3 4\n5 6\n";
    std::ofstream m(dir / "p.jsonl");
    m << R"({"id": "x", "path": "clip.txt", "category": "jump", "frame_rate_hz": 30})" << "\n\n";
    std::ofstream bad(dir / "bad.jsonl");
    bad << R"({"id": "x", "path": "clip.txt"})" << "\n";
  }
  const auto p = load_manifest_sequences((dir / "p.jsonl").string(), "");
  REQUIRE(p.size() == 1);
  CHECK(p[0].length() == 3);
  CHECK(p[0].frames(2, 1) == 6.0);
  CHECK_THROWS_WITH_AS(read_manifest((dir / "bad.jsonl").string()), doctest::Contains("category"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
