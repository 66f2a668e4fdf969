#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "seqmetric/synthetic.hpp"
#include "seqmetric/trainer.hpp"

using namespace seqmetric;

namespace {

Dataset toy_dataset(std::size_t classes = 3, std::size_t per_class = 12) {
  std::vector<MotionSequence> all;
  for (std::size_t k = 0; k < classes; ++k) {
    SyntheticClassSpec s;
    s.name = "k" + std::to_string(k);
    s.joint_count = 2;
    s.amplitude = {1.0, 0.5};
    s.frequency_hz = {0.5 + static_cast<double>(k), 1.0};
    s.phase = {0.0, 0.0};
    s.min_length = 10;
    s.max_length = 14;
    s.noise_std = 0.05;
    for (auto& q : generate_synthetic(s, per_class, 100 + k)) all.push_back(std::move(q));
  }
  return Dataset(std::move(all));
}

EncoderConfig toy_encoder() {
  EncoderConfig c;
  c.input_dim = 2;
  c.hidden = 6;
  c.embedding = 4;
  c.attention_width = 4;
  c.head_width = 12;
  c.dropout_rate = 0.2;
  return c;
}

TrainConfig toy_train(std::size_t updates) {
  TrainConfig t;
  t.total_updates = updates;
  t.lr0 = 0.05;
  t.P = 3;
  t.M = 1;
  t.seed = 21;
  return t;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("seqmetric_trainer_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig t;
  CHECK(std::abs(lr_at(0, t) - 0.0001) <= 1e-12);
  CHECK(std::abs(lr_at(49, t) - 0.0001) <= 1e-12);
  CHECK(std::abs(lr_at(50, t) - 0.000096) <= 1e-12);
  CHECK(std::abs(lr_at(100, t) - 0.00009216) <= 1e-12);
  for (std::size_t u = 1; u < 6000; ++u) REQUIRE(lr_at(u, t) <= lr_at(u - 1, t));
}

TEST_CASE("global-norm clipping") {
  const std::vector<std::string> names{"a", "b"};
  std::vector<Array> g{Array(1, 1, 30.0), Array(1, 1, 40.0)};
  ClipResult r = clip_global(g, names, 25.0);
  CHECK(r.norm_before == 50.0);
  CHECK(g[0][0] == 15.0);
  CHECK(g[1][0] == 20.0);

  g = {Array(1, 2, {6.0, 8.0}), Array(1, 1, 0.0)};
  clip_global(g, names, 25.0);
  CHECK(g[0] == Array(1, 2, {6.0, 8.0}));

  g = {Array(2, 2, 0.0), Array(1, 1, 0.0)};
  r = clip_global(g, names, 25.0);
  CHECK(r.norm_after == 0.0);

  g = {Array(1, 1, 1.0), Array(1, 2, {1.0, std::nan("")})};
  CHECK_THROWS_WITH_AS(clip_global(g, names, 25.0), doctest::Contains("'b'"), std::runtime_error);

  std::vector<Array> e{Array(1, 3, {-100.0, 3.0, 40.0})};
  clip_elementwise(e, {"w"}, 25.0);
  CHECK(e[0] == Array(1, 3, {-25.0, 3.0, 25.0}));
}

TEST_CASE("clipping bound holds on adversarial gradients") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  const std::vector<std::string> names{"x", "y", "z"};
  std::vector<std::vector<Array>> fixtures;
  fixtures.push_back({Array(1, 1, 1e300), Array(1, 1, -1e300), Array(1, 1, 1e300)});
  fixtures.push_back({Array(100, 100, 25.0 / 100.0 + 1e-12), Array(1, 1, 0.0), Array(1, 1, 0.0)});
  fixtures.push_back({Array(1, 1, 25.0 + 1e-9), Array(1, 1, 1e-300), Array(1, 1, 0.0)});
  fixtures.push_back({Array(1, 1, 1e-200), Array(1, 1, 1e-200), Array(1, 1, 1e-200)});
  for (int k = 0; k < 200; ++k) {
    std::vector<Array> f;
    for (int j = 0; j < 3; ++j) {
      Array a(1 + rng() % 50, 1 + rng() % 50);
      const double scale = std::pow(10.0, static_cast<double>(rng() % 40) - 10.0);
      for (double& v : a.values()) v = scale * gauss(rng);
      f.push_back(std::move(a));
    }
    fixtures.push_back(std::move(f));
  }
  for (auto& f : fixtures) {
    const ClipResult r = clip_global(f, names, 25.0);
    CHECK(global_norm(f) <= 25.0 + 1e-9);
    CHECK(r.norm_after <= 25.0 + 1e-9);
  }
}

TEST_CASE("sgd momentum") {
  std::vector<Tensor> p{parameter(Array(1, 2, {1.0, 2.0}))};
  std::vector<Array> v{Array(1, 2, 0.0)};
  const std::vector<Array> g{Array(1, 2, {0.5, -1.0})};
  sgd_momentum_step(p, v, g, 0.1, 0.0);
  CHECK(p[0].value()[0] == doctest::Approx(0.95));
  CHECK(p[0].value()[1] == doctest::Approx(2.1));

  v = {Array(1, 2, 0.0)};
  sgd_momentum_step(p, v, g, 0.1, 0.9);
  sgd_momentum_step(p, v, g, 0.1, 0.9);
  CHECK(v[0][0] == doctest::Approx(1.9 * 0.5));
  CHECK(v[0][1] == doctest::Approx(1.9 * -1.0));

  const Array before = p[0].value();
  v = {Array(1, 2, 0.0)};
  sgd_momentum_step(p, v, {Array(1, 2, 0.0)}, 0.1, 0.9);
  CHECK(p[0].value() == before);
}

TEST_CASE("training is deterministic") {
  const Dataset d = toy_dataset();
  const EncoderConfig ec = toy_encoder();
  const LossConfig lc;
  const TrainConfig tc = toy_train(15);
  TrainState a = init_train_state(ec, tc), b = init_train_state(ec, tc);
  std::string la, lb;
  train(a, d, ec, lc, tc, [&](const StepRecord& r) { la += to_json_line(r) + "\n"; });
  train(b, d, ec, lc, tc, [&](const StepRecord& r) { lb += to_json_line(r) + "\n"; });
  CHECK(la == lb);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.update_index == 15);
  for (std::size_t k = 0; k < a.params.entries().size(); ++k)
    CHECK(a.params.entries()[k].tensor.value() == b.params.entries()[k].tensor.value());
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const Dataset d = toy_dataset();
  const EncoderConfig ec = toy_encoder();
  TrainConfig tc = toy_train(5);
  tc.lr0 = 0.0;
  TrainState s = init_train_state(ec, tc);
  const EncoderParams start = s.params.clone();
  train(s, d, ec, LossConfig{}, tc);
  for (std::size_t k = 0; k < start.entries().size(); ++k) {
    CHECK(s.params.entries()[k].tensor.value() == start.entries()[k].tensor.value());
    CHECK(s.params.entries()[k].tensor.shape() == start.entries()[k].tensor.shape());
  }
}

TEST_CASE("too few categories surfaces from train_step") {
  const Dataset d = toy_dataset(1, 5);
  const EncoderConfig ec = toy_encoder();
  const TrainConfig tc = toy_train(3);
  TrainState s = init_train_state(ec, tc);
  CHECK_THROWS_AS(train_step(s, d, ec, LossConfig{}, tc), std::invalid_argument);
}

TEST_CASE("toy run reduces the loss") {
  const Dataset d = toy_dataset();
  const EncoderConfig ec = toy_encoder();
  TrainConfig tc = toy_train(200);
  tc.P = 4;
  tc.M = 2;
  TrainState s = init_train_state(ec, tc);
  train(s, d, ec, LossConfig{}, tc);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += s.loss_history[i] / 20.0;
    last += s.loss_history[180 + i] / 20.0;
  }
  CHECK(last < first);
}

TEST_CASE("checkpoint round trip and resume") {
  const Dataset d = toy_dataset();
  const EncoderConfig ec = toy_encoder();
  const TrainConfig tc = toy_train(12);
  const LossConfig lc;
  const std::string path = temp_path("ckpt.txt"), path2 = temp_path("ckpt2.txt");

  TrainState full = init_train_state(ec, tc);
  train(full, d, ec, lc, tc);

  TrainState a = init_train_state(ec, tc);
  for (int i = 0; i < 7; ++i) train_step(a, d, ec, lc, tc);
  save_checkpoint(a, path);
  TrainState b = load_checkpoint(path, ec);
  CHECK(b.update_index == 7);
  CHECK(embed(d.sequences()[0], a.params, ec) == embed(d.sequences()[0], b.params, ec));
  save_checkpoint(b, path2);
  CHECK(slurp(path) == slurp(path2));

  StepRecord first_resumed;
  bool seen = false;
  train(b, d, ec, lc, tc, [&](const StepRecord& r) {
    if (!seen) first_resumed = r;
    seen = true;
  });
  CHECK(first_resumed.update_index == 7);
  CHECK(first_resumed.lr == lr_at(7, tc));
  CHECK(b.loss_history == full.loss_history);
  for (std::size_t k = 0; k < full.params.entries().size(); ++k)
    CHECK(b.params.entries()[k].tensor.value() == full.params.entries()[k].tensor.value());

  EncoderConfig wrong = ec;
  wrong.hidden = 7;
  CHECK_THROWS_WITH_AS(load_checkpoint(path, wrong), doctest::Contains("fw.W_fx"), CheckpointError);
  wrong = ec;
  wrong.embedding = 5;
  CHECK_THROWS_WITH_AS(load_checkpoint(path, wrong), doctest::Contains("fc3.W"), CheckpointError);

  std::string text = slurp(path);
  text.replace(0, std::string("seqmetric-checkpoint 1").size(), "seqmetric-checkpoint 9");
  std::ofstream(path) << text;
  CHECK_THROWS_WITH_AS(load_checkpoint(path, ec), doctest::Contains("version"), CheckpointError);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("non-finite loss aborts with episode ids") {
  Dataset d = toy_dataset();
  std::vector<MotionSequence> seqs = d.sequences();
  for (auto& s : seqs) s.frames(0, 0) = std::nan("");
  const Dataset bad(std::move(seqs));
  const EncoderConfig ec = toy_encoder();
  const TrainConfig tc = toy_train(2);
  TrainState s = init_train_state(ec, tc);
  CHECK_THROWS_WITH_AS(train_step(s, bad, ec, LossConfig{}, tc), doctest::Contains("/"), TrainingError);
}
