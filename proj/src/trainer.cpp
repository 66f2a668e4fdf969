#include "seqmetric/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace seqmetric {

void TrainConfig::validate() const {
  if (total_updates == 0) throw std::invalid_argument("train: total_updates must be >= 1");
  if (!(lr0 >= 0.0)) throw std::invalid_argument("train: lr0 must be nonnegative");
  if (!(decay_rate > 0.0)) throw std::invalid_argument("train: decay_rate must be positive");
  if (decay_every == 0) throw std::invalid_argument("train: decay_every must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must be in [0,1)");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("train: clip_norm must be positive");
  if (P == 0) throw std::invalid_argument("train: P must be >= 1");
  if (M == 0) throw std::invalid_argument("train: M must be >= 1");
  if (noise_sigma_max < 0.0) throw std::invalid_argument("train: noise_sigma_max must be nonnegative");
  if (!(noise_ramp_fraction >= 0.0 && noise_ramp_fraction <= 1.0))
    throw std::invalid_argument("train: noise_ramp_fraction must be in [0,1]");
}

double lr_at(std::size_t update_index, const TrainConfig& config) {
  const auto k = static_cast<double>(update_index / config.decay_every);
  return config.lr0 * std::pow(config.decay_rate, k);
}

double global_norm(const std::vector<Array>& grads) {
  // Scaled by the largest magnitude so huge entries do not overflow the sum of squares.
  double big = 0.0;
  for (const Array& g : grads)
    for (double v : g.values()) big = std::max(big, std::abs(v));
  if (big == 0.0 || !std::isfinite(big)) return big;
  double sq = 0.0;
  for (const Array& g : grads)
    for (double v : g.values()) sq += (v / big) * (v / big);
  return big * std::sqrt(sq);
}

namespace {

void require_finite(const std::vector<Array>& grads, const std::vector<std::string>& names) {
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!grads[k].all_finite()) {
      throw std::runtime_error("non-finite gradient in parameter '" + (k < names.size() ? names[k] : "?") + "'");
    }
  }
}

}  // namespace

ClipResult clip_global(std::vector<Array>& grads, const std::vector<std::string>& names, double clip_norm) {
  require_finite(grads, names);
  ClipResult r;
  r.norm_before = global_norm(grads);
  if (r.norm_before > clip_norm) {
    const double s = clip_norm / r.norm_before;
    for (Array& g : grads)
      for (double& v : g.values()) v *= s;
  }
  r.norm_after = global_norm(grads);
  return r;
}

ClipResult clip_elementwise(std::vector<Array>& grads, const std::vector<std::string>& names, double clip_value) {
  require_finite(grads, names);
  ClipResult r;
  r.norm_before = global_norm(grads);
  for (Array& g : grads)
    for (double& v : g.values()) v = std::clamp(v, -clip_value, clip_value);
  r.norm_after = global_norm(grads);
  return r;
}

void sgd_momentum_step(std::vector<Tensor>& params, std::vector<Array>& velocity, const std::vector<Array>& grads,
                       double lr, double momentum) {
  if (params.size() != velocity.size() || params.size() != grads.size()) {
    throw std::invalid_argument("sgd_momentum_step: params, velocity and grads differ in count");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Array& p = params[k].mutable_value();
    Array& v = velocity[k];
    const Array& g = grads[k];
    if (p.shape() != v.shape()) throw ShapeError("sgd_momentum_step velocity", p.shape(), v.shape());
    if (p.shape() != g.shape()) throw ShapeError("sgd_momentum_step grad", p.shape(), g.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
}

TrainState init_train_state(const EncoderConfig& encoder, const TrainConfig& train) {
  encoder.validate();
  train.validate();
  TrainState s;
  s.rng.seed(train.seed);
  s.params = init_params(encoder, s.rng);
  for (const auto& e : s.params.entries()) s.velocity.emplace_back(e.tensor.rows(), e.tensor.cols(), 0.0);
  return s;
}

std::string to_json_line(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["update"] = r.update_index;
  j["lr"] = r.lr;
  j["loss"] = r.loss;
  j["grad_norm"] = r.grad_norm;
  j["clipped_norm"] = r.clipped_norm;
  j["noise_std"] = r.noise_std;
  j["positive"] = r.positive_category;
  return j.dump();
}

StepRecord train_step(TrainState& state, const Dataset& data, const EncoderConfig& encoder, const LossConfig& loss,
                      const TrainConfig& train) {
  const Episode ep = sample_episode(data, train.P, train.M, state.rng);
  const std::vector<std::size_t> order = ep.flatten();
  const NoiseSchedule schedule = train.noise_schedule();
  StepRecord rec;
  rec.update_index = state.update_index;
  rec.noise_std = schedule.std_at(state.update_index);
  rec.positive_category = ep.positive_category;

  std::vector<MotionSequence> noisy;
  noisy.reserve(order.size());
  for (std::size_t i : order) noisy.push_back(add_curriculum_noise(data.sequences()[i], state.update_index, schedule, state.rng));
  std::vector<const MotionSequence*> ptrs;
  for (const auto& s : noisy) ptrs.push_back(&s);
  const Array mask = make_dropout_mask(encoder, state.rng);

  std::vector<Tensor> params = state.params.tensors();
  std::vector<Array> grads;
  std::vector<BatchStats> stats;
  {
    auto abort = [&](const std::string& why) {
      std::string ids;
      for (const auto& s : noisy) ids += (ids.empty() ? "" : ", ") + s.source_id;
      throw TrainingError(why + " at update " + std::to_string(state.update_index) + "; episode: " + ids);
    };
    Tape tape;
    TapeScope scope(tape);
    Tensor value;
    try {
      const EmbedOutput out = embed_batch(ptrs, state.params, encoder, EncodeMode::Train, &mask);
      value = episode_loss(out.embeddings, train.P, train.M, loss);
      stats = out.batch_stats;
    } catch (const DomainError& e) {
      abort(std::string("numerical failure (") + e.what() + ")");
    }
    rec.loss = value.item();
    if (!std::isfinite(rec.loss)) abort("non-finite loss");
    tape.backward(value);
  }
  std::vector<std::string> names;
  for (auto& t : params) {
    grads.push_back(t.grad());
    t.zero_grad();
  }
  for (const auto& e : state.params.entries()) names.push_back(e.name);

  const ClipResult clip = train.elementwise_clip ? clip_elementwise(grads, names, train.clip_norm)
                                                 : clip_global(grads, names, train.clip_norm);
  rec.grad_norm = clip.norm_before;
  rec.clipped_norm = clip.norm_after;
  rec.lr = lr_at(state.update_index, train);
  sgd_momentum_step(params, state.velocity, grads, rec.lr, train.momentum);
  update_running_stats(state.params, stats, encoder.bn_momentum);
  state.loss_history.push_back(rec.loss);
  ++state.update_index;
  return rec;
}

void train(TrainState& state, const Dataset& data, const EncoderConfig& encoder, const LossConfig& loss,
           const TrainConfig& train, const std::function<void(const StepRecord&)>& on_step) {
  while (state.update_index < train.total_updates) {
    const StepRecord r = train_step(state, data, encoder, loss, train);
    if (on_step) on_step(r);
  }
}

// Text format, one token group per line:
//   seqmetric-checkpoint <version>
//   update_index <u>
//   rng <engine state>
//   losses <count> <values...>
//   param <name> <rows> <cols> <values...>      (one line each, layout order)
//   velocity <name> <rows> <cols> <values...>
//   running <layer> <mean|var> <rows> <cols> <values...>
//   end
namespace {

constexpr int kCheckpointVersion = 1;

void put(std::ostream& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
}

void put_array(std::ostream& out, const Array& a) {
  out << ' ' << a.rows() << ' ' << a.cols();
  for (double v : a.values()) put(out, v);
  out << '\n';
}

double get(std::istream& in, const std::string& what) {
  std::string tok;
  if (!(in >> tok)) throw CheckpointError("checkpoint: truncated while reading " + what);
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw CheckpointError("checkpoint: bad number '" + tok + "' in " + what);
  return v;
}

Array get_array(std::istream& in, const std::string& what, const Shape* expect) {
  std::size_t rows = 0, cols = 0;
  if (!(in >> rows >> cols)) throw CheckpointError("checkpoint: missing shape for " + what);
  if (expect != nullptr && (Shape{rows, cols} != *expect)) {
    throw CheckpointError("checkpoint: shape mismatch for '" + what + "': file has " + shape_str({rows, cols}) +
                          ", config expects " + shape_str(*expect));
  }
  Array a(rows, cols);
  for (double& v : a.values()) v = get(in, what);
  return a;
}

void expect_word(std::istream& in, const std::string& word) {
  std::string tok;
  if (!(in >> tok) || tok != word) throw CheckpointError("checkpoint: expected '" + word + "', found '" + tok + "'");
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << "seqmetric-checkpoint " << kCheckpointVersion << '\n';
  out << "update_index " << state.update_index << '\n';
  out << "rng " << state.rng << '\n';
  out << "losses " << state.loss_history.size();
  for (double v : state.loss_history) put(out, v);
  out << '\n';
  for (const auto& e : state.params.entries()) {
    out << "param " << e.name;
    put_array(out, e.tensor.value());
  }
  for (std::size_t k = 0; k < state.velocity.size(); ++k) {
    out << "velocity " << state.params.entries()[k].name;
    put_array(out, state.velocity[k]);
  }
  for (const auto& [layer, mv] : state.params.running) {
    out << "running " << layer << " mean";
    put_array(out, mv.first);
    out << "running " << layer << " var";
    put_array(out, mv.second);
  }
  out << "end\n";
  if (!out) throw CheckpointError("write failed for checkpoint '" + path + "'");
}

TrainState load_checkpoint(const std::string& path, const EncoderConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  expect_word(in, "seqmetric-checkpoint");
  int version = 0;
  in >> version;
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint '" + path + "': unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  TrainState s;
  expect_word(in, "update_index");
  in >> s.update_index;
  expect_word(in, "rng");
  in >> s.rng;
  if (!in) throw CheckpointError("checkpoint: unreadable rng state");
  expect_word(in, "losses");
  std::size_t nloss = 0;
  in >> nloss;
  for (std::size_t i = 0; i < nloss; ++i) s.loss_history.push_back(get(in, "losses"));

  const auto layout = EncoderParams::layout(config);
  for (const auto& [name, shape] : layout) {
    expect_word(in, "param");
    std::string got;
    in >> got;
    if (got != name) throw CheckpointError("checkpoint: expected parameter '" + name + "', found '" + got + "'");
    s.params.add(name, get_array(in, name, &shape));
  }
  for (const auto& [name, shape] : layout) {
    expect_word(in, "velocity");
    std::string got;
    in >> got;
    if (got != name) throw CheckpointError("checkpoint: expected velocity '" + name + "', found '" + got + "'");
    s.velocity.push_back(get_array(in, "velocity " + name, &shape));
  }
  const std::size_t widths[] = {config.head_width, config.head_width, config.embedding};
  for (int k = 0; k < 3; ++k) {
    const std::string layer = "bn" + std::to_string(k + 1);
    const Shape shape{1, widths[k]};
    std::pair<Array, Array> mv;
    for (const char* which : {"mean", "var"}) {
      expect_word(in, "running");
      expect_word(in, layer);
      expect_word(in, which);
      Array a = get_array(in, layer + ".running_" + which, &shape);
      (std::string(which) == "mean" ? mv.first : mv.second) = std::move(a);
    }
    s.params.running[layer] = std::move(mv);
  }
  expect_word(in, "end");
  s.params.validate(config);
  return s;
}

}  // namespace seqmetric
