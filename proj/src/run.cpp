#include "seqmetric/run.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "seqmetric/preprocess.hpp"
#include "seqmetric/synthetic.hpp"

namespace seqmetric {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

RunConfig profile_defaults(const std::string& name) {
  RunConfig c;
  c.profile = name;
  if (name == "paper") {
    c.encoder.hidden = 128;
    c.encoder.embedding = 128;
    c.train.total_updates = 5000;
    c.train.lr0 = 1e-4;
    c.train.P = 25;
    c.train.M = 5;
  } else if (name == "desk") {
    c.encoder.hidden = 32;
    c.encoder.embedding = 32;
    c.train.total_updates = 1000;
    c.train.lr0 = 0.05;
    c.train.P = 8;
    c.train.M = 3;
  } else {
    throw ConfigError("profile: unknown profile '" + name + "' (paper|desk)");
  }
  c.train.seed = c.seed;
  return c;
}

ojson to_json(const RunConfig& c) {
  ojson j;
  j["profile"] = c.profile;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["data"] = {{"manifest", c.data.manifest},
               {"synthetic", c.data.synthetic},
               {"window_len", c.data.window_len},
               {"train_gap", c.data.train_gap},
               {"test_gap", c.data.test_gap},
               {"min_split_seconds", c.data.min_split_seconds},
               {"target_rate_hz", c.data.target_rate_hz},
               {"remove_root_yaw", c.data.remove_root_yaw},
               {"drop_static_joints", c.data.drop_static_joints}};
  const EncoderConfig& e = c.encoder;
  j["encoder"] = {{"input_dim", e.input_dim},
                  {"hidden", e.hidden},
                  {"embedding", e.embedding},
                  {"attention_width", e.attention_width},
                  {"head_width", e.head_width},
                  {"dropout_rate", e.dropout_rate},
                  {"attention_mode", to_string(e.attention_mode)},
                  {"layer_norm", e.layer_norm_enabled},
                  {"attention", e.attention_enabled},
                  {"ln_literal_init", e.ln_literal_init},
                  {"ln_eps", e.ln_eps},
                  {"bn_eps", e.bn_eps},
                  {"bn_momentum", e.bn_momentum}};
  const TrainConfig& t = c.train;
  j["train"] = {{"total_updates", t.total_updates},
                {"lr0", t.lr0},
                {"decay_rate", t.decay_rate},
                {"decay_every", t.decay_every},
                {"momentum", t.momentum},
                {"clip_norm", t.clip_norm},
                {"elementwise_clip", t.elementwise_clip},
                {"P", t.P},
                {"M", t.M},
                {"noise_sigma_max", t.noise_sigma_max},
                {"noise_ramp_fraction", t.noise_ramp_fraction},
                {"checkpoint_every", t.checkpoint_every}};
  const LossConfig& l = c.loss;
  j["loss"] = {{"kind", to_string(l.kind)},
               {"margin", l.margin ? ojson(*l.margin) : ojson(nullptr)},
               {"kernel",
                {{"family", to_string(l.kernel.family)},
                 {"bandwidths", l.kernel.bandwidths},
                 {"degree", l.kernel.degree},
                 {"offset", l.kernel.offset}}},
               {"squared_mmd", l.squared_mmd},
               {"unbiased_mmd", l.unbiased_mmd},
               {"positive_in_denominator", l.positive_in_denominator}};
  j["eval"] = {{"tpr_levels", c.eval.tpr_levels},
               {"metrics", c.eval.metrics},
               {"dtw_cost", to_string(c.eval.dtw_cost)}};
  return j;
}

namespace {

std::string kind_name(const nlohmann::json& v) {
  if (v.is_null()) return "null";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_unsigned()) return "nonnegative integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  return "object";
}

bool compatible(const ojson& slot, const nlohmann::json& v, const std::string& field) {
  if (field == "loss.margin") return v.is_null() || v.is_number();
  if (slot.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  if (slot.is_number_integer()) return v.is_number_integer();
  if (slot.is_number()) return v.is_number();
  if (slot.is_boolean()) return v.is_boolean();
  if (slot.is_string()) return v.is_string();
  if (slot.is_array()) return v.is_array();
  return false;
}

void overlay(ojson& base, const nlohmann::json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + ": expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string field = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(field + ": unknown field");
    ojson& slot = base[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), field);
      continue;
    }
    if (!compatible(slot, it.value(), field)) {
      throw ConfigError(field + ": expected " + kind_name(slot) + ", got " + kind_name(it.value()));
    }
    slot = it.value();
  }
}

template <class T>
T get(const ojson& j, const std::string& section, const std::string& key) {
  const ojson& v = section.empty() ? j.at(key) : j.at(section).at(key);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError((section.empty() ? key : section + "." + key) + ": " + e.what());
  }
}

template <class F>
auto field(const std::string& name, F f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j, const std::string& fallback_profile) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  std::string profile = fallback_profile;
  if (j.contains("profile")) {
    if (!j.at("profile").is_string()) throw ConfigError("profile: expected string");
    profile = j.at("profile").get<std::string>();
  }
  ojson m = to_json(profile_defaults(profile));
  overlay(m, j, "");

  RunConfig c = profile_defaults(profile);
  c.seed = get<std::uint64_t>(m, "", "seed");
  c.out = get<std::string>(m, "", "out");

  DataConfig& d = c.data;
  d.manifest = get<std::string>(m, "data", "manifest");
  d.synthetic = get<std::string>(m, "data", "synthetic");
  d.window_len = get<std::size_t>(m, "data", "window_len");
  d.train_gap = get<std::size_t>(m, "data", "train_gap");
  d.test_gap = get<std::size_t>(m, "data", "test_gap");
  d.min_split_seconds = get<double>(m, "data", "min_split_seconds");
  d.target_rate_hz = get<double>(m, "data", "target_rate_hz");
  d.remove_root_yaw = get<bool>(m, "data", "remove_root_yaw");
  d.drop_static_joints = get<bool>(m, "data", "drop_static_joints");

  EncoderConfig& e = c.encoder;
  e.input_dim = get<std::size_t>(m, "encoder", "input_dim");
  e.hidden = get<std::size_t>(m, "encoder", "hidden");
  e.embedding = get<std::size_t>(m, "encoder", "embedding");
  e.attention_width = get<std::size_t>(m, "encoder", "attention_width");
  e.head_width = get<std::size_t>(m, "encoder", "head_width");
  e.dropout_rate = get<double>(m, "encoder", "dropout_rate");
  const auto mode = get<std::string>(m, "encoder", "attention_mode");
  e.attention_mode = field("encoder.attention_mode", [&] { return attention_mode_from_string(mode); });
  e.layer_norm_enabled = get<bool>(m, "encoder", "layer_norm");
  e.attention_enabled = get<bool>(m, "encoder", "attention");
  e.ln_literal_init = get<bool>(m, "encoder", "ln_literal_init");
  e.ln_eps = get<double>(m, "encoder", "ln_eps");
  e.bn_eps = get<double>(m, "encoder", "bn_eps");
  e.bn_momentum = get<double>(m, "encoder", "bn_momentum");

  TrainConfig& t = c.train;
  t.total_updates = get<std::size_t>(m, "train", "total_updates");
  t.lr0 = get<double>(m, "train", "lr0");
  t.decay_rate = get<double>(m, "train", "decay_rate");
  t.decay_every = get<std::size_t>(m, "train", "decay_every");
  t.momentum = get<double>(m, "train", "momentum");
  t.clip_norm = get<double>(m, "train", "clip_norm");
  t.elementwise_clip = get<bool>(m, "train", "elementwise_clip");
  t.P = get<std::size_t>(m, "train", "P");
  t.M = get<std::size_t>(m, "train", "M");
  t.noise_sigma_max = get<double>(m, "train", "noise_sigma_max");
  t.noise_ramp_fraction = get<double>(m, "train", "noise_ramp_fraction");
  t.checkpoint_every = get<std::size_t>(m, "train", "checkpoint_every");
  t.seed = c.seed;

  LossConfig& l = c.loss;
  const auto kind = get<std::string>(m, "loss", "kind");
  l.kind = field("loss.kind", [&] { return loss_kind_from_string(kind); });
  l.margin.reset();
  if (!m["loss"]["margin"].is_null()) l.margin = get<double>(m, "loss", "margin");
  const ojson& k = m["loss"]["kernel"];
  const auto family = get<std::string>(k, "", "family");
  l.kernel.family = field("loss.kernel.family", [&] { return kernel_family_from_string(family); });
  l.kernel.bandwidths = get<std::vector<double>>(k, "", "bandwidths");
  l.kernel.degree = get<int>(k, "", "degree");
  l.kernel.offset = get<double>(k, "", "offset");
  l.squared_mmd = get<bool>(m, "loss", "squared_mmd");
  l.unbiased_mmd = get<bool>(m, "loss", "unbiased_mmd");
  l.positive_in_denominator = get<bool>(m, "loss", "positive_in_denominator");

  c.eval.tpr_levels = get<std::vector<double>>(m, "eval", "tpr_levels");
  c.eval.metrics = get<std::vector<std::string>>(m, "eval", "metrics");
  const auto cost = get<std::string>(m, "eval", "dtw_cost");
  c.eval.dtw_cost = field("eval.dtw_cost", [&] { return local_cost_from_string(cost); });
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (profile != "paper" && profile != "desk") throw ConfigError("profile: must be paper or desk");
  if (train.seed != seed) throw ConfigError("train.seed: must equal seed");
  if (!data.manifest.empty() && !data.synthetic.empty()) {
    throw ConfigError("data: manifest and synthetic are mutually exclusive");
  }
  if (data.window_len == 0) throw ConfigError("data.window_len: must be >= 1");
  if (!(data.min_split_seconds >= 0.0)) throw ConfigError("data.min_split_seconds: must be nonnegative");
  if (!(data.target_rate_hz > 0.0)) throw ConfigError("data.target_rate_hz: must be positive");
  EncoderConfig e = encoder;
  if (e.input_dim == 0) e.input_dim = 1;
  field("encoder", [&] { e.validate(); return 0; });
  field("train", [&] { train.validate(); return 0; });
  if (!(train.lr0 > 0.0)) throw ConfigError("train.lr0: must be positive");
  field("loss", [&] { loss.validate(); return 0; });
  if (eval.tpr_levels.empty()) throw ConfigError("eval.tpr_levels: must not be empty");
  for (double t : eval.tpr_levels) {
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("eval.tpr_levels: every level must be in (0,1]");
  }
  if (eval.metrics.empty()) throw ConfigError("eval.metrics: must not be empty");
  for (const auto& name : eval.metrics) field("eval.metrics", [&] { return metric_from_string(name); });
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

RunConfig load_run_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

void write_run_config(const RunConfig& config, const std::string& path) {
  write_file(path, to_json(config).dump(2) + "\n");
}

std::string split_hash(const DataSplit& split) {
  // FNV-1a, 64 bit.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto* part : {&split.train, &split.test}) {
    const std::uint64_t count = part->size();
    mix(&count, sizeof count);
    for (const auto& s : *part) {
      mix(s.source_id.data(), s.source_id.size() + 1);
      mix(s.category.data(), s.category.size() + 1);
      const std::uint64_t shape[2] = {s.length(), s.dim()};
      mix(shape, sizeof shape);
      for (double v : s.frames.values()) mix(&v, sizeof v);
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

DataSplit load_data(const RunConfig& config) {
  DataSplit out;
  const DataConfig& d = config.data;
  if (d.manifest.empty() == d.synthetic.empty()) {
    throw ConfigError("data: exactly one of data.manifest or data.synthetic must be set");
  }
  if (!d.synthetic.empty()) {
    GeneratedSplit g = generate_suite(load_synthetic_suite(d.synthetic), config.seed);
    out.train = std::move(g.train);
    out.test = std::move(g.test);
    out.notes.push_back("synthetic suite " + d.synthetic);
  } else {
    ManifestLoadOptions opts;
    opts.target_rate_hz = d.target_rate_hz;
    opts.remove_root_yaw = d.remove_root_yaw;
    auto train = load_manifest_sequences(d.manifest, "train", opts);
    auto test = load_manifest_sequences(d.manifest, "test", opts);
    const bool expmap = !train.empty() && std::all_of(train.begin(), train.end(), [](const MotionSequence& s) {
      return s.kind == FeatureKind::ExpMap;
    });
    if (d.drop_static_joints && expmap) {
      const auto joints = find_static_joints(train);
      if (!joints.empty()) {
        drop_joints(train, joints);
        drop_joints(test, joints);
      }
      out.notes.push_back("dropped " + std::to_string(joints.size()) + " static joints");
    }
    for (const auto& s : train) {
      for (auto& w : window(s, d.window_len, d.train_gap, WindowMode::Train, d.min_split_seconds))
        out.train.push_back(std::move(w));
    }
    for (const auto& s : test) {
      for (auto& w : window(s, d.window_len, d.test_gap, WindowMode::Test, d.min_split_seconds))
        out.test.push_back(std::move(w));
    }
    out.notes.push_back("manifest " + d.manifest);
  }
  if (out.train.empty()) throw std::runtime_error("data: train split is empty");
  if (out.test.empty()) throw std::runtime_error("data: test split is empty");
  const std::size_t dim = out.train.front().dim();
  for (const auto* part : {&out.train, &out.test}) {
    for (const auto& s : *part) {
      if (s.dim() != dim) {
        throw std::runtime_error("data: sequence '" + s.source_id + "' has dimension " + std::to_string(s.dim()) +
                                 ", expected " + std::to_string(dim));
      }
    }
  }
  out.hash = split_hash(out);
  return out;
}

EncoderConfig resolved_encoder(const RunConfig& config, const DataSplit& data) {
  EncoderConfig e = config.encoder;
  const std::size_t dim = data.train.front().dim();
  if (e.input_dim == 0) e.input_dim = dim;
  if (e.input_dim != dim) {
    throw ConfigError("encoder.input_dim: config says " + std::to_string(e.input_dim) + " but the data has " +
                      std::to_string(dim));
  }
  return e;
}

std::string prepare_run_dir(const RunConfig& config, const std::string& out_dir) {
  config.validate();
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / "config.json").string();
  write_run_config(config, path);
  return path;
}

TrainArtifacts run_training(const RunConfig& config, const DataSplit& data, const std::string& out_dir,
                            TrainState* final_state, const std::function<void(const StepRecord&)>& on_step) {
  const EncoderConfig enc = resolved_encoder(config, data);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  TrainArtifacts a;
  a.config_path = (dir / "config.json").string();
  a.log_path = (dir / "train_log.jsonl").string();
  a.checkpoint_path = (dir / "checkpoint.txt").string();

  const Dataset train_set(data.train);
  TrainState state = init_train_state(enc, config.train);
  std::ofstream log(a.log_path, std::ios::binary);
  if (!log) throw std::runtime_error("cannot write '" + a.log_path + "'");
  train(state, train_set, enc, config.loss, config.train, [&](const StepRecord& r) {
    log << to_json_line(r) << '\n';
    const std::size_t every = config.train.checkpoint_every;
    if (every > 0 && state.update_index % every == 0 && state.update_index < config.train.total_updates) {
      save_checkpoint(state, (dir / ("checkpoint-" + std::to_string(state.update_index) + ".txt")).string());
    }
    if (on_step) on_step(r);
  });
  log.close();
  save_checkpoint(state, a.checkpoint_path);
  if (final_state) *final_state = std::move(state);
  return a;
}

std::vector<EvalReport> run_evaluation(const RunConfig& config, const DataSplit& data, const EncoderParams* params,
                                       const std::string& out_dir) {
  const EncoderConfig enc = resolved_encoder(config, data);
  std::vector<std::string> labels;
  for (const auto& s : data.test) labels.push_back(s.category);
  std::vector<EvalReport> reports;
  for (const auto& name : config.eval.metrics) {
    const Metric metric = metric_from_string(name);
    std::optional<Array> emb;
    DistanceMatrix dist;
    if (metric == Metric::Learned) {
      if (params == nullptr) throw std::invalid_argument("eval: the learned metric needs a checkpoint");
      emb = embed_all(data.test, *params, enc);
      dist = embedding_distances(*emb);
    } else {
      dist = pairwise_distances(data.test, metric, nullptr, nullptr, DistanceOptions{config.eval.dtw_cost});
    }
    EvalReport r = evaluate(dist, labels, config.eval.tpr_levels, emb, config.seed);
    r.notes.push_back("split " + data.hash);
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      write_file((fs::path(out_dir) / ("eval_" + name + ".json")).string(), r.to_json().dump(2) + "\n");
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace seqmetric
