#pragma once

// Run configuration (profiles + overrides) and the train / eval pipelines
// shared by the command-line tool and the acceptance harness.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqmetric/encoder.hpp"
#include "seqmetric/evaluator.hpp"
#include "seqmetric/losses.hpp"
#include "seqmetric/trainer.hpp"

namespace seqmetric {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string manifest;   // JSON-lines manifest with a split field
  std::string synthetic;  // synthetic suite file; exclusive with manifest
  // Windowing and resampling apply to manifest data only.
  std::size_t window_len = 90;
  std::size_t train_gap = 30;
  std::size_t test_gap = 30;
  double min_split_seconds = 5.0;
  double target_rate_hz = 30.0;
  bool remove_root_yaw = false;
  bool drop_static_joints = true;
};

struct EvalConfig {
  std::vector<double> tpr_levels{0.90, 0.80, 0.70};
  std::vector<std::string> metrics{"learned", "dtw"};
  LocalCost dtw_cost = LocalCost::Euclidean;
};

struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 7;
  std::string out = "run";
  DataConfig data;
  EncoderConfig encoder;  // input_dim 0 means "from the data"
  TrainConfig train;      // train.seed mirrors seed
  LossConfig loss;
  EvalConfig eval;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// "paper" or "desk"; anything else is a ConfigError.
RunConfig profile_defaults(const std::string& name);

nlohmann::ordered_json to_json(const RunConfig& config);
/// Overlays j onto the defaults of j["profile"] (or fallback_profile).
/// Unknown or mistyped fields raise ConfigError with the dotted field name.
RunConfig run_config_from_json(const nlohmann::json& j, const std::string& fallback_profile = "desk");
RunConfig load_run_config(const std::string& path);
void write_run_config(const RunConfig& config, const std::string& path);

struct DataSplit {
  std::vector<MotionSequence> train;
  std::vector<MotionSequence> test;
  std::vector<std::string> notes;
  std::string hash;  // 16 hex digits over ids, labels and frames of both splits
};

DataSplit load_data(const RunConfig& config);
std::string split_hash(const DataSplit& split);

/// Encoder config with input_dim taken from the data when it was 0.
EncoderConfig resolved_encoder(const RunConfig& config, const DataSplit& data);

struct TrainArtifacts {
  std::string config_path;
  std::string log_path;
  std::string checkpoint_path;
};

/// Creates out_dir and writes config.json there; call before loading data.
std::string prepare_run_dir(const RunConfig& config, const std::string& out_dir);

/// Writes train_log.jsonl and checkpoint.txt (plus checkpoint-<u>.txt every
/// train.checkpoint_every updates) into out_dir.
TrainArtifacts run_training(const RunConfig& config, const DataSplit& data, const std::string& out_dir,
                            TrainState* final_state = nullptr,
                            const std::function<void(const StepRecord&)>& on_step = {});

/// Evaluates every configured metric on the test split and writes
/// eval_<metric>.json into out_dir (when non-empty).
std::vector<EvalReport> run_evaluation(const RunConfig& config, const DataSplit& data, const EncoderParams* params,
                                       const std::string& out_dir);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& text);

}  // namespace seqmetric
