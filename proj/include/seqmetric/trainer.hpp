#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "seqmetric/dataset.hpp"
#include "seqmetric/encoder.hpp"
#include "seqmetric/losses.hpp"
#include "seqmetric/preprocess.hpp"

namespace seqmetric {

struct TrainConfig {
  std::size_t total_updates = 5000;
  double lr0 = 1e-4;
  double decay_rate = 0.96;
  std::size_t decay_every = 50;
  double momentum = 0.9;
  double clip_norm = 25.0;
  /// Clamp each gradient entry to [-clip_norm, clip_norm] instead of rescaling by the global norm.
  bool elementwise_clip = false;
  std::size_t P = 25;
  std::size_t M = 5;
  double noise_sigma_max = 0.05;
  double noise_ramp_fraction = 0.8;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // 0 disables intermediate checkpoints

  void validate() const;
  NoiseSchedule noise_schedule() const { return {noise_sigma_max, total_updates, noise_ramp_fraction}; }
};

double lr_at(std::size_t update_index, const TrainConfig& config);

struct ClipResult {
  double norm_before = 0.0;
  double norm_after = 0.0;
};

double global_norm(const std::vector<Array>& grads);

/// Scales every gradient by clip_norm / g when the joint norm g exceeds clip_norm.
/// Throws std::runtime_error naming the first parameter holding a non-finite entry.
ClipResult clip_global(std::vector<Array>& grads, const std::vector<std::string>& names, double clip_norm);
ClipResult clip_elementwise(std::vector<Array>& grads, const std::vector<std::string>& names, double clip_value);

/// velocity <- momentum * velocity + grad; param <- param - lr * velocity.
void sgd_momentum_step(std::vector<Tensor>& params, std::vector<Array>& velocity, const std::vector<Array>& grads,
                       double lr, double momentum);

struct TrainState {
  EncoderParams params;
  std::vector<Array> velocity;
  std::size_t update_index = 0;
  std::mt19937_64 rng;
  std::vector<double> loss_history;
};

TrainState init_train_state(const EncoderConfig& encoder, const TrainConfig& train);

/// Raised for a non-finite loss; the message lists the episode's source ids.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepRecord {
  std::size_t update_index = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double clipped_norm = 0.0;
  double noise_std = 0.0;
  std::string positive_category;
};

std::string to_json_line(const StepRecord& r);

StepRecord train_step(TrainState& state, const Dataset& data, const EncoderConfig& encoder, const LossConfig& loss,
                      const TrainConfig& train);

/// Runs updates from state.update_index up to train.total_updates.
void train(TrainState& state, const Dataset& data, const EncoderConfig& encoder, const LossConfig& loss,
           const TrainConfig& train, const std::function<void(const StepRecord&)>& on_step = {});

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const TrainState& state, const std::string& path);
/// Validates the format version and every tensor shape against config.
TrainState load_checkpoint(const std::string& path, const EncoderConfig& config);

}  // namespace seqmetric
