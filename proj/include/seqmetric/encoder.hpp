#pragma once

// Bidirectional layer-normalized LSTM, attention pooling and an FC head that
// maps a variable-length sequence to a unit-norm embedding.

#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "seqmetric/motion.hpp"
#include "seqmetric/tensor.hpp"

namespace seqmetric {

enum class AttentionMode {
  Softmax,      // A = softmax(r)
  PaperNeglog,  // A = -log softmax(r), nonnegative and not normalized
};

std::string to_string(AttentionMode m);
AttentionMode attention_mode_from_string(const std::string& name);

struct EncoderConfig {
  std::size_t input_dim = 0;
  std::size_t hidden = 128;     // H, per direction
  std::size_t embedding = 128;  // e
  std::size_t attention_width = 10;
  std::size_t head_width = 320;
  double dropout_rate = 0.5;
  AttentionMode attention_mode = AttentionMode::Softmax;
  bool layer_norm_enabled = true;
  bool attention_enabled = true;
  /// Layer-norm gain 0 and bias 1 at init instead of 1 and 0.
  bool ln_literal_init = false;
  double ln_eps = 1e-5;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;

  void validate() const;
};

/// Trainable tensors by name plus batch-norm running statistics.
/// Tensor order is fixed by the config and is the checkpoint order.
class EncoderParams {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  void add(std::string name, Array value);

  /// Running mean and variance per batch-norm layer ("bn1", "bn2", "bn3").
  std::map<std::string, std::pair<Array, Array>> running;

  /// Expected (name, shape) list for a config.
  static std::vector<std::pair<std::string, Shape>> layout(const EncoderConfig& config);
  /// Throws ShapeError naming the first entry that differs from layout(config).
  void validate(const EncoderConfig& config) const;
  std::size_t parameter_count() const;
  /// Deep copy with fresh tensors.
  EncoderParams clone() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

EncoderParams init_params(const EncoderConfig& config, std::mt19937_64& rng);

/// Orthogonal n x n matrix from the QR factorization of a Gaussian draw.
Array random_orthogonal(std::size_t n, std::mt19937_64& rng);

/// Weights of one LSTM direction with gates concatenated as [f, i, o, c].
struct LstmWeights {
  Tensor wx;  // d x 4H
  Tensor wh;  // H x 4H
  Tensor b;   // 1 x 4H
  Tensor gamma, beta;  // 1 x H
};

/// direction is "fw" or "bw".
LstmWeights lstm_weights(const EncoderParams& params, const std::string& direction);

struct LstmState {
  Tensor h;  // B x H
  Tensor c;  // B x H
};

/// One layer-normalized LSTM step for a batch of B rows.
LstmState lnlstm_step(const Tensor& x, const LstmState& prev, const LstmWeights& w, const EncoderConfig& config);

/// Padded batch of sequences, time-major.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;               // T = longest length
  std::vector<std::size_t> lengths;    // per item
  std::vector<Tensor> frames;          // T entries of B x d, zero past each length
  Array mask;                          // B x T, 1 on valid frames

  static SequenceBatch from(std::span<const MotionSequence* const> seqs);
};

/// Stacked states, (T*B) x 2H with row t*B + b = [forward_t, backward_t] of item b.
/// The backward direction starts at each item's own last frame.
Tensor bilstm(const SequenceBatch& batch, const EncoderParams& params, const EncoderConfig& config);

/// Convenience: n x 2H state matrix of one sequence.
Tensor bilstm(const MotionSequence& seq, const EncoderParams& params, const EncoderConfig& config);

struct Attention {
  Tensor pooled;  // B x 2H
  Tensor scores;  // B x T, zero past each length
};

Attention attend(const Tensor& stacked, const SequenceBatch& batch, const EncoderParams& params,
                 const EncoderConfig& config);

enum class EncodeMode { Train, Eval };

struct BatchStats {
  std::string layer;
  Array mean, var;
};

struct EmbedOutput {
  Tensor embeddings;  // B x e, unit rows
  Tensor scores;      // B x T attention
  std::vector<BatchStats> batch_stats;  // filled in train mode
};

/// Train mode normalizes with batch statistics and applies dropout_mask
/// (1 x head_width of 0/1 entries; may be null for no dropout).
EmbedOutput embed_batch(std::span<const MotionSequence* const> seqs, const EncoderParams& params,
                        const EncoderConfig& config, EncodeMode mode, const Array* dropout_mask = nullptr);

Array make_dropout_mask(const EncoderConfig& config, std::mt19937_64& rng);

/// running <- momentum * running + (1 - momentum) * batch.
void update_running_stats(EncoderParams& params, const std::vector<BatchStats>& stats, double momentum);

/// Eval-mode embedding of one sequence (1 x e).
Array embed(const MotionSequence& seq, const EncoderParams& params, const EncoderConfig& config);

/// Eval-mode embeddings, N x e, computed in length-sorted chunks.
Array embed_all(const std::vector<MotionSequence>& seqs, const EncoderParams& params, const EncoderConfig& config,
                std::size_t chunk = 64);

/// Eval-mode attention scores per sequence (each of its own length).
std::vector<std::vector<double>> attention_scores(const std::vector<MotionSequence>& seqs, const EncoderParams& params,
                                                  const EncoderConfig& config, std::size_t chunk = 64);

}  // namespace seqmetric
