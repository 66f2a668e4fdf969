#include "seqmetric/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace seqmetric {

std::string to_string(AttentionMode m) {
  return m == AttentionMode::Softmax ? "softmax" : "paper_neglog";
}

AttentionMode attention_mode_from_string(const std::string& name) {
  if (name == "softmax") return AttentionMode::Softmax;
  if (name == "paper_neglog") return AttentionMode::PaperNeglog;
  throw std::invalid_argument("unknown attention mode '" + name + "' (softmax|paper_neglog)");
}

void EncoderConfig::validate() const {
  if (input_dim == 0) throw std::invalid_argument("encoder: input_dim must be >= 1");
  if (hidden == 0) throw std::invalid_argument("encoder: hidden must be >= 1");
  if (embedding == 0) throw std::invalid_argument("encoder: embedding must be >= 1");
  if (attention_width == 0) throw std::invalid_argument("encoder: attention_width must be >= 1");
  if (head_width == 0) throw std::invalid_argument("encoder: head_width must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("encoder: dropout_rate must be in [0,1)");
  if (!(ln_eps > 0.0) || !(bn_eps > 0.0)) throw std::invalid_argument("encoder: eps must be positive");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) throw std::invalid_argument("encoder: bn_momentum must be in [0,1)");
}

namespace {

constexpr const char* kDirections[] = {"fw", "bw"};
constexpr const char* kGates[] = {"f", "i", "o", "c"};
constexpr const char* kBatchNorms[] = {"bn1", "bn2", "bn3"};

}  // namespace

std::vector<std::pair<std::string, Shape>> EncoderParams::layout(const EncoderConfig& c) {
  const std::size_t d = c.input_dim, H = c.hidden, w = c.head_width, e = c.embedding;
  std::vector<std::pair<std::string, Shape>> out;
  for (const char* dir : kDirections) {
    const std::string p = std::string(dir) + ".";
    for (const char* g : kGates) {
      out.push_back({p + "W_" + g + "x", {d, H}});
      out.push_back({p + "W_" + g + "h", {H, H}});
      out.push_back({p + "b_" + g, {1, H}});
    }
    out.push_back({p + "ln_gamma", {1, H}});
    out.push_back({p + "ln_beta", {1, H}});
  }
  out.push_back({"att.W_s1", {2 * H, c.attention_width}});
  out.push_back({"att.W_s2", {c.attention_width, 1}});
  const std::size_t widths[][2] = {{2 * H, w}, {w, w}, {w, e}};
  for (int k = 0; k < 3; ++k) {
    const std::string fc = "fc" + std::to_string(k + 1) + ".";
    const std::string bn = std::string(kBatchNorms[k]) + ".";
    out.push_back({fc + "W", {widths[k][0], widths[k][1]}});
    out.push_back({fc + "b", {1, widths[k][1]}});
    out.push_back({bn + "gamma", {1, widths[k][1]}});
    out.push_back({bn + "beta", {1, widths[k][1]}});
  }
  return out;
}

std::vector<Tensor> EncoderParams::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

const Tensor& EncoderParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("encoder params: no tensor '" + name + "'");
  return entries_[it->second].tensor;
}

Tensor& EncoderParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("encoder params: no tensor '" + name + "'");
  return entries_[it->second].tensor;
}

void EncoderParams::add(std::string name, Array value) {
  if (index_.count(name)) throw std::invalid_argument("encoder params: duplicate tensor '" + name + "'");
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), parameter(std::move(value))});
}

void EncoderParams::validate(const EncoderConfig& config) const {
  const auto expect = layout(config);
  for (std::size_t k = 0; k < expect.size(); ++k) {
    const auto& [name, shape] = expect[k];
    if (k >= entries_.size()) throw ShapeError(name, "missing from parameters");
    if (entries_[k].name != name) throw ShapeError(name, "expected here, found '" + entries_[k].name + "'");
    if (entries_[k].tensor.shape() != shape) throw ShapeError(name, shape, entries_[k].tensor.shape());
  }
  if (entries_.size() != expect.size()) throw ShapeError(entries_[expect.size()].name, "unexpected extra tensor");
  const auto& wd = layout(config);
  for (int k = 0; k < 3; ++k) {
    const std::string bn = kBatchNorms[k];
    const Shape want = wd[wd.size() - 12 + 4 * k + 3].second;
    auto it = running.find(bn);
    if (it == running.end()) throw ShapeError(bn + ".running", "missing running statistics");
    if (it->second.first.shape() != want) throw ShapeError(bn + ".running_mean", want, it->second.first.shape());
    if (it->second.second.shape() != want) throw ShapeError(bn + ".running_var", want, it->second.second.shape());
  }
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.value().size();
  return n;
}

EncoderParams EncoderParams::clone() const {
  EncoderParams out;
  for (const auto& e : entries_) out.add(e.name, e.tensor.value());
  out.running = running;
  return out;
}

Array random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Array a(n, n);
  for (double& v : a.values()) v = g(rng);
  // Modified Gram-Schmidt over columns, run twice for orthogonality to ~1e-15.
  Array q = a;
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += q(i, k) * q(i, j);
        for (std::size_t i = 0; i < n; ++i) q(i, j) -= dot * q(i, k);
      }
      double norm = 0.0;
      for (std::size_t i = 0; i < n; ++i) norm += q(i, j) * q(i, j);
      norm = std::sqrt(norm);
      if (norm < 1e-12) throw std::runtime_error("random_orthogonal: degenerate draw");
      for (std::size_t i = 0; i < n; ++i) q(i, j) /= norm;
    }
  }
  return q;
}

EncoderParams init_params(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  const double bound = std::sqrt(3.0) * 0.001;
  std::uniform_real_distribution<double> uni(-bound, bound);
  EncoderParams p;
  for (const auto& [name, shape] : EncoderParams::layout(config)) {
    const auto dot = name.find('.');
    const std::string leaf = name.substr(dot + 1);
    Array v(shape[0], shape[1], 0.0);
    if (leaf == "ln_gamma") v.fill(config.ln_literal_init ? 0.0 : 1.0);
    else if (leaf == "ln_beta") v.fill(config.ln_literal_init ? 1.0 : 0.0);
    else if (leaf == "gamma") v.fill(1.0);
    else if (leaf == "beta" || leaf[0] == 'b') v.fill(0.0);
    else if (shape[0] == shape[1]) v = random_orthogonal(shape[0], rng);
    else for (double& x : v.values()) x = uni(rng);
    p.add(name, std::move(v));
  }
  const std::size_t widths[] = {config.head_width, config.head_width, config.embedding};
  for (int k = 0; k < 3; ++k) p.running[kBatchNorms[k]] = {Array(1, widths[k], 0.0), Array(1, widths[k], 1.0)};
  return p;
}

LstmWeights lstm_weights(const EncoderParams& params, const std::string& direction) {
  const std::string p = direction + ".";
  std::vector<Tensor> wx, wh, b;
  for (const char* g : kGates) {
    wx.push_back(params.at(p + "W_" + g + "x"));
    wh.push_back(params.at(p + "W_" + g + "h"));
    b.push_back(params.at(p + "b_" + g));
  }
  return {concat(wx, 1), concat(wh, 1), concat(b, 1), params.at(p + "ln_gamma"), params.at(p + "ln_beta")};
}

LstmState lnlstm_step(const Tensor& x, const LstmState& prev, const LstmWeights& w, const EncoderConfig& config) {
  const std::size_t H = w.wh.rows();
  const Tensor z = add_row(add(matmul(x, w.wx), matmul(prev.h, w.wh)), w.b);
  const Tensor gates = sigmoid(slice(z, 1, 0, 3 * H));
  const Tensor f = slice(gates, 1, 0, H);
  const Tensor i = slice(gates, 1, H, 2 * H);
  const Tensor o = slice(gates, 1, 2 * H, 3 * H);
  const Tensor candidate = tanh(slice(z, 1, 3 * H, 4 * H));
  const Tensor c = add(mul(f, prev.c), mul(i, candidate));
  Tensor inner = c;
  if (config.layer_norm_enabled) inner = add_row(mul(normalize_rows(c, config.ln_eps), w.gamma), w.beta);
  return {mul(o, tanh(inner)), c};
}

SequenceBatch SequenceBatch::from(std::span<const MotionSequence* const> seqs) {
  if (seqs.empty()) throw std::invalid_argument("sequence batch: no sequences");
  SequenceBatch b;
  b.batch = seqs.size();
  const std::size_t d = seqs.front()->dim();
  for (const MotionSequence* s : seqs) {
    if (s->length() == 0) throw std::invalid_argument("sequence batch: empty sequence '" + s->source_id + "'");
    if (s->dim() != d) throw ShapeError("sequence batch", "mixed frame dimensions");
    b.lengths.push_back(s->length());
    b.steps = std::max(b.steps, s->length());
  }
  b.mask = Array(b.batch, b.steps, 0.0);
  for (std::size_t t = 0; t < b.steps; ++t) {
    Array x(b.batch, d, 0.0);
    for (std::size_t i = 0; i < b.batch; ++i) {
      if (t >= b.lengths[i]) continue;
      b.mask(i, t) = 1.0;
      for (std::size_t c = 0; c < d; ++c) x(i, c) = seqs[i]->frames(t, c);
    }
    b.frames.push_back(constant(std::move(x)));
  }
  return b;
}

Tensor bilstm(const SequenceBatch& batch, const EncoderParams& params, const EncoderConfig& config) {
  const std::size_t B = batch.batch, T = batch.steps, H = config.hidden;
  if (!batch.frames.empty() && batch.frames.front().cols() != config.input_dim) {
    throw ShapeError("bilstm", "frame dimension " + std::to_string(batch.frames.front().cols()) +
                                   " does not match encoder input_dim " + std::to_string(config.input_dim));
  }
  const LstmWeights fw = lstm_weights(params, "fw");
  const LstmWeights bw = lstm_weights(params, "bw");
  const Tensor zeros = constant(Array(B, H, 0.0));

  std::vector<Tensor> forward(T), backward(T);
  LstmState s{zeros, zeros};
  for (std::size_t t = 0; t < T; ++t) {
    // Past an item's end the forward state runs on zero input; those rows are masked downstream.
    s = lnlstm_step(batch.frames[t], s, fw, config);
    forward[t] = s.h;
  }
  s = {zeros, zeros};
  for (std::size_t t = T; t-- > 0;) {
    s = lnlstm_step(batch.frames[t], s, bw, config);
    bool ragged = false;
    for (std::size_t i = 0; i < B; ++i) ragged = ragged || t >= batch.lengths[i];
    if (ragged) {
      // Keep the state at zero until each item's own last frame.
      Array m(B, 1, 0.0);
      for (std::size_t i = 0; i < B; ++i) m(i, 0) = batch.mask(i, t);
      const Tensor mt = constant(std::move(m));
      s = {mul(s.h, mt), mul(s.c, mt)};
    }
    backward[t] = s.h;
  }
  std::vector<Tensor> rows;
  rows.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor pair[] = {forward[t], backward[t]};
    rows.push_back(concat(pair, 1));
  }
  return concat(rows, 0);
}

Tensor bilstm(const MotionSequence& seq, const EncoderParams& params, const EncoderConfig& config) {
  const MotionSequence* one[] = {&seq};
  return bilstm(SequenceBatch::from(one), params, config);
}

Attention attend(const Tensor& stacked, const SequenceBatch& batch, const EncoderParams& params,
                 const EncoderConfig& config) {
  const std::size_t B = batch.batch, T = batch.steps;
  Attention out;
  if (!config.attention_enabled) {
    Array w(B, T, 0.0);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t t = 0; t < batch.lengths[i]; ++t) w(i, t) = 1.0 / static_cast<double>(batch.lengths[i]);
    out.scores = constant(std::move(w));
  } else {
    const Tensor u = tanh(matmul(stacked, params.at("att.W_s1")));
    const Tensor r = transpose(reshape(matmul(u, params.at("att.W_s2")), T, B));
    if (config.attention_mode == AttentionMode::Softmax) {
      out.scores = softmax(r, 1, &batch.mask);
    } else {
      out.scores = neg(log_softmax(r, 1, &batch.mask));
    }
  }
  out.pooled = pool_time(out.scores, stacked);
  return out;
}

namespace {

Tensor batch_norm(const Tensor& x, const EncoderParams& params, const std::string& layer, const EncoderConfig& config,
                  EncodeMode mode, std::vector<BatchStats>& stats) {
  const Tensor& gamma = params.at(layer + ".gamma");
  const Tensor& beta = params.at(layer + ".beta");
  Tensor core;
  if (mode == EncodeMode::Train) {
    const Array& v = x.value();
    BatchStats s{layer, Array(1, v.cols(), 0.0), Array(1, v.cols(), 0.0)};
    const double n = static_cast<double>(v.rows());
    for (std::size_t j = 0; j < v.cols(); ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < v.rows(); ++i) m += v(i, j);
      m /= n;
      double q = 0.0;
      for (std::size_t i = 0; i < v.rows(); ++i) q += (v(i, j) - m) * (v(i, j) - m);
      s.mean(0, j) = m;
      s.var(0, j) = q / n;
    }
    stats.push_back(std::move(s));
    core = standardize_cols(x, config.bn_eps);
  } else {
    const auto& [rm, rv] = params.running.at(layer);
    Array shift(1, rm.cols()), inv(1, rv.cols());
    for (std::size_t j = 0; j < rm.cols(); ++j) {
      shift(0, j) = -rm(0, j);
      inv(0, j) = 1.0 / std::sqrt(rv(0, j) + config.bn_eps);
    }
    core = mul(add_row(x, constant(std::move(shift))), constant(std::move(inv)));
  }
  return add_row(mul(core, gamma), beta);
}

Tensor dense(const Tensor& x, const EncoderParams& params, const std::string& layer) {
  return add_row(matmul(x, params.at(layer + ".W")), params.at(layer + ".b"));
}

}  // namespace

EmbedOutput embed_batch(std::span<const MotionSequence* const> seqs, const EncoderParams& params,
                        const EncoderConfig& config, EncodeMode mode, const Array* dropout_mask) {
  const SequenceBatch batch = SequenceBatch::from(seqs);
  const Tensor states = bilstm(batch, params, config);
  Attention att = attend(states, batch, params, config);
  EmbedOutput out;
  Tensor x = relu(dense(att.pooled, params, "fc1"));
  if (mode == EncodeMode::Train && dropout_mask != nullptr && config.dropout_rate > 0.0) {
    if (dropout_mask->shape() != Shape{1, config.head_width}) {
      throw ShapeError("dropout mask", Shape{1, config.head_width}, dropout_mask->shape());
    }
    Array scaled = *dropout_mask;
    for (double& v : scaled.values()) v /= 1.0 - config.dropout_rate;
    x = mul(x, constant(std::move(scaled)));
  }
  x = batch_norm(x, params, "bn1", config, mode, out.batch_stats);
  x = relu(dense(x, params, "fc2"));
  x = batch_norm(x, params, "bn2", config, mode, out.batch_stats);
  x = batch_norm(dense(x, params, "fc3"), params, "bn3", config, mode, out.batch_stats);
  out.embeddings = l2_normalize_rows(x);
  out.scores = att.scores;
  return out;
}

Array make_dropout_mask(const EncoderConfig& config, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - config.dropout_rate);
  Array m(1, config.head_width, 1.0);
  if (config.dropout_rate > 0.0) {
    for (double& v : m.values()) v = keep(rng) ? 1.0 : 0.0;
  }
  return m;
}

void update_running_stats(EncoderParams& params, const std::vector<BatchStats>& stats, double momentum) {
  for (const BatchStats& s : stats) {
    auto& [rm, rv] = params.running.at(s.layer);
    for (std::size_t j = 0; j < rm.size(); ++j) {
      rm[j] = momentum * rm[j] + (1.0 - momentum) * s.mean[j];
      rv[j] = momentum * rv[j] + (1.0 - momentum) * s.var[j];
    }
  }
}

Array embed(const MotionSequence& seq, const EncoderParams& params, const EncoderConfig& config) {
  NoTapeScope no_tape;
  const MotionSequence* one[] = {&seq};
  return embed_batch(one, params, config, EncodeMode::Eval).embeddings.value();
}

namespace {

// Visits chunks of sequences grouped by length: fn(indices, pointers).
template <class Fn>
void for_each_chunk(const std::vector<MotionSequence>& seqs, std::size_t chunk, Fn fn) {
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return seqs[a].length() < seqs[b].length(); });
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < order.size(); start += chunk) {
    const std::size_t stop = std::min(order.size(), start + chunk);
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(stop));
    std::vector<const MotionSequence*> ptrs;
    for (std::size_t i : idx) ptrs.push_back(&seqs[i]);
    fn(idx, ptrs);
  }
}

}  // namespace

Array embed_all(const std::vector<MotionSequence>& seqs, const EncoderParams& params, const EncoderConfig& config,
                std::size_t chunk) {
  NoTapeScope no_tape;
  Array out(seqs.size(), config.embedding, 0.0);
  for_each_chunk(seqs, chunk, [&](const std::vector<std::size_t>& idx, const std::vector<const MotionSequence*>& ptrs) {
    const Array e = embed_batch(ptrs, params, config, EncodeMode::Eval).embeddings.value();
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < config.embedding; ++j) out(idx[k], j) = e(k, j);
  });
  return out;
}

std::vector<std::vector<double>> attention_scores(const std::vector<MotionSequence>& seqs, const EncoderParams& params,
                                                  const EncoderConfig& config, std::size_t chunk) {
  NoTapeScope no_tape;
  std::vector<std::vector<double>> out(seqs.size());
  for_each_chunk(seqs, chunk, [&](const std::vector<std::size_t>& idx, const std::vector<const MotionSequence*>& ptrs) {
    const SequenceBatch batch = SequenceBatch::from(ptrs);
    const Array a = attend(bilstm(batch, params, config), batch, params, config).scores.value();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto& row = out[idx[k]];
      row.resize(batch.lengths[k]);
      for (std::size_t t = 0; t < row.size(); ++t) row[t] = a(k, t);
    }
  });
  return out;
}

}  // namespace seqmetric
