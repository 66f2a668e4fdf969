#include "seqmetric/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace seqmetric {

void KernelSpec::validate() const {
  if (family == KernelFamily::Rbf) {
    if (bandwidths.empty()) throw std::invalid_argument("kernel: at least one bandwidth required");
    for (double s : bandwidths) {
      if (!(s > 0.0)) throw std::invalid_argument("kernel: bandwidths must be positive");
    }
  }
  if (family == KernelFamily::Polynomial && degree < 1) {
    throw std::invalid_argument("kernel: polynomial degree must be >= 1");
  }
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::MmdNca: return "mmd_nca";
    case LossKind::Triplet: return "triplet";
    case LossKind::Contrastive: return "contrastive";
    case LossKind::Nca: return "nca";
    case LossKind::NPair: return "n_pair";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& name) {
  for (LossKind k : {LossKind::MmdNca, LossKind::Triplet, LossKind::Contrastive, LossKind::Nca,
                     LossKind::NPair}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown loss kind '" + name + "'");
}

std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::Rbf: return "rbf";
    case KernelFamily::Linear: return "linear";
    case KernelFamily::Polynomial: return "polynomial";
  }
  return "?";
}

KernelFamily kernel_family_from_string(const std::string& name) {
  for (KernelFamily f : {KernelFamily::Rbf, KernelFamily::Linear, KernelFamily::Polynomial}) {
    if (to_string(f) == name) return f;
  }
  throw std::invalid_argument("unknown kernel family '" + name + "'");
}

void LossConfig::validate() const {
  kernel.validate();
  if (needs_margin()) {
    if (!margin) throw std::invalid_argument("loss: " + to_string(kind) + " requires a margin");
    if (*margin < 0.0) throw std::invalid_argument("loss: margin must be nonnegative");
  } else if (margin) {
    throw std::invalid_argument("loss: " + to_string(kind) + " takes no margin");
  }
}

double kernel_eval(std::span<const double> x, std::span<const double> y, const KernelSpec& spec) {
  if (x.size() != y.size()) {
    throw ShapeError("kernel_eval", Shape{1, x.size()}, Shape{1, y.size()});
  }
  double dot = 0.0, dist = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    dist += (x[i] - y[i]) * (x[i] - y[i]);
  }
  switch (spec.family) {
    case KernelFamily::Rbf: {
      double k = 0.0;
      for (double s : spec.bandwidths) k += std::exp(-dist / (2.0 * s * s));
      return k;
    }
    case KernelFamily::Linear: return dot;
    case KernelFamily::Polynomial: return std::pow(dot + spec.offset, spec.degree);
  }
  return 0.0;
}

Tensor kernel_matrix(const Tensor& x, const Tensor& y, const KernelSpec& spec) {
  if (x.cols() != y.cols()) throw ShapeError("kernel_matrix", x.shape(), y.shape());
  Tensor inner = matmul(x, transpose(y));
  switch (spec.family) {
    case KernelFamily::Linear: return inner;
    case KernelFamily::Polynomial: {
      Tensor base = add_scalar(inner, spec.offset);
      Tensor out = base;
      for (int d = 1; d < spec.degree; ++d) out = mul(out, base);
      return out;
    }
    case KernelFamily::Rbf: break;
  }
  Tensor xx = sum(square(x), 1);             // m x 1
  Tensor yy = transpose(sum(square(y), 1));  // 1 x n
  Tensor dist = sub(add(xx, yy), scale(inner, 2.0));
  Tensor k;
  for (double s : spec.bandwidths) {
    Tensor term = exp(scale(dist, -1.0 / (2.0 * s * s)));
    k = k.defined() ? add(k, term) : term;
  }
  return k;
}

namespace {

Tensor mean_off_diagonal(const Tensor& gram) {
  const std::size_t n = gram.rows();
  if (n < 2) throw std::invalid_argument("unbiased MMD requires at least 2 samples per set");
  Array off(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) off(i, i) = 0.0;
  return scale(sum_all(mul(gram, constant(off))), 1.0 / static_cast<double>(n * (n - 1)));
}

}  // namespace

Tensor mmd_squared(const Tensor& x, const Tensor& y, const KernelSpec& spec, bool unbiased) {
  if (x.rows() == 0 || y.rows() == 0) throw std::invalid_argument("mmd_squared: empty set");
  if (x.cols() != y.cols()) throw ShapeError("mmd_squared", x.shape(), y.shape());
  Tensor kxx = kernel_matrix(x, x, spec);
  Tensor kyy = kernel_matrix(y, y, spec);
  Tensor kxy = kernel_matrix(x, y, spec);
  Tensor txx = unbiased ? mean_off_diagonal(kxx) : mean_all(kxx);
  Tensor tyy = unbiased ? mean_off_diagonal(kyy) : mean_all(kyy);
  return add(sub(txx, scale(mean_all(kxy), 2.0)), tyy);
}

double mmd_squared(const Array& x, const Array& y, const KernelSpec& spec, bool unbiased) {
  NoTapeScope untaped;
  return mmd_squared(constant(x), constant(y), spec, unbiased).item();
}

namespace {

Tensor discrepancy(const Tensor& a, const Tensor& b, const LossConfig& config) {
  Tensor sq = mmd_squared(a, b, config.kernel, config.unbiased_mmd);
  if (config.squared_mmd) return sq;
  return sqrt(relu(sq));
}

}  // namespace

Tensor mmd_nca_loss(const Tensor& anchors, const Tensor& positives,
                    std::span<const Tensor> negatives, const LossConfig& config) {
  if (negatives.empty()) throw std::invalid_argument("mmd_nca_loss: M must be >= 1");
  Tensor pos = discrepancy(anchors, positives, config);
  std::vector<Tensor> terms;
  if (config.positive_in_denominator) terms.push_back(neg(pos));
  for (const Tensor& n : negatives) terms.push_back(neg(discrepancy(anchors, n, config)));
  Tensor log_denominator = log(sum_all(exp(concat(terms, 1))));
  return add(pos, log_denominator);
}

double mmd_nca_from_discrepancies(double positive, std::span<const double> negatives,
                                  bool positive_in_denominator) {
  if (negatives.empty()) throw std::invalid_argument("mmd_nca_loss: M must be >= 1");
  double denom = positive_in_denominator ? std::exp(-positive) : 0.0;
  for (double n : negatives) denom += std::exp(-n);
  return positive + std::log(denom);
}

Tensor rowwise_squared_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("squared_distance", a.shape(), b.shape());
  return sum(square(sub(a, b)), 1);
}

Tensor triplet_loss(const Tensor& a, const Tensor& p, const Tensor& n, double margin) {
  Tensor gap = sub(rowwise_squared_distance(a, p), rowwise_squared_distance(a, n));
  return mean_all(relu(add_scalar(gap, margin)));
}

Tensor contrastive_loss(const Tensor& x, const Tensor& y, bool same, double margin) {
  Tensor d = rowwise_squared_distance(x, y);
  if (same) return scale(mean_all(d), 0.5);
  Tensor shortfall = relu(add_scalar(neg(d), margin));
  return scale(mean_all(square(shortfall)), 0.5);
}

Tensor nca_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negatives) {
  if (negatives.rows() == 0) throw std::invalid_argument("nca_loss: no negatives");
  if (anchor.rows() != 1 || anchor.cols() != negatives.cols()) {
    throw ShapeError("nca_loss", anchor.shape(), negatives.shape());
  }
  Tensor dap = rowwise_squared_distance(anchor, positive);
  Tensor dan = sum(square(sub(negatives, anchor)), 1);  // K x 1
  return add(dap, log(sum_all(exp(neg(dan)))));
}

Tensor n_pair_loss(const Tensor& anchors, const Tensor& positives) {
  if (anchors.shape() != positives.shape()) throw ShapeError("n_pair_loss", anchors.shape(), positives.shape());
  const std::size_t n = anchors.rows();
  if (n < 2) throw std::invalid_argument("n_pair_loss: requires at least 2 pairs");
  Tensor logits = matmul(anchors, transpose(positives));
  Tensor diag = constant(Array::identity(n));
  Tensor picked = sum(mul(log_softmax(logits, 1), diag), 1);
  return neg(mean_all(picked));
}

Tensor episode_loss(const Tensor& embeddings, std::size_t per_set, std::size_t negative_sets,
                    const LossConfig& config) {
  const std::size_t p = per_set, m = negative_sets;
  if (p == 0 || m == 0) throw std::invalid_argument("episode_loss: P and M must be >= 1");
  if (embeddings.rows() != (2 + m) * p) {
    throw ShapeError("episode_loss", "expected " + std::to_string((2 + m) * p) + " embeddings, got " +
                                         std::to_string(embeddings.rows()));
  }
  auto block = [&](std::size_t k) { return slice(embeddings, 0, k * p, (k + 1) * p); };
  Tensor anchors = block(0);
  Tensor positives = block(1);
  std::vector<Tensor> negatives;
  for (std::size_t j = 0; j < m; ++j) negatives.push_back(block(2 + j));

  switch (config.kind) {
    case LossKind::MmdNca: return mmd_nca_loss(anchors, positives, negatives, config);
    case LossKind::Triplet: {
      Tensor total;
      for (const Tensor& n : negatives) {
        Tensor t = triplet_loss(anchors, positives, n, *config.margin);
        total = total.defined() ? add(total, t) : t;
      }
      return scale(total, 1.0 / static_cast<double>(m));
    }
    case LossKind::Contrastive: {
      Tensor total = contrastive_loss(anchors, positives, true, *config.margin);
      for (const Tensor& n : negatives) total = add(total, contrastive_loss(anchors, n, false, *config.margin));
      return scale(total, 1.0 / static_cast<double>(m + 1));
    }
    case LossKind::Nca: {
      Tensor total;
      for (std::size_t i = 0; i < p; ++i) {
        std::vector<Tensor> rows;
        for (const Tensor& n : negatives) rows.push_back(slice(n, 0, i, i + 1));
        Tensor l = nca_loss(slice(anchors, 0, i, i + 1), slice(positives, 0, i, i + 1), concat(rows, 0));
        total = total.defined() ? add(total, l) : l;
      }
      return scale(total, 1.0 / static_cast<double>(p));
    }
    case LossKind::NPair: {
      if (p < 2) throw std::invalid_argument("episode_loss: n_pair requires P >= 2");
      // One N-pair instance per index i: the anchor pair plus one pair from
      // each negative category, so every row has a distinct class.
      Tensor total;
      for (std::size_t i = 0; i < p; ++i) {
        std::vector<Tensor> left{slice(anchors, 0, i, i + 1)};
        std::vector<Tensor> right{slice(positives, 0, i, i + 1)};
        for (const Tensor& n : negatives) {
          left.push_back(slice(n, 0, i, i + 1));
          right.push_back(slice(n, 0, (i + 1) % p, (i + 1) % p + 1));
        }
        Tensor l = n_pair_loss(concat(left, 0), concat(right, 0));
        total = total.defined() ? add(total, l) : l;
      }
      return scale(total, 1.0 / static_cast<double>(p));
    }
  }
  throw std::invalid_argument("episode_loss: unknown loss kind");
}

}  // namespace seqmetric
