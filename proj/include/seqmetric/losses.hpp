#pragma once

// Kernels, the MMD estimator, and the metric-learning objectives.
//
// Embedding sets are passed as matrices with one embedding per row.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqmetric/tensor.hpp"

namespace seqmetric {

enum class KernelFamily { Rbf, Linear, Polynomial };

struct KernelSpec {
  KernelFamily family = KernelFamily::Rbf;
  /// RBF mixture bandwidths; k(x,y) = sum_q exp(-|x-y|^2 / (2 sigma_q^2)).
  std::vector<double> bandwidths{1.0, 2.0, 4.0, 8.0, 16.0};
  int degree = 2;       // polynomial only
  double offset = 1.0;  // polynomial only

  void validate() const;
};

enum class LossKind { MmdNca, Triplet, Contrastive, Nca, NPair };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);
std::string to_string(KernelFamily family);
KernelFamily kernel_family_from_string(const std::string& name);

struct LossConfig {
  LossKind kind = LossKind::MmdNca;
  std::optional<double> margin;  // triplet / contrastive only
  KernelSpec kernel;
  /// Use MMD^2 instead of its square root inside the MMD-NCA ratio.
  bool squared_mmd = false;
  /// U-statistic (diagonal-free) estimator instead of the biased V-statistic.
  bool unbiased_mmd = false;
  /// Adds the positive term to the MMD-NCA denominator (standard softmax form).
  bool positive_in_denominator = false;

  bool needs_margin() const { return kind == LossKind::Triplet || kind == LossKind::Contrastive; }
  void validate() const;
};

double kernel_eval(std::span<const double> x, std::span<const double> y, const KernelSpec& spec);

/// Gram matrix k(x_i, y_j) for row sets X (m x e) and Y (n x e).
Tensor kernel_matrix(const Tensor& x, const Tensor& y, const KernelSpec& spec);

Tensor mmd_squared(const Tensor& x, const Tensor& y, const KernelSpec& spec, bool unbiased = false);
double mmd_squared(const Array& x, const Array& y, const KernelSpec& spec, bool unbiased = false);

/// MMD(A,P) + log sum_j exp(-MMD(A,N_j)), i.e. -log of the MMD-NCA ratio.
Tensor mmd_nca_loss(const Tensor& anchors, const Tensor& positives, std::span<const Tensor> negatives,
                    const LossConfig& config);

/// MMD-NCA from already computed discrepancies (the MMD values themselves).
double mmd_nca_from_discrepancies(double positive, std::span<const double> negatives,
                                  bool positive_in_denominator = false);

/// Row-wise squared distances |a_i - b_i|^2 as an r x 1 column.
Tensor rowwise_squared_distance(const Tensor& a, const Tensor& b);

/// Mean over rows of max(0, |a-p|^2 - |a-n|^2 + margin).
Tensor triplet_loss(const Tensor& a, const Tensor& p, const Tensor& n, double margin);
/// Mean over rows; same: d/2, different: max(0, margin - d)^2 / 2, d squared distance.
Tensor contrastive_loss(const Tensor& x, const Tensor& y, bool same, double margin);
/// -log(exp(-|a-p|^2) / sum_n exp(-|a-n|^2)) for one anchor and K x e negatives.
Tensor nca_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negatives);
/// Mean over i of -log softmax_j(<a_i, p_j>) at j = i.
Tensor n_pair_loss(const Tensor& anchors, const Tensor& positives);

/// Loss over an episode embedding matrix whose rows are ordered
/// [P anchors, P positives, P negatives of category 1, ..., of category M].
Tensor episode_loss(const Tensor& embeddings, std::size_t per_set, std::size_t negative_sets,
                    const LossConfig& config);

}  // namespace seqmetric
