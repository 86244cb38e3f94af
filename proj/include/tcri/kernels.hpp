#pragma once

#include <vector>

#include "tcri/tensor.hpp"

namespace tcri::kern {

// RBF Gram matrix together with the bandwidth it was built from.
// K_ij = exp(-||x_i - x_j||^2 / (2 b^2)); symmetric, unit diagonal,
// entries in (0, 1].
struct Gram {
  diff::Tensor matrix;  // n x n
  double bandwidth = 0.0;
  std::size_t size() const { return matrix.rows(); }
};

// Median of pairwise Euclidean distances over distinct pairs; 1.0 when every
// point coincides. Throws when n < 2.
double median_bandwidth(const diff::Tensor& x);
double median_bandwidth_serial(const diff::Tensor& x);

Gram rbf_gram(const diff::Tensor& x, double bandwidth);
Gram rbf_gram_serial(const diff::Tensor& x, double bandwidth);

// V-statistic HSIC: (1/n^2) trace(Kx H Ky H), H = I - (1/n) 11^T.
double hsic_v(const Gram& kx, const Gram& ky);
double hsic_v_serial(const Gram& kx, const Gram& ky);

// Count of class slices skipped for having fewer than two rows, surfaced to
// callers that want to warn.
struct ConditionalResult {
  double value = 0.0;
  int classes_used = 0;
  int classes_skipped = 0;
};

// Mean over class slices (n_k >= 2) of HSIC between per-slice representations,
// with per-slice median bandwidths. Throws when no slice is usable.
ConditionalResult conditional_hsic(const diff::Tensor& phi,
                                   const diff::Tensor& psi,
                                   const std::vector<int>& labels,
                                   int num_classes);

// Mean over class slices of || (1/n_k) Phi_c^T Psi_c ||_F^2 with column-
// centered slices.
ConditionalResult conditional_cross_cov(const diff::Tensor& phi,
                                        const diff::Tensor& psi,
                                        const std::vector<int>& labels,
                                        int num_classes);

// Double-centered copy H M H of a symmetric matrix, computed in O(n^2).
diff::Tensor double_center(const diff::Tensor& m);

// Rows of x whose label equals k, packed densely.
diff::Tensor slice_rows(const diff::Tensor& x, const std::vector<int>& labels,
                        int k);

// Quantile bin index (0..bins-1) per target value; used to condition the CI
// penalty on a continuous target.
std::vector<int> quantile_bins(const std::vector<double>& y, int bins);

}  // namespace tcri::kern
