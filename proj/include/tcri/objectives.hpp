#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tcri/models.hpp"
#include "tcri/scm_data.hpp"
#include "tcri/tape.hpp"

namespace tcri::obj {

struct TcriHyperParams {
  double alpha = 1.0;   // weight between L_phi and L_phi_psi
  double beta = 0.0;    // conditional-independence penalty weight
  double lambda = 0.0;  // gradient-norm (invariance) penalty weight
  diff::PenaltyKind penalty = diff::PenaltyKind::hsic;
  diff::NormKind irm_norm = diff::NormKind::l2;
  int y_bins = 4;       // conditioning bins for regression targets

  static TcriHyperParams erm() { return {1.0, 0.0, 0.0}; }
  static TcriHyperParams irm() { return {1.0, 0.0, 0.1}; }
  static TcriHyperParams tcri() { return {0.75, 10.0, 0.1}; }

  void validate() const;
  std::string describe() const;
};

struct DomainTerms {
  std::string domain_id;
  double l_phi = 0.0;
  double l_phi_psi = 0.0;
  double l_irm = 0.0;
  double l_ci = 0.0;
  double total = 0.0;  // alpha*l_phi + (1-alpha)*l_phi_psi + lambda*l_irm + beta*l_ci
};

struct LossBreakdown {
  double l_phi = 0.0;
  double l_phi_psi = 0.0;
  double l_irm = 0.0;
  double l_ci = 0.0;
  double total = 0.0;
  std::vector<DomainTerms> per_domain;
};

// Empirical risk: mean squared error for regression, mean logistic loss on
// raw scores for binary classification.
double risk(std::span<const double> predictions,
            std::span<const double> targets, model::Task task);

// One domain's full batch plus its precomputed conditioning groups.
struct Batch {
  const diff::Tensor* x = nullptr;
  const std::vector<double>* y = nullptr;
  std::string domain_id;
  std::vector<int> ci_groups;
  int num_groups = 0;
};

Batch make_batch(const data::DomainDataset& ds, const TcriHyperParams& hp,
                 model::Task task);

// Model parameters registered as leaves of one Tape. theta_c stays a constant
// when the architecture freezes it.
struct BoundModel {
  model::TcriModel* model = nullptr;
  diff::Tape* tape = nullptr;
  std::optional<diff::Var> f_w, f_b;
  diff::Var phi_w;
  std::optional<diff::Var> phi_b;
  diff::Var psi_w;
  std::optional<diff::Var> psi_b;
  diff::Var thc_w;
  std::optional<diff::Var> thc_b;
  std::vector<diff::Var> the_w;
  std::vector<std::optional<diff::Var>> the_b;

  diff::Var rep_general(diff::Var x) const;
  diff::Var rep_specific(diff::Var x) const;
  diff::Var scores_general(diff::Var rep) const;
  diff::Var scores_domain(diff::Var joint_rep, std::size_t domain_index) const;
};

BoundModel bind(diff::Tape& tape, model::TcriModel& m);

// The four loss terms. Each builds its sub-graph on the bound tape.
diff::Var loss_phi(BoundModel& bm, const Batch& batch);
diff::Var loss_phi_psi(BoundModel& bm, const Batch& batch,
                       std::size_t domain_index);
diff::Var loss_irm(BoundModel& bm, const Batch& batch,
                   const TcriHyperParams& hp);
diff::Var loss_ci(BoundModel& bm, const Batch& batch,
                  const TcriHyperParams& hp);

// (1/E) sum_e [alpha L_phi + (1-alpha) L_phi_psi + lambda L_irm + beta L_ci],
// every term computed on that domain's own batch. Terms with a zero
// coefficient are skipped and reported as zero in the breakdown.
std::pair<diff::Var, LossBreakdown> tcri_total(BoundModel& bm,
                                               std::span<const Batch> batches,
                                               const TcriHyperParams& hp);

}  // namespace tcri::obj
