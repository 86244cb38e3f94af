#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcri/models.hpp"
#include "tcri/objectives.hpp"
#include "tcri/scm_data.hpp"

namespace tcri::train {

enum class Optimizer { gd, adam };

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t max_steps = 100;
  bool ols_inner = true;  // closed-form theta_e each step (linear + squared loss)
  Optimizer optimizer = Optimizer::gd;
  double momentum = 0.0;   // heavy-ball coefficient for gd; 0 is plain descent
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<double> grad_clip;  // global-norm clip
  std::uint64_t seed = 0;
  std::size_t log_every = 10;

  void validate() const {
    // learning_rate 0 is allowed: a no-op run is a useful control
    if (!(learning_rate >= 0.0)) {
      throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    }
    if (max_steps < 1) {
      throw std::invalid_argument("TrainConfig: max_steps must be >= 1");
    }
    if (grad_clip && !(*grad_clip > 0.0)) {
      throw std::invalid_argument("TrainConfig: grad_clip must be positive");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
      throw std::invalid_argument("TrainConfig: momentum must lie in [0,1)");
    }
  }
};

struct TrainLogRow {
  std::size_t step = 0;
  std::string domain_id;
  double l_phi = 0.0, l_phi_psi = 0.0, l_irm = 0.0, l_ci = 0.0, total = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  model::TcriModel model;
  std::vector<TrainLogRow> log;
  obj::LossBreakdown final_breakdown;
};

// Raised when the total loss stops being finite; carries the last finite
// breakdown for diagnosis.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, obj::LossBreakdown last)
      : std::runtime_error("training diverged at step " + std::to_string(step)),
        step_(step),
        last_finite_(std::move(last)) {}
  std::size_t step() const { return step_; }
  const obj::LossBreakdown& last_finite() const { return last_finite_; }

 private:
  std::size_t step_;
  obj::LossBreakdown last_finite_;
};

// Full-batch gradient descent over per-domain objectives. Deterministic for
// fixed (model, data, config, hyperparameters).
TrainResult train(model::TcriModel model,
                  const std::vector<data::DomainDataset>& domains,
                  const obj::TcriHyperParams& hp, const TrainConfig& cfg);

// Minimizer of ||design w - y||_2; minimum-norm solution when rank-deficient.
std::vector<double> ols_solve(const diff::Tensor& design,
                              std::span<const double> targets);

struct EvalResult {
  double risk = 0.0;
  std::optional<double> accuracy;  // classification only
};

// Test-time path only (theta_c over Phi over F).
EvalResult evaluate(const model::TcriModel& m, const data::DomainDataset& ds,
                    model::Task task);

}  // namespace tcri::train
