#include "tcri/trainer.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>

namespace tcri::train {

using diff::Tensor;
using diff::Var;
using model::Task;
using model::TcriModel;

std::vector<double> ols_solve(const Tensor& design,
                              std::span<const double> targets) {
  const std::size_t n = design.rows(), d = design.cols();
  if (targets.size() != n) {
    throw std::invalid_argument("ols_solve: target length disagrees");
  }
  if (n == 0) throw std::invalid_argument("ols_solve: empty design");
  if (!design.all_finite()) {
    throw std::invalid_argument("ols_solve: non-finite design");
  }
  Eigen::MatrixXd a(n, d);
  Eigen::VectorXd b(n);
  for (std::size_t i = 0; i < n; ++i) {
    b(static_cast<Eigen::Index>(i)) = targets[i];
    if (!std::isfinite(targets[i])) {
      throw std::invalid_argument("ols_solve: non-finite target");
    }
    for (std::size_t j = 0; j < d; ++j) {
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          design.at(i, j);
    }
  }
  // Complete orthogonal decomposition gives the minimum-norm least-squares
  // solution for rank-deficient designs.
  Eigen::VectorXd w = a.completeOrthogonalDecomposition().solve(b);
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = w(static_cast<Eigen::Index>(j));
  return out;
}

namespace {

// Exact theta_e for the squared loss on [Phi(F(x)) (+) Psi(F(x))] -> y.
void solve_domain_heads(TcriModel& m,
                        const std::vector<data::DomainDataset>& domains) {
  for (std::size_t e = 0; e < domains.size(); ++e) {
    const Tensor p = m.general_representation(domains[e].features);
    const Tensor q = m.specific_representation(domains[e].features);
    const std::size_t n = p.rows();
    const std::size_t dp = p.cols(), dq = q.cols();
    const bool bias = m.theta_domains[e].bias.has_value();
    Tensor design = Tensor::zeros({n, dp + dq + (bias ? 1u : 0u)});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dp; ++j) design.at(i, j) = p.at(i, j);
      for (std::size_t j = 0; j < dq; ++j) design.at(i, dp + j) = q.at(i, j);
      if (bias) design.at(i, dp + dq) = 1.0;
    }
    const std::vector<double> w = ols_solve(design, domains[e].targets);
    for (std::size_t j = 0; j < dp + dq; ++j) {
      m.theta_domains[e].weight.at(j, 0) = w[j];
    }
    if (bias) m.theta_domains[e].bias->at(0) = w[dp + dq];
  }
}

struct ParamRef {
  Tensor* value;
  Var var;
};

std::vector<ParamRef> gather_step_params(obj::BoundModel& bm, bool skip_theta_e) {
  std::vector<ParamRef> out;
  TcriModel& m = *bm.model;
  auto push = [&out](Tensor* t, std::optional<Var> v) {
    if (t != nullptr && v && v->valid()) out.push_back({t, *v});
  };
  if (m.featurizer) {
    push(&m.featurizer->weight, bm.f_w);
    if (m.featurizer->bias) push(&*m.featurizer->bias, bm.f_b);
  }
  push(&m.phi_head.weight, bm.phi_w);
  if (m.phi_head.bias) push(&*m.phi_head.bias, bm.phi_b);
  push(&m.psi_head.weight, bm.psi_w);
  if (m.psi_head.bias) push(&*m.psi_head.bias, bm.psi_b);
  if (!m.arch.freeze_theta_c) {
    push(&m.theta_c.weight, bm.thc_w);
    if (m.theta_c.bias) push(&*m.theta_c.bias, bm.thc_b);
  }
  if (!skip_theta_e) {
    for (std::size_t e = 0; e < m.theta_domains.size(); ++e) {
      push(&m.theta_domains[e].weight, bm.the_w[e]);
      if (m.theta_domains[e].bias) push(&*m.theta_domains[e].bias, bm.the_b[e]);
    }
  }
  return out;
}

}  // namespace

TrainResult train(TcriModel model,
                  const std::vector<data::DomainDataset>& domains,
                  const obj::TcriHyperParams& hp, const TrainConfig& cfg) {
  cfg.validate();
  hp.validate();
  if (domains.empty()) throw std::invalid_argument("train: no domains");
  if (model.theta_domains.size() != domains.size()) {
    throw std::invalid_argument(
        "train: model domain-head count disagrees with domain count");
  }
  const bool inner_solve =
      cfg.ols_inner && model.arch.task == Task::regression;
  std::vector<obj::Batch> batches;
  batches.reserve(domains.size());
  for (const auto& d : domains) {
    batches.push_back(obj::make_batch(d, hp, model.arch.task));
  }
  TrainResult res;
  obj::LossBreakdown last_finite;
  std::vector<std::vector<double>> velocity;  // per-parameter, lazily sized
  std::vector<std::vector<double>> adam_m, adam_v;
  std::size_t adam_t = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < cfg.max_steps; ++step) {
    if (inner_solve) solve_domain_heads(model, domains);
    diff::Tape tape;
    obj::BoundModel bm = obj::bind(tape, model);
    auto [total, bd] = obj::tcri_total(bm, batches, hp);
    if (!std::isfinite(bd.total)) {
      throw TrainingDiverged(step, last_finite);
    }
    last_finite = bd;
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 ||
                              step + 1 == cfg.max_steps)) {
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
      for (const auto& dt : bd.per_domain) {
        res.log.push_back({step, dt.domain_id, dt.l_phi, dt.l_phi_psi, dt.l_irm,
                           dt.l_ci, dt.total, ms});
      }
    }
    tape.backward(total);
    auto params = gather_step_params(bm, inner_solve);
    double scale = cfg.learning_rate;
    if (cfg.grad_clip) {
      double sq = 0.0;
      for (const auto& pr : params) {
        for (double g : tape.grad(pr.var).data()) sq += g * g;
      }
      const double norm = std::sqrt(sq);
      if (norm > *cfg.grad_clip) scale *= *cfg.grad_clip / norm;
    }
    if (cfg.optimizer == Optimizer::adam && adam_m.size() != params.size()) {
      adam_m.resize(params.size());
      adam_v.resize(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) {
        adam_m[p].assign(params[p].value->size(), 0.0);
        adam_v[p].assign(params[p].value->size(), 0.0);
      }
    }
    if (cfg.optimizer == Optimizer::gd && cfg.momentum > 0.0 &&
        velocity.size() != params.size()) {
      velocity.resize(params.size());
      for (std::size_t p = 0; p < params.size(); ++p) {
        velocity[p].assign(params[p].value->size(), 0.0);
      }
    }
    if (cfg.optimizer == Optimizer::adam) ++adam_t;
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Tensor& g = tape.grad(params[p].var);
      auto dst = params[p].value->data();
      auto src = g.data();
      if (cfg.optimizer == Optimizer::adam) {
        auto& m = adam_m[p];
        auto& v = adam_v[p];
        const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t));
        for (std::size_t i = 0; i < dst.size(); ++i) {
          m[i] = b1 * m[i] + (1.0 - b1) * src[i];
          v[i] = b2 * v[i] + (1.0 - b2) * src[i] * src[i];
          const double mhat = m[i] / c1;
          const double vhat = v[i] / c2;
          dst[i] -= scale * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
      } else if (cfg.momentum > 0.0) {
        auto& vel = velocity[p];
        for (std::size_t i = 0; i < dst.size(); ++i) {
          vel[i] = cfg.momentum * vel[i] - scale * src[i];
          dst[i] += vel[i];
        }
      } else {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= scale * src[i];
      }
    }
  }
  if (inner_solve) solve_domain_heads(model, domains);
  res.final_breakdown = last_finite;
  res.model = std::move(model);
  return res;
}

EvalResult evaluate(const TcriModel& m, const data::DomainDataset& ds,
                    Task task) {
  const std::vector<double> scores = m.forward_general(ds.features);
  EvalResult out;
  out.risk = obj::risk(scores, ds.targets, task);
  if (task == Task::binary_classification) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const int pred = scores[i] > 0.0 ? 1 : 0;
      const int label = ds.targets[i] > 0.5 ? 1 : 0;
      hits += pred == label ? 1 : 0;
    }
    out.accuracy = static_cast<double>(hits) / static_cast<double>(scores.size());
  }
  return out;
}

}  // namespace tcri::train
