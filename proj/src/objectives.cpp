#include "tcri/objectives.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tcri/kernels.hpp"

namespace tcri::obj {

using diff::Tape;
using diff::Tensor;
using diff::Var;
using model::Task;

void TcriHyperParams::validate() const {
  if (alpha < 0.0 || alpha > 1.0) {
    throw std::invalid_argument("hp: alpha must lie in [0,1]");
  }
  if (beta < 0.0 || lambda < 0.0) {
    throw std::invalid_argument("hp: beta and lambda must be nonnegative");
  }
  if (y_bins < 1) throw std::invalid_argument("hp: y_bins must be >= 1");
}

std::string TcriHyperParams::describe() const {
  std::ostringstream os;
  os << "alpha=" << alpha << ",beta=" << beta << ",lambda=" << lambda
     << ",penalty=" << (penalty == diff::PenaltyKind::hsic ? "hsic" : "cov")
     << ",irm_norm=" << (irm_norm == diff::NormKind::l2 ? "l2" : "sq")
     << ",y_bins=" << y_bins;
  return os.str();
}

double risk(std::span<const double> predictions,
            std::span<const double> targets, Task task) {
  if (predictions.size() != targets.size()) {
    throw std::invalid_argument("risk: length mismatch");
  }
  if (predictions.empty()) throw std::invalid_argument("risk: empty batch");
  const auto n = static_cast<double>(targets.size());
  double acc = 0.0;
  if (task == Task::regression) {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double r = predictions[i] - targets[i];
      acc += r * r;
    }
  } else {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const double s = predictions[i];
      const double sp = s > 30.0 ? s : (s < -30.0 ? std::exp(s) : std::log1p(std::exp(s)));
      acc += sp - targets[i] * s;
    }
  }
  return acc / n;
}

Batch make_batch(const data::DomainDataset& ds, const TcriHyperParams& hp,
                 Task task) {
  Batch b;
  b.x = &ds.features;
  b.y = &ds.targets;
  b.domain_id = ds.domain_id;
  if (task == Task::binary_classification) {
    b.ci_groups.resize(ds.targets.size());
    for (std::size_t i = 0; i < ds.targets.size(); ++i) {
      b.ci_groups[i] = ds.targets[i] > 0.5 ? 1 : 0;
    }
    b.num_groups = 2;
  } else {
    b.ci_groups = kern::quantile_bins(ds.targets, hp.y_bins);
    b.num_groups = hp.y_bins;
  }
  return b;
}

BoundModel bind(Tape& tape, model::TcriModel& m) {
  BoundModel bm;
  bm.model = &m;
  bm.tape = &tape;
  auto reg = [&tape](Tensor& t, bool rg) { return tape.leaf(t, rg); };
  if (m.featurizer) {
    bm.f_w = reg(m.featurizer->weight, true);
    if (m.featurizer->bias) bm.f_b = reg(*m.featurizer->bias, true);
  }
  bm.phi_w = reg(m.phi_head.weight, true);
  if (m.phi_head.bias) bm.phi_b = reg(*m.phi_head.bias, true);
  bm.psi_w = reg(m.psi_head.weight, true);
  if (m.psi_head.bias) bm.psi_b = reg(*m.psi_head.bias, true);
  const bool train_thc = !m.arch.freeze_theta_c;
  bm.thc_w = reg(m.theta_c.weight, train_thc);
  if (m.theta_c.bias) bm.thc_b = reg(*m.theta_c.bias, train_thc);
  for (auto& th : m.theta_domains) {
    bm.the_w.push_back(reg(th.weight, true));
    if (th.bias) {
      bm.the_b.push_back(reg(*th.bias, true));
    } else {
      bm.the_b.emplace_back();
    }
  }
  return bm;
}

namespace {

Var featurize(const BoundModel& bm, Var x) {
  if (!bm.f_w) return x;
  Var h = bm.tape->matmul(x, *bm.f_w);
  if (bm.f_b) h = bm.tape->add_row(h, *bm.f_b);
  return bm.tape->relu(h);
}

Var head(const BoundModel& bm, Var a, Var w, const std::optional<Var>& b) {
  Var out = bm.tape->matmul(a, w);
  if (b) out = bm.tape->add_row(out, *b);
  return out;
}

}  // namespace

Var BoundModel::rep_general(Var x) const {
  return head(*this, featurize(*this, x), phi_w, phi_b);
}

Var BoundModel::rep_specific(Var x) const {
  return head(*this, featurize(*this, x), psi_w, psi_b);
}

Var BoundModel::scores_general(Var rep) const {
  return head(*this, rep, thc_w, thc_b);
}

Var BoundModel::scores_domain(Var joint_rep, std::size_t domain_index) const {
  if (domain_index >= the_w.size()) {
    throw std::out_of_range("scores_domain: bad domain index");
  }
  return head(*this, joint_rep, the_w[domain_index], the_b[domain_index]);
}

namespace {

Var risk_of(Tape& t, Var scores, const std::vector<double>& y, Task task) {
  if (y.empty()) throw std::invalid_argument("loss: empty batch");
  if (task == Task::regression) return t.squared_loss(scores, y);
  return t.logistic_loss(scores, y);
}

struct DomainGraph {
  Var rep_p;  // phi(F(x))
  Var rep_q;  // psi(F(x))
};

DomainGraph build_reps(BoundModel& bm, const Batch& batch) {
  Var x = bm.tape->constant(*batch.x);
  Var a = featurize(bm, x);
  return {head(bm, a, bm.phi_w, bm.phi_b), head(bm, a, bm.psi_w, bm.psi_b)};
}

Var loss_phi_from(BoundModel& bm, const Batch& batch, Var rep_p) {
  return risk_of(*bm.tape, bm.scores_general(rep_p), *batch.y,
                 bm.model->arch.task);
}

Var loss_phi_psi_from(BoundModel& bm, const Batch& batch, Var rep_p, Var rep_q,
                      std::size_t domain_index) {
  Var joint = bm.tape->concat_cols(rep_p, rep_q);
  return risk_of(*bm.tape, bm.scores_domain(joint, domain_index), *batch.y,
                 bm.model->arch.task);
}

Var loss_irm_from(BoundModel& bm, const Batch& batch, Var rep_p,
                  const TcriHyperParams& hp) {
  const diff::LossKind lk = bm.model->arch.task == Task::regression
                                ? diff::LossKind::squared
                                : diff::LossKind::logistic;
  // theta_c is a p x 1 matrix; the op wants the vector view.
  return bm.tape->grad_norm_linear_head(rep_p, bm.thc_w, bm.thc_b, *batch.y, lk,
                                        hp.irm_norm);
}

Var loss_ci_from(BoundModel& bm, const Batch& batch, Var rep_p, Var rep_q,
                 const TcriHyperParams& hp) {
  return bm.tape->conditional_dependence(rep_p, rep_q, batch.ci_groups,
                                         batch.num_groups, hp.penalty);
}

}  // namespace

Var loss_phi(BoundModel& bm, const Batch& batch) {
  return loss_phi_from(bm, batch, build_reps(bm, batch).rep_p);
}

Var loss_phi_psi(BoundModel& bm, const Batch& batch, std::size_t domain_index) {
  DomainGraph g = build_reps(bm, batch);
  return loss_phi_psi_from(bm, batch, g.rep_p, g.rep_q, domain_index);
}

Var loss_irm(BoundModel& bm, const Batch& batch, const TcriHyperParams& hp) {
  return loss_irm_from(bm, batch, build_reps(bm, batch).rep_p, hp);
}

Var loss_ci(BoundModel& bm, const Batch& batch, const TcriHyperParams& hp) {
  DomainGraph g = build_reps(bm, batch);
  return loss_ci_from(bm, batch, g.rep_p, g.rep_q, hp);
}

std::pair<Var, LossBreakdown> tcri_total(BoundModel& bm,
                                         std::span<const Batch> batches,
                                         const TcriHyperParams& hp) {
  hp.validate();
  if (batches.empty()) {
    throw std::invalid_argument("tcri_total: no domain batches");
  }
  if (batches.size() != bm.the_w.size()) {
    throw std::invalid_argument(
        "tcri_total: batch count disagrees with domain-head count");
  }
  Tape& t = *bm.tape;
  LossBreakdown bd;
  Var acc;
  const double inv_e = 1.0 / static_cast<double>(batches.size());
  for (std::size_t e = 0; e < batches.size(); ++e) {
    const Batch& batch = batches[e];
    DomainGraph g = build_reps(bm, batch);
    DomainTerms terms;
    terms.domain_id = batch.domain_id;

    Var domain_total;
    auto add_term = [&](Var v, double w) {
      Var scaled = t.scalar_mul(v, w);
      domain_total = domain_total.valid() ? t.add(domain_total, scaled) : scaled;
    };

    Var lp = loss_phi_from(bm, batch, g.rep_p);
    terms.l_phi = t.value(lp).scalar_value();
    add_term(lp, hp.alpha);
    if (hp.alpha < 1.0) {
      Var lpp = loss_phi_psi_from(bm, batch, g.rep_p, g.rep_q, e);
      terms.l_phi_psi = t.value(lpp).scalar_value();
      add_term(lpp, 1.0 - hp.alpha);
    }
    if (hp.lambda > 0.0) {
      Var li = loss_irm_from(bm, batch, g.rep_p, hp);
      terms.l_irm = t.value(li).scalar_value();
      add_term(li, hp.lambda);
    }
    if (hp.beta > 0.0) {
      Var lc = loss_ci_from(bm, batch, g.rep_p, g.rep_q, hp);
      terms.l_ci = t.value(lc).scalar_value();
      add_term(lc, hp.beta);
    }
    terms.total = t.value(domain_total).scalar_value();
    bd.per_domain.push_back(terms);

    Var weighted = t.scalar_mul(domain_total, inv_e);
    acc = acc.valid() ? t.add(acc, weighted) : weighted;

    bd.l_phi += terms.l_phi * inv_e;
    bd.l_phi_psi += terms.l_phi_psi * inv_e;
    bd.l_irm += terms.l_irm * inv_e;
    bd.l_ci += terms.l_ci * inv_e;
  }
  bd.total = t.value(acc).scalar_value();
  return {acc, bd};
}

}  // namespace tcri::obj
