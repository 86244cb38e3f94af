#include "tcri/tape.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "tcri/kernels.hpp"
#include "tcri/parallel.hpp"

namespace tcri::diff {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
  }
}

}  // namespace

int Tape::check(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw std::logic_error("Tape: invalid Var handle");
  }
  return v.id;
}

Var Tape::push(Tensor value, bool requires_grad,
               std::function<void(Tape&, int)> backprop) {
  nodes_.push_back(Node{std::move(value), requires_grad, std::move(backprop)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Tensor& Tape::grad_buffer(int id) {
  if (grads_.size() != nodes_.size()) {
    throw std::logic_error("Tape: gradient access outside backward()");
  }
  if (!touched_[id]) {
    grads_[id] = Tensor::zeros(nodes_[id].value.shape());
    touched_[id] = 1;
  }
  return grads_[id];
}

void Tape::accumulate(int id, const Tensor& g) {
  Tensor& buf = grad_buffer(id);
  auto dst = buf.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

const Tensor& Tape::grad(Var v) const {
  const int id = check(v);
  if (grads_.size() != nodes_.size()) {
    throw std::logic_error("Tape: grad() before backward()");
  }
  if (!touched_[id]) {
    throw std::logic_error("Tape: grad() on an untouched node");
  }
  return grads_[id];
}

void Tape::backward(Var loss) {
  const int id = check(loss);
  if (!nodes_[id].value.is_scalar()) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                nodes_[id].value.shape_str());
  }
  grads_.assign(nodes_.size(), Tensor());
  touched_.assign(nodes_.size(), 0);
  grad_buffer(id).at(0) = 1.0;
  for (int i = id; i >= 0; --i) {
    if (!touched_[i] || !nodes_[i].requires_grad) continue;
    if (nodes_[i].backprop) nodes_[i].backprop(*this, i);
  }
  // Parameters that never reached the loss still report zero gradients.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].requires_grad && !touched_[i]) {
      grads_[i] = Tensor::zeros(nodes_[i].value.shape());
      touched_[i] = 1;
    }
  }
}

// --- elementwise and structural primitives ---------------------------------

Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.grads_[self];
    if (t.requires_grad(a)) t.accumulate(a.id, g);
    if (t.requires_grad(b)) t.accumulate(b.id, g);
  });
}

Var Tape::sub(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "sub");
  Tensor out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.grads_[self];
    if (t.requires_grad(a)) t.accumulate(a.id, g);
    if (t.requires_grad(b)) {
      Tensor neg = g;
      for (double& v : neg.data()) v = -v;
      t.accumulate(b.id, neg);
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "mul");
  Tensor out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.grads_[self];
    if (t.requires_grad(a)) {
      Tensor ga = g;
      auto gd = ga.data();
      auto bd2 = t.value(b).data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= bd2[i];
      t.accumulate(a.id, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb = g;
      auto gd = gb.data();
      auto ad = t.value(a).data();
      for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= ad[i];
      t.accumulate(b.id, gb);
    }
  });
}

Var Tape::scalar_mul(Var a, double c) {
  Tensor out = value(a);
  for (double& v : out.data()) v *= c;
  return push(std::move(out), requires_grad(a), [a, c](Tape& t, int self) {
    Tensor g = t.grads_[self];
    for (double& v : g.data()) v *= c;
    t.accumulate(a.id, g);
  });
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = matmul_value(value(a), value(b));
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b](Tape& t, int self) {
    const Tensor& g = t.grads_[self];
    if (t.requires_grad(a)) {
      t.accumulate(a.id, matmul_value(g, t.value(b).transposed()));
    }
    if (t.requires_grad(b)) {
      t.accumulate(b.id, matmul_value(t.value(a).transposed(), g));
    }
  });
}

Var Tape::transpose(Var a) {
  Tensor out = value(a).transposed();
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    t.accumulate(a.id, t.grads_[self].transposed());
  });
}

Var Tape::relu(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    Tensor g = t.grads_[self];
    auto gd = g.data();
    auto ad = t.value(a).data();
    for (std::size_t i = 0; i < gd.size(); ++i) {
      if (ad[i] <= 0.0) gd[i] = 0.0;
    }
    t.accumulate(a.id, g);
  });
}

Var Tape::sigmoid(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = stable_sigmoid(v);
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    Tensor g = t.grads_[self];
    auto gd = g.data();
    auto sd = t.value(Var{self}).data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= sd[i] * (1.0 - sd[i]);
    t.accumulate(a.id, g);
  });
}

Var Tape::exp(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = std::exp(v);
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    Tensor g = t.grads_[self];
    auto gd = g.data();
    auto ed = t.value(Var{self}).data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= ed[i];
    t.accumulate(a.id, g);
  });
}

Var Tape::log(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) {
    if (v <= 0.0) throw std::domain_error("log: nonpositive input");
    v = std::log(v);
  }
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    Tensor g = t.grads_[self];
    auto gd = g.data();
    auto ad = t.value(a).data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] /= ad[i];
    t.accumulate(a.id, g);
  });
}

Var Tape::square(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v *= v;
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    Tensor g = t.grads_[self];
    auto gd = g.data();
    auto ad = t.value(a).data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= 2.0 * ad[i];
    t.accumulate(a.id, g);
  });
}

Var Tape::softplus(Var a) {
  Tensor out = value(a);
  for (double& v : out.data()) v = stable_softplus(v);
  return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
    Tensor g = t.grads_[self];
    auto gd = g.data();
    auto ad = t.value(a).data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= stable_sigmoid(ad[i]);
    t.accumulate(a.id, g);
  });
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return push(Tensor::scalar(s), requires_grad(a), [a](Tape& t, int self) {
    const double g = t.grads_[self].at(0);
    Tensor full = Tensor::zeros(t.value(a).shape());
    for (double& v : full.data()) v = g;
    t.accumulate(a.id, full);
  });
}

Var Tape::mean(Var a) {
  const std::size_t n = value(a).size();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return push(Tensor::scalar(s / static_cast<double>(n)), requires_grad(a),
              [a, n](Tape& t, int self) {
                const double g = t.grads_[self].at(0) / static_cast<double>(n);
                Tensor full = Tensor::zeros(t.value(a).shape());
                for (double& v : full.data()) v = g;
                t.accumulate(a.id, full);
              });
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rows() != bv.rows()) {
    throw std::invalid_argument("concat_cols: row counts disagree");
  }
  const std::size_t n = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out = Tensor::zeros({n, ca + cb});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out.at(i, j) = av.at(i, j);
    for (std::size_t j = 0; j < cb; ++j) out.at(i, ca + j) = bv.at(i, j);
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [a, b, n, ca, cb](Tape& t, int self) {
    const Tensor& g = t.grads_[self];
    if (t.requires_grad(a)) {
      Tensor ga = Tensor::zeros({n, ca});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ca; ++j) ga.at(i, j) = g.at(i, j);
      t.accumulate(a.id, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb = Tensor::zeros({n, cb});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cb; ++j) gb.at(i, j) = g.at(i, ca + j);
      t.accumulate(b.id, gb);
    }
  });
}

Var Tape::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = value(a);
  if (begin >= end || end > av.cols()) {
    throw std::invalid_argument("slice_cols: bad column range");
  }
  const std::size_t n = av.rows(), w = end - begin;
  Tensor out = Tensor::zeros({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = av.at(i, begin + j);
  return push(std::move(out), requires_grad(a),
              [a, begin, n, w](Tape& t, int self) {
                const Tensor& g = t.grads_[self];
                Tensor ga = Tensor::zeros(t.value(a).shape());
                for (std::size_t i = 0; i < n; ++i)
                  for (std::size_t j = 0; j < w; ++j)
                    ga.at(i, begin + j) = g.at(i, j);
                t.accumulate(a.id, ga);
              });
}

Var Tape::add_row(Var m, Var row) {
  const Tensor& mv = value(m);
  const Tensor& rv = value(row);
  if (rv.size() != mv.cols()) {
    throw std::invalid_argument("add_row: row width disagrees with matrix");
  }
  const std::size_t n = mv.rows(), c = mv.cols();
  Tensor out = mv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) += rv.at(j);
  const bool rg = requires_grad(m) || requires_grad(row);
  return push(std::move(out), rg, [m, row, n, c](Tape& t, int self) {
    const Tensor& g = t.grads_[self];
    if (t.requires_grad(m)) t.accumulate(m.id, g);
    if (t.requires_grad(row)) {
      Tensor gr = Tensor::zeros(t.value(row).shape());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gr.at(j) += g.at(i, j);
      t.accumulate(row.id, gr);
    }
  });
}

// --- losses -----------------------------------------------------------------

Var Tape::squared_loss(Var predictions, const std::vector<double>& targets) {
  const Tensor& p = value(predictions);
  if (p.size() != targets.size()) {
    throw std::invalid_argument("squared_loss: length mismatch");
  }
  if (targets.empty()) throw std::invalid_argument("squared_loss: empty batch");
  const std::size_t n = targets.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = p.at(i) - targets[i];
    s += r * r;
  }
  return push(Tensor::scalar(s / static_cast<double>(n)),
              requires_grad(predictions),
              [predictions, targets](Tape& t, int self) {
                const double g = t.grads_[self].at(0);
                const Tensor& p2 = t.value(predictions);
                Tensor gp = Tensor::zeros(p2.shape());
                const double inv = 2.0 / static_cast<double>(targets.size());
                for (std::size_t i = 0; i < targets.size(); ++i) {
                  gp.at(i) = g * inv * (p2.at(i) - targets[i]);
                }
                t.accumulate(predictions.id, gp);
              });
}

Var Tape::logistic_loss(Var scores, const std::vector<double>& targets) {
  const Tensor& s = value(scores);
  if (s.size() != targets.size()) {
    throw std::invalid_argument("logistic_loss: length mismatch");
  }
  if (targets.empty()) throw std::invalid_argument("logistic_loss: empty batch");
  const std::size_t n = targets.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += stable_softplus(s.at(i)) - targets[i] * s.at(i);
  }
  return push(Tensor::scalar(acc / static_cast<double>(n)),
              requires_grad(scores), [scores, targets](Tape& t, int self) {
                const double g = t.grads_[self].at(0);
                const Tensor& s2 = t.value(scores);
                Tensor gs = Tensor::zeros(s2.shape());
                const double inv = 1.0 / static_cast<double>(targets.size());
                for (std::size_t i = 0; i < targets.size(); ++i) {
                  gs.at(i) = g * inv * (stable_sigmoid(s2.at(i)) - targets[i]);
                }
                t.accumulate(scores.id, gs);
              });
}

// --- gradient-norm penalty ---------------------------------------------------

namespace {

// Shared forward state for the penalty backward pass.
struct GradNormState {
  std::vector<double> lprime;   // per-row loss first derivative at s_i
  std::vector<double> ldouble;  // per-row second derivative
  std::vector<double> g;        // risk gradient wrt [theta; bias]
  double norm = 0.0;
};

GradNormState grad_norm_forward(const Tensor& z, const Tensor& theta,
                                const Tensor* bias,
                                const std::vector<double>& targets,
                                LossKind loss) {
  const std::size_t n = z.rows(), p = z.cols();
  if (theta.size() != p) {
    throw std::invalid_argument("grad_norm: theta width disagrees with z");
  }
  if (targets.size() != n) {
    throw std::invalid_argument("grad_norm: target length disagrees with z");
  }
  GradNormState st;
  st.lprime.resize(n);
  st.ldouble.resize(n);
  const std::size_t dim = p + (bias ? 1 : 0);
  st.g.assign(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = bias ? bias->at(0) : 0.0;
    for (std::size_t j = 0; j < p; ++j) s += z.at(i, j) * theta.at(j);
    if (loss == LossKind::squared) {
      st.lprime[i] = 2.0 * (s - targets[i]);
      st.ldouble[i] = 2.0;
    } else {
      const double sg = stable_sigmoid(s);
      st.lprime[i] = sg - targets[i];
      st.ldouble[i] = sg * (1.0 - sg);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < p; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += z.at(i, j) * st.lprime[i];
    st.g[j] = acc * inv_n;
  }
  if (bias) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += st.lprime[i];
    st.g[p] = acc * inv_n;
  }
  double sq = 0.0;
  for (double v : st.g) sq += v * v;
  st.norm = std::sqrt(sq);
  return st;
}

}  // namespace

Var Tape::grad_norm_linear_head(Var z, Var theta, std::optional<Var> bias,
                                const std::vector<double>& targets,
                                LossKind loss, NormKind norm) {
  const Tensor& zv = value(z);
  const Tensor& tv = value(theta);
  const Tensor* bv = bias ? &value(*bias) : nullptr;
  GradNormState st = grad_norm_forward(zv, tv, bv, targets, loss);
  const double out =
      norm == NormKind::l2 ? st.norm : st.norm * st.norm;
  bool rg = requires_grad(z) || requires_grad(theta) ||
            (bias && requires_grad(*bias));
  return push(
      Tensor::scalar(out), rg,
      [z, theta, bias, targets, loss, norm](Tape& t, int self) {
        const Tensor& zv2 = t.value(z);
        const Tensor& tv2 = t.value(theta);
        const Tensor* bv2 = bias ? &t.value(*bias) : nullptr;
        GradNormState st2 = grad_norm_forward(zv2, tv2, bv2, targets, loss);
        const double gout = t.grads_[self].at(0);
        const std::size_t n = zv2.rows(), p = zv2.cols();
        // ghat: direction of the differential. ||g|| has subgradient 0 at the
        // origin; ||g||^2 uses 2g.
        std::vector<double> ghat(st2.g.size(), 0.0);
        if (norm == NormKind::l2) {
          if (st2.norm < 1e-12) return;  // kink: contribute nothing
          for (std::size_t j = 0; j < ghat.size(); ++j) {
            ghat[j] = st2.g[j] / st2.norm;
          }
        } else {
          for (std::size_t j = 0; j < ghat.size(); ++j) {
            ghat[j] = 2.0 * st2.g[j];
          }
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        // zg_i = [z_i, 1] . ghat
        std::vector<double> zg(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          double acc = bias ? ghat[p] : 0.0;
          for (std::size_t j = 0; j < p; ++j) acc += zv2.at(i, j) * ghat[j];
          zg[i] = acc;
        }
        if (t.requires_grad(z)) {
          Tensor gz = Tensor::zeros({n, p});
          for (std::size_t i = 0; i < n; ++i) {
            const double a = st2.lprime[i] * inv_n;
            const double b = st2.ldouble[i] * zg[i] * inv_n;
            for (std::size_t j = 0; j < p; ++j) {
              gz.at(i, j) = gout * (a * ghat[j] + b * tv2.at(j));
            }
          }
          t.accumulate(z.id, gz);
        }
        if (t.requires_grad(theta)) {
          Tensor gt = Tensor::zeros(tv2.shape());
          for (std::size_t j = 0; j < p; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              acc += st2.ldouble[i] * zg[i] * zv2.at(i, j);
            }
            gt.at(j) = gout * acc * inv_n;
          }
          t.accumulate(theta.id, gt);
        }
        if (bias && t.requires_grad(*bias)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < n; ++i) acc += st2.ldouble[i] * zg[i];
          Tensor gb = Tensor::zeros(t.value(*bias).shape());
          gb.at(0) = gout * acc * inv_n;
          t.accumulate(bias->id, gb);
        }
      });
}

// --- conditional dependence penalty ------------------------------------------

namespace {

// d HSIC / d rep for one slice, given G = d HSIC / d K (symmetric) and the
// Gram built from rep at the given bandwidth:
//   d/drep_i = (-2/b^2) * sum_j (G.K)_ij (rep_i - rep_j)
void add_hsic_rep_grad(const Tensor& g, const kern::Gram& gram,
                       const Tensor& rep, double scale,
                       const std::vector<std::size_t>& rows, Tensor& out) {
  const std::size_t nk = rep.rows(), d = rep.cols();
  const double c = -2.0 / (gram.bandwidth * gram.bandwidth) * scale;
  const double* gd = g.data().data();
  const double* kd = gram.matrix.data().data();
  const double* rd = rep.data().data();
  const std::size_t ocols = out.cols();
  double* od = out.data().data();
#pragma omp parallel for schedule(static) if (par::enabled() && nk > 384)
  for (long long ii = 0; ii < static_cast<long long>(nk); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* gr = gd + i * nk;
    const double* kr = kd + i * nk;
    double wsum = 0.0;
    std::vector<double> wr(d, 0.0);
    for (std::size_t j = 0; j < nk; ++j) {
      const double w = gr[j] * kr[j];
      wsum += w;
      const double* rj = rd + j * d;
      for (std::size_t k = 0; k < d; ++k) wr[k] += w * rj[k];
    }
    double* orow = od + rows[i] * ocols;
    const double* ri = rd + i * d;
    for (std::size_t k = 0; k < d; ++k) {
      orow[k] += c * (wsum * ri[k] - wr[k]);
    }
  }
}

}  // namespace

Var Tape::conditional_dependence(Var phi, Var psi,
                                 const std::vector<int>& groups,
                                 int num_groups, PenaltyKind kind) {
  const Tensor& pv = value(phi);
  const Tensor& qv = value(psi);
  const bool rg = requires_grad(phi) || requires_grad(psi);
  // For hsic the Gram matrices are built once and shared between the forward
  // value and the backward pass; the per-slice arithmetic mirrors
  // kern::conditional_hsic exactly, so the values agree bit for bit. The cov
  // branch delegates to the standalone estimator.
  struct SliceState {
    std::vector<std::size_t> rows;
    kern::Gram gram_p, gram_q;
    Tensor slice_p, slice_q;
  };
  auto cache = std::make_shared<std::vector<SliceState>>();
  double fwd_value = 0.0;
  if (kind == PenaltyKind::hsic) {
    if (pv.rows() != qv.rows() || pv.rows() != groups.size()) {
      throw std::invalid_argument("conditional_dependence: row counts disagree");
    }
    for (int l : groups) {
      if (l < 0 || l >= num_groups) {
        throw std::invalid_argument(
            "conditional_dependence: label outside [0, num_groups)");
      }
    }
    double sum = 0.0;
    for (int k = 0; k < num_groups; ++k) {
      SliceState st;
      for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i] == k) st.rows.push_back(i);
      }
      if (st.rows.size() < 2) continue;
      st.slice_p = kern::slice_rows(pv, groups, k);
      st.slice_q = kern::slice_rows(qv, groups, k);
      st.gram_p = kern::rbf_gram(st.slice_p, kern::median_bandwidth(st.slice_p));
      st.gram_q = kern::rbf_gram(st.slice_q, kern::median_bandwidth(st.slice_q));
      sum += kern::hsic_v(st.gram_p, st.gram_q);
      cache->push_back(std::move(st));
    }
    if (cache->empty()) {
      throw std::invalid_argument(
          "conditional_hsic: no class slice has two or more rows");
    }
    fwd_value = sum / static_cast<double>(cache->size());
  } else {
    fwd_value = kern::conditional_cross_cov(pv, qv, groups, num_groups).value;
  }
  return push(
      Tensor::scalar(fwd_value), rg,
      [phi, psi, groups, num_groups, kind, cache](Tape& t, int self) {
        const double gout = t.grads_[self].at(0);
        const Tensor& p = t.value(phi);
        const Tensor& q = t.value(psi);
        Tensor gp = Tensor::zeros(p.shape());
        Tensor gq = Tensor::zeros(q.shape());
        if (kind == PenaltyKind::hsic) {
          const double scale = gout / static_cast<double>(cache->size());
          for (const auto& st : *cache) {
            const std::size_t nk = st.rows.size();
            const double inv_n2 = 1.0 / (static_cast<double>(nk) * nk);
            // dHSIC/dK = (H L H)/n^2, dHSIC/dL = (H K H)/n^2
            Tensor hlh = kern::double_center(st.gram_q.matrix);
            Tensor hkh = kern::double_center(st.gram_p.matrix);
            for (double& v : hlh.data()) v *= inv_n2;
            for (double& v : hkh.data()) v *= inv_n2;
            if (t.requires_grad(phi)) {
              add_hsic_rep_grad(hlh, st.gram_p, st.slice_p, scale, st.rows, gp);
            }
            if (t.requires_grad(psi)) {
              add_hsic_rep_grad(hkh, st.gram_q, st.slice_q, scale, st.rows, gq);
            }
          }
          if (t.requires_grad(phi)) t.accumulate(phi.id, gp);
          if (t.requires_grad(psi)) t.accumulate(psi.id, gq);
          return;
        }
        // cov branch
        int used = 0;
        std::vector<std::vector<std::size_t>> members(num_groups);
        for (std::size_t i = 0; i < groups.size(); ++i) {
          members[groups[i]].push_back(i);
        }
        for (int k = 0; k < num_groups; ++k) {
          if (members[k].size() >= 2) ++used;
        }
        const double scale = gout / static_cast<double>(used);
        for (int k = 0; k < num_groups; ++k) {
          const auto& rows = members[k];
          const std::size_t nk = rows.size();
          if (nk < 2) continue;
          const Tensor pk = kern::slice_rows(p, groups, k);
          const Tensor qk = kern::slice_rows(q, groups, k);
          {
            // cov: value_k = || (1/nk) Pc^T Qc ||_F^2, with column-centered
            // slices. dv/dPc = (2/nk) Qc C^T, dv/dQc = (2/nk) Pc C; centering
            // is symmetric so gradients get column-centered back.
            Tensor pc = pk, qc = qk;
            auto center_cols = [nk](Tensor& m) {
              for (std::size_t c = 0; c < m.cols(); ++c) {
                double mean = 0.0;
                for (std::size_t i = 0; i < nk; ++i) mean += m.at(i, c);
                mean /= static_cast<double>(nk);
                for (std::size_t i = 0; i < nk; ++i) m.at(i, c) -= mean;
              }
            };
            center_cols(pc);
            center_cols(qc);
            const std::size_t a = pc.cols(), b = qc.cols();
            Tensor cmat = matmul_value(pc.transposed(), qc);  // a x b
            for (double& v : cmat.data()) v /= static_cast<double>(nk);
            const double f = 2.0 / static_cast<double>(nk) * scale;
            if (t.requires_grad(phi)) {
              Tensor dpc = matmul_value(qc, cmat.transposed());  // nk x a
              center_cols(dpc);
              for (std::size_t i = 0; i < nk; ++i)
                for (std::size_t c = 0; c < a; ++c)
                  gp.at(rows[i], c) += f * dpc.at(i, c);
            }
            if (t.requires_grad(psi)) {
              Tensor dqc = matmul_value(pc, cmat);  // nk x b
              center_cols(dqc);
              for (std::size_t i = 0; i < nk; ++i)
                for (std::size_t c = 0; c < b; ++c)
                  gq.at(rows[i], c) += f * dqc.at(i, c);
            }
          }
        }
        if (t.requires_grad(phi)) t.accumulate(phi.id, gp);
        if (t.requires_grad(psi)) t.accumulate(psi.id, gq);
      });
}

}  // namespace tcri::diff
