#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tcri/rng.hpp"
#include "tcri/tape.hpp"
#include "tcri/tensor.hpp"

namespace tcri::testutil {

using diff::Tape;
using diff::Tensor;
using diff::Var;

inline Tensor random_tensor(std::vector<std::size_t> shape, rng::Rng& r,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = r.uniform(lo, hi);
  return t;
}

inline Tensor random_normal(std::vector<std::size_t> shape, rng::Rng& r) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = r.normal();
  return t;
}

// Builds the loss from leaf parameter values; used to evaluate both the
// analytic gradient (one reverse pass) and central finite differences.
using LossBuilder =
    std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
};

// Central finite differences with step h on every entry of every parameter.
// rel error = |a - f| / max(|a|, |f|, floor).
inline GradCheckResult check_gradients(std::vector<Tensor> params,
                                       const LossBuilder& build,
                                       double h = 1e-4, double floor = 1e-6) {
  GradCheckResult res;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (auto& p : params) vars.push_back(tape.leaf(p, true));
    Var loss = build(tape, vars);
    tape.backward(loss);
    for (auto v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&build](const std::vector<Tensor>& ps) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : ps) vars.push_back(tape.leaf(p, false));
    return tape.value(build(tape, vars)).scalar_value();
  };
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p].at(i);
      params[p].at(i) = orig + h;
      const double up = eval(params);
      params[p].at(i) = orig - h;
      const double dn = eval(params);
      params[p].at(i) = orig;
      const double fd = (up - dn) / (2.0 * h);
      const double a = analytic[p].at(i);
      const double denom = std::max({std::fabs(a), std::fabs(fd), floor});
      const double rel = std::fabs(a - fd) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p;
        res.worst_entry = i;
      }
    }
  }
  return res;
}

inline double mean(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  return m / static_cast<double>(v.size());
}

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    da += (a[i] - ma) * (a[i] - ma);
    db += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(da * db);
}

}  // namespace tcri::testutil
