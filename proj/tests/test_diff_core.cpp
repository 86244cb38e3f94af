#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "tcri/kernels.hpp"
#include "tcri/tape.hpp"

using namespace tcri;
using diff::Tape;
using diff::Tensor;
using diff::Var;
using testutil::check_gradients;

TEST_CASE("tensor construction validates shape and finiteness") {
  CHECK_THROWS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}));
  CHECK_THROWS(Tensor::from_data({2}, {1.0, std::nan("")}));
  CHECK_THROWS(Tensor::from_data({1}, {INFINITY}));
  const Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.0);
}

TEST_CASE("matmul values") {
  Tape t;
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const Tensor m = Tensor::matrix(2, 2, {3, -1, 2, 7});
  Var prod = t.matmul(t.constant(eye), t.constant(m));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(t.value(prod).at(i) == m.at(i));
  }
  Var ab = t.matmul(t.constant(Tensor::matrix(1, 2, {1, 2})),
                    t.constant(Tensor::matrix(2, 1, {3, 4})));
  CHECK(t.value(ab).at(0) == doctest::Approx(11.0));
  CHECK_THROWS(t.matmul(t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6})),
                        t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}))));
}

TEST_CASE("elementwise primitive values") {
  Tape t;
  Var x = t.constant(Tensor::vector({-1.0, 0.0, 2.0}));
  const Tensor r = t.value(t.relu(x));
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 0.0);
  CHECK(r.at(2) == 2.0);
  CHECK(t.value(t.sigmoid(t.constant(Tensor::scalar(0.0)))).scalar_value() ==
        doctest::Approx(0.5));
  CHECK_THROWS(t.log(t.constant(Tensor::vector({1.0, -2.0}))));
}

TEST_CASE("backward of sum is ones; scalar loss required") {
  Tape t;
  Var x = t.leaf(Tensor::vector({1.0, 2.0, 3.0}), true);
  Var s = t.sum(x);
  t.backward(s);
  for (std::size_t i = 0; i < 3; ++i) CHECK(t.grad(x).at(i) == 1.0);
  Tape t2;
  Var y = t2.leaf(Tensor::vector({1.0, 2.0}), true);
  CHECK_THROWS(t2.backward(y));
}

TEST_CASE("zero-scaled loss gives zero gradients") {
  Tape t;
  Var x = t.leaf(Tensor::vector({0.3, -0.7}), true);
  Var loss = t.scalar_mul(t.sum(t.square(x)), 0.0);
  t.backward(loss);
  CHECK(t.grad(x).at(0) == 0.0);
  CHECK(t.grad(x).at(1) == 0.0);
}

TEST_CASE("accumulation: y = x + x doubles the gradient") {
  Tape t;
  Var x = t.leaf(Tensor::vector({1.5, -2.0}), true);
  Var loss = t.sum(t.add(x, x));
  t.backward(loss);
  CHECK(t.grad(x).at(0) == 2.0);
  CHECK(t.grad(x).at(1) == 2.0);
}

TEST_CASE("no gradient flows into detached tensors") {
  Tape t;
  Var x = t.leaf(Tensor::vector({1.0, 2.0}), true);
  Var d = t.leaf(Tensor::vector({3.0, 4.0}), false);
  Var loss = t.sum(t.mul(x, d));
  t.backward(loss);
  CHECK(t.grad(x).at(0) == 3.0);
  CHECK_THROWS(t.grad(d));
}

TEST_CASE("unused parameters report zero gradients") {
  Tape t;
  Var used = t.leaf(Tensor::scalar(2.0), true);
  Var unused = t.leaf(Tensor::vector({1.0, 1.0}), true);
  Var loss = t.square(used);
  t.backward(loss);
  CHECK(t.grad(used).at(0) == doctest::Approx(4.0));
  CHECK(t.grad(unused).at(0) == 0.0);
  CHECK(t.grad(unused).at(1) == 0.0);
}

TEST_CASE("every primitive passes central finite differences") {
  rng::Rng r(991);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor a = testutil::random_normal({3, 4}, r);
    const Tensor b = testutil::random_normal({3, 4}, r);
    const Tensor m = testutil::random_normal({4, 2}, r);
    // positive tensor for log
    Tensor pos = testutil::random_tensor({3, 4}, r, 0.5, 2.0);

    auto unary = [&](const char* name, auto op, const Tensor& input) {
      auto res = check_gradients(
          {input}, [&op](Tape& t, const std::vector<Var>& v) {
            return t.sum(op(t, v[0]));
          });
      INFO(name << " rep " << rep);
      CHECK(res.max_rel_err < 1e-5);
    };
    unary("relu", [](Tape& t, Var x) { return t.relu(x); },
          testutil::random_tensor({3, 4}, r, 0.2, 1.0));  // keep off the kink
    unary("sigmoid", [](Tape& t, Var x) { return t.sigmoid(x); }, a);
    unary("exp", [](Tape& t, Var x) { return t.exp(x); }, a);
    unary("log", [](Tape& t, Var x) { return t.log(x); }, pos);
    unary("square", [](Tape& t, Var x) { return t.square(x); }, a);
    unary("softplus", [](Tape& t, Var x) { return t.softplus(x); }, a);
    unary("mean", [](Tape& t, Var x) { return t.mean(x); }, a);
    unary("transpose", [](Tape& t, Var x) { return t.transpose(x); }, a);
    unary("scalar_mul", [](Tape& t, Var x) { return t.scalar_mul(x, -1.7); }, a);
    unary("slice_cols",
          [](Tape& t, Var x) { return t.slice_cols(x, 1, 3); }, a);

    auto binary = [&](const char* name, auto op, const Tensor& x,
                      const Tensor& y) {
      auto res = check_gradients(
          {x, y}, [&op](Tape& t, const std::vector<Var>& v) {
            return t.sum(op(t, v[0], v[1]));
          });
      INFO(name << " rep " << rep);
      CHECK(res.max_rel_err < 1e-5);
    };
    binary("add", [](Tape& t, Var x, Var y) { return t.add(x, y); }, a, b);
    binary("sub", [](Tape& t, Var x, Var y) { return t.sub(x, y); }, a, b);
    binary("mul", [](Tape& t, Var x, Var y) { return t.mul(x, y); }, a, b);
    binary("matmul", [](Tape& t, Var x, Var y) { return t.matmul(x, y); }, a, m);
    binary("concat_cols",
           [](Tape& t, Var x, Var y) { return t.concat_cols(x, y); }, a, b);
    binary("add_row", [](Tape& t, Var x, Var y) { return t.add_row(x, y); }, a,
           testutil::random_normal({4}, r));
  }
}

TEST_CASE("losses pass finite differences") {
  rng::Rng r(5150);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor scores = testutil::random_normal({6, 1}, r);
    std::vector<double> yreg(6), ybin(6);
    for (auto& v : yreg) v = r.normal();
    for (auto& v : ybin) v = r.bernoulli(0.5) ? 1.0 : 0.0;
    auto r1 = check_gradients(
        {scores}, [&yreg](Tape& t, const std::vector<Var>& v) {
          return t.squared_loss(v[0], yreg);
        });
    CHECK(r1.max_rel_err < 1e-5);
    auto r2 = check_gradients(
        {scores}, [&ybin](Tape& t, const std::vector<Var>& v) {
          return t.logistic_loss(v[0], ybin);
        });
    CHECK(r2.max_rel_err < 1e-5);
  }
}

TEST_CASE("two-layer composite loss matches finite differences") {
  rng::Rng r(31);
  const Tensor x = testutil::random_normal({5, 3}, r);
  const Tensor w1 = testutil::random_normal({3, 4}, r);
  const Tensor w2 = testutil::random_normal({4, 1}, r);
  std::vector<double> y(5);
  for (auto& v : y) v = r.normal();
  auto res = check_gradients(
      {w1, w2}, [&x, &y](Tape& t, const std::vector<Var>& v) {
        Var h = t.relu(t.matmul(t.constant(x), v[0]));
        return t.squared_loss(t.matmul(h, v[1]), y);
      });
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("grad-norm penalty: hand values") {
  // risk(theta) = mean over one row [3,4] ... use z = I2, y = 0, squared:
  // grad = (2/n) z^T(z theta - y) with n=2 rows of identity
  Tape t;
  Var z = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var theta = t.leaf(Tensor::vector({3.0, 4.0}), true);
  Var p = t.grad_norm_linear_head(z, theta, std::nullopt, {0.0, 0.0},
                                  diff::LossKind::squared, diff::NormKind::l2);
  // grad_j = (2/2) * theta_j = theta_j -> norm = 5
  CHECK(t.value(p).scalar_value() == doctest::Approx(5.0));
}

TEST_CASE("grad-norm penalty: risk independent of theta is zero") {
  Tape t;
  Var z = t.constant(Tensor::zeros({4, 2}));
  Var theta = t.leaf(Tensor::vector({1.0, -2.0}), true);
  Var p = t.grad_norm_linear_head(z, theta, std::nullopt, {1.0, 1.0, 1.0, 1.0},
                                  diff::LossKind::squared, diff::NormKind::l2);
  CHECK(t.value(p).scalar_value() == doctest::Approx(0.0));
  t.backward(p);
  CHECK(t.grad(theta).at(0) == 0.0);  // subgradient at the kink
}

TEST_CASE("grad-norm penalty matches finite differences upstream") {
  rng::Rng r(77);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor z = testutil::random_normal({7, 3}, r);
    const Tensor theta = testutil::random_normal({3}, r);
    const Tensor bias = testutil::random_normal({1}, r);
    std::vector<double> yreg(7), ybin(7);
    for (auto& v : yreg) v = r.normal();
    for (auto& v : ybin) v = r.bernoulli(0.5) ? 1.0 : 0.0;
    for (auto norm : {diff::NormKind::l2, diff::NormKind::squared_l2}) {
      auto r1 = check_gradients(
          {z, theta, bias},
          [&yreg, norm](Tape& t, const std::vector<Var>& v) {
            return t.grad_norm_linear_head(v[0], v[1], v[2], yreg,
                                           diff::LossKind::squared, norm);
          },
          1e-4);
      CHECK(r1.max_rel_err < 1e-4);
      auto r2 = check_gradients(
          {z, theta, bias},
          [&ybin, norm](Tape& t, const std::vector<Var>& v) {
            return t.grad_norm_linear_head(v[0], v[1], v[2], ybin,
                                           diff::LossKind::logistic, norm);
          },
          1e-4);
      CHECK(r2.max_rel_err < 1e-4);
    }
  }
}

namespace {

// Independent fixed-bandwidth evaluation of the conditioned HSIC. The
// analytic backward treats the median bandwidth as a constant, so the finite
// difference oracle must hold it at the base-point value as well.
double cond_hsic_fixed_bw(const Tensor& phi, const Tensor& psi,
                          const std::vector<int>& groups, int num_groups,
                          const std::vector<double>& bw_p,
                          const std::vector<double>& bw_q) {
  double total = 0.0;
  int used = 0;
  for (int k = 0; k < num_groups; ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (groups[i] == k) rows.push_back(i);
    }
    const std::size_t n = rows.size();
    if (n < 2) continue;
    auto gram = [&rows](const Tensor& m, double bw) {
      const std::size_t nn = rows.size();
      std::vector<double> g(nn * nn);
      for (std::size_t i = 0; i < nn; ++i) {
        for (std::size_t j = 0; j < nn; ++j) {
          double d2 = 0.0;
          for (std::size_t c = 0; c < m.cols(); ++c) {
            const double d = m.at(rows[i], c) - m.at(rows[j], c);
            d2 += d * d;
          }
          g[i * nn + j] = std::exp(-d2 / (2.0 * bw * bw));
        }
      }
      return g;
    };
    const auto K = gram(phi, bw_p[k]);
    const auto L = gram(psi, bw_q[k]);
    // trace(K H L H) by explicit H = I - 11^T/n
    std::vector<double> H(n * n, -1.0 / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) H[i * n + i] += 1.0;
    auto mm = [n](const std::vector<double>& a, const std::vector<double>& b) {
      std::vector<double> c(n * n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < n; ++l)
          for (std::size_t j = 0; j < n; ++j)
            c[i * n + j] += a[i * n + l] * b[l * n + j];
      return c;
    };
    const auto khlh = mm(mm(mm(K, H), L), H);
    double tr = 0.0;
    for (std::size_t i = 0; i < n; ++i) tr += khlh[i * n + i];
    total += tr / static_cast<double>(n * n);
    ++used;
  }
  return total / used;
}

}  // namespace

TEST_CASE("conditional hsic gradient matches fixed-bandwidth differences") {
  rng::Rng r(123);
  std::vector<int> groups = {0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  for (int rep = 0; rep < 10; ++rep) {
    Tensor phi = testutil::random_normal({10, 2}, r);
    Tensor psi = testutil::random_normal({10, 2}, r);
    // base-point bandwidths, held fixed through the differences
    std::vector<double> bw_p, bw_q;
    for (int k = 0; k < 2; ++k) {
      bw_p.push_back(kern::median_bandwidth(kern::slice_rows(phi, groups, k)));
      bw_q.push_back(kern::median_bandwidth(kern::slice_rows(psi, groups, k)));
    }
    Tape t;
    Var vp = t.leaf(phi, true);
    Var vq = t.leaf(psi, true);
    Var loss = t.conditional_dependence(vp, vq, groups, 2,
                                        diff::PenaltyKind::hsic);
    CHECK(t.value(loss).scalar_value() ==
          doctest::Approx(cond_hsic_fixed_bw(phi, psi, groups, 2, bw_p, bw_q))
              .epsilon(1e-12));
    t.backward(loss);
    const double h = 1e-4;
    double max_rel = 0.0;
    auto probe = [&](Tensor& target, const Tensor& analytic) {
      for (std::size_t i = 0; i < target.size(); ++i) {
        const double orig = target.at(i);
        target.at(i) = orig + h;
        const double up = cond_hsic_fixed_bw(phi, psi, groups, 2, bw_p, bw_q);
        target.at(i) = orig - h;
        const double dn = cond_hsic_fixed_bw(phi, psi, groups, 2, bw_p, bw_q);
        target.at(i) = orig;
        const double fd = (up - dn) / (2.0 * h);
        const double a = analytic.at(i);
        const double rel =
            std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-6});
        max_rel = std::max(max_rel, rel);
      }
    };
    probe(phi, t.grad(vp));
    probe(psi, t.grad(vq));
    CHECK(max_rel < 1e-5);
  }
}

TEST_CASE("conditional cross-covariance matches finite differences") {
  rng::Rng r(321);
  std::vector<int> groups = {0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor phi = testutil::random_normal({10, 2}, r);
    const Tensor psi = testutil::random_normal({10, 3}, r);
    auto res = check_gradients(
        {phi, psi}, [&groups](Tape& t, const std::vector<Var>& v) {
          return t.conditional_dependence(v[0], v[1], groups, 2,
                                          diff::PenaltyKind::cov);
        });
    CHECK(res.max_rel_err < 1e-5);
  }
}
