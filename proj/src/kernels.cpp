#include "tcri/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tcri/parallel.hpp"

namespace tcri::kern {

using diff::Tensor;

namespace {

inline double squared_distance_raw(const double* a, const double* b,
                                   std::size_t d) {
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double diff = a[c] - b[c];
    s += diff * diff;
  }
  return s;
}

// Upper-triangle squared distances in pair order (0,1),(0,2),...,(n-2,n-1).
std::vector<double> pairwise_sq(const Tensor& x, bool parallel) {
  const std::size_t n = x.rows(), d = x.cols();
  const double* base = x.data().data();
  const std::size_t m = n * (n - 1) / 2;
  std::vector<double> out(m);
#pragma omp parallel for schedule(static) if (parallel && n > 512)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    std::size_t slot = i * n - i * (i + 1) / 2 - i;
    const double* ri = base + i * d;
    for (std::size_t j = i + 1; j < n; ++j) {
      out[slot + j - 1] = squared_distance_raw(ri, base + j * d, d);
    }
  }
  return out;
}

double median_from_sq(std::vector<double>& d2) {
  const std::size_t mid = d2.size() / 2;
  std::nth_element(d2.begin(), d2.begin() + mid, d2.end());
  double med = std::sqrt(d2[mid]);
  if (d2.size() % 2 == 0) {
    const double lo =
        std::sqrt(*std::max_element(d2.begin(), d2.begin() + mid));
    med = 0.5 * (lo + med);
  }
  return med > 0.0 ? med : 1.0;
}

}  // namespace

double median_bandwidth_serial(const Tensor& x) {
  if (x.rows() < 2) throw std::invalid_argument("median_bandwidth: need n >= 2");
  auto d2 = pairwise_sq(x, false);
  return median_from_sq(d2);
}

double median_bandwidth(const Tensor& x) {
  if (x.rows() < 2) throw std::invalid_argument("median_bandwidth: need n >= 2");
  auto d2 = pairwise_sq(x, par::enabled());
  return median_from_sq(d2);
}

namespace {

Gram gram_impl(const Tensor& x, double bandwidth, bool parallel) {
  if (!(bandwidth > 0.0)) {
    throw std::invalid_argument("rbf_gram: bandwidth must be positive");
  }
  if (!x.all_finite()) throw std::invalid_argument("rbf_gram: non-finite input");
  const std::size_t n = x.rows(), d = x.cols();
  const double* base = x.data().data();
  Tensor k = Tensor::zeros({n, n});
  double* kd = k.data().data();
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
#pragma omp parallel for schedule(static) if (parallel && n > 384)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    kd[i * n + i] = 1.0;
    const double* ri = base + i * d;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v =
          std::exp(-squared_distance_raw(ri, base + j * d, d) * inv);
      kd[i * n + j] = v;
      kd[j * n + i] = v;
    }
  }
  return Gram{std::move(k), bandwidth};
}

}  // namespace

Gram rbf_gram_serial(const Tensor& x, double bandwidth) {
  return gram_impl(x, bandwidth, false);
}

Gram rbf_gram(const Tensor& x, double bandwidth) {
  return gram_impl(x, bandwidth, par::enabled());
}

Tensor double_center(const Tensor& m) {
  const std::size_t n = m.rows();
  const double* md = m.data().data();
  std::vector<double> row_mean(n, 0.0), col_mean(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = md + i * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += r[j];
    row_mean[i] = s / static_cast<double>(n);
    total += s;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = md + i * n;
    for (std::size_t j = 0; j < n; ++j) col_mean[j] += r[j];
  }
  for (std::size_t j = 0; j < n; ++j) col_mean[j] /= static_cast<double>(n);
  const double grand = total / static_cast<double>(n * n);
  Tensor out = Tensor::zeros({n, n});
  double* od = out.data().data();
#pragma omp parallel for schedule(static) if (par::enabled() && n > 384)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double rm = row_mean[i] - grand;
    const double* r = md + i * n;
    double* o = od + i * n;
    for (std::size_t j = 0; j < n; ++j) o[j] = r[j] - rm - col_mean[j];
  }
  return out;
}

namespace {

double hsic_from_grams(const Gram& kx, const Gram& ky, bool parallel) {
  const std::size_t n = kx.size();
  if (n != ky.size()) {
    throw std::invalid_argument("hsic_v: Gram sizes disagree");
  }
  if (n < 2) throw std::invalid_argument("hsic_v: need n >= 2");
  const Tensor m = double_center(ky.matrix);
  const double* kd = kx.matrix.data().data();
  const double* md = m.data().data();
  // Row partials are combined serially in index order: the value does not
  // depend on the thread count.
  std::vector<double> row(n, 0.0);
#pragma omp parallel for schedule(static) if (parallel && n > 384)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* kr = kd + i * n;
    const double* mr = md + i * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += kr[j] * mr[j];
    row[i] = s;
  }
  double tr = 0.0;
  for (std::size_t i = 0; i < n; ++i) tr += row[i];
  return tr / (static_cast<double>(n) * static_cast<double>(n));
}

}  // namespace

double hsic_v(const Gram& kx, const Gram& ky) {
  return hsic_from_grams(kx, ky, par::enabled());
}

double hsic_v_serial(const Gram& kx, const Gram& ky) {
  return hsic_from_grams(kx, ky, false);
}

Tensor slice_rows(const Tensor& x, const std::vector<int>& labels, int k) {
  std::size_t count = 0;
  for (int l : labels)
    if (l == k) ++count;
  const std::size_t d = x.cols();
  Tensor out = Tensor::zeros({count, d});
  std::size_t r = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != k) continue;
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) = x.at(i, c);
    ++r;
  }
  return out;
}

namespace {
void check_labels(const std::vector<int>& labels, int num_classes,
                  const char* op) {
  for (int l : labels) {
    if (l < 0 || l >= num_classes) {
      throw std::invalid_argument(std::string(op) +
                                  ": label outside [0, num_classes)");
    }
  }
}
}  // namespace

ConditionalResult conditional_hsic(const Tensor& phi, const Tensor& psi,
                                   const std::vector<int>& labels,
                                   int num_classes) {
  if (phi.rows() != psi.rows() || phi.rows() != labels.size()) {
    throw std::invalid_argument("conditional_hsic: row counts disagree");
  }
  check_labels(labels, num_classes, "conditional_hsic");
  ConditionalResult res;
  double sum = 0.0;
  // Fixed class order keeps the accumulation bit-reproducible.
  for (int k = 0; k < num_classes; ++k) {
    const Tensor pk = slice_rows(phi, labels, k);
    if (pk.rows() < 2) {
      if (pk.rows() > 0) ++res.classes_skipped;
      continue;
    }
    const Tensor qk = slice_rows(psi, labels, k);
    const Gram gp = rbf_gram(pk, median_bandwidth(pk));
    const Gram gq = rbf_gram(qk, median_bandwidth(qk));
    sum += hsic_v(gp, gq);
    ++res.classes_used;
  }
  if (res.classes_used == 0) {
    throw std::invalid_argument(
        "conditional_hsic: no class slice has two or more rows");
  }
  res.value = sum / res.classes_used;
  return res;
}

ConditionalResult conditional_cross_cov(const Tensor& phi, const Tensor& psi,
                                        const std::vector<int>& labels,
                                        int num_classes) {
  if (phi.rows() != psi.rows() || phi.rows() != labels.size()) {
    throw std::invalid_argument("conditional_cross_cov: row counts disagree");
  }
  check_labels(labels, num_classes, "conditional_cross_cov");
  ConditionalResult res;
  double sum = 0.0;
  for (int k = 0; k < num_classes; ++k) {
    Tensor pk = slice_rows(phi, labels, k);
    if (pk.rows() < 2) {
      if (pk.rows() > 0) ++res.classes_skipped;
      continue;
    }
    Tensor qk = slice_rows(psi, labels, k);
    const std::size_t nk = pk.rows();
    auto center_cols = [nk](Tensor& m) {
      for (std::size_t c = 0; c < m.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < nk; ++i) mean += m.at(i, c);
        mean /= static_cast<double>(nk);
        for (std::size_t i = 0; i < nk; ++i) m.at(i, c) -= mean;
      }
    };
    center_cols(pk);
    center_cols(qk);
    double fro2 = 0.0;
    for (std::size_t a = 0; a < pk.cols(); ++a) {
      for (std::size_t b = 0; b < qk.cols(); ++b) {
        double c = 0.0;
        for (std::size_t i = 0; i < nk; ++i) c += pk.at(i, a) * qk.at(i, b);
        c /= static_cast<double>(nk);
        fro2 += c * c;
      }
    }
    sum += fro2;
    ++res.classes_used;
  }
  if (res.classes_used == 0) {
    throw std::invalid_argument(
        "conditional_cross_cov: no class slice has two or more rows");
  }
  res.value = sum / res.classes_used;
  return res;
}

std::vector<int> quantile_bins(const std::vector<double>& y, int bins) {
  if (bins < 1) throw std::invalid_argument("quantile_bins: bins must be >= 1");
  const std::size_t n = y.size();
  std::vector<double> sorted(y);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> edges;
  edges.reserve(bins - 1);
  for (int b = 1; b < bins; ++b) {
    // linear-interpolated quantile at p = b/bins
    const double pos = static_cast<double>(b) / bins * (n - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    const double q = lo + 1 < n ? sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
                                : sorted[lo];
    edges.push_back(q);
  }
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    int b = 0;
    while (b < static_cast<int>(edges.size()) && y[i] > edges[b]) ++b;
    out[i] = b;
  }
  return out;
}

}  // namespace tcri::kern
