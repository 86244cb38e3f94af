#include "tcri/scm_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tcri/rng.hpp"

namespace tcri::data {

using diff::Tensor;

namespace {

void validate_continuous(const ContinuousScmSpec& s) {
  if (!(s.sigma_c > 0.0) || !(s.sigma_eta > 0.0)) {
    throw std::invalid_argument("ContinuousScmSpec: scales must be positive");
  }
  if (s.n_samples < 1) {
    throw std::invalid_argument("ContinuousScmSpec: n_samples must be >= 1");
  }
}

void validate_spurious(const SpuriousBinarySpec& s) {
  if (s.flip_prob < 0.0 || s.flip_prob > 1.0 || s.label_noise < 0.0 ||
      s.label_noise > 1.0) {
    throw std::invalid_argument(
        "SpuriousBinarySpec: probabilities must lie in [0,1]");
  }
  if (s.n_samples < 1 || s.causal_dim < 1 || s.spurious_dim < 1) {
    throw std::invalid_argument("SpuriousBinarySpec: sizes must be positive");
  }
}

}  // namespace

std::string continuous_domain_id(const ContinuousScmSpec& spec) {
  std::ostringstream id;
  id << "scm_s" << spec.sigma_c << "_e" << spec.sigma_eta;
  return id.str();
}

std::string spurious_domain_id(const SpuriousBinarySpec& spec) {
  std::ostringstream id;
  id << "spur_f" << spec.flip_prob;
  return id.str();
}

DomainDataset sample_continuous_scm(const ContinuousScmSpec& spec) {
  validate_continuous(spec);
  rng::Rng r(spec.seed);
  const std::size_t n = spec.n_samples;
  Tensor x = Tensor::zeros({n, 2});
  Tensor zc = Tensor::zeros({n, 1});
  Tensor ze = Tensor::zeros({n, 1});
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = r.exponential(spec.sigma_c);
    const double yi = c + r.exponential(kTargetNoiseScale);
    const double e = yi + r.exponential(spec.sigma_eta);
    zc.at(i, 0) = c;
    ze.at(i, 0) = e;
    y[i] = yi;
    x.at(i, 0) = c;
    x.at(i, 1) = e;
  }
  DomainDataset ds;
  ds.features = std::move(x);
  ds.targets = std::move(y);
  ds.domain_id = continuous_domain_id(spec);
  ds.latent_causal = std::move(zc);
  ds.latent_spurious = std::move(ze);
  return ds;
}

DomainDataset sample_spurious_binary(const SpuriousBinarySpec& spec) {
  validate_spurious(spec);
  rng::Rng r(spec.seed);
  const std::size_t n = spec.n_samples;
  const std::size_t dc = spec.causal_dim, de = spec.spurious_dim;
  Tensor zc = Tensor::zeros({n, dc});
  Tensor ze = Tensor::zeros({n, de});
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double cluster = r.bernoulli(0.5) ? 1.0 : -1.0;
    double mean = 0.0;
    for (std::size_t j = 0; j < dc; ++j) {
      const double v = r.normal(cluster * spec.cluster_shift, 1.0);
      zc.at(i, j) = v;
      mean += v;
    }
    mean /= static_cast<double>(dc);
    int label = mean > 0.0 ? 1 : 0;
    if (r.bernoulli(spec.label_noise)) label = 1 - label;
    y[i] = label;
    double sign = label == 1 ? 1.0 : -1.0;
    if (r.bernoulli(spec.flip_prob)) sign = -sign;
    for (std::size_t j = 0; j < de; ++j) {
      ze.at(i, j) = r.normal(sign * spec.spurious_scale, spec.spurious_noise);
    }
  }
  // degenerate domains are rejected outright, never padded
  std::size_t ones = 0;
  for (double v : y) ones += v > 0.5 ? 1 : 0;
  if (ones < 2 || n - ones < 2) {
    throw std::runtime_error(
        "sample_spurious_binary: degenerate domain, a class has < 2 examples");
  }
  Tensor x = Tensor::zeros({n, dc + de});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dc; ++j) x.at(i, j) = zc.at(i, j);
    for (std::size_t j = 0; j < de; ++j) x.at(i, dc + j) = ze.at(i, j);
  }
  DomainDataset ds;
  ds.features = std::move(x);
  ds.targets = std::move(y);
  ds.domain_id = spurious_domain_id(spec);
  ds.latent_causal = std::move(zc);
  ds.latent_spurious = std::move(ze);
  return ds;
}

namespace {

DomainDataset take_rows(const DomainDataset& src,
                        const std::vector<std::size_t>& rows,
                        std::string domain_id) {
  DomainDataset out;
  const std::size_t d = src.dim();
  out.features = Tensor::zeros({rows.size(), d});
  out.targets.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      out.features.at(r, c) = src.features.at(rows[r], c);
    }
    out.targets[r] = src.targets[rows[r]];
  }
  auto copy_latent = [&rows](const std::optional<Tensor>& t) {
    std::optional<Tensor> out_t;
    if (t) {
      Tensor m = Tensor::zeros({rows.size(), t->cols()});
      for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < t->cols(); ++c) {
          m.at(r, c) = t->at(rows[r], c);
        }
      }
      out_t = std::move(m);
    }
    return out_t;
  };
  out.latent_causal = copy_latent(src.latent_causal);
  out.latent_spurious = copy_latent(src.latent_spurious);
  out.domain_id = std::move(domain_id);
  return out;
}

std::vector<std::size_t> rows_with_class(const DomainDataset& ds, int cls) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double t = ds.targets[i];
    if (t != 0.0 && t != 1.0) {
      throw std::invalid_argument(
          "make_worst_case_split: pools must be binary-labeled");
    }
    if (static_cast<int>(t) == cls) rows.push_back(i);
  }
  return rows;
}

}  // namespace

std::pair<DomainDataset, DomainDataset> make_worst_case_split(
    const DomainDataset& pool_a, const DomainDataset& pool_b) {
  if (pool_a.dim() != pool_b.dim()) {
    throw std::invalid_argument("make_worst_case_split: widths disagree");
  }
  const auto a1 = rows_with_class(pool_a, 1);
  const auto a0 = rows_with_class(pool_a, 0);
  const auto b1 = rows_with_class(pool_b, 1);
  const auto b0 = rows_with_class(pool_b, 0);
  if (a1.empty() || a0.empty() || b1.empty() || b0.empty()) {
    throw std::runtime_error(
        "make_worst_case_split: each pool must contain both classes");
  }
  auto merge = [](const DomainDataset& x, const std::vector<std::size_t>& rx,
                  const DomainDataset& z, const std::vector<std::size_t>& rz,
                  std::string id) {
    DomainDataset lhs = take_rows(x, rx, id);
    DomainDataset rhs = take_rows(z, rz, id);
    const std::size_t n = lhs.size() + rhs.size(), d = lhs.dim();
    DomainDataset out;
    out.domain_id = std::move(id);
    out.features = Tensor::zeros({n, d});
    out.targets.resize(n);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) out.features.at(i, c) = lhs.features.at(i, c);
      out.targets[i] = lhs.targets[i];
    }
    for (std::size_t i = 0; i < rhs.size(); ++i) {
      const std::size_t r = lhs.size() + i;
      for (std::size_t c = 0; c < d; ++c) out.features.at(r, c) = rhs.features.at(i, c);
      out.targets[r] = rhs.targets[i];
    }
    return out;
  };
  DomainDataset first =
      merge(pool_a, a1, pool_b, b0,
            pool_a.domain_id + "x" + pool_b.domain_id);
  DomainDataset second =
      merge(pool_b, b1, pool_a, a0,
            pool_b.domain_id + "x" + pool_a.domain_id);
  return {std::move(first), std::move(second)};
}

double lemma1_conditional_y0(double z1, double d2, double r) {
  const double s2 = r * r - z1 * z1;
  if (s2 <= 0.0) return 0.0;
  const double len = 2.0 * std::sqrt(s2) - d2;
  return std::max(0.0, len) / (2.0 * r);
}

DomainDataset sample_lemma1_counterexample(double d1, double d2, double r,
                                           std::size_t n, std::uint64_t seed) {
  if (!(r > 0.0)) throw std::invalid_argument("lemma1: r must be positive");
  if (d1 < 0.0 || d2 < 0.0) {
    throw std::invalid_argument("lemma1: shifts must be nonnegative");
  }
  if (n < 1) throw std::invalid_argument("lemma1: n must be >= 1");
  rng::Rng gen(seed);
  Tensor x = Tensor::zeros({n, 2});
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z1 = gen.uniform(-r + d1, r + d1);
    const double z2 = gen.uniform(-r + d2, r + d2);
    const bool inside_both = (z1 * z1 + z2 * z2 <= r * r) &&
                             (z1 * z1 + (z2 - d2) * (z2 - d2) <= r * r);
    x.at(i, 0) = z1;
    x.at(i, 1) = z2;
    y[i] = inside_both ? 0.0 : 1.0;
  }
  DomainDataset ds;
  ds.features = std::move(x);
  ds.targets = std::move(y);
  std::ostringstream id;
  id << "lemma1_d" << d1 << "_" << d2;
  ds.domain_id = id.str();
  return ds;
}

std::pair<DomainDataset, DomainDataset> split_train_val(const DomainDataset& ds,
                                                        double frac,
                                                        std::uint64_t seed) {
  if (!(frac > 0.0 && frac < 1.0)) {
    throw std::invalid_argument("split_train_val: frac must lie in (0,1)");
  }
  const std::size_t n = ds.size();
  if (n < 2) throw std::invalid_argument("split_train_val: need n >= 2");
  auto n_train = static_cast<std::size_t>(
      std::llround(frac * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) {
    throw std::invalid_argument("split_train_val: split leaves a side empty");
  }
  rng::Rng gen(seed);
  const auto perm = gen.permutation(n);
  std::vector<std::size_t> train_rows(perm.begin(), perm.begin() + n_train);
  std::vector<std::size_t> val_rows(perm.begin() + n_train, perm.end());
  return {take_rows(ds, train_rows, ds.domain_id),
          take_rows(ds, val_rows, ds.domain_id)};
}

void write_csv(const DomainDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
  const std::size_t d = ds.dim();
  out << "domain_id,y";
  for (std::size_t c = 0; c < d; ++c) out << ",x_" << c;
  if (ds.latent_causal) {
    for (std::size_t c = 0; c < ds.latent_causal->cols(); ++c) out << ",zc_" << c;
  }
  if (ds.latent_spurious) {
    for (std::size_t c = 0; c < ds.latent_spurious->cols(); ++c) out << ",ze_" << c;
  }
  out << "\r\n";
  char buf[64];
  auto put = [&out, &buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ',' << buf;
  };
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.domain_id;
    put(ds.targets[i]);
    for (std::size_t c = 0; c < d; ++c) put(ds.features.at(i, c));
    if (ds.latent_causal) {
      for (std::size_t c = 0; c < ds.latent_causal->cols(); ++c) {
        put(ds.latent_causal->at(i, c));
      }
    }
    if (ds.latent_spurious) {
      for (std::size_t c = 0; c < ds.latent_spurious->cols(); ++c) {
        put(ds.latent_spurious->at(i, c));
      }
    }
    out << "\r\n";
  }
}

DomainDataset read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_csv: empty file");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
    line.pop_back();
  }
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) header.push_back(f);
  }
  std::size_t nx = 0, nzc = 0, nze = 0;
  for (const auto& h : header) {
    if (h.rfind("x_", 0) == 0) ++nx;
    if (h.rfind("zc_", 0) == 0) ++nzc;
    if (h.rfind("ze_", 0) == 0) ++nze;
  }
  if (header.size() < 2 || header[0] != "domain_id" || header[1] != "y") {
    throw std::runtime_error("read_csv: unexpected header in " + path.string());
  }
  std::vector<double> ybuf;
  std::vector<double> xbuf, zcbuf, zebuf;
  std::string domain_id;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
      line.pop_back();
    }
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f;
    std::vector<std::string> fields;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != header.size()) {
      throw std::runtime_error("read_csv: ragged row in " + path.string());
    }
    domain_id = fields[0];
    ybuf.push_back(std::stod(fields[1]));
    std::size_t col = 2;
    for (std::size_t c = 0; c < nx; ++c) xbuf.push_back(std::stod(fields[col++]));
    for (std::size_t c = 0; c < nzc; ++c) zcbuf.push_back(std::stod(fields[col++]));
    for (std::size_t c = 0; c < nze; ++c) zebuf.push_back(std::stod(fields[col++]));
    ++rows;
  }
  DomainDataset ds;
  ds.domain_id = domain_id;
  ds.features = Tensor::matrix(rows, nx, std::move(xbuf));
  ds.targets = std::move(ybuf);
  if (nzc > 0) ds.latent_causal = Tensor::matrix(rows, nzc, std::move(zcbuf));
  if (nze > 0) ds.latent_spurious = Tensor::matrix(rows, nze, std::move(zebuf));
  return ds;
}

}  // namespace tcri::data
