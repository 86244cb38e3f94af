#include "tcri/models.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "tcri/rng.hpp"

namespace tcri::model {

using diff::Tensor;

namespace {

Tensor apply_linear(const Linear& l, const Tensor& x) {
  Tensor out = diff::matmul_value(x, l.weight);
  if (l.bias) {
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t j = 0; j < out.cols(); ++j) {
        out.at(i, j) += l.bias->at(j);
      }
    }
  }
  return out;
}

Tensor relu_value(Tensor x) {
  for (double& v : x.data()) v = v > 0.0 ? v : 0.0;
  return x;
}

Linear init_linear(std::size_t in, std::size_t out, bool bias, rng::Rng& r) {
  if (in == 0 || out == 0) {
    throw std::invalid_argument("init_model: zero-width layer");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor w = Tensor::zeros({in, out});
  for (double& v : w.data()) v = r.uniform(-bound, bound);
  Linear l{std::move(w), std::nullopt};
  if (bias) {
    Tensor b = Tensor::zeros({out});
    for (double& v : b.data()) v = r.uniform(-bound, bound);
    l.bias = std::move(b);
  }
  return l;
}

std::vector<double> first_column(const Tensor& t) {
  std::vector<double> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i] = t.at(i, 0);
  return out;
}

}  // namespace

Tensor TcriModel::general_representation(const Tensor& x) const {
  if (x.cols() != arch.input_dim) {
    throw std::invalid_argument("forward: input width disagrees with model");
  }
  if (featurizer) {
    return apply_linear(phi_head, relu_value(apply_linear(*featurizer, x)));
  }
  return apply_linear(phi_head, x);
}

Tensor TcriModel::specific_representation(const Tensor& x) const {
  if (x.cols() != arch.input_dim) {
    throw std::invalid_argument("forward: input width disagrees with model");
  }
  if (featurizer) {
    return apply_linear(psi_head, relu_value(apply_linear(*featurizer, x)));
  }
  return apply_linear(psi_head, x);
}

std::vector<double> TcriModel::forward_general(const Tensor& x) const {
  return first_column(apply_linear(theta_c, general_representation(x)));
}

std::vector<double> TcriModel::forward_domain(const Tensor& x,
                                              std::size_t domain_index) const {
  if (domain_index >= theta_domains.size()) {
    throw std::out_of_range("forward_domain: bad domain index");
  }
  const Tensor p = general_representation(x);
  const Tensor q = specific_representation(x);
  const std::size_t n = p.rows();
  Tensor joint = Tensor::zeros({n, p.cols() + q.cols()});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p.cols(); ++j) joint.at(i, j) = p.at(i, j);
    for (std::size_t j = 0; j < q.cols(); ++j) {
      joint.at(i, p.cols() + j) = q.at(i, j);
    }
  }
  return first_column(apply_linear(theta_domains[domain_index], joint));
}

TcriModel init_model(const ArchConfig& arch, std::uint64_t seed) {
  if (arch.input_dim == 0 || arch.phi_dim == 0 || arch.psi_dim == 0) {
    throw std::invalid_argument("init_model: zero-width layer");
  }
  rng::Rng r(seed);
  TcriModel m;
  m.arch = arch;
  std::size_t rep_in = arch.input_dim;
  if (arch.hidden_dim > 0) {
    m.featurizer = init_linear(arch.input_dim, arch.hidden_dim, arch.biases, r);
    rep_in = arch.hidden_dim;
  }
  m.phi_head = init_linear(rep_in, arch.phi_dim, arch.biases, r);
  m.psi_head = init_linear(rep_in, arch.psi_dim, arch.biases, r);
  if (arch.freeze_theta_c) {
    Tensor w = Tensor::zeros({arch.phi_dim, 1});
    for (double& v : w.data()) v = 1.0;
    m.theta_c = Linear{std::move(w), std::nullopt};
  } else {
    m.theta_c = init_linear(arch.phi_dim, 1, arch.biases, r);
  }
  for (std::size_t e = 0; e < arch.num_domains; ++e) {
    m.theta_domains.push_back(
        init_linear(arch.phi_dim + arch.psi_dim, 1, arch.biases, r));
  }
  return m;
}

namespace {

void write_tensor(std::ofstream& out, const std::string& key, const Tensor& t) {
  out << key << ' ' << t.rank();
  for (auto d : t.shape()) out << ' ' << d;
  out << '\n';
  char buf[64];
  auto data = t.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", data[i]);
    out << buf << (i + 1 == data.size() ? '\n' : ' ');
  }
  if (data.empty()) out << '\n';
}

Tensor read_tensor(std::istream& in, std::size_t rank) {
  std::vector<std::size_t> shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    in >> d;
    count *= d;
  }
  std::vector<double> values(count);
  for (auto& v : values) in >> v;
  if (!in) throw std::runtime_error("load_checkpoint: truncated tensor");
  return Tensor::from_data(std::move(shape), std::move(values));
}

}  // namespace

void save_checkpoint(const TcriModel& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  }
  out << "tcri-checkpoint 1\n";
  out << "arch " << m.arch.input_dim << ' ' << m.arch.hidden_dim << ' '
      << m.arch.phi_dim << ' ' << m.arch.psi_dim << ' ' << m.arch.num_domains
      << ' ' << (m.arch.task == Task::regression ? "regression" : "binary")
      << ' ' << (m.arch.biases ? 1 : 0) << ' ' << (m.arch.freeze_theta_c ? 1 : 0)
      << '\n';
  auto put = [&out](const std::string& key, const Linear& l) {
    write_tensor(out, key + ".weight", l.weight);
    if (l.bias) write_tensor(out, key + ".bias", *l.bias);
  };
  if (m.featurizer) put("featurizer", *m.featurizer);
  put("phi", m.phi_head);
  put("psi", m.psi_head);
  put("theta_c", m.theta_c);
  for (std::size_t e = 0; e < m.theta_domains.size(); ++e) {
    put("theta_e" + std::to_string(e), m.theta_domains[e]);
  }
}

TcriModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  }
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "tcri-checkpoint" || version != 1) {
    throw std::runtime_error("load_checkpoint: unrecognized format");
  }
  TcriModel m;
  std::string tag, task_name;
  int biases = 0, freeze = 0;
  in >> tag >> m.arch.input_dim >> m.arch.hidden_dim >> m.arch.phi_dim >>
      m.arch.psi_dim >> m.arch.num_domains >> task_name >> biases >> freeze;
  if (tag != "arch") throw std::runtime_error("load_checkpoint: missing arch");
  m.arch.task =
      task_name == "regression" ? Task::regression : Task::binary_classification;
  m.arch.biases = biases != 0;
  m.arch.freeze_theta_c = freeze != 0;
  std::map<std::string, Tensor> tensors;
  std::string key;
  std::size_t rank = 0;
  while (in >> key >> rank) {
    tensors.emplace(key, read_tensor(in, rank));
  }
  auto get = [&tensors](const std::string& k) -> Linear {
    auto it = tensors.find(k + ".weight");
    if (it == tensors.end()) {
      throw std::runtime_error("load_checkpoint: missing record " + k);
    }
    Linear l{it->second, std::nullopt};
    auto bit = tensors.find(k + ".bias");
    if (bit != tensors.end()) l.bias = bit->second;
    return l;
  };
  if (m.arch.hidden_dim > 0) m.featurizer = get("featurizer");
  m.phi_head = get("phi");
  m.psi_head = get("psi");
  m.theta_c = get("theta_c");
  for (std::size_t e = 0; e < m.arch.num_domains; ++e) {
    m.theta_domains.push_back(get("theta_e" + std::to_string(e)));
  }
  return m;
}

}  // namespace tcri::model
