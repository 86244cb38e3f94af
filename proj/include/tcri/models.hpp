#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "tcri/tensor.hpp"

namespace tcri::model {

enum class Task { regression, binary_classification };

struct Linear {
  diff::Tensor weight;                 // in x out
  std::optional<diff::Tensor> bias;    // out
  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

struct ArchConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;   // 0: identity featurizer
  std::size_t phi_dim = 1;
  std::size_t psi_dim = 1;
  std::size_t num_domains = 0;  // training domains, one theta_e each
  Task task = Task::regression;
  bool biases = true;
  bool freeze_theta_c = false;  // dummy predictor theta_c = 1
};

// Shared featurizer F, heads Phi (domain-general) and Psi (domain-specific),
// shared predictor theta_c on Phi and one predictor per training domain on
// Phi (+) Psi. Only F, Phi and theta_c participate at test time.
struct TcriModel {
  ArchConfig arch;
  std::optional<Linear> featurizer;  // nullopt: identity
  Linear phi_head;
  Linear psi_head;
  Linear theta_c;
  std::vector<Linear> theta_domains;

  // Representation under the test-time path: Phi(F(x)), n x phi_dim.
  diff::Tensor general_representation(const diff::Tensor& x) const;
  diff::Tensor specific_representation(const diff::Tensor& x) const;

  // Raw scores (classification) or predictions (regression), length n.
  std::vector<double> forward_general(const diff::Tensor& x) const;
  std::vector<double> forward_domain(const diff::Tensor& x,
                                     std::size_t domain_index) const;
};

TcriModel init_model(const ArchConfig& arch, std::uint64_t seed);

void save_checkpoint(const TcriModel& m, const std::filesystem::path& path);
TcriModel load_checkpoint(const std::filesystem::path& path);

}  // namespace tcri::model
