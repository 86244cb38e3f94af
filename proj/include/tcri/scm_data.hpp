#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tcri/tensor.hpp"

namespace tcri::data {

// Continuous structural model of one domain:
//   z_c ~ Exp(sigma_c), y = z_c + Exp(0.25), z_e = y + Exp(sigma_eta),
// all Exp parameters are *scales* (mean = scale). Observed X = [z_c, z_e].
struct ContinuousScmSpec {
  double sigma_c = 1.0;
  double sigma_eta = 1.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

// Fixed scale of the additive noise on y in the continuous model.
inline constexpr double kTargetNoiseScale = 0.25;

// Binary task with an anticausal spurious block: causal features form a
// Gaussian cluster pair, the clean label is a threshold of their mean, the
// label is flipped with label_noise, and the spurious block encodes the noisy
// label (sign flipped with flip_prob per example).
struct SpuriousBinarySpec {
  double flip_prob = 0.0;
  double label_noise = 0.0;
  std::size_t n_samples = 0;
  std::size_t causal_dim = 5;
  std::size_t spurious_dim = 5;
  std::uint64_t seed = 0;
  double cluster_shift = 1.0;     // +/- shift of the causal cluster means
  double spurious_scale = 1.0;    // magnitude of the signed encoding
  double spurious_noise = 0.25;   // stddev of noise on the spurious block
};

struct DomainDataset {
  diff::Tensor features;            // n x d
  std::vector<double> targets;      // n
  std::string domain_id;
  std::optional<diff::Tensor> latent_causal;    // oracle use only
  std::optional<diff::Tensor> latent_spurious;  // oracle use only

  std::size_t size() const { return targets.size(); }
  std::size_t dim() const { return features.cols(); }
};

// Domain identifiers derived from spec parameters (stable across seeds).
std::string continuous_domain_id(const ContinuousScmSpec& spec);
std::string spurious_domain_id(const SpuriousBinarySpec& spec);

DomainDataset sample_continuous_scm(const ContinuousScmSpec& spec);

DomainDataset sample_spurious_binary(const SpuriousBinarySpec& spec);

// Class-swapped mixture of two pools: output 1 takes class-1 rows from pool_a
// and class-0 rows from pool_b, output 2 the reverse, so any pool-identifying
// feature has its label association flipped between the two outputs.
std::pair<DomainDataset, DomainDataset> make_worst_case_split(
    const DomainDataset& pool_a, const DomainDataset& pool_b);

// Two uniform covariates with domain shifts d1, d2; the label marks points
// outside the lens of the circle |z| <= r and its copy shifted up by d2:
//   y = 0  iff  z1^2 + z2^2 <= r^2  and  z1^2 + (z2 - d2)^2 <= r^2.
// This makes mu(y=0 | z1) = max(0, 2 sqrt(r^2 - z1^2) - d2) / (2 r) exact.
// At d2 = 0 the rule reduces to "y = 1 iff z1^2 + z2^2 > r^2".
DomainDataset sample_lemma1_counterexample(double d1, double d2, double r,
                                           std::size_t n, std::uint64_t seed);

double lemma1_conditional_y0(double z1, double d2, double r);

std::pair<DomainDataset, DomainDataset> split_train_val(
    const DomainDataset& ds, double frac, std::uint64_t seed);

// Columnar CSV: domain_id, y, x_0.., optional zc_0.., ze_0..; floats with 17
// significant digits so a round trip is exact.
void write_csv(const DomainDataset& ds, const std::filesystem::path& path);
DomainDataset read_csv(const std::filesystem::path& path);

}  // namespace tcri::data
