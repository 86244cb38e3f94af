// Scratch experiment driver for tuning scenario defaults.
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "tcri/harness.hpp"
#include "tcri/models.hpp"
#include "tcri/objectives.hpp"
#include "tcri/scm_data.hpp"
#include "tcri/trainer.hpp"

using namespace tcri;

static double g_momentum = 0.0;
static double g_clip = 0.0;

static void table1(double lr, std::size_t steps, int q, std::uint64_t seed,
                   bool ols_inner, const char* preset) {
  data::ContinuousScmSpec s0{0.1, 0.1, 1000, harness::mix_seed(seed, 11, 0, 0)};
  data::ContinuousScmSpec s1{1.0, 1.0, 1000, harness::mix_seed(seed, 11, 1, 0)};
  std::vector<data::DomainDataset> domains{data::sample_continuous_scm(s0),
                                           data::sample_continuous_scm(s1)};
  double num = 0, den = 0;
  for (const auto& d : domains) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      num += d.latent_causal->at(i, 0) * d.targets[i];
      den += d.latent_causal->at(i, 0) * d.latent_causal->at(i, 0);
    }
  }
  model::ArchConfig arch;
  arch.input_dim = 2;
  arch.hidden_dim = 0;
  arch.phi_dim = 1;
  arch.psi_dim = 1;
  arch.num_domains = 2;
  arch.task = model::Task::regression;
  arch.biases = false;
  arch.freeze_theta_c = true;
  model::TcriModel m = model::init_model(arch, harness::mix_seed(seed, 17, 0, 0));
  obj::TcriHyperParams hp = std::string(preset) == "erm"
                                ? obj::TcriHyperParams::erm()
                                : obj::TcriHyperParams::tcri();
  hp.y_bins = q;
  train::TrainConfig cfg;
  cfg.learning_rate = lr;
  cfg.max_steps = steps;
  cfg.ols_inner = ols_inner;
  if (g_momentum >= 1.0) {
    cfg.optimizer = train::Optimizer::adam;
  } else {
    cfg.momentum = g_momentum;
  }
  if (g_clip > 0.0) cfg.grad_clip = g_clip;
  cfg.log_every = 0;
  try {
    auto res = train::train(std::move(m), domains, hp, cfg);
    std::printf(
        "table1 %s seed=%llu lr=%g q=%d steps=%zu ols=%d: phi=(%+.3f,%+.3f) "
        "psi=(%+.3f,%+.3f) oracle=%.3f\n",
        preset, (unsigned long long)seed, lr, q, steps, (int)ols_inner,
        res.model.phi_head.weight.at(0, 0), res.model.phi_head.weight.at(1, 0),
        res.model.psi_head.weight.at(0, 0), res.model.psi_head.weight.at(1, 0),
        num / den);
  } catch (const std::exception& e) {
    std::printf("table1 %s seed=%llu lr=%g q=%d: FAILED %s\n", preset,
                (unsigned long long)seed, lr, q, e.what());
  }
}

static void analog(double lr, std::size_t steps, std::size_t pdim,
                   std::uint64_t seed, const char* preset, const char* penalty,
                   std::size_t n, std::size_t hidden) {
  const double flips[3] = {0.1, 0.2, 0.9};
  std::vector<data::DomainDataset> train_doms, test_doms;
  for (int i = 0; i < 3; ++i) {
    data::SpuriousBinarySpec sp;
    sp.flip_prob = flips[i];
    sp.label_noise = 0.25;
    sp.n_samples = n;
    sp.seed = harness::mix_seed(seed, 11, i, 0);
    if (i != 2) train_doms.push_back(data::sample_spurious_binary(sp));
    sp.n_samples = 2000;
    sp.seed = harness::mix_seed(seed, 23, i, 0);
    test_doms.push_back(data::sample_spurious_binary(sp));
  }
  model::ArchConfig arch;
  arch.input_dim = 10;
  arch.hidden_dim = hidden;
  arch.phi_dim = pdim;
  arch.psi_dim = pdim;
  arch.num_domains = 2;
  arch.task = model::Task::binary_classification;
  arch.biases = true;
  model::TcriModel m = model::init_model(arch, harness::mix_seed(seed, 17, 0, 0));
  obj::TcriHyperParams hp = std::string(preset) == "erm"
                                ? obj::TcriHyperParams::erm()
                                : obj::TcriHyperParams::tcri();
  if (std::string(penalty) == "cov") hp.penalty = diff::PenaltyKind::cov;
  train::TrainConfig cfg;
  cfg.learning_rate = lr;
  cfg.max_steps = steps;
  cfg.ols_inner = false;
  cfg.log_every = 0;
  try {
    auto res = train::train(std::move(m), train_doms, hp, cfg);
    double acc[3];
    for (int i = 0; i < 3; ++i) {
      acc[i] = *train::evaluate(res.model, test_doms[i],
                                model::Task::binary_classification)
                    .accuracy;
    }
    std::printf(
        "analog %s/%s seed=%llu lr=%g p=%zu h=%zu n=%zu steps=%zu: acc=(%.3f "
        "%.3f %.3f) l_ci=%.5f l_irm=%.4f\n",
        preset, penalty, (unsigned long long)seed, lr, pdim, hidden, n, steps,
        acc[0], acc[1], acc[2], res.final_breakdown.l_ci,
        res.final_breakdown.l_irm);
  } catch (const std::exception& e) {
    std::printf("analog %s seed=%llu: FAILED %s\n", preset,
                (unsigned long long)seed, e.what());
  }
}

int main(int argc, char** argv) {
  if (argc < 2) return 1;
  if (std::strcmp(argv[1], "table1") == 0) {
    // explore table1 lr steps q seed ols preset [momentum]
    if (argc > 8) g_momentum = std::atof(argv[8]);
    if (argc > 9) g_clip = std::atof(argv[9]);
    table1(std::atof(argv[2]), std::atoi(argv[3]), std::atoi(argv[4]),
           std::atoi(argv[5]), std::atoi(argv[6]) != 0, argv[7]);
  } else if (std::strcmp(argv[1], "analog") == 0) {
    // explore analog lr steps pdim seed preset penalty n hidden
    analog(std::atof(argv[2]), std::atoi(argv[3]), std::atoi(argv[4]),
           std::atoi(argv[5]), argv[6], argv[7], std::atoi(argv[8]),
           std::atoi(argv[9]));
  }
  return 0;
}
