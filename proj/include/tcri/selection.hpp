#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tcri/models.hpp"
#include "tcri/objectives.hpp"
#include "tcri/scm_data.hpp"

namespace tcri::select {

enum class Strategy { ci, val_acc, oracle };

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);

struct Candidate {
  obj::TcriHyperParams hp;
  std::uint64_t trial_seed = 0;
  double val_risk = 0.0;
  double val_accuracy = 0.0;
  double ci_score = 0.0;
  std::string checkpoint_path;
  std::optional<double> oracle_accuracy;  // filled only when oracle data exists
};

// Conditional-independence score of a model on held-out validation domains:
// the loss_ci estimator (same penalty family as training) averaged over the
// validation domains.
double ci_score(const model::TcriModel& m,
                const std::vector<data::DomainDataset>& val_domains,
                const obj::TcriHyperParams& hp);

// Deterministic argmin/argmax with ties broken by lowest trial seed, then the
// lexicographic order of the hyperparameters.
std::size_t select(std::span<const Candidate> candidates, Strategy strategy);

}  // namespace tcri::select
