#include "tcri/selection.hpp"

#include <stdexcept>
#include <tuple>

namespace tcri::select {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::ci: return "ci";
    case Strategy::val_acc: return "val-acc";
    case Strategy::oracle: return "oracle";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  if (name == "ci") return Strategy::ci;
  if (name == "val-acc" || name == "val_acc") return Strategy::val_acc;
  if (name == "oracle") return Strategy::oracle;
  throw std::invalid_argument("unknown selection strategy: " + name);
}

double ci_score(const model::TcriModel& m,
                const std::vector<data::DomainDataset>& val_domains,
                const obj::TcriHyperParams& hp) {
  if (val_domains.empty()) {
    throw std::invalid_argument("ci_score: no validation domains");
  }
  double acc = 0.0;
  model::TcriModel scratch = m;  // bind wants mutable access; values only
  for (const auto& ds : val_domains) {
    if (ds.size() == 0) {
      throw std::invalid_argument("ci_score: empty validation domain");
    }
    // same penalty path as training: loss_ci on a fresh tape, value only
    diff::Tape tape;
    obj::BoundModel bm = obj::bind(tape, scratch);
    obj::Batch batch = obj::make_batch(ds, hp, m.arch.task);
    diff::Var v = obj::loss_ci(bm, batch, hp);
    acc += tape.value(v).scalar_value();
  }
  return acc / static_cast<double>(val_domains.size());
}

namespace {

// Total order on hyperparameters for deterministic tie-breaking.
auto hp_key(const obj::TcriHyperParams& hp) {
  return std::make_tuple(hp.alpha, hp.beta, hp.lambda,
                         static_cast<int>(hp.penalty),
                         static_cast<int>(hp.irm_norm), hp.y_bins);
}

}  // namespace

std::size_t select(std::span<const Candidate> candidates, Strategy strategy) {
  if (candidates.empty()) {
    throw std::invalid_argument("select: empty candidate list");
  }
  auto score = [strategy](const Candidate& c) -> double {
    switch (strategy) {
      case Strategy::ci: return c.ci_score;          // lower is better
      case Strategy::val_acc: return -c.val_accuracy;  // higher is better
      case Strategy::oracle:
        if (!c.oracle_accuracy) {
          throw std::invalid_argument(
              "select: oracle strategy needs oracle accuracies");
        }
        return -*c.oracle_accuracy;
    }
    return 0.0;
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double si = score(candidates[i]);
    const double sb = score(candidates[best]);
    if (si < sb) {
      best = i;
    } else if (si == sb) {
      const auto ki = std::make_tuple(candidates[i].trial_seed,
                                      hp_key(candidates[i].hp));
      const auto kb = std::make_tuple(candidates[best].trial_seed,
                                      hp_key(candidates[best].hp));
      if (ki < kb) best = i;
    }
  }
  return best;
}

}  // namespace tcri::select
