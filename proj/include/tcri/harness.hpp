#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tcri/models.hpp"
#include "tcri/objectives.hpp"
#include "tcri/scm_data.hpp"
#include "tcri/selection.hpp"
#include "tcri/trainer.hpp"

namespace tcri::harness {

enum class Protocol { leave_one_out, fixed_holdout, table1_replication };

using GeneratorSpec =
    std::variant<data::ContinuousScmSpec, data::SpuriousBinarySpec>;

struct Scenario {
  int version = 1;
  std::string name;
  model::Task task = model::Task::binary_classification;
  Protocol protocol = Protocol::leave_one_out;
  std::vector<GeneratorSpec> domains;
  std::vector<std::size_t> heldout;   // fixed-holdout only
  std::size_t test_n_samples = 2000;  // held-out evaluation sample size
  double val_fraction = 0.2;
  model::ArchConfig arch;             // num_domains filled per cell
  train::TrainConfig train_cfg;
  std::vector<obj::TcriHyperParams> hp_grid;
  std::vector<std::string> hp_names;  // parallel to hp_grid
  std::size_t trials = 1;
  std::vector<select::Strategy> strategies;
  std::uint64_t seed = 0;
  bool emit_datasets = false;

  void validate() const;
};

Scenario load_scenario(const std::filesystem::path& path);

// One sweep cell: a held-out domain, one hyperparameter point, one trial.
struct CellResult {
  std::size_t heldout_index = 0;
  std::size_t hp_index = 0;
  std::size_t trial = 0;
  std::uint64_t trial_seed = 0;
  bool failed = false;
  std::string error;
  double val_risk = 0.0;
  double val_accuracy = 0.0;
  double ci_score = 0.0;
  double heldout_accuracy = 0.0;  // oracle metric on the held-out test set
  double heldout_risk = 0.0;
  std::string checkpoint_path;
};

struct DomainStats {
  // domain id -> (mean over trials, sample std over trials)
  std::vector<std::string> domain_ids;
  std::vector<double> mean;
  std::vector<double> stddev;
  double aggregate_mean = 0.0;
  double aggregate_std = 0.0;  // sample std across domain means
  double aggregate_min = 0.0;
};

// Per-domain trial means and across-domain aggregates from (domain, trial)
// accuracy cells.
DomainStats report_stats(
    const std::vector<std::string>& domain_ids,
    const std::vector<std::vector<double>>& per_domain_trial_accuracy);

// Generator instantiation with an explicit seed (and optional sample-count
// override for held-out test sets).
data::DomainDataset instantiate_domain(const GeneratorSpec& g,
                                       std::uint64_t seed,
                                       std::optional<std::size_t> n_override);

void write_stats_files(const std::filesystem::path& out_dir,
                       const std::string& name, const DomainStats& st);

struct ScenarioOutcome {
  std::vector<CellResult> cells;
  // strategy name -> stats over held-out domains
  std::map<std::string, DomainStats> stats;
};

ScenarioOutcome run_scenario(const Scenario& sc,
                             const std::filesystem::path& out_dir,
                             int worker_threads);

// Table-1 protocol: no held-out domain; every hyperparameter point trains on
// all domains with theta_c frozen at 1 and the learned feature-extractor
// entries are reported next to the oracle regression of y on z_c.
struct Table1Row {
  std::string hp_name;
  double phi0_mean = 0.0, phi0_std = 0.0;
  double phi1_mean = 0.0, phi1_std = 0.0;
  double abs_phi1_mean = 0.0;
};

struct Table1Outcome {
  std::vector<Table1Row> rows;
  double oracle_mean = 0.0;
  double oracle_std = 0.0;
};

Table1Outcome run_table1_replication(const Scenario& sc,
                                     const std::filesystem::path& out_dir,
                                     int worker_threads);

int cli_main(int argc, char** argv);

// Deterministic seed mixing for cells and domains.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                       std::uint64_t c);

}  // namespace tcri::harness
