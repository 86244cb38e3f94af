#include "tcri/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "tcri/kernels.hpp"
#include "tcri/parallel.hpp"

namespace tcri::harness {

using json = nlohmann::json;
using model::Task;

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                       std::uint64_t c) {
  auto splitmix = [](std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t s = base;
  std::uint64_t h = splitmix(s);
  s ^= a + 0x632be59bd9b4e019ULL;
  h ^= splitmix(s);
  s ^= b + 0x9e3779b97f4a7c15ULL;
  h ^= splitmix(s);
  s ^= c + 0xd1b54a32d192ed03ULL;
  h ^= splitmix(s);
  return h;
}

void Scenario::validate() const {
  if (domains.empty()) throw std::invalid_argument("scenario: no domains");
  if (hp_grid.empty()) throw std::invalid_argument("scenario: empty hp grid");
  if (trials < 1) throw std::invalid_argument("scenario: trials must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("scenario: val_fraction must lie in (0,1)");
  }
  if (protocol == Protocol::leave_one_out && domains.size() < 2) {
    throw std::invalid_argument("scenario: leave-one-out needs >= 2 domains");
  }
  if (protocol == Protocol::fixed_holdout) {
    if (heldout.empty()) {
      throw std::invalid_argument("scenario: fixed-holdout needs heldout ids");
    }
    for (auto h : heldout) {
      if (h >= domains.size()) {
        throw std::invalid_argument("scenario: heldout index out of range");
      }
    }
    if (domains.size() - 1 < 1) {
      throw std::invalid_argument("scenario: nothing left to train on");
    }
  }
  for (const auto& hp : hp_grid) hp.validate();
}

namespace {

obj::TcriHyperParams hp_from_json(const json& j) {
  if (j.is_string()) {
    const std::string name = j.get<std::string>();
    if (name == "erm") return obj::TcriHyperParams::erm();
    if (name == "irm") return obj::TcriHyperParams::irm();
    if (name == "tcri") return obj::TcriHyperParams::tcri();
    throw std::invalid_argument("scenario: unknown hp preset " + name);
  }
  obj::TcriHyperParams hp;
  hp.alpha = j.value("alpha", 1.0);
  hp.beta = j.value("beta", 0.0);
  hp.lambda = j.value("lambda", 0.0);
  if (j.contains("penalty")) {
    const std::string p = j["penalty"].get<std::string>();
    if (p == "hsic") {
      hp.penalty = diff::PenaltyKind::hsic;
    } else if (p == "cov") {
      hp.penalty = diff::PenaltyKind::cov;
    } else {
      throw std::invalid_argument("scenario: unknown penalty " + p);
    }
  }
  if (j.contains("irm_norm")) {
    const std::string n = j["irm_norm"].get<std::string>();
    if (n == "l2") {
      hp.irm_norm = diff::NormKind::l2;
    } else if (n == "squared-l2") {
      hp.irm_norm = diff::NormKind::squared_l2;
    } else {
      throw std::invalid_argument("scenario: unknown irm_norm " + n);
    }
  }
  hp.y_bins = j.value("y_bins", 4);
  return hp;
}

std::string hp_name_from_json(const json& j, std::size_t index) {
  if (j.is_string()) return j.get<std::string>();
  if (j.contains("name")) return j["name"].get<std::string>();
  return "hp" + std::to_string(index);
}

GeneratorSpec generator_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "continuous_scm") {
    data::ContinuousScmSpec s;
    s.sigma_c = j.at("sigma_c").get<double>();
    s.sigma_eta = j.at("sigma_eta").get<double>();
    s.n_samples = j.at("n_samples").get<std::size_t>();
    return s;
  }
  if (kind == "spurious_binary") {
    data::SpuriousBinarySpec s;
    s.flip_prob = j.at("flip_prob").get<double>();
    s.label_noise = j.at("label_noise").get<double>();
    s.n_samples = j.at("n_samples").get<std::size_t>();
    s.causal_dim = j.value("causal_dim", std::size_t{5});
    s.spurious_dim = j.value("spurious_dim", std::size_t{5});
    s.cluster_shift = j.value("cluster_shift", 1.0);
    s.spurious_scale = j.value("spurious_scale", 1.0);
    s.spurious_noise = j.value("spurious_noise", 0.25);
    return s;
  }
  throw std::invalid_argument("scenario: unknown generator kind " + kind);
}

[[maybe_unused]] std::size_t generator_input_dim(const GeneratorSpec& g) {
  if (std::holds_alternative<data::ContinuousScmSpec>(g)) return 2;
  const auto& s = std::get<data::SpuriousBinarySpec>(g);
  return s.causal_dim + s.spurious_dim;
}

}  // namespace

data::DomainDataset instantiate_domain(const GeneratorSpec& g,
                                       std::uint64_t seed,
                                       std::optional<std::size_t> n_override) {
  if (std::holds_alternative<data::ContinuousScmSpec>(g)) {
    auto s = std::get<data::ContinuousScmSpec>(g);
    s.seed = seed;
    if (n_override) s.n_samples = *n_override;
    return data::sample_continuous_scm(s);
  }
  auto s = std::get<data::SpuriousBinarySpec>(g);
  s.seed = seed;
  if (n_override) s.n_samples = *n_override;
  return data::sample_spurious_binary(s);
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open scenario file " + path.string());
  }
  json j;
  in >> j;
  Scenario sc;
  sc.version = j.value("version", 1);
  if (sc.version != 1) {
    throw std::runtime_error("scenario: unsupported schema version " +
                             std::to_string(sc.version));
  }
  sc.name = j.value("name", std::string("scenario"));
  const std::string task = j.value("task", std::string("binary"));
  if (task == "binary") {
    sc.task = Task::binary_classification;
  } else if (task == "regression") {
    sc.task = Task::regression;
  } else {
    throw std::runtime_error("scenario: unknown task " + task);
  }
  const std::string protocol = j.value("protocol", std::string("leave-one-out"));
  if (protocol == "leave-one-out") {
    sc.protocol = Protocol::leave_one_out;
  } else if (protocol == "fixed-holdout") {
    sc.protocol = Protocol::fixed_holdout;
  } else if (protocol == "table1-replication") {
    sc.protocol = Protocol::table1_replication;
  } else {
    throw std::runtime_error("scenario: unknown protocol " + protocol);
  }
  for (const auto& d : j.at("domains")) {
    sc.domains.push_back(generator_from_json(d));
  }
  if (j.contains("heldout")) {
    for (const auto& h : j["heldout"]) sc.heldout.push_back(h.get<std::size_t>());
  }
  sc.test_n_samples = j.value("test_n_samples", std::size_t{2000});
  sc.val_fraction = j.value("val_fraction", 0.2);
  if (j.contains("arch")) {
    const auto& a = j["arch"];
    sc.arch.hidden_dim = a.value("hidden_dim", std::size_t{0});
    sc.arch.phi_dim = a.value("phi_dim", std::size_t{1});
    sc.arch.psi_dim = a.value("psi_dim", std::size_t{1});
    sc.arch.biases = a.value("biases", true);
    sc.arch.freeze_theta_c = a.value("freeze_theta_c", false);
  }
  sc.arch.task = sc.task;
  if (j.contains("train")) {
    const auto& t = j["train"];
    sc.train_cfg.learning_rate = t.value("learning_rate", 0.01);
    sc.train_cfg.max_steps = t.value("max_steps", std::size_t{100});
    sc.train_cfg.ols_inner = t.value("ols_inner", true);
    if (t.contains("grad_clip")) {
      sc.train_cfg.grad_clip = t["grad_clip"].get<double>();
    }
    sc.train_cfg.log_every = t.value("log_every", std::size_t{10});
  }
  std::size_t idx = 0;
  for (const auto& h : j.at("hp_grid")) {
    sc.hp_grid.push_back(hp_from_json(h));
    sc.hp_names.push_back(hp_name_from_json(h, idx++));
  }
  sc.trials = j.value("trials", std::size_t{1});
  if (j.contains("selection")) {
    for (const auto& s : j["selection"]) {
      sc.strategies.push_back(select::parse_strategy(s.get<std::string>()));
    }
  } else {
    sc.strategies = {select::Strategy::ci, select::Strategy::val_acc,
                     select::Strategy::oracle};
  }
  sc.seed = j.value("seed", std::uint64_t{0});
  sc.emit_datasets = j.value("emit_datasets", false);
  sc.validate();
  return sc;
}

DomainStats report_stats(
    const std::vector<std::string>& domain_ids,
    const std::vector<std::vector<double>>& per_domain_trial_accuracy) {
  if (domain_ids.empty() || domain_ids.size() != per_domain_trial_accuracy.size()) {
    throw std::invalid_argument("report_stats: empty or ragged input");
  }
  DomainStats st;
  st.domain_ids = domain_ids;
  for (const auto& trials : per_domain_trial_accuracy) {
    if (trials.empty()) {
      throw std::invalid_argument("report_stats: a domain has no results");
    }
    double m = 0.0;
    for (double a : trials) m += a;
    m /= static_cast<double>(trials.size());
    double var = 0.0;
    for (double a : trials) var += (a - m) * (a - m);
    const double sd = trials.size() > 1
                          ? std::sqrt(var / static_cast<double>(trials.size() - 1))
                          : 0.0;
    st.mean.push_back(m);
    st.stddev.push_back(sd);
  }
  double am = 0.0;
  for (double m : st.mean) am += m;
  am /= static_cast<double>(st.mean.size());
  double avar = 0.0;
  for (double m : st.mean) avar += (m - am) * (m - am);
  st.aggregate_mean = am;
  st.aggregate_std =
      st.mean.size() > 1
          ? std::sqrt(avar / static_cast<double>(st.mean.size() - 1))
          : 0.0;
  st.aggregate_min = *std::min_element(st.mean.begin(), st.mean.end());
  return st;
}

namespace {

struct CellTask {
  std::size_t heldout = 0;
  std::size_t hp = 0;
  std::size_t trial = 0;
};

void write_train_log(const std::filesystem::path& path,
                     const std::vector<train::TrainLogRow>& rows,
                     bool include_wall) {
  std::ofstream out(path);
  out << "step,domain_id,l_phi,l_phi_psi,l_irm,l_ci,total";
  if (include_wall) out << ",wall_ms";
  out << "\r\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.domain_id << ',' << fmt17(r.l_phi) << ','
        << fmt17(r.l_phi_psi) << ',' << fmt17(r.l_irm) << ',' << fmt17(r.l_ci)
        << ',' << fmt17(r.total);
    if (include_wall) out << ',' << fmt17(r.wall_ms);
    out << "\r\n";
  }
}

std::string domain_label(const Scenario& sc, std::size_t index) {
  if (std::holds_alternative<data::ContinuousScmSpec>(sc.domains[index])) {
    return data::continuous_domain_id(
        std::get<data::ContinuousScmSpec>(sc.domains[index]));
  }
  return data::spurious_domain_id(
      std::get<data::SpuriousBinarySpec>(sc.domains[index]));
}

CellResult run_cell(const Scenario& sc, const CellTask& task,
                    const std::filesystem::path& out_dir) {
  CellResult res;
  res.heldout_index = task.heldout;
  res.hp_index = task.hp;
  res.trial = task.trial;
  res.trial_seed = mix_seed(sc.seed, 7001, task.trial, 0);
  const std::string cell_tag = "cell_h" + std::to_string(task.heldout) +
                               "_hp" + std::to_string(task.hp) + "_t" +
                               std::to_string(task.trial);
  try {
    std::vector<data::DomainDataset> train_sets, val_sets;
    std::size_t input_dim = 0;
    for (std::size_t i = 0; i < sc.domains.size(); ++i) {
      if (i == task.heldout) continue;
      const std::uint64_t dseed = mix_seed(sc.seed, 11, i, task.trial);
      data::DomainDataset full = instantiate_domain(sc.domains[i], dseed, {});
      input_dim = full.dim();
      auto [tr, val] = data::split_train_val(full, 1.0 - sc.val_fraction,
                                             mix_seed(sc.seed, 13, i, task.trial));
      train_sets.push_back(std::move(tr));
      val_sets.push_back(std::move(val));
    }
    model::ArchConfig arch = sc.arch;
    arch.input_dim = input_dim;
    arch.num_domains = train_sets.size();
    const std::uint64_t model_seed =
        mix_seed(sc.seed, 17 + task.heldout, task.hp, task.trial);
    model::TcriModel m0 = model::init_model(arch, model_seed);
    train::TrainConfig cfg = sc.train_cfg;
    train::TrainResult tr = train::train(std::move(m0), train_sets,
                                         sc.hp_grid[task.hp], cfg);
    // validation metrics averaged over the training domains' held-out splits
    double vr = 0.0, va = 0.0;
    for (const auto& v : val_sets) {
      const auto ev = train::evaluate(tr.model, v, sc.task);
      vr += ev.risk;
      va += ev.accuracy.value_or(0.0);
    }
    res.val_risk = vr / static_cast<double>(val_sets.size());
    res.val_accuracy = va / static_cast<double>(val_sets.size());
    res.ci_score = select::ci_score(tr.model, val_sets, sc.hp_grid[task.hp]);
    // held-out evaluation (oracle-only information)
    const std::uint64_t test_seed = mix_seed(sc.seed, 23, task.heldout, task.trial);
    data::DomainDataset test =
        instantiate_domain(sc.domains[task.heldout], test_seed, sc.test_n_samples);
    const auto ev = train::evaluate(tr.model, test, sc.task);
    res.heldout_risk = ev.risk;
    res.heldout_accuracy = ev.accuracy.value_or(0.0);
    const std::string ckpt = "checkpoints/" + cell_tag + ".ckpt";
    model::save_checkpoint(tr.model, out_dir / ckpt);
    res.checkpoint_path = ckpt;
    write_train_log(out_dir / ("logs/" + cell_tag + ".csv"), tr.log,
                    /*include_wall=*/false);
  } catch (const std::exception& e) {
    res.failed = true;
    res.error = e.what();
  }
  return res;
}

}  // namespace

void write_stats_files(const std::filesystem::path& out_dir,
                       const std::string& strategy, const DomainStats& st) {
  {
    std::ofstream out(out_dir / ("stats_" + strategy + ".csv"));
    out << "domain_id,mean_accuracy,std_accuracy\r\n";
    for (std::size_t i = 0; i < st.domain_ids.size(); ++i) {
      out << st.domain_ids[i] << ',' << fmt17(st.mean[i]) << ','
          << fmt17(st.stddev[i]) << "\r\n";
    }
    out << "aggregate," << fmt17(st.aggregate_mean) << ','
        << fmt17(st.aggregate_std) << "\r\n";
    out << "aggregate_min," << fmt17(st.aggregate_min) << ",\r\n";
  }
  {
    std::ofstream out(out_dir / ("stats_" + strategy + ".txt"));
    out << "selection: " << strategy << "\n";
    std::size_t w = 12;
    for (const auto& id : st.domain_ids) w = std::max(w, id.size() + 2);
    out << std::string(w, ' ') << "  mean     std\n";
    for (std::size_t i = 0; i < st.domain_ids.size(); ++i) {
      std::string id = st.domain_ids[i];
      id.resize(w, ' ');
      out << id << "  " << fmt4(st.mean[i]) << "  " << fmt4(st.stddev[i])
          << "\n";
    }
    std::string lbl = "aggregate";
    lbl.resize(w, ' ');
    out << lbl << "  " << fmt4(st.aggregate_mean) << "  "
        << fmt4(st.aggregate_std) << "  min " << fmt4(st.aggregate_min) << "\n";
  }
}

ScenarioOutcome run_scenario(const Scenario& sc,
                             const std::filesystem::path& out_dir,
                             int worker_threads) {
  sc.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "checkpoints");
  fs::create_directories(out_dir / "logs");
  fs::create_directories(out_dir / "datasets");

  if (sc.emit_datasets) {
    for (std::size_t i = 0; i < sc.domains.size(); ++i) {
      data::DomainDataset full =
          instantiate_domain(sc.domains[i], mix_seed(sc.seed, 11, i, 0), {});
      data::write_csv(full, out_dir / "datasets" / (full.domain_id + ".csv"));
    }
  }

  std::vector<std::size_t> heldout_list;
  if (sc.protocol == Protocol::leave_one_out) {
    for (std::size_t i = 0; i < sc.domains.size(); ++i) heldout_list.push_back(i);
  } else if (sc.protocol == Protocol::fixed_holdout) {
    heldout_list = sc.heldout;
  } else {
    throw std::invalid_argument(
        "run_scenario: table1-replication uses run_table1_replication");
  }

  std::vector<CellTask> tasks;
  for (auto h : heldout_list) {
    for (std::size_t k = 0; k < sc.hp_grid.size(); ++k) {
      for (std::size_t t = 0; t < sc.trials; ++t) tasks.push_back({h, k, t});
    }
  }
  std::vector<CellResult> cells(tasks.size());
  const int workers = std::max(
      1, std::min<int>(worker_threads, static_cast<int>(tasks.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      cells[i] = run_cell(sc, tasks[i], out_dir);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        par::set_enabled(false);  // cell-level parallelism only
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= tasks.size()) break;
          cells[i] = run_cell(sc, tasks[i], out_dir);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  // ----- selection + stats ------------------------------------------------
  ScenarioOutcome outcome;
  outcome.cells = cells;

  auto cell_at = [&](std::size_t h, std::size_t k,
                     std::size_t t) -> const CellResult& {
    // tasks were laid out h-major, then hp, then trial
    std::size_t hpos = std::find(heldout_list.begin(), heldout_list.end(), h) -
                       heldout_list.begin();
    return cells[(hpos * sc.hp_grid.size() + k) * sc.trials + t];
  };

  std::vector<std::string> heldout_ids;
  for (auto h : heldout_list) {
    heldout_ids.push_back(domain_label(sc, h));
  }

  // per-strategy, per-domain accuracies with selection applied within each
  // trial (trials provide the spread)
  std::map<std::string, std::vector<std::vector<double>>> per_strategy;
  for (auto strat : sc.strategies) {
    std::vector<std::vector<double>> per_domain;
    for (auto h : heldout_list) {
      std::vector<double> accs;
      for (std::size_t t = 0; t < sc.trials; ++t) {
        std::vector<select::Candidate> cands;
        std::vector<std::size_t> cand_hp;
        for (std::size_t k = 0; k < sc.hp_grid.size(); ++k) {
          const CellResult& c = cell_at(h, k, t);
          if (c.failed) continue;
          select::Candidate cd;
          cd.hp = sc.hp_grid[k];
          cd.trial_seed = c.trial_seed;
          cd.val_risk = c.val_risk;
          cd.val_accuracy = c.val_accuracy;
          cd.ci_score = c.ci_score;
          cd.checkpoint_path = c.checkpoint_path;
          cd.oracle_accuracy = c.heldout_accuracy;
          cands.push_back(cd);
          cand_hp.push_back(k);
        }
        if (cands.empty()) {
          throw std::runtime_error(
              "run_scenario: every candidate failed for a held-out domain");
        }
        const std::size_t pick = select::select(cands, strat);
        accs.push_back(cell_at(h, cand_hp[pick], t).heldout_accuracy);
      }
      per_domain.push_back(std::move(accs));
    }
    const DomainStats st = report_stats(heldout_ids, per_domain);
    outcome.stats[select::strategy_name(strat)] = st;
    write_stats_files(out_dir, select::strategy_name(strat), st);
    per_strategy[select::strategy_name(strat)] = per_domain;
  }

  // ----- manifest -----------------------------------------------------------
  // global winner per held-out domain per strategy (across hp x trials)
  std::map<std::string, std::vector<std::size_t>> winners;  // strategy -> cell idx
  for (auto strat : sc.strategies) {
    std::vector<std::size_t> w;
    for (auto h : heldout_list) {
      std::vector<select::Candidate> cands;
      std::vector<std::size_t> idx;
      for (std::size_t k = 0; k < sc.hp_grid.size(); ++k) {
        for (std::size_t t = 0; t < sc.trials; ++t) {
          const CellResult& c = cell_at(h, k, t);
          if (c.failed) continue;
          select::Candidate cd;
          cd.hp = sc.hp_grid[k];
          cd.trial_seed = c.trial_seed;
          cd.val_risk = c.val_risk;
          cd.val_accuracy = c.val_accuracy;
          cd.ci_score = c.ci_score;
          cd.oracle_accuracy = c.heldout_accuracy;
          cands.push_back(cd);
          std::size_t hpos =
              std::find(heldout_list.begin(), heldout_list.end(), h) -
              heldout_list.begin();
          idx.push_back((hpos * sc.hp_grid.size() + k) * sc.trials + t);
        }
      }
      if (cands.empty()) {
        throw std::runtime_error(
            "run_scenario: every candidate failed for a held-out domain");
      }
      w.push_back(idx[select::select(cands, strat)]);
    }
    winners[select::strategy_name(strat)] = w;
  }

  std::ofstream mf(out_dir / "manifest.csv");
  mf << "heldout_domain,hp_name,alpha,beta,lambda,penalty,irm_norm,y_bins,"
        "trial,trial_seed,failed,val_risk,val_accuracy,ci_score,"
        "heldout_accuracy,checkpoint_path";
  for (auto strat : sc.strategies) {
    mf << ",selected_" << select::strategy_name(strat);
  }
  mf << "\r\n";
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const CellResult& c = cells[i];
    const auto& hp = sc.hp_grid[c.hp_index];
    std::size_t hpos =
        std::find(heldout_list.begin(), heldout_list.end(), c.heldout_index) -
        heldout_list.begin();
    mf << heldout_ids[hpos] << ',' << sc.hp_names[c.hp_index] << ','
       << fmt17(hp.alpha) << ',' << fmt17(hp.beta) << ',' << fmt17(hp.lambda)
       << ',' << (hp.penalty == diff::PenaltyKind::hsic ? "hsic" : "cov") << ','
       << (hp.irm_norm == diff::NormKind::l2 ? "l2" : "squared-l2") << ','
       << hp.y_bins << ',' << c.trial << ',' << c.trial_seed << ','
       << (c.failed ? 1 : 0) << ',' << fmt17(c.val_risk) << ','
       << fmt17(c.val_accuracy) << ',' << fmt17(c.ci_score) << ','
       << fmt17(c.heldout_accuracy) << ',' << c.checkpoint_path;
    for (auto strat : sc.strategies) {
      const auto& w = winners[select::strategy_name(strat)];
      const bool sel = std::find(w.begin(), w.end(), i) != w.end();
      mf << ',' << (sel ? 1 : 0);
    }
    mf << "\r\n";
  }
  return outcome;
}

}  // namespace tcri::harness
