#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "tcri/harness.hpp"
#include "tcri/parallel.hpp"

namespace tcri::harness {

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::vector<std::string>> read_csv_rows(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
      line.pop_back();
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    // a trailing empty field is dropped by getline; restore it
    if (!line.empty() && line.back() == ',') fields.push_back("");
    rows.push_back(std::move(fields));
  }
  return rows;
}

int cmd_generate(const Scenario& sc, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "datasets");
  for (std::size_t i = 0; i < sc.domains.size(); ++i) {
    const std::uint64_t seed = mix_seed(sc.seed, 11, i, 0);
    data::DomainDataset ds;
    if (std::holds_alternative<data::ContinuousScmSpec>(sc.domains[i])) {
      auto spec = std::get<data::ContinuousScmSpec>(sc.domains[i]);
      spec.seed = seed;
      ds = data::sample_continuous_scm(spec);
    } else {
      auto spec = std::get<data::SpuriousBinarySpec>(sc.domains[i]);
      spec.seed = seed;
      ds = data::sample_spurious_binary(spec);
    }
    const auto path = out_dir / "datasets" / (ds.domain_id + ".csv");
    data::write_csv(ds, path);
    std::cout << "wrote " << path.string() << " (" << ds.size() << " rows)\n";
  }
  return 0;
}

int cmd_train(const Scenario& sc, const std::filesystem::path& out_dir,
              const std::string& hp_sel, int heldout) {
  std::filesystem::create_directories(out_dir);
  std::size_t hp_index = 0;
  bool found = false;
  for (std::size_t k = 0; k < sc.hp_names.size(); ++k) {
    if (sc.hp_names[k] == hp_sel) {
      hp_index = k;
      found = true;
      break;
    }
  }
  if (!found) {
    try {
      hp_index = std::stoul(hp_sel);
    } catch (...) {
      throw std::runtime_error("unknown hp point: " + hp_sel);
    }
    if (hp_index >= sc.hp_grid.size()) {
      throw std::runtime_error("hp index out of range: " + hp_sel);
    }
  }
  std::vector<data::DomainDataset> domains;
  std::size_t input_dim = 0;
  for (std::size_t i = 0; i < sc.domains.size(); ++i) {
    if (heldout >= 0 && i == static_cast<std::size_t>(heldout)) continue;
    data::DomainDataset ds =
        instantiate_domain(sc.domains[i], mix_seed(sc.seed, 11, i, 0), {});
    input_dim = ds.dim();
    domains.push_back(std::move(ds));
  }
  model::ArchConfig arch = sc.arch;
  arch.input_dim = input_dim;
  arch.num_domains = domains.size();
  model::TcriModel m0 = model::init_model(arch, mix_seed(sc.seed, 17, hp_index, 0));
  train::TrainResult res =
      train::train(std::move(m0), domains, sc.hp_grid[hp_index], sc.train_cfg);
  model::save_checkpoint(res.model, out_dir / "checkpoint.ckpt");
  {
    std::ofstream out(out_dir / "train_log.csv");
    out << "step,domain_id,l_phi,l_phi_psi,l_irm,l_ci,total,wall_ms\r\n";
    for (const auto& r : res.log) {
      out << r.step << ',' << r.domain_id << ',' << fmt17(r.l_phi) << ','
          << fmt17(r.l_phi_psi) << ',' << fmt17(r.l_irm) << ','
          << fmt17(r.l_ci) << ',' << fmt17(r.total) << ',' << fmt17(r.wall_ms)
          << "\r\n";
    }
  }
  std::cout << "final total " << res.final_breakdown.total << " (l_phi "
            << res.final_breakdown.l_phi << ", l_phi_psi "
            << res.final_breakdown.l_phi_psi << ", l_irm "
            << res.final_breakdown.l_irm << ", l_ci "
            << res.final_breakdown.l_ci << ")\n";
  if (heldout >= 0) {
    const std::uint64_t test_seed = mix_seed(sc.seed, 23, heldout, 0);
    data::DomainDataset test = instantiate_domain(
        sc.domains[heldout], test_seed, sc.test_n_samples);
    const auto ev = train::evaluate(res.model, test, sc.task);
    std::cout << "heldout risk " << ev.risk;
    if (ev.accuracy) std::cout << " accuracy " << *ev.accuracy;
    std::cout << "\n";
  }
  return 0;
}

int cmd_select(const std::filesystem::path& manifest_path,
               const std::string& strategy_name) {
  const select::Strategy strat = select::parse_strategy(strategy_name);
  auto rows = read_csv_rows(manifest_path);
  if (rows.size() < 2) throw std::runtime_error("manifest has no data rows");
  auto& header = rows[0];
  auto col = [&header](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw std::runtime_error("manifest missing column " + name);
  };
  const std::size_t c_dom = col("heldout_domain");
  const std::size_t c_alpha = col("alpha"), c_beta = col("beta"),
                    c_lambda = col("lambda"), c_bins = col("y_bins");
  const std::size_t c_pen = col("penalty"), c_norm = col("irm_norm");
  const std::size_t c_seed = col("trial_seed"), c_failed = col("failed");
  const std::size_t c_vrisk = col("val_risk"), c_vacc = col("val_accuracy");
  const std::size_t c_ci = col("ci_score"), c_hacc = col("heldout_accuracy");
  const std::string sel_col = "selected_" + select::strategy_name(strat);
  std::size_t c_sel = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == sel_col) c_sel = i;
  }
  if (c_sel == header.size()) {
    header.push_back(sel_col);
    for (std::size_t r = 1; r < rows.size(); ++r) rows[r].push_back("0");
  }
  // group rows by held-out domain
  std::map<std::string, std::vector<std::size_t>> by_domain;
  std::vector<std::string> domain_order;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::string& d = rows[r][c_dom];
    if (!by_domain.count(d)) domain_order.push_back(d);
    by_domain[d].push_back(r);
  }
  for (const auto& d : domain_order) {
    std::vector<select::Candidate> cands;
    std::vector<std::size_t> idx;
    for (std::size_t r : by_domain[d]) {
      rows[r][c_sel] = "0";
      if (rows[r][c_failed] == "1") continue;
      select::Candidate c;
      c.hp.alpha = std::stod(rows[r][c_alpha]);
      c.hp.beta = std::stod(rows[r][c_beta]);
      c.hp.lambda = std::stod(rows[r][c_lambda]);
      c.hp.penalty = rows[r][c_pen] == "cov" ? diff::PenaltyKind::cov
                                             : diff::PenaltyKind::hsic;
      c.hp.irm_norm = rows[r][c_norm] == "squared-l2"
                          ? diff::NormKind::squared_l2
                          : diff::NormKind::l2;
      c.hp.y_bins = std::stoi(rows[r][c_bins]);
      c.trial_seed = std::stoull(rows[r][c_seed]);
      c.val_risk = std::stod(rows[r][c_vrisk]);
      c.val_accuracy = std::stod(rows[r][c_vacc]);
      c.ci_score = std::stod(rows[r][c_ci]);
      c.oracle_accuracy = std::stod(rows[r][c_hacc]);
      cands.push_back(c);
      idx.push_back(r);
    }
    if (cands.empty()) {
      throw std::runtime_error("no usable candidates for domain " + d);
    }
    const std::size_t pick = select::select(cands, strat);
    rows[idx[pick]][c_sel] = "1";
    std::cout << d << ": selected trial " << rows[idx[pick]][col("trial")]
              << " hp " << rows[idx[pick]][col("hp_name")] << " (heldout acc "
              << rows[idx[pick]][c_hacc] << ")\n";
  }
  std::ofstream out(manifest_path);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      out << r[i] << (i + 1 == r.size() ? "" : ",");
    }
    out << "\r\n";
  }
  return 0;
}

int cmd_report(const std::filesystem::path& accuracies,
               const std::filesystem::path& out_dir, const std::string& name) {
  auto rows = read_csv_rows(accuracies);
  if (rows.size() < 2 || rows[0].size() < 3 || rows[0][0] != "domain_id") {
    throw std::runtime_error(
        "report: expected header domain_id,trial,accuracy");
  }
  std::vector<std::string> ids;
  std::map<std::string, std::vector<double>> acc;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::string& d = rows[r][0];
    if (!acc.count(d)) ids.push_back(d);
    acc[d].push_back(std::stod(rows[r][2]));
  }
  std::vector<std::vector<double>> per_domain;
  per_domain.reserve(ids.size());
  for (const auto& d : ids) per_domain.push_back(acc[d]);
  const DomainStats st = report_stats(ids, per_domain);
  std::filesystem::create_directories(out_dir);
  write_stats_files(out_dir, name, st);
  std::ifstream echo(out_dir / ("stats_" + name + ".txt"));
  std::cout << echo.rdbuf();
  return 0;
}

int cmd_demo_lemma1(double r, double d1, double d2, std::size_t n, int bins,
                    std::uint64_t seed, const std::filesystem::path& out) {
  const data::DomainDataset ds =
      data::sample_lemma1_counterexample(d1, d2, r, n, seed);
  std::vector<std::size_t> count(bins, 0), zeros(bins, 0);
  const double lo = -r + d1, hi = r + d1;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double z1 = ds.features.at(i, 0);
    int b = static_cast<int>((z1 - lo) / (hi - lo) * bins);
    if (b < 0) b = 0;
    if (b >= bins) b = bins - 1;
    ++count[b];
    if (ds.targets[i] == 0.0) ++zeros[b];
  }
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot open " + out.string());
  os << "z1,n,p0_empirical,p0_stderr,p0_analytic\r\n";
  for (int b = 0; b < bins; ++b) {
    const double center = lo + (hi - lo) * (b + 0.5) / bins;
    const double p = count[b] > 0
                         ? static_cast<double>(zeros[b]) / count[b]
                         : 0.0;
    const double se =
        count[b] > 1 ? std::sqrt(p * (1.0 - p) / count[b]) : 0.0;
    os << fmt17(center) << ',' << count[b] << ',' << fmt17(p) << ','
       << fmt17(se) << ',' << fmt17(data::lemma1_conditional_y0(center, d2, r))
       << "\r\n";
  }
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"TCRI domain-generalization experiments"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir = "out";
  std::int64_t seed_override = -1;
  int threads = par::max_threads();
  app.add_option("--scenario", scenario_path, "scenario file (json)");
  app.add_option("--out-dir", out_dir, "output directory");
  app.add_option("--seed", seed_override, "override the scenario seed");
  app.add_option("--threads", threads, "worker threads for sweeps");
  app.fallthrough();

  auto* c_gen = app.add_subcommand("generate", "emit dataset CSVs");
  auto* c_train = app.add_subcommand("train", "one training run");
  std::string hp_sel = "0";
  int heldout = -1;
  c_train->add_option("--hp", hp_sel, "hp point (name or index)");
  c_train->add_option("--heldout", heldout, "held-out domain index");
  auto* c_sweep = app.add_subcommand("sweep", "hp grid x trials");
  auto* c_select = app.add_subcommand("select", "apply strategy to a manifest");
  std::string manifest = "out/manifest.csv";
  std::string strategy = "ci";
  c_select->add_option("--manifest", manifest, "manifest csv");
  c_select->add_option("--strategy", strategy, "ci | val-acc | oracle");
  auto* c_report = app.add_subcommand("report", "domain statistics tables");
  std::string accuracies;
  std::string report_name = "report";
  c_report->add_option("--accuracies", accuracies,
                       "csv with domain_id,trial,accuracy")
      ->required();
  c_report->add_option("--name", report_name, "stats file suffix");
  auto* c_lemma = app.add_subcommand("demo-lemma1",
                                     "empirical vs analytic conditionals");
  double l_r = 1.0, l_d1 = 0.0, l_d2 = 0.0;
  std::size_t l_n = 100000;
  int l_bins = 40;
  std::string l_out = "lemma1.csv";
  c_lemma->add_option("--r", l_r, "circle radius");
  c_lemma->add_option("--d1", l_d1, "z1 domain shift");
  c_lemma->add_option("--d2", l_d2, "z2 domain shift");
  c_lemma->add_option("--n", l_n, "sample count");
  c_lemma->add_option("--bins", l_bins, "z1 bins");
  c_lemma->add_option("--out", l_out, "output csv");

  try {
    app.parse(argc, argv);
    auto need_scenario = [&]() {
      if (scenario_path.empty()) {
        throw std::runtime_error("missing --scenario <file>");
      }
      Scenario sc = load_scenario(scenario_path);
      if (seed_override >= 0) sc.seed = static_cast<std::uint64_t>(seed_override);
      return sc;
    };
    if (c_gen->parsed()) return cmd_generate(need_scenario(), out_dir);
    if (c_train->parsed()) {
      return cmd_train(need_scenario(), out_dir, hp_sel, heldout);
    }
    if (c_sweep->parsed()) {
      const Scenario sc = need_scenario();
      if (sc.protocol == Protocol::table1_replication) {
        const Table1Outcome oc = run_table1_replication(sc, out_dir, threads);
        std::ifstream echo(std::filesystem::path(out_dir) / "table1.txt");
        std::cout << echo.rdbuf();
      } else {
        run_scenario(sc, out_dir, threads);
        std::cout << "sweep complete: " << out_dir << "/manifest.csv\n";
      }
      return 0;
    }
    if (c_select->parsed()) return cmd_select(manifest, strategy);
    if (c_report->parsed()) return cmd_report(accuracies, out_dir, report_name);
    if (c_lemma->parsed()) {
      if (l_n < 1) throw std::runtime_error("demo-lemma1: n must be positive");
      const std::uint64_t s = seed_override >= 0
                                  ? static_cast<std::uint64_t>(seed_override)
                                  : 0;
      return cmd_demo_lemma1(l_r, l_d1, l_d2, l_n, l_bins, s, l_out);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace tcri::harness
