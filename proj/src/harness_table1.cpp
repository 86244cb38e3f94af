#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "tcri/harness.hpp"
#include "tcri/parallel.hpp"

namespace tcri::harness {

namespace {

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  return m / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

Table1Outcome run_table1_replication(const Scenario& sc,
                                     const std::filesystem::path& out_dir,
                                     int worker_threads) {
  if (sc.protocol != Protocol::table1_replication) {
    throw std::invalid_argument("run_table1_replication: wrong protocol");
  }
  for (const auto& d : sc.domains) {
    if (!std::holds_alternative<data::ContinuousScmSpec>(d)) {
      throw std::invalid_argument(
          "table1-replication expects continuous_scm domains");
    }
  }
  std::filesystem::create_directories(out_dir);

  struct Run {
    std::size_t hp = 0;
    std::size_t trial = 0;
    double phi0 = 0.0, phi1 = 0.0;
    bool failed = false;
    std::string error;
  };
  std::vector<Run> runs;
  for (std::size_t k = 0; k < sc.hp_grid.size(); ++k) {
    for (std::size_t t = 0; t < sc.trials; ++t) runs.push_back({k, t});
  }

  // oracle: pooled no-intercept regression of y on z_c, one value per trial
  std::vector<double> oracle(sc.trials, 0.0);
  for (std::size_t t = 0; t < sc.trials; ++t) {
    std::vector<double> zy, zz;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < sc.domains.size(); ++i) {
      auto spec = std::get<data::ContinuousScmSpec>(sc.domains[i]);
      spec.seed = mix_seed(sc.seed, 11, i, t);
      const data::DomainDataset ds = data::sample_continuous_scm(spec);
      for (std::size_t r = 0; r < ds.size(); ++r) {
        const double zc = ds.latent_causal->at(r, 0);
        num += zc * ds.targets[r];
        den += zc * zc;
      }
    }
    oracle[t] = num / den;
  }

  auto run_one = [&sc](Run& r) {
    try {
      std::vector<data::DomainDataset> domains;
      for (std::size_t i = 0; i < sc.domains.size(); ++i) {
        auto spec = std::get<data::ContinuousScmSpec>(sc.domains[i]);
        spec.seed = mix_seed(sc.seed, 11, i, r.trial);
        domains.push_back(data::sample_continuous_scm(spec));
      }
      model::ArchConfig arch = sc.arch;
      arch.input_dim = 2;
      arch.hidden_dim = 0;
      arch.phi_dim = 1;
      arch.psi_dim = 1;
      arch.biases = false;
      arch.freeze_theta_c = true;
      arch.task = model::Task::regression;
      arch.num_domains = domains.size();
      model::TcriModel m =
          model::init_model(arch, mix_seed(sc.seed, 17, r.hp, r.trial));
      train::TrainResult res =
          train::train(std::move(m), domains, sc.hp_grid[r.hp], sc.train_cfg);
      r.phi0 = res.model.phi_head.weight.at(0, 0);
      r.phi1 = res.model.phi_head.weight.at(1, 0);
    } catch (const std::exception& e) {
      r.failed = true;
      r.error = e.what();
    }
  };

  const int workers = std::max(
      1, std::min<int>(worker_threads, static_cast<int>(runs.size())));
  if (workers == 1) {
    for (auto& r : runs) run_one(r);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        par::set_enabled(false);
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= runs.size()) break;
          run_one(runs[i]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  {
    std::ofstream out(out_dir / "table1_runs.csv");
    out << "hp_name,trial,failed,phi_0,phi_1,oracle_coefficient\r\n";
    for (const auto& r : runs) {
      out << sc.hp_names[r.hp] << ',' << r.trial << ',' << (r.failed ? 1 : 0)
          << ',' << fmt17(r.phi0) << ',' << fmt17(r.phi1) << ','
          << fmt17(oracle[r.trial]) << "\r\n";
    }
  }

  Table1Outcome oc;
  oc.oracle_mean = mean_of(oracle);
  oc.oracle_std = sample_std(oracle);
  for (std::size_t k = 0; k < sc.hp_grid.size(); ++k) {
    std::vector<double> p0, p1, a1;
    for (const auto& r : runs) {
      if (r.hp != k || r.failed) continue;
      p0.push_back(r.phi0);
      p1.push_back(r.phi1);
      a1.push_back(std::abs(r.phi1));
    }
    if (p0.empty()) {
      throw std::runtime_error("table1: every trial failed for " +
                               sc.hp_names[k]);
    }
    Table1Row row;
    row.hp_name = sc.hp_names[k];
    row.phi0_mean = mean_of(p0);
    row.phi0_std = sample_std(p0);
    row.phi1_mean = mean_of(p1);
    row.phi1_std = sample_std(p1);
    row.abs_phi1_mean = mean_of(a1);
    oc.rows.push_back(row);
  }

  {
    std::ofstream out(out_dir / "table1.csv");
    out << "model,phi_00_mean,phi_00_std,phi_10_mean,phi_10_std,"
           "abs_phi_10_mean\r\n";
    for (const auto& r : oc.rows) {
      out << r.hp_name << ',' << fmt17(r.phi0_mean) << ',' << fmt17(r.phi0_std)
          << ',' << fmt17(r.phi1_mean) << ',' << fmt17(r.phi1_std) << ','
          << fmt17(r.abs_phi1_mean) << "\r\n";
    }
    out << "oracle," << fmt17(oc.oracle_mean) << ',' << fmt17(oc.oracle_std)
        << ",0,0,0\r\n";
  }
  {
    std::ofstream out(out_dir / "table1.txt");
    out << "model        phi_00   phi_10\n";
    for (const auto& r : oc.rows) {
      std::string name = r.hp_name;
      name.resize(12, ' ');
      out << name << " " << fmt3(r.phi0_mean) << "    " << fmt3(r.phi1_mean)
          << "\n";
    }
    out << "oracle       " << fmt3(oc.oracle_mean) << "    0.000\n";
  }
  return oc;
}

}  // namespace tcri::harness
