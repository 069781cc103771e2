#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "covreg/covreg.hpp"

using namespace covreg;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json base_manifest(const std::string& command) {
  return {{"tool_version", kToolVersion}, {"command", command}};
}

std::string chain_path(const std::string& out, Index c, Index n_chains) {
  if (n_chains == 1) return out;
  const std::filesystem::path p(out);
  return (p.parent_path() / (p.stem().string() + ".chain" + std::to_string(c + 1) + p.extension().string()))
      .string();
}

/// Divides every response by the largest per-column sample variance.
double scale_max_variance(Dataset& d) {
  double top = 0.0;
  for (Index j = 0; j < d.p(); ++j) {
    double s = 0.0, s2 = 0.0;
    Index m = 0;
    for (Index i = 0; i < d.n(); ++i) {
      if (!d.observed(i, j)) continue;
      s += d.y(i, j);
      s2 += d.y(i, j) * d.y(i, j);
      ++m;
    }
    if (m > 1) top = std::max(top, (s2 - s * s / static_cast<double>(m)) / static_cast<double>(m - 1));
  }
  if (!(top > 0.0)) throw DataError("--scale max-var: no column has positive variance");
  const double f = 1.0 / std::sqrt(top);
  for (Index i = 0; i < d.n(); ++i) {
    for (Index j = 0; j < d.p(); ++j) {
      if (d.observed(i, j)) d.y(i, j) *= f;
    }
  }
  return top;
}

/// Last observation carried forward per column; leading gaps take the first observed value.
Dataset prefill_locf(const Dataset& d) {
  Dataset out = d;
  for (Index j = 0; j < d.p(); ++j) {
    Index first = -1;
    for (Index i = 0; i < d.n() && first < 0; ++i) {
      if (d.observed(i, j)) first = i;
    }
    if (first < 0) throw DataError("locf pre-fill: column " + std::to_string(j + 1) + " has no observations");
    double last = d.y(first, j);
    for (Index i = 0; i < d.n(); ++i) {
      if (d.observed(i, j)) last = d.y(i, j);
      out.y(i, j) = last;
      out.observed(i, j) = true;
    }
  }
  return out;
}

struct DataInput {
  std::string path;
  std::string scale = "none";
};

struct LoadedInput {
  Dataset data;
  nlohmann::json manifest;
};

LoadedInput load_input(const DataInput& in) {
  LoadedInput out;
  out.data = load_dataset(in.path);
  out.manifest = {{"path", in.path}, {"sha256", file_sha256(in.path)}, {"scale", in.scale}};
  if (in.scale == "max-var") {
    out.manifest["max_variance"] = scale_max_variance(out.data);
  } else if (in.scale != "none") {
    throw UsageError("--scale must be none or max-var");
  }
  return out;
}

void print_table(const std::map<std::string, double>& rows) {
  for (const auto& [k, v] : rows) std::cout << k << " = " << v << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian covariance regression: simulate, fit, compare and summarize"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "debug logging");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset and its true covariance trajectory");
  std::string sim_preset = "prior", sim_out, sim_truth;
  std::uint64_t sim_seed = 1;
  Index sim_p = -1, sim_n = -1, sim_knots = 5;
  bool sim_holdout = false;
  sim->add_option("--preset", sim_preset, "prior | spline")->check(CLI::IsMember({"prior", "spline"}));
  sim->add_option("--seed", sim_seed, "seed");
  sim->add_option("--p", sim_p, "response dimension (default 10 for prior, 30 for spline)");
  sim->add_option("--n", sim_n, "number of predictor points (default 100 for prior, 500 for spline)");
  sim->add_option("--knots", sim_knots, "spline knots");
  sim->add_flag("--holdout", sim_holdout, "remove entries with the covariance-norm biased Bernoulli mask");
  sim->add_option("--out", sim_out, "dataset CSV")->required();
  sim->add_option("--truth", sim_truth, "truth archive")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "run the covariance regression sampler");
  DataInput fit_in;
  std::string fit_out, fit_config, fit_kappa_policy, fit_mode, fit_init;
  Index fit_chains = 1;
  std::optional<Index> fit_iter, fit_burn, fit_thin, fit_L, fit_k;
  std::optional<std::uint64_t> fit_seed;
  std::optional<double> fit_kappa;
  bool fit_impute = false;
  fit->add_option("--data", fit_in.path, "dataset CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--out", fit_out, "archive path (with --chains N, .chainK is inserted before the extension)")
      ->required();
  fit->add_option("--config", fit_config, "key = value run configuration")->check(CLI::ExistingFile);
  fit->add_option("--chains", fit_chains, "independent chains run concurrently")->check(CLI::PositiveNumber);
  fit->add_option("--kappa", fit_kappa_policy, "fixed | heuristic | grid")
      ->check(CLI::IsMember({"fixed", "heuristic", "grid"}));
  fit->add_option("--kappa-value", fit_kappa, "kappa for the fixed policy");
  fit->add_option("--mode", fit_mode, "zero-mean | latent-mean");
  fit->add_option("--init", fit_init, "prior | data-driven");
  fit->add_option("--iterations", fit_iter);
  fit->add_option("--burn-in", fit_burn);
  fit->add_option("--thin", fit_thin);
  fit->add_option("--seed", fit_seed);
  fit->add_option("--L", fit_L, "dictionary truncation");
  fit->add_option("--k", fit_k, "latent factor truncation");
  fit->add_flag("--impute", fit_impute, "impute missing responses every sweep");
  fit->add_option("--scale", fit_in.scale, "none | max-var");

  // baseline
  auto* base = app.add_subcommand("baseline", "fit a comparison model");
  base->require_subcommand(1);
  DataInput base_in;
  std::string base_out, base_prefill = "none";
  std::uint64_t base_seed = 1;
  Index base_iter = 10000, base_burn = 5000, base_thin = 10, base_L = 10, base_k = 10;
  double base_kappa = 10.0, base_h0 = 40.0;
  std::optional<double> base_beta;
  Index base_draws = 100;
  bool base_impute = false;
  auto add_common = [&](CLI::App* a) {
    a->add_option("--data", base_in.path, "dataset CSV")->required()->check(CLI::ExistingFile);
    a->add_option("--out", base_out, "archive path")->required();
    a->add_option("--seed", base_seed);
    a->add_option("--scale", base_in.scale, "none | max-var");
  };
  auto* mdw = base->add_subcommand("mdw", "Wishart matrix discounting with forward filtering backward sampling");
  add_common(mdw);
  mdw->add_option("--h0", base_h0, "initial degrees of freedom");
  mdw->add_option("--beta", base_beta, "discount factor (default 1 - 1/h0)");
  mdw->add_option("--draws", base_draws, "independent backward samples");
  mdw->add_option("--prefill", base_prefill, "none | locf (last observation carried forward)")
      ->check(CLI::IsMember({"none", "locf"}));
  auto* hgp = base->add_subcommand("homo-gp", "homoscedastic Gaussian process mean regression");
  auto* hlf = base->add_subcommand("homo-lf", "homoscedastic latent factor mean regression");
  for (auto* a : {hgp, hlf}) {
    add_common(a);
    a->add_option("--iterations", base_iter);
    a->add_option("--burn-in", base_burn);
    a->add_option("--thin", base_thin);
    a->add_option("--kappa-value", base_kappa);
    a->add_flag("--impute", base_impute, "impute missing responses every sweep");
  }
  hlf->add_option("--L", base_L);
  hlf->add_option("--k", base_k);

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "KL study, Frobenius curves, PSRF and HPD coverage");
  std::vector<std::string> diag_archives;
  std::string diag_truth, diag_data, diag_out;
  double diag_mass = 0.95;
  diag->add_option("--archive", diag_archives, "posterior archive(s)")->required()->check(CLI::ExistingFile);
  diag->add_option("--truth", diag_truth, "truth archive")->check(CLI::ExistingFile);
  diag->add_option("--data", diag_data, "dataset with its missingness mask (for the KL study)")
      ->check(CLI::ExistingFile);
  diag->add_option("--mass", diag_mass, "HPD mass");
  diag->add_option("--out", diag_out, "JSON report path");

  // predict
  auto* pred = app.add_subcommand("predict", "posterior predictive of missing entries given the observed ones");
  std::string pred_archive, pred_data, pred_out;
  pred->add_option("--archive", pred_archive)->required()->check(CLI::ExistingFile);
  pred->add_option("--data", pred_data, "rows with partial observations (same predictors as the fit)")
      ->required()
      ->check(CLI::ExistingFile);
  pred->add_option("--out", pred_out, "CSV path (default stdout)");

  // emit-series
  auto* emit = app.add_subcommand("emit-series", "per-element posterior mean and HPD band versus x");
  std::string emit_archive, emit_data, emit_out;
  double emit_mass = 0.95;
  emit->add_option("--archive", emit_archive)->required()->check(CLI::ExistingFile);
  emit->add_option("--data", emit_data, "dataset supplying the predictor values")->required()->check(CLI::ExistingFile);
  emit->add_option("--mass", emit_mass);
  emit->add_option("--out", emit_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  set_log_sink([verbose](LogLevel level, std::string_view msg) {
    if (level == LogLevel::debug && !verbose) return;
    const char* tag = level == LogLevel::warn ? "warn" : level == LogLevel::info ? "info" : "debug";
    std::cerr << "[" << tag << "] " << msg << "\n";
  });

  try {
    if (*sim) {
      RandomStream rng(sim_seed);
      nlohmann::json m = base_manifest("simulate");
      m["preset"] = sim_preset;
      m["seed"] = sim_seed;
      Dataset data;
      CovarianceTrajectory truth;
      if (sim_preset == "prior") {
        PriorSimulationSettings s;
        if (sim_p > 0) s.p = sim_p;
        if (sim_n > 0) s.n = sim_n;
        PriorSimulation ps = simulate_from_prior_dataset(s, rng);
        data = std::move(ps.data);
        truth = std::move(ps.truth);
        m["p"] = s.p;
        m["n"] = s.n;
        m["hyper"] = to_json(s.hyper);
      } else {
        const Index p = sim_p > 0 ? sim_p : 30, n = sim_n > 0 ? sim_n : 500;
        SplineCovariance sc = simulate_spline_covariance(p, n, sim_knots, rng);
        data = Dataset::complete(sc.xs, sample_responses(sc.truth, rng));
        truth = std::move(sc.truth);
        m["p"] = p;
        m["n"] = n;
        m["knots"] = sim_knots;
      }
      if (sim_holdout) {
        data.observed = held_out_mask(truth, data.p(), rng);
        m["held_out"] = data.n() * data.p() - data.observed_count();
      }
      save_dataset(data, sim_out);
      m["dataset"] = sim_out;
      m["dataset_sha256"] = file_sha256(sim_out);
      PosteriorArchive t = truth_archive(truth);
      t.manifest = m;
      save_archive(t, sim_truth);
      std::cerr << "wrote " << sim_out << " (" << data.n() << " x " << data.p() << ", "
                << data.n() * data.p() - data.observed_count() << " missing) and " << sim_truth << "\n";
      return 0;
    }

    if (*fit) {
      ChainConfig cfg;
      Hyperparameters hyper;
      if (!fit_config.empty()) apply_config(parse_config(read_file(fit_config), fit_config), cfg, hyper);
      if (!fit_kappa_policy.empty()) cfg.kappa_policy = parse_kappa_policy(fit_kappa_policy);
      if (fit_kappa) hyper.kernel.kappa = *fit_kappa;
      if (!fit_mode.empty()) cfg.mode = parse_mean_mode(fit_mode);
      if (!fit_init.empty()) cfg.init = parse_init_scheme(fit_init);
      if (fit_iter) cfg.n_iterations = *fit_iter;
      if (fit_burn) cfg.burn_in = *fit_burn;
      if (fit_thin) cfg.thin = *fit_thin;
      if (fit_seed) cfg.seed = *fit_seed;
      if (fit_L) hyper.L_star = *fit_L;
      if (fit_k) hyper.k_star = *fit_k;
      if (fit_impute) cfg.impute = true;
      cfg.validate();
      hyper.validate();
      std::cerr << "# effective configuration\n" << format_config(cfg, hyper);
      LoadedInput in = load_input(fit_in);
      std::vector<PosteriorArchive> archives = run_chains(cfg, hyper, in.data, fit_chains);
      for (Index c = 0; c < fit_chains; ++c) {
        PosteriorArchive& a = archives[static_cast<std::size_t>(c)];
        a.manifest.update(base_manifest("fit"));
        a.manifest["input"] = in.manifest;
        a.manifest["config_echo"] = format_config(cfg, hyper);
        a.manifest["chain_index"] = c + 1;
        a.manifest["chain_count"] = fit_chains;
        const std::string path = chain_path(fit_out, c, fit_chains);
        save_archive(a, path);
        std::cerr << "wrote " << path << " (" << a.draws() << " draws, kappa " << a.traces["kappa"].back() << ")\n";
      }
      return 0;
    }

    if (*base) {
      LoadedInput in = load_input(base_in);
      PosteriorArchive a;
      if (*mdw) {
        MdwConfig mc;
        mc.h0 = base_h0;
        if (base_beta) mc.beta = *base_beta;
        mc.n_draws = base_draws;
        mc.seed = base_seed;
        Dataset d = in.data;
        if (!d.observed.all()) {
          if (base_prefill != "locf") throw DataError("mdw needs complete data; pass --prefill locf to fill gaps");
          log(LogLevel::warn, "mdw: missing entries filled by last observation carried forward");
          d = prefill_locf(d);
        }
        log(LogLevel::info, "mdw: beta = " + std::to_string(mc.resolved_beta()) +
                                (base_beta ? "" : " (1 - 1/h0)"));
        a = mdw_ffbs(d, mc);
        a.manifest["prefill"] = base_prefill;
      } else {
        HomoscedasticConfig hc;
        hc.n_iterations = base_iter;
        hc.burn_in = base_burn;
        hc.thin = base_thin;
        hc.seed = base_seed;
        hc.impute = base_impute;
        if (*hgp) {
          KernelParams kp;
          kp.kappa = base_kappa;
          a = fit_homoscedastic_gp_mean(in.data, kp, hc);
        } else {
          Hyperparameters h;
          h.kernel.kappa = base_kappa;
          h.L_star = base_L;
          h.k_star = base_k;
          a = fit_homoscedastic_latent_factor(in.data, h, hc);
        }
      }
      a.manifest.update(base_manifest("baseline " + a.model));
      a.manifest["input"] = in.manifest;
      save_archive(a, base_out);
      std::cerr << "wrote " << base_out << " (" << a.draws() << " draws)\n";
      return 0;
    }

    if (*diag) {
      nlohmann::json report = base_manifest("diagnose");
      std::vector<PosteriorArchive> archives;
      for (const auto& p : diag_archives) archives.push_back(load_archive(p));
      std::optional<PosteriorArchive> truth;
      if (!diag_truth.empty()) truth = load_archive(diag_truth);
      std::optional<Dataset> data;
      if (!diag_data.empty()) data = load_dataset(diag_data);
      for (std::size_t a = 0; a < archives.size(); ++a) {
        const PosteriorArchive& ar = archives[a];
        nlohmann::json r = {{"archive", diag_archives[a]}, {"model", ar.model}, {"draws", ar.draws()}};
        std::map<std::string, double> table;
        if (truth) {
          const CovarianceTrajectory tt = truth->trajectory(0);
          const std::vector<double> fe = frobenius_error(ar.posterior_mean(), tt);
          double mean = 0.0;
          for (double v : fe) mean += v;
          r["frobenius_of_mean"] = fe;
          table["frobenius_of_mean_avg"] = mean / static_cast<double>(fe.size());
          if (ar.draws() >= 20) table["hpd_coverage"] = hpd_coverage(ar, tt, diag_mass);
          if (data && data->observed_count() < data->n() * data->p()) {
            table["predictive_kl"] = predictive_kl_study(ar, *data, tt);
          }
        }
        for (const auto& [k, v] : table) r[k] = v;
        report["archives"].push_back(r);
        std::cout << "[" << diag_archives[a] << "] model " << ar.model << ", " << ar.draws() << " draws\n";
        print_table(table);
      }
      if (archives.size() >= 2) {
        // PSRF of every diagonal entry Sigma_jj(x_i) across the archives.
        std::vector<double> r_all;
        const PosteriorArchive& a0 = archives.front();
        for (Index i = 0; i < a0.n; ++i) {
          for (Index j = 0; j < a0.p; ++j) {
            std::vector<std::vector<double>> chains;
            for (const auto& ar : archives) chains.push_back(ar.element_draws(i, j, j));
            r_all.push_back(psrf(chains));
          }
        }
        Index below = 0;
        for (double v : r_all) below += v < 1.2 ? 1 : 0;
        const double frac = static_cast<double>(below) / static_cast<double>(r_all.size());
        report["psrf_variance_traces"] = r_all;
        report["psrf_fraction_below_1.2"] = frac;
        std::cout << "psrf: " << below << " of " << r_all.size() << " variance traces below 1.2 (" << frac << ")\n";
      }
      if (!diag_out.empty()) write_file(diag_out, report.dump(2) + "\n");
      return 0;
    }

    if (*pred) {
      const PosteriorArchive a = load_archive(pred_archive);
      const Dataset d = load_dataset(pred_data);
      if (d.n() != a.n || d.p() != a.p) throw DataError("predict: dataset shape differs from the archive");
      std::ostringstream os;
      os << "# archive: " << pred_archive << "\nrow,component,mean,sd\n";
      for (Index i = 0; i < d.n(); ++i) {
        std::vector<Index> obs;
        for (Index j = 0; j < d.p(); ++j) {
          if (d.observed(i, j)) obs.push_back(j);
        }
        if (static_cast<Index>(obs.size()) == d.p()) continue;
        Vector vals(static_cast<Index>(obs.size()));
        for (std::size_t k = 0; k < obs.size(); ++k) vals(static_cast<Index>(k)) = d.y(i, obs[k]);
        // Mixture over draws: mean of means, variance = mean variance + variance of means.
        Vector m1, m2, v;
        std::vector<Index> idx;
        for (Index m = 0; m < a.draws(); ++m) {
          const GaussianPredictive g = conditional_predictive(a.mu_at(m, i), a.sigma_at(m, i), obs, vals);
          if (m == 0) {
            m1 = Vector::Zero(g.dim());
            m2 = Vector::Zero(g.dim());
            v = Vector::Zero(g.dim());
            idx = g.index_map;
          }
          m1 += g.mean;
          m2 += g.mean.cwiseProduct(g.mean);
          v += g.covariance.diagonal();
        }
        const double dn = static_cast<double>(a.draws());
        m1 /= dn;
        const Vector var = v / dn + (m2 / dn - m1.cwiseProduct(m1)).cwiseMax(0.0);
        for (std::size_t k = 0; k < idx.size(); ++k) {
          os << i + 1 << "," << idx[k] + 1 << "," << detail::format_double(m1(static_cast<Index>(k))) << ","
             << detail::format_double(std::sqrt(var(static_cast<Index>(k)))) << "\n";
        }
      }
      if (pred_out.empty()) {
        std::cout << os.str();
      } else {
        write_file(pred_out, os.str());
      }
      return 0;
    }

    if (*emit) {
      const PosteriorArchive a = load_archive(emit_archive);
      const Dataset d = load_dataset(emit_data);
      const std::string label = emit_archive + " sha256=" + file_sha256(emit_archive);
      write_file(emit_out, format_element_series(a, d.xs, emit_mass, label));
      std::cerr << "wrote " << emit_out << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
