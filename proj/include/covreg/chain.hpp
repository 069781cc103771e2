#pragma once

#include <chrono>
#include <exception>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "covreg/archive.hpp"
#include "covreg/common.hpp"
#include "covreg/gibbs.hpp"
#include "covreg/init.hpp"
#include "covreg/kappa.hpp"
#include "covreg/model.hpp"
#include "covreg/model_core.hpp"

namespace covreg {

enum class InitScheme { prior, data_driven };
enum class KappaPolicy { fixed, heuristic, grid };

inline std::string to_string(InitScheme s) { return s == InitScheme::prior ? "prior" : "data-driven"; }

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "prior") return InitScheme::prior;
  if (s == "data-driven" || s == "data") return InitScheme::data_driven;
  throw std::invalid_argument("unknown init scheme '" + s + "'");
}

inline std::string to_string(KappaPolicy k) {
  switch (k) {
    case KappaPolicy::fixed: return "fixed";
    case KappaPolicy::heuristic: return "heuristic";
    case KappaPolicy::grid: return "grid";
  }
  return "fixed";
}

inline KappaPolicy parse_kappa_policy(const std::string& s) {
  if (s == "fixed") return KappaPolicy::fixed;
  if (s == "heuristic") return KappaPolicy::heuristic;
  if (s == "grid") return KappaPolicy::grid;
  throw std::invalid_argument("unknown kappa policy '" + s + "'");
}

struct ChainConfig {
  Index n_iterations = 10000;
  Index burn_in = 5000;
  Index thin = 10;
  std::uint64_t seed = 1;
  InitScheme init = InitScheme::prior;
  MeanMode mode = MeanMode::zero_mean;
  KappaPolicy kappa_policy = KappaPolicy::fixed;
  std::vector<double> kappa_grid;
  std::vector<double> kappa_grid_weights;  // empty means uniform
  Index kappa_grid_cap = 2000;
  bool impute = false;
  DataDrivenInitOptions init_options{};
  KappaHeuristicOptions heuristic{};

  void validate() const {
    if (n_iterations < 1) throw std::invalid_argument("n_iterations must be positive");
    if (burn_in < 0 || burn_in >= n_iterations) throw std::invalid_argument("burn_in must lie in [0, n_iterations)");
    if (thin < 1) throw std::invalid_argument("thin must be positive");
    if (kappa_policy == KappaPolicy::grid) {
      if (kappa_grid.empty()) throw std::invalid_argument("grid kappa policy needs a nonempty grid");
      if (!kappa_grid_weights.empty() && kappa_grid_weights.size() != kappa_grid.size()) {
        throw std::invalid_argument("kappa grid weights must match the grid");
      }
    }
  }

  /// floor((n_iterations - burn_in) / thin)
  Index retained() const { return (n_iterations - burn_in) / thin; }

  nlohmann::json to_json() const {
    return {{"n_iterations", n_iterations},
            {"burn_in", burn_in},
            {"thin", thin},
            {"seed", seed},
            {"init", to_string(init)},
            {"mode", to_string(mode)},
            {"kappa_policy", to_string(kappa_policy)},
            {"kappa_grid", kappa_grid},
            {"kappa_grid_weights", kappa_grid_weights},
            {"kappa_grid_cap", kappa_grid_cap},
            {"impute", impute},
            {"init_knots", init_options.n_knots},
            {"init_bin_halfwidth", init_options.bin_halfwidth},
            {"init_warmup_cycles", init_options.warmup_cycles},
            {"heuristic_knots", heuristic.n_knots},
            {"heuristic_bin_halfwidth", heuristic.bin_halfwidth}};
  }
};

inline nlohmann::json to_json(const Hyperparameters& h) {
  return {{"a1", h.a1},           {"a2", h.a2},         {"a_sigma", h.a_sigma},
          {"b_sigma", h.b_sigma}, {"L_star", h.L_star}, {"k_star", h.k_star},
          {"kappa", h.kernel.kappa}, {"nugget", h.kernel.nugget}};
}

/// Accumulates wall-clock seconds per named step.
class StepTimer {
 public:
  template <class F>
  void run(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    seconds_[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  const std::map<std::string, double>& seconds() const { return seconds_; }

 private:
  std::map<std::string, double> seconds_;
};

namespace detail {

inline void record_traces(PosteriorArchive& a, const ModelState& s) {
  a.traces["kappa"].push_back(s.kappa);
  for (Index j = 0; j < s.p(); ++j) a.traces["sigma0_" + std::to_string(j + 1)].push_back(s.sigma0(j));
  for (Index h = 0; h < s.L(); ++h) a.traces["delta_" + std::to_string(h + 1)].push_back(s.shrinkage.delta(h));
}

template <class F>
void with_context(const std::string& step, Index sweep, F&& f) {
  try {
    f();
  } catch (const NumericalError& e) {
    throw NumericalError(step + " (sweep " + std::to_string(sweep) + "): " + e.what());
  }
}

}  // namespace detail

/// One full sweep in the fixed order: impute (optional), Step 1, Step 2 or the
/// psi/nu block, Step 3, Step 4, Step 5, Step 6, then kappa on a grid if
/// configured. `work` is the dataset the steps condition on.
struct SweepContext {
  const ChainConfig& config;
  const Hyperparameters& hyper;
  const Dataset& data;
  Dataset work;
  SamplerWorkspace workspace;
  Vector grid;
  Vector grid_weights;
  StepTimer timer;

  SweepContext(const ChainConfig& c, const Hyperparameters& h, const Dataset& d)
      : config(c), hyper(h), data(d), workspace(d.xs, h.kernel) {
    work.xs = d.xs;
    work.y = d.y_zero_filled();
    work.observed = c.impute ? Mask::Constant(d.n(), d.p(), true) : d.observed;
    if (c.kappa_policy == KappaPolicy::grid) {
      grid = Eigen::Map<const Vector>(c.kappa_grid.data(), static_cast<Index>(c.kappa_grid.size()));
      grid_weights = c.kappa_grid_weights.empty()
                         ? Vector::Ones(grid.size())
                         : Vector(Eigen::Map<const Vector>(c.kappa_grid_weights.data(), grid.size()));
    }
  }

  void sweep(ModelState& s, Index it, RandomStream& rng) {
    if (config.impute) timer.run("impute", [&] { impute_missing(s, data, work.y, rng); });
    const GpPrior& gp = workspace.prior(s.kappa);
    detail::with_context("step 1", it, [&] { timer.run("xi", [&] { step_xi(s, work, gp, rng); }); });
    if (s.mode == MeanMode::latent_mean) {
      detail::with_context("psi/nu", it, [&] { timer.run("psi_nu", [&] { step_psi_nu(s, work, gp, rng); }); });
    } else {
      detail::with_context("step 2", it, [&] { timer.run("eta", [&] { step_eta(s, work, rng); }); });
    }
    timer.run("sigma0", [&] { step_sigma0(s, work, hyper, rng); });
    detail::with_context("step 4", it, [&] { timer.run("theta", [&] { step_theta(s, work, rng); }); });
    timer.run("phi", [&] { step_phi(s, rng); });
    timer.run("delta", [&] { step_delta(s, hyper, rng); });
    if (config.kappa_policy == KappaPolicy::grid) {
      detail::with_context("kappa grid", it, [&] {
        timer.run("kappa", [&] {
          s.kappa = sample_kappa_grid(s, work, grid, grid_weights, hyper.kernel, rng,
                                      KappaGridOptions{config.kappa_grid_cap});
        });
      });
    }
  }
};

/// Initial state under the configured scheme, with kappa already set.
inline ModelState initial_state(const ChainConfig& config, const Hyperparameters& hyper, const Dataset& data,
                                SamplerWorkspace& workspace, RandomStream& rng) {
  const GpPrior& gp = workspace.prior(hyper.kernel.kappa);
  if (config.init == InitScheme::data_driven) {
    return data_driven_init(data, hyper, gp, config.mode, rng, config.init_options);
  }
  return sample_prior(hyper, gp, data.p(), config.mode, rng);
}

/// Runs one chain and returns the thinned post-burn-in draws. Deterministic
/// given config.seed.
inline PosteriorArchive run_chain(const ChainConfig& config, Hyperparameters hyper, const Dataset& data) {
  config.validate();
  hyper.validate();
  data.validate();
  const auto t0 = std::chrono::steady_clock::now();

  nlohmann::json kappa_info = {{"policy", to_string(config.kappa_policy)}};
  if (config.kappa_policy == KappaPolicy::heuristic) {
    const KappaHeuristicResult h = kappa_heuristic(data, config.heuristic);
    hyper.kernel.kappa = h.kappa;
    kappa_info["heuristic_kappa"] = h.kappa;
    kappa_info["homoscedastic"] = h.homoscedastic;
    log(LogLevel::info, "kappa heuristic: kappa = " + std::to_string(h.kappa));
  } else if (config.kappa_policy == KappaPolicy::grid) {
    hyper.kernel.kappa = config.kappa_grid.front();
  }

  RandomStream rng(config.seed);
  SweepContext ctx(config, hyper, data);
  ModelState s;
  ctx.timer.run("init", [&] { s = initial_state(config, hyper, data, ctx.workspace, rng); });
  s.kappa = hyper.kernel.kappa;

  PosteriorArchive archive;
  archive.model = "covreg";
  archive.n = data.n();
  archive.p = data.p();
  for (Index it = 1; it <= config.n_iterations; ++it) {
    ctx.sweep(s, it, rng);
    if (it > config.burn_in && (it - config.burn_in) % config.thin == 0) {
      archive.append(state_trajectory(s), it);
      detail::record_traces(archive, s);
    }
  }

  archive.manifest = {{"model", archive.model},
                      {"chain", config.to_json()},
                      {"hyper", to_json(hyper)},
                      {"kappa", kappa_info},
                      {"step_seconds", ctx.timer.seconds()},
                      {"wall_seconds",
                       std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}};
  return archive;
}

/// Seed of chain c in a multi-chain run.
inline std::uint64_t chain_seed(std::uint64_t base, Index c) {
  return RandomStream(base).spawn(static_cast<std::uint64_t>(c)).seed();
}

/// n_chains independent chains run concurrently; chain c uses chain_seed(config.seed, c).
inline std::vector<PosteriorArchive> run_chains(const ChainConfig& config, const Hyperparameters& hyper,
                                                const Dataset& data, Index n_chains) {
  if (n_chains < 1) throw std::invalid_argument("n_chains must be positive");
  std::vector<PosteriorArchive> out(static_cast<std::size_t>(n_chains));
  std::vector<std::exception_ptr> errors(out.size());
  std::vector<std::thread> threads;
  for (Index c = 0; c < n_chains; ++c) {
    threads.emplace_back([&, c] {
      try {
        ChainConfig cc = config;
        cc.seed = chain_seed(config.seed, c);
        out[static_cast<std::size_t>(c)] = run_chain(cc, hyper, data);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace covreg
