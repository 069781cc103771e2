#include <cmath>

#include <gtest/gtest.h>

#include "covreg/covreg.hpp"

using namespace covreg;

namespace {

Hyperparameters small_hyper() {
  Hyperparameters h;
  h.L_star = 3;
  h.k_star = 2;
  h.kernel = {10.0, 1e-5};
  return h;
}

PriorSimulation small_sim(std::uint64_t seed, Index n = 30, Index p = 4) {
  RandomStream rng(seed);
  return simulate_from_prior_dataset(small_hyper(), unit_grid(n), p, MeanMode::zero_mean, rng);
}

ChainConfig short_config(Index iters, Index burn, Index thin, std::uint64_t seed) {
  ChainConfig c;
  c.n_iterations = iters;
  c.burn_in = burn;
  c.thin = thin;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(ChainConfig, RetainedCountIsFloor) {
  EXPECT_EQ(short_config(5000, 2500, 10, 1).retained(), 250);
  EXPECT_EQ(short_config(107, 10, 10, 1).retained(), 9);
  EXPECT_EQ(short_config(2, 0, 1, 1).retained(), 2);
}

TEST(ChainConfig, Validation) {
  EXPECT_THROW(short_config(0, 0, 1, 1).validate(), std::invalid_argument);
  EXPECT_THROW(short_config(10, 10, 1, 1).validate(), std::invalid_argument);
  EXPECT_THROW(short_config(10, 0, 0, 1).validate(), std::invalid_argument);
  ChainConfig g = short_config(10, 0, 1, 1);
  g.kappa_policy = KappaPolicy::grid;
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g.kappa_grid = {1.0, 2.0};
  g.kappa_grid_weights = {1.0};
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g.kappa_grid_weights = {1.0, 3.0};
  EXPECT_NO_THROW(g.validate());
}

TEST(ChainConfig, EnumRoundTrip) {
  for (auto s : {InitScheme::prior, InitScheme::data_driven}) EXPECT_EQ(parse_init_scheme(to_string(s)), s);
  for (auto k : {KappaPolicy::fixed, KappaPolicy::heuristic, KappaPolicy::grid}) {
    EXPECT_EQ(parse_kappa_policy(to_string(k)), k);
  }
  EXPECT_THROW(parse_kappa_policy("adaptive"), std::invalid_argument);
  EXPECT_THROW(parse_init_scheme("random"), std::invalid_argument);
}

TEST(RunChain, TwoIterationsWithoutBurnInGiveTwoDraws) {
  const PriorSimulation sim = small_sim(1);
  const PosteriorArchive a = run_chain(short_config(2, 0, 1, 3), small_hyper(), sim.data);
  EXPECT_EQ(a.draws(), 2);
  EXPECT_EQ(a.sweeps, (std::vector<Index>{1, 2}));
  EXPECT_EQ(a.n, 30);
  EXPECT_EQ(a.p, 4);
  EXPECT_FALSE(a.has_mean());
  EXPECT_EQ(a.traces.at("kappa").size(), 2u);
  EXPECT_EQ(a.traces.at("sigma0_4").size(), 2u);
  EXPECT_EQ(a.traces.at("delta_3").size(), 2u);
}

TEST(RunChain, ArchiveLengthIsFloorOfRetained) {
  const PriorSimulation sim = small_sim(2, 15, 3);
  const ChainConfig c = short_config(47, 10, 4, 5);
  const PosteriorArchive a = run_chain(c, small_hyper(), sim.data);
  EXPECT_EQ(a.draws(), c.retained());
  EXPECT_EQ(a.sweeps.front(), 14);
  EXPECT_EQ(a.sweeps.back(), 46);
}

TEST(RunChain, DeterministicForFixedSeed) {
  const PriorSimulation sim = small_sim(3);
  const ChainConfig c = short_config(12, 4, 2, 17);
  const PosteriorArchive a = run_chain(c, small_hyper(), sim.data);
  const PosteriorArchive b = run_chain(c, small_hyper(), sim.data);
  EXPECT_TRUE(a.same_draws(b));
  const PosteriorArchive other = run_chain(short_config(12, 4, 2, 18), small_hyper(), sim.data);
  EXPECT_FALSE(a.same_draws(other));
}

TEST(RunChain, UnobservedPayloadDoesNotChangeDraws) {
  PriorSimulation sim = small_sim(4);
  Dataset a = sim.data;
  a.observed(5, 1) = a.observed(6, 1) = a.observed(20, 3) = false;
  Dataset b = a;
  a.y(5, 1) = std::nan("");
  a.y(6, 1) = 1e8;
  a.y(20, 3) = -3.0;
  b.y(5, 1) = 99.0;
  b.y(6, 1) = std::nan("");
  b.y(20, 3) = std::nan("");
  for (bool impute : {false, true}) {
    ChainConfig c = short_config(6, 2, 1, 23);
    c.impute = impute;
    EXPECT_TRUE(run_chain(c, small_hyper(), a).same_draws(run_chain(c, small_hyper(), b))) << "impute " << impute;
  }
}

TEST(RunChain, LatentMeanModeRecordsMeans) {
  const PriorSimulation sim = small_sim(5);
  ChainConfig c = short_config(4, 1, 1, 9);
  c.mode = MeanMode::latent_mean;
  const PosteriorArchive a = run_chain(c, small_hyper(), sim.data);
  EXPECT_TRUE(a.has_mean());
  EXPECT_EQ(a.mu.size(), 3u);
  EXPECT_EQ(a.mu.front().size(), 30 * 4);
}

TEST(RunChain, GridPolicyOnlyVisitsGridValues) {
  const PriorSimulation sim = small_sim(6, 12, 2);
  ChainConfig c = short_config(8, 0, 1, 4);
  c.kappa_policy = KappaPolicy::grid;
  c.kappa_grid = {2.0, 10.0, 30.0};
  const PosteriorArchive a = run_chain(c, small_hyper(), sim.data);
  for (double k : a.traces.at("kappa")) EXPECT_TRUE(k == 2.0 || k == 10.0 || k == 30.0) << k;
}

TEST(RunChain, GridCapRaisesCapacityError) {
  const PriorSimulation sim = small_sim(6, 12, 2);
  ChainConfig c = short_config(2, 0, 1, 4);
  c.kappa_policy = KappaPolicy::grid;
  c.kappa_grid = {2.0, 10.0};
  c.kappa_grid_cap = 10;
  EXPECT_THROW(run_chain(c, small_hyper(), sim.data), CapacityError);
}

TEST(RunChain, ManifestEchoesConfiguration) {
  const PriorSimulation sim = small_sim(7, 10, 2);
  const PosteriorArchive a = run_chain(short_config(3, 1, 1, 77), small_hyper(), sim.data);
  EXPECT_EQ(a.manifest.at("chain").at("seed").get<std::uint64_t>(), 77u);
  EXPECT_EQ(a.manifest.at("hyper").at("L_star").get<int>(), 3);
  EXPECT_EQ(a.manifest.at("kappa").at("policy").get<std::string>(), "fixed");
  EXPECT_TRUE(a.manifest.at("step_seconds").contains("xi"));
}

TEST(RunChain, InvalidDataRejected) {
  PriorSimulation sim = small_sim(8, 10, 2);
  sim.data.y(2, 0) = std::nan("");
  EXPECT_THROW(run_chain(short_config(2, 0, 1, 1), small_hyper(), sim.data), DataError);
}

TEST(RunChains, ChainsUseDistinctDerivedSeeds) {
  const PriorSimulation sim = small_sim(9, 12, 2);
  const ChainConfig c = short_config(4, 1, 1, 100);
  const std::vector<PosteriorArchive> runs = run_chains(c, small_hyper(), sim.data, 3);
  ASSERT_EQ(runs.size(), 3u);
  EXPECT_FALSE(runs[0].same_draws(runs[1]));
  ChainConfig c1 = c;
  c1.seed = chain_seed(100, 1);
  EXPECT_TRUE(runs[1].same_draws(run_chain(c1, small_hyper(), sim.data)));
  EXPECT_NE(chain_seed(100, 0), chain_seed(100, 1));
}

TEST(DataDrivenInit, ProducesValidStateCloseToTheEstimate) {
  RandomStream rng(31);
  Hyperparameters h{10.0, 10.0, 1.0, 0.1, 5, 4, KernelParams{10.0, 1e-5}};
  const PriorSimulation sim = simulate_from_prior_dataset(h, unit_grid(100), 10, MeanMode::zero_mean, rng);
  const GpPrior gp = GpPrior::build(sim.data.xs, h.kernel);
  RandomStream irng(32);
  const ModelState s = data_driven_init(sim.data, h, gp, MeanMode::zero_mean, irng);
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.n(), 100);
  EXPECT_EQ(s.p(), 10);

  // The induced covariance should track the smoothed local estimate it was built from.
  const LocalCovarianceEstimate est = local_covariance_estimate(sim.data, 20, 6);
  const CovarianceTrajectory t = state_trajectory(s);
  std::vector<double> a, b;
  for (Index i = 0; i < 100; ++i) {
    for (Index r = 0; r < 10; ++r) {
      for (Index c = 0; c <= r; ++c) {
        a.push_back(t.sigmas[i](r, c));
        b.push_back(est.sigma_hat[i](r, c));
      }
    }
  }
  const Eigen::Map<const Vector> va(a.data(), static_cast<Index>(a.size())), vb(b.data(), static_cast<Index>(b.size()));
  const double corr = ((va.array() - va.mean()) * (vb.array() - vb.mean())).sum() /
                      std::sqrt((va.array() - va.mean()).square().sum() * (vb.array() - vb.mean()).square().sum());
  EXPECT_GT(corr, 0.5);
}

TEST(DataDrivenInit, LatentModeSplitsEta) {
  RandomStream rng(41);
  Hyperparameters h = small_hyper();
  const PriorSimulation sim = simulate_from_prior_dataset(h, unit_grid(40), 3, MeanMode::zero_mean, rng);
  const GpPrior gp = GpPrior::build(sim.data.xs, h.kernel);
  const ModelState s = data_driven_init(sim.data, h, gp, MeanMode::latent_mean, rng, {5, -1, 1});
  EXPECT_NO_THROW(s.validate());
  EXPECT_TRUE(s.psi.isZero());
  EXPECT_TRUE(s.nu == s.eta);
}

TEST(WithContext, NumericalErrorsNameStepAndSweep) {
  try {
    detail::with_context("step 4", 17, [] { throw NumericalError("pivot 3"); });
    FAIL();
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 4"), std::string::npos);
    EXPECT_NE(msg.find("17"), std::string::npos);
    EXPECT_NE(msg.find("pivot 3"), std::string::npos);
  }
}
