#include <gtest/gtest.h>

#include <cmath>

#include "jointcar/covariance.hpp"
#include "jointcar/diagnostics.hpp"
#include "jointcar/sampler.hpp"
#include "support.hpp"

using jcar::CellIndex;
using jcar::McmcConfig;
using jcar::ModelKind;
using jcar::PosteriorArchive;
using jcar::Priors;

namespace {

McmcConfig short_config(int iters, int burn, int chains, std::uint64_t seed) {
  McmcConfig c;
  c.n_iterations = iters;
  c.burn_in = burn;
  c.n_chains = chains;
  c.seed = seed;
  c.workers = 1;
  return c;
}

// Two populations on a 5-node random graph, 4 years, a few cells masked.
struct SmallProblem {
  jcar::SpatialGraph graph = jcar::path_graph(5);
  jcar::SurveillancePanel panel;

  explicit SmallProblem(std::uint64_t seed) {
    testkit::Rng rng(seed);
    graph = testkit::random_graph(rng, 5);
    Eigen::VectorXd s1(5), s2(5);
    s1 << 0.4, -0.2, 0.1, -0.5, 0.3;
    s2 = 0.8 * s1 + 0.1 * Eigen::VectorXd::Ones(5);
    panel = testkit::binomial_panel(graph,
                                    {testkit::additive_mu({-1.0, 0.1, 0, 0}, s1, 4),
                                     testkit::additive_mu({-2.0, -0.05, 0, 0}, s2, 4)},
                                    200, rng);
    panel = panel.with_masked({{0, 4, 0}, {0, 4, 1}, {0, 4, 2}, {0, 4, 3}, {1, 2, 3}});
  }
};

PosteriorArchive archive_with_mu(const std::vector<double>& mu) {
  PosteriorArchive a;
  a.population_labels = {"A"};
  a.location_labels = {"L0", "L1"};
  a.first_year = 2000;
  a.n_years = 1;
  a.missing_cells = {{0, 1, 0}};
  a.n_chains = 1;
  a.draws_per_chain = static_cast<int>(mu.size());
  a.mu_missing.resize(static_cast<Eigen::Index>(mu.size()), 1);
  for (std::size_t r = 0; r < mu.size(); ++r) {
    a.chain.push_back(0);
    a.iteration.push_back(static_cast<int>(r) + 1);
    a.mu_missing(static_cast<Eigen::Index>(r), 0) = mu[r];
  }
  return a;
}

double binomial_quantile(int n, double p, double prob) {
  double cdf = 0.0;
  for (int y = 0; y <= n; ++y) {
    cdf += std::exp(std::lgamma(n + 1.0) - std::lgamma(y + 1.0) - std::lgamma(n - y + 1.0) +
                    y * std::log(p) + (n - y) * std::log1p(-p));
    if (cdf >= prob) return static_cast<double>(y) / n;
  }
  return 1.0;
}

}  // namespace

TEST(EmpiricalQuantile, TypeSeven) {
  const std::vector<double> v{4, 1, 3, 2};
  EXPECT_DOUBLE_EQ(jcar::empirical_quantile(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(jcar::empirical_quantile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(jcar::empirical_quantile(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(jcar::empirical_quantile(v, 0.25), 1.75);
  EXPECT_THROW(jcar::empirical_quantile({}, 0.5), jcar::InputError);
}

TEST(PosteriorPredictive, DegenerateAtHalf) {
  const auto a = archive_with_mu(std::vector<double>(400, 0.0));
  const auto s = jcar::posterior_predictive_p(a, {0, 1, 0}, 1000000, 5);
  EXPECT_DOUBLE_EQ(s.p_mean, 0.5);
  EXPECT_NEAR(s.lower, 0.5, 0.002);
  EXPECT_NEAR(s.upper, 0.5, 0.002);
  EXPECT_LT(s.lower, 0.5);
  EXPECT_GT(s.upper, 0.5);
}

TEST(PosteriorPredictive, BinomialSupportAndQuantiles) {
  const auto a = archive_with_mu(std::vector<double>(20000, jcar::logit(0.1)));
  const auto s = jcar::posterior_predictive_p(a, {0, 1, 0}, 10, 6);
  for (double p : s.p_tilde) ASSERT_DOUBLE_EQ(p * 10, std::round(p * 10));
  EXPECT_DOUBLE_EQ(s.lower, binomial_quantile(10, 0.1, 0.005));
  EXPECT_DOUBLE_EQ(s.upper, binomial_quantile(10, 0.1, 0.995));
  EXPECT_NEAR(s.p_mean, 0.1, 1e-12);
}

TEST(PosteriorPredictive, MeanOfTwoDraws) {
  const auto a = archive_with_mu({jcar::logit(0.2), jcar::logit(0.4)});
  EXPECT_NEAR(jcar::posterior_predictive_p(a, {0, 1, 0}, 50, 7).p_mean, 0.3, 1e-15);
}

TEST(PosteriorPredictive, Errors) {
  const auto a = archive_with_mu({0.0});
  EXPECT_THROW(jcar::posterior_predictive_p(a, {0, 0, 0}, 10, 1), jcar::InputError);
  EXPECT_THROW(jcar::posterior_predictive_p(a, {0, 1, 0}, 0, 1), jcar::InputError);
}

TEST(Fit, ArchiveShape) {
  SmallProblem pb(41);
  McmcConfig cfg = short_config(500, 250, 2, 1);
  const auto a = jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, cfg);
  EXPECT_EQ(a.draws_per_chain, 250);
  EXPECT_EQ(a.n_draws(), 500);
  EXPECT_EQ(a.beta.cols(), 8);
  EXPECT_EQ(a.sigma2.cols(), 2);
  EXPECT_EQ(a.phi.cols(), 2);
  EXPECT_EQ(a.rho.cols(), 1);
  EXPECT_EQ(a.s.cols(), 10);
  EXPECT_EQ(a.mu_missing.cols(), 5);
  EXPECT_EQ(a.chain.front(), 0);
  EXPECT_EQ(a.chain.back(), 1);
  EXPECT_EQ(a.iteration.front(), 251);
  EXPECT_EQ(a.iteration.back(), 500);

  cfg.thin = 3;
  const auto thinned = jcar::fit(pb.panel, pb.graph, ModelKind::Car, Priors{}, cfg);
  EXPECT_EQ(thinned.draws_per_chain, 83);
  EXPECT_EQ(thinned.rho.cols(), 0);
  const auto mixed = jcar::fit(pb.panel, pb.graph, ModelKind::Mixed, Priors{}, cfg);
  EXPECT_EQ(mixed.phi.cols(), 0);
}

TEST(Fit, MissingMuIsTrendPlusEffect) {
  SmallProblem pb(42);
  const auto a = jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, short_config(300, 100, 1, 2));
  for (int r = 0; r < a.n_draws(); ++r) {
    const auto d = a.draw(r);
    for (std::size_t c = 0; c < a.missing_cells.size(); ++c) {
      const auto& cell = a.missing_cells[c];
      const double v = jcar::fixed_effect(d.beta.row(cell.population).transpose(), cell.year + 1);
      ASSERT_NEAR(a.mu_missing(r, static_cast<Eigen::Index>(c)), v + d.s(cell.population, cell.location), 1e-12);
    }
  }
}

TEST(Fit, SupportConstraintsHoldForEveryDraw) {
  for (const ModelKind kind : {ModelKind::Mixed, ModelKind::Car, ModelKind::JointCar}) {
    SmallProblem pb(43);
    const auto a = jcar::fit(pb.panel, pb.graph, kind, Priors{}, short_config(1500, 500, 2, 3));
    ASSERT_GT(a.sigma2.minCoeff(), 0.0);
    if (kind != ModelKind::Mixed) {
      ASSERT_GT(a.phi.minCoeff(), 0.0);
      ASSERT_LT(a.phi.maxCoeff(), 1.0);
    }
    for (int r = 0; r < a.n_draws(); ++r) {
      const auto d = a.draw(r);
      ASSERT_TRUE(d.beta.allFinite());
      ASSERT_TRUE(d.s.allFinite());
      ASSERT_GE(d.rho.minCoeff(), -1.0);
      ASSERT_LE(d.rho.maxCoeff(), 1.0);
      ASSERT_GE(jcar::min_eigenvalue(d.rho), -1e-12);
    }
  }
}

TEST(Fit, ThreePopulationCorrelationStaysPositiveDefinite) {
  testkit::Rng rng(44);
  const auto g = jcar::path_graph(4);
  const Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(4, -0.5, 0.5);
  auto panel = testkit::binomial_panel(g,
                                       {testkit::additive_mu({-1, 0, 0, 0}, s, 3),
                                        testkit::additive_mu({-1, 0, 0, 0}, -s, 3),
                                        testkit::additive_mu({-1, 0, 0, 0}, s, 3)},
                                       500, rng);
  const auto a = jcar::fit(panel, g, ModelKind::JointCar, Priors{}, short_config(1500, 500, 1, 4));
  EXPECT_EQ(a.rho.cols(), 3);
  for (int r = 0; r < a.n_draws(); ++r) {
    Eigen::MatrixXd l;
    ASSERT_TRUE(jcar::try_cholesky_lower(a.draw(r).rho, l));
  }
}

TEST(Fit, DeterministicGivenSeedAndIndependentOfWorkers) {
  SmallProblem pb(45);
  McmcConfig cfg = short_config(400, 200, 2, 99);
  const auto a = jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, cfg);
  cfg.workers = 2;
  const auto b = jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, cfg);
  EXPECT_EQ(a.beta, b.beta);
  EXPECT_EQ(a.s, b.s);
  EXPECT_EQ(a.rho, b.rho);
  EXPECT_EQ(a.mu_missing, b.mu_missing);
  cfg.seed = 100;
  const auto c = jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, cfg);
  EXPECT_NE(a.beta, c.beta);
  // chains differ from each other
  EXPECT_NE(a.beta.topRows(200), a.beta.bottomRows(200));
}

TEST(Fit, AdaptationFreezes) {
  SmallProblem pb(46);
  McmcConfig cfg = short_config(800, 400, 2, 5);
  cfg.adapt_until = 300;
  const auto a = jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, cfg);
  ASSERT_EQ(a.step_checksum_at_freeze.size(), 2u);
  EXPECT_EQ(a.step_checksum_at_freeze, a.step_checksum_final);
  EXPECT_NE(a.step_checksum_final[0], a.step_checksum_final[1]);

  cfg.adapt_until = 0;
  const auto b = jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, cfg);
  EXPECT_EQ(b.step_checksum_at_freeze, b.step_checksum_final);
}

TEST(Fit, AcceptanceRatesNearTargets) {
  SmallProblem pb(47);
  const auto a = jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, short_config(4000, 2000, 1, 6));
  EXPECT_NEAR(a.acceptance.at("beta")[0], 0.234, 0.12);
  EXPECT_NEAR(a.acceptance.at("s")[0], 0.44, 0.12);
  EXPECT_NEAR(a.acceptance.at("phi")[0], 0.44, 0.15);
  EXPECT_NEAR(a.acceptance.at("rho")[0], 0.44, 0.15);
}

TEST(Fit, JointCarWithZeroCorrelationPinnedReproducesCar) {
  SmallProblem pb(48);
  const McmcConfig cfg = short_config(1000, 500, 2, 7);
  jcar::FitOptions pinned;
  pinned.pins.rho = Eigen::MatrixXd::Identity(2, 2);
  const auto joint = jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, cfg, pinned);
  const auto car = jcar::fit(pb.panel, pb.graph, ModelKind::Car, Priors{}, cfg);
  EXPECT_EQ(joint.beta, car.beta);
  EXPECT_EQ(joint.sigma2, car.sigma2);
  EXPECT_EQ(joint.phi, car.phi);
  EXPECT_EQ(joint.s, car.s);
  EXPECT_EQ(joint.pinned_blocks, std::vector<std::string>{"rho"});
  EXPECT_TRUE((joint.rho.array() == 0.0).all());
}

TEST(Fit, MixedLargeSampleRecoversFlatPrevalence) {
  testkit::Rng rng(49);
  const auto g = jcar::path_graph(4);
  const Eigen::MatrixXd mu = Eigen::MatrixXd::Constant(4, 5, jcar::logit(0.3));
  const auto panel = testkit::binomial_panel(g, {mu}, 1000000, rng);
  const auto a = jcar::fit(panel, g, ModelKind::Mixed, Priors{}, short_config(3000, 1500, 1, 8));
  double p_sum = 0.0;
  for (int r = 0; r < a.n_draws(); ++r) {
    const auto d = a.draw(r);
    double cell_mean = 0.0;
    for (int k = 1; k <= 5; ++k)
      for (int j = 0; j < 4; ++j)
        cell_mean += jcar::inv_logit(jcar::fixed_effect(d.beta.row(0).transpose(), k) + d.s(0, j));
    p_sum += cell_mean / 20.0;
  }
  EXPECT_NEAR(p_sum / a.n_draws(), 0.3, 0.005);
}

TEST(Fit, EmptyPanelSamplesThePrior) {
  const auto g = jcar::path_graph(3);
  jcar::SurveillancePanel panel({"A", "B", "C"}, g.labels(), 2000, 2);
  jcar::FitOptions opts;
  opts.allow_empty_panel = true;
  EXPECT_THROW(jcar::fit(panel, g, ModelKind::JointCar, Priors{}, short_config(100, 50, 1, 9)),
               jcar::InputError);
  McmcConfig cfg = short_config(12000, 2000, 1, 9);
  cfg.thin = 5;
  const auto a = jcar::fit(panel, g, ModelKind::JointCar, Priors{}, cfg, opts);
  EXPECT_EQ(static_cast<int>(a.missing_cells.size()), 18);
  EXPECT_NEAR(a.phi.mean(), 0.5, 0.05);
  // uniform on PSD-restricted 3x3 correlations: symmetric around zero
  EXPECT_NEAR(a.rho.mean(), 0.0, 0.06);
  for (int r = 0; r < a.n_draws(); ++r) ASSERT_GE(jcar::min_eigenvalue(a.draw(r).rho), 0.0);
}

TEST(Fit, InputErrors) {
  SmallProblem pb(50);
  const McmcConfig cfg = short_config(100, 50, 1, 1);
  jcar::SurveillancePanel one_sided = pb.panel;
  for (int j = 0; j < 5; ++j)
    for (int k = 0; k < 4; ++k) one_sided.mask(1, j, k);
  try {
    jcar::fit(one_sided, pb.graph, ModelKind::JointCar, Priors{}, cfg);
    FAIL();
  } catch (const jcar::InputError& e) {
    EXPECT_NE(std::string(e.what()).find("P2"), std::string::npos);
  }
  EXPECT_THROW(jcar::fit(pb.panel, jcar::path_graph(5), ModelKind::Car, Priors{}, cfg), jcar::InputError);

  McmcConfig bad = cfg;
  bad.burn_in = 100;
  EXPECT_THROW(jcar::fit(pb.panel, pb.graph, ModelKind::Car, Priors{}, bad), jcar::InputError);
  Priors bad_priors;
  bad_priors.sigma2_rate = 0.0;
  EXPECT_THROW(jcar::fit(pb.panel, pb.graph, ModelKind::Car, bad_priors, cfg), jcar::InputError);

  jcar::FitOptions opts;
  opts.pins.phi = Eigen::VectorXd::Constant(2, 1.0);
  EXPECT_THROW(jcar::fit(pb.panel, pb.graph, ModelKind::Car, Priors{}, cfg, opts), jcar::InputError);
  opts = {};
  opts.pins.rho = (Eigen::Matrix2d() << 1, 1, 1, 1).finished();
  EXPECT_THROW(jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, cfg, opts), jcar::InputError);
  opts = {};
  opts.observation = jcar::ObservationModel::ExactLatent;
  EXPECT_THROW(jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, cfg, opts), jcar::InputError);
}

TEST(Fit, ExactLatentMatchesGaussianConditioning) {
  testkit::Rng rng(51);
  const auto g = testkit::random_graph(rng, 4);
  const double rho = 0.7;
  const Eigen::MatrixXd c1 = testkit::reference_car_covariance(g, 1.0, 0.6);
  const Eigen::MatrixXd c2 = testkit::reference_car_covariance(g, 0.5, 0.3);
  const Eigen::MatrixXd joint = testkit::reference_joint_car(c1, c2, rho);
  const Eigen::VectorXd s_true = joint.llt().matrixL() * testkit::gaussian_matrix(rng, 8, 1);

  // population 1 missing at locations 2 and 3, population 2 at location 0
  jcar::SurveillancePanel panel({"A", "B"}, g.labels(), 2000, 1);
  for (int j = 0; j < 2; ++j) panel.set_observation(0, j, 0, 1, 2);
  for (int j = 1; j < 4; ++j) panel.set_observation(1, j, 0, 1, 2);
  jcar::FitOptions opts;
  opts.observation = jcar::ObservationModel::ExactLatent;
  opts.pins.beta = Eigen::MatrixXd::Zero(2, 4);
  opts.pins.sigma2 = Eigen::Vector2d(1.0, 0.5);
  opts.pins.phi = Eigen::Vector2d(0.6, 0.3);
  opts.pins.rho = (Eigen::Matrix2d() << 1, rho, rho, 1).finished();
  opts.exact_mu = {s_true.head(4), s_true.tail(4)};
  McmcConfig cfg = short_config(6000, 1000, 1, 10);
  const auto a = jcar::fit(panel, g, ModelKind::JointCar, Priors{}, cfg, opts);

  // order of the flattened vector: target (0,2), (0,3), (1,0); observed rest
  const std::vector<int> target{2, 3, 4};
  const std::vector<int> observed{0, 1, 5, 6, 7};
  std::vector<int> order = target;
  order.insert(order.end(), observed.begin(), observed.end());
  Eigen::MatrixXd permuted(8, 8);
  Eigen::VectorXd obs(5);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) permuted(r, c) = joint(order[r], order[c]);
  for (int k = 0; k < 5; ++k) obs(k) = s_true(observed[k]);
  const auto ref = testkit::reference_condition(permuted, 3, obs);

  ASSERT_EQ(a.missing_cells.size(), 3u);
  for (int c = 0; c < 3; ++c) {
    const double mean = a.mu_missing.col(c).mean();
    const double mcse = jcar::mcse_mean(jcar::column_chains(a, a.mu_missing, c));
    EXPECT_NEAR(mean, ref.mean(c), 4.0 * mcse) << "cell " << c;
    const double var = (a.mu_missing.col(c).array() - mean).square().sum() / (a.n_draws() - 1);
    EXPECT_NEAR(var, ref.cov(c, c), 0.15 * ref.cov(c, c));
  }
}

TEST(LogPosterior, InvariantUnderPopulationPermutation) {
  SmallProblem pb(52);
  const auto a = jcar::fit(pb.panel, pb.graph, ModelKind::JointCar, Priors{}, short_config(200, 100, 1, 11));
  const auto& p = pb.panel;
  jcar::SurveillancePanel swapped({"P2", "P1"}, p.location_labels(), p.first_year(), p.n_years());
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < p.n_locations(); ++j)
      for (int k = 0; k < p.n_years(); ++k)
        if (p.observed(i, j, k)) swapped.set_observation(1 - i, j, k, p.y(i, j, k), p.n(i, j, k));
  Eigen::Matrix2d perm;
  perm << 0, 1, 1, 0;
  for (int r = 0; r < a.n_draws(); r += 10) {
    const auto d = a.draw(r);
    jcar::DrawState q = d;
    q.beta = perm * d.beta;
    q.s = perm * d.s;
    q.sigma2 = perm * d.sigma2;
    q.phi = perm * d.phi;
    q.rho = perm * d.rho * perm;
    for (const ModelKind kind : {ModelKind::Mixed, ModelKind::Car, ModelKind::JointCar}) {
      const double lhs = jcar::log_posterior_density(p, pb.graph, kind, Priors{}, d);
      const double rhs = jcar::log_posterior_density(swapped, pb.graph, kind, Priors{}, q);
      ASSERT_NEAR(lhs, rhs, 1e-9 * std::abs(lhs));
    }
  }
}
