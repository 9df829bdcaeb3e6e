#include <doctest.h>

#include "latfim/errors.hpp"
#include "latfim/models/lmm.hpp"
#include "latfim/models/pk.hpp"
#include "latfim/saem.hpp"

#include <cmath>
#include <sstream>

using namespace latfim;

namespace {

const Vec kLmmTheta = (Vec(3) << 3.0, 2.0, 5.0).finished();

Dataset lmm_data(std::size_t n, std::uint64_t seed) {
  LinearMixedModel lmm;
  IndividualDesign d;
  d.n_obs = 12;
  return simulate_dataset(lmm, lmm.make_params(kLmmTheta), uniform_design(n, d), seed).data;
}

}  // namespace

TEST_CASE("step sizes") {
  StepSchedule s;
  CHECK(step_size(500, s) == 0.95);
  CHECK(step_size(1000, s) == 0.95);
  CHECK(step_size(1001, s) == 1.0);
  CHECK(step_size(2024, s) == doctest::Approx(0.015625).epsilon(1e-14));
  CHECK_THROWS_AS(step_size(0, s), Error);
  StepSchedule bad;
  bad.exponent = 0.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("MH transition rules") {
  LinearMixedModel lmm;
  const Dataset data = lmm_data(1, 3);
  const auto& rec = data.records[0];
  Rng rng(1, {1});
  const Latent z = Latent::Constant(1, 0.3);
  for (int t = 0; t < 20; ++t) {
    const MhStep s = mh_transition(lmm, rec, z, kLmmTheta, Vec::Zero(1), rng);
    CHECK(s.z(0) == 0.3);
  }
  // Moves that raise the log-likelihood are always accepted.
  const auto [m, v] = lmm.conditional_moments(rec, kLmmTheta);
  const Latent far = Latent::Constant(1, m + 50.0);
  int accepted_up = 0;
  for (int t = 0; t < 200; ++t) {
    const MhStep s = mh_transition(lmm, rec, far, kLmmTheta, Vec::Constant(1, 0.01), rng);
    const bool uphill = lmm.complete_loglik(rec, s.z, kLmmTheta) > lmm.complete_loglik(rec, far, kLmmTheta);
    if (uphill) {
      CHECK(s.accepted);
      ++accepted_up;
    }
  }
  CHECK(accepted_up > 50);
  (void)v;
}

TEST_CASE("MH chain mean matches the conjugate posterior mean") {
  LinearMixedModel lmm;
  const Dataset data = lmm_data(1, 4);
  const auto& rec = data.records[0];
  const auto [m, v] = lmm.conditional_moments(rec, kLmmTheta);
  double ybar = 0.0;
  for (double y : rec.y) ybar += y / 12.0;
  CHECK(m == doctest::Approx(12.0 * 2.0 * (ybar - 3.0) / (5.0 + 24.0)));
  Rng rng(2, {2});
  Latent z = Latent::Constant(1, m);
  const int draws = 200000, thin = 2;
  double sum = 0.0;
  std::vector<double> chain;
  for (int d = 0; d < draws; ++d) {
    for (int t = 0; t < thin; ++t) z = mh_transition(lmm, rec, z, kLmmTheta, Vec::Constant(1, 2.4 * std::sqrt(v)), rng).z;
    sum += z(0);
    chain.push_back(z(0));
  }
  const double mean = sum / draws;
  // Batch means for the autocorrelated chain.
  const int batches = 100, len = draws / batches;
  double bvar = 0.0;
  for (int b = 0; b < batches; ++b) {
    double bm = 0.0;
    for (int i = 0; i < len; ++i) bm += chain[static_cast<std::size_t>(b * len + i)];
    bm /= len;
    bvar += (bm - mean) * (bm - mean);
  }
  const double se = std::sqrt(bvar / (batches - 1) / batches);
  CHECK(std::abs(mean - m) < 3.0 * se);
}

TEST_CASE("MH detailed balance between two states") {
  // Flow A -> B equals flow B -> A: pi(A) q(A->B) a(A->B) = pi(B) q(B->A) a(B->A).
  LinearMixedModel lmm;
  const Dataset data = lmm_data(1, 6);
  const auto& rec = data.records[0];
  const auto [m, v] = lmm.conditional_moments(rec, kLmmTheta);
  const double a = m - 0.3 * std::sqrt(v), b = m + 0.8 * std::sqrt(v), scale = std::sqrt(v);
  const double width = 0.02 * scale;
  Rng rng(3, {3});
  auto flow = [&](double from, double to) {
    // P(land in [to +- width] and accept | start at from), times pi(from).
    const int trials = 400000;
    int hits = 0;
    for (int t = 0; t < trials; ++t) {
      const MhStep s = mh_transition(lmm, rec, Latent::Constant(1, from), kLmmTheta, Vec::Constant(1, scale), rng);
      if (s.accepted && std::abs(s.z(0) - to) < width) ++hits;
    }
    const double p = static_cast<double>(hits) / trials;
    const double dens = std::exp(-0.5 * (from - m) * (from - m) / v);
    return std::pair<double, double>{dens * p, dens * std::sqrt(p * (1 - p) / trials)};
  };
  const auto ab = flow(a, b), ba = flow(b, a);
  CHECK(std::abs(ab.first - ba.first) < 4.0 * std::hypot(ab.second, ba.second));
}

TEST_CASE("individual_delta with exact conditional statistics is the marginal score") {
  LinearMixedModel lmm;
  const Dataset data = lmm_data(30, 7);
  const Vec theta = (Vec(3) << 2.7, 1.5, 6.0).finished();
  for (const auto& rec : data.records) {
    const Vec d = individual_delta(lmm, rec, lmm.conditional_expected_stats(rec, theta), theta);
    const Vec g = lmm.marginal_score(rec, theta);
    CHECK((d - g).norm() < 1e-10 * std::max(1.0, g.norm()));
  }
}

TEST_CASE("SAEM on the LMM") {
  LinearMixedModel lmm;
  const Dataset data = lmm_data(500, 8);
  const Vec mle = lmm_marginal_mle(data);

  SUBCASE("converges to the marginal MLE and the analytic conditional-score FIM") {
    // Exponent 1: the post-burn-in recursion is a running mean, so the
    // finite-K noise bias of the quadratic FIM entries is O(1/K).
    SaemConfig cfg;
    cfg.iterations = 2000;
    cfg.schedule.burn_in = 100;
    cfg.schedule.exponent = 1.0;
    cfg.seed = 42;
    const SaemResult r = run_saem(lmm, data, cfg);
    for (int l = 0; l < 3; ++l) CHECK(std::abs(r.theta.values(l) - mle(l)) < 1e-2 * std::abs(mle(l)));
    const FimMatrix exact = conditional_score_fim(lmm, data, mle);
    for (int l = 0; l < 3; ++l) CHECK(std::abs(r.fim(l, l) - exact(l, l)) < 0.02 * exact(l, l));
    CHECK(r.fim.is_psd());
    CHECK(r.fim.provenance() == Provenance::sa_byproduct);
  }

  SUBCASE("stationary point satisfies the score equation") {
    SaemConfig cfg;
    cfg.mode = SimulationMode::conditional_expectation;
    cfg.schedule.burn_in = 500;
    cfg.schedule.burn_value = 1.0;
    cfg.iterations = 500;
    const SaemResult r = run_saem(lmm, data, cfg);
    std::vector<Vec> s;
    for (const auto& rec : data.records) s.push_back(lmm.conditional_expected_stats(rec, r.theta.values));
    Vec total = Vec::Zero(3);
    for (std::size_t i = 0; i < data.n(); ++i) total += individual_delta(lmm, data.records[i], s[i], r.theta.values);
    CHECK(total.norm() < 1e-6 * 500.0);
    CHECK((r.theta.values - mle).norm() < 1e-6 * mle.norm());
  }

  SUBCASE("one iteration with gamma = 1 and injected expectations is one EM step") {
    SaemConfig cfg;
    cfg.mode = SimulationMode::conditional_expectation;
    cfg.schedule.burn_in = 1;
    cfg.schedule.burn_value = 1.0;
    cfg.iterations = 1;
    cfg.theta0 = (Vec(3) << 1.0, 1.0, 1.0).finished();
    const SaemResult r = run_saem(lmm, data, cfg);
    std::vector<Vec> s;
    for (const auto& rec : data.records) s.push_back(lmm.conditional_expected_stats(rec, *cfg.theta0));
    CHECK((r.theta.values - lmm.argmax_complete(data, s).theta).norm() < 1e-12);
  }

  SUBCASE("gamma = 1 erases the history") {
    SaemConfig cfg;
    cfg.schedule.burn_in = 10;
    cfg.schedule.burn_value = 1.0;
    cfg.iterations = 5;
    LatentSampler sampler(lmm, data, kLmmTheta, cfg);
    cfg.theta0 = kLmmTheta;
    SaemState st = init_saem(lmm, data, cfg, sampler);
    for (int k = 0; k < 3; ++k) saem_iteration(st, lmm, data, cfg, sampler);
    for (std::size_t i = 0; i < data.n(); ++i)
      CHECK(st.s[i] == lmm.stats(data.records[i], sampler.current()[i]));
  }

  SUBCASE("convex-hull invariant") {
    SaemConfig cfg;
    cfg.schedule.burn_in = 20;
    cfg.iterations = 80;
    cfg.theta0 = kLmmTheta;
    LatentSampler sampler(lmm, data, kLmmTheta, cfg);
    SaemState st = init_saem(lmm, data, cfg, sampler);
    std::vector<Vec> lo = st.s, hi = st.s;
    for (int k = 0; k < cfg.iterations; ++k) {
      saem_iteration(st, lmm, data, cfg, sampler);
      for (std::size_t i = 0; i < data.n(); ++i) {
        const Vec drawn = lmm.stats(data.records[i], sampler.current()[i]);
        lo[i] = lo[i].cwiseMin(drawn);
        hi[i] = hi[i].cwiseMax(drawn);
        CHECK((st.s[i].array() >= lo[i].array() - 1e-12).all());
        CHECK((st.s[i].array() <= hi[i].array() + 1e-12).all());
      }
    }
  }

  SUBCASE("Louis comparator matches the analytic observed FIM") {
    SaemConfig cfg;
    cfg.iterations = 2000;
    cfg.schedule.burn_in = 100;
    cfg.schedule.exponent = 1.0;
    cfg.seed = 5;
    const FimMatrix louis = louis_observed_fim_sa(lmm, data, cfg);
    const SaemResult r = run_saem(lmm, data, cfg);
    const FimMatrix exact = marginal_observed_fim(lmm, data, r.theta.values);
    for (int l = 0; l < 3; ++l) CHECK(std::abs(louis(l, l) - exact(l, l)) < 0.02 * std::abs(exact(l, l)));
    CHECK(louis.provenance() == Provenance::louis_sa);
  }

  SUBCASE("seed determinism of trajectories") {
    SaemConfig cfg;
    cfg.iterations = 300;
    cfg.schedule.burn_in = 100;
    cfg.averaging = true;
    std::ostringstream a, b;
    write_trajectory_csv(a, run_saem(lmm, data, cfg).trajectory);
    write_trajectory_csv(b, run_saem(lmm, data, cfg).trajectory);
    CHECK(a.str() == b.str());
    CHECK(a.str().rfind("iteration,gamma,theta_1,theta_2,theta_3,fim_diag_1", 0) == 0);
  }
}

TEST_CASE("Louis comparator at a point-mass conditional is the complete information") {
  // With sigma2 tiny relative to eta2 the conditional of z collapses and the
  // missing information vanishes; check the recursions reduce accordingly by
  // comparing against -E[H_c] at the draws, which is deterministic here.
  LinearMixedModel lmm;
  const Dataset data = lmm_data(20, 9);
  SaemConfig cfg;
  cfg.iterations = 10;
  cfg.schedule.burn_in = 10;
  cfg.schedule.burn_value = 1.0;
  cfg.theta0 = kLmmTheta;
  cfg.louis = true;
  LatentSampler sampler(lmm, data, kLmmTheta, cfg);
  SaemState st = init_saem(lmm, data, cfg, sampler);
  saem_iteration(st, lmm, data, cfg, sampler);
  // gamma = 1: G_i = H + g g^T and D_i = g at the single draw, so G - D D^T = H.
  for (std::size_t i = 0; i < data.n(); ++i) {
    const Mat h = lmm.complete_hessian(data.records[i], sampler.current()[i], kLmmTheta);
    CHECK((st.louis_g[i] - st.louis_d[i] * st.louis_d[i].transpose() - h).norm() < 1e-9 * std::max(1.0, h.norm()));
  }
}

TEST_CASE("mc_conditional_fim on the LMM matches closed forms") {
  LinearMixedModel lmm;
  const Dataset data = lmm_data(20, 10);
  const auto ref = mc_conditional_fim(lmm, data, kLmmTheta, 20000, 3);
  const FimMatrix exact = marginal_score_fim(lmm, data, kLmmTheta);
  for (int l = 0; l < 3; ++l) CHECK(ref.score(l, l) == doctest::Approx(exact(l, l)).epsilon(0.05));
  REQUIRE(ref.observed.has_value());
  const FimMatrix obs = marginal_observed_fim(lmm, data, kLmmTheta);
  for (int l = 0; l < 3; ++l) CHECK((*ref.observed)(l, l) == doctest::Approx(obs(l, l)).epsilon(0.05));
}
