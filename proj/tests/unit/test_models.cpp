#include <doctest.h>

#include "latfim/errors.hpp"
#include "latfim/models/gaussian_mixture.hpp"
#include "latfim/models/lmm.hpp"
#include "latfim/models/pk.hpp"
#include "latfim/models/poisson_mixture.hpp"

#include <cmath>

using namespace latfim;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(a)); }

// Central differences of a scalar function, independent of the library helper.
Vec numeric_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double rel = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index l = 0; l < x.size(); ++l) {
    const double h = rel * std::max(1.0, std::abs(x(l)));
    Vec up = x, down = x;
    up(l) += h;
    down(l) -= h;
    g(l) = (f(up) - f(down)) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("LMM analytic FIM closed forms") {
  const Vec theta = (Vec(3) << 3.0, 2.0, 5.0).finished();
  const FimMatrix f = lmm_analytic_fim(theta, 12);
  // 1^T V^{-1} 1 with V = 5 I + 2 11^T inverted explicitly.
  Mat V = 5.0 * Mat::Identity(12, 12) + 2.0 * Mat::Ones(12, 12);
  const Mat Vi = V.inverse();
  CHECK(f(0, 0) == doctest::Approx(Vec::Ones(12).dot(Vi * Vec::Ones(12))).epsilon(1e-12));
  CHECK(std::abs(f(0, 0) - 12.0 / 29.0) < 1e-12);
  // Variance blocks: I_ab = 1/2 tr(V^-1 dV_a V^-1 dV_b).
  const Mat dEta = Mat::Ones(12, 12), dSig = Mat::Identity(12, 12);
  CHECK(f(1, 1) == doctest::Approx(0.5 * (Vi * dEta * Vi * dEta).trace()).epsilon(1e-12));
  CHECK(f(2, 2) == doctest::Approx(0.5 * (Vi * dSig * Vi * dSig).trace()).epsilon(1e-12));
  CHECK(f(1, 2) == doctest::Approx(0.5 * (Vi * dEta * Vi * dSig).trace()).epsilon(1e-12));
  CHECK(f(0, 1) == 0.0);
  CHECK(f(0, 2) == 0.0);
  const FimMatrix iid = lmm_analytic_fim((Vec(3) << 3.0, 0.0, 5.0).finished(), 12);
  CHECK(iid(0, 0) == doctest::Approx(12.0 / 5.0));
}

TEST_CASE("LMM marginal score and Hessian match finite differences") {
  LinearMixedModel lmm;
  Rng rng(3, {1});
  IndividualDesign d;
  d.n_obs = 12;
  for (int t = 0; t < 100; ++t) {
    const Vec th = (Vec(3) << rng.normal(3, 2), 0.3 + 4 * rng.uniform(), 0.5 + 8 * rng.uniform()).finished();
    const auto rec = lmm.simulate(th, d, rng).first;
    // Explicit multivariate normal log-density as the independent oracle.
    auto ll = [&](const Vec& x) {
      const Mat V = x(2) * Mat::Identity(12, 12) + x(1) * Mat::Ones(12, 12);
      Vec r(12);
      for (int j = 0; j < 12; ++j) r(j) = rec.y[static_cast<std::size_t>(j)] - x(0);
      Eigen::LLT<Mat> llt(V);
      const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      return -0.5 * (12.0 * std::log(2.0 * M_PI) + logdet + r.dot(llt.solve(r)));
    };
    const auto m = lmm_analytic(th, rec);
    CHECK(rel_err(m.loglik, ll(th)) < 1e-10);
    const Vec fd = numeric_gradient(ll, th);
    for (int l = 0; l < 3; ++l) CHECK(rel_err(m.score(l), fd(l)) < 1e-6);
    for (int l = 0; l < 3; ++l) {
      const Vec fdh = numeric_gradient([&](const Vec& x) { return lmm_analytic(x, rec).score(l); }, th);
      for (int c = 0; c < 3; ++c) CHECK(rel_err(m.hessian(l, c), fdh(c)) < 1e-6);
    }
    // Conditional-expectation identity.
    const Vec e = lmm.conditional_expected_score(rec, th);
    CHECK((e - m.score).norm() < 1e-10 * std::max(1.0, m.score.norm()));
  }
}

TEST_CASE("complete scores match finite differences for every model") {
  Rng rng(17, {2});
  LinearMixedModel lmm;
  PoissonMixtureModel mix(3);
  GaussianMixture2Model gmm;
  PkNlmeModel pk;
  PkFixedVModel pkv;
  IndividualDesign d12;
  d12.n_obs = 12;
  auto check = [&](const LatentModel& model, const Vec& th, const IndividualDesign& design) {
    const auto [rec, z] = model.simulate(th, design, rng);
    const Vec a = model.complete_score(rec, z, th);
    const Vec fd = numeric_gradient([&](const Vec& x) { return model.complete_loglik(rec, z, x); }, th);
    for (Eigen::Index l = 0; l < th.size(); ++l) CHECK(rel_err(a(l), fd(l)) < 1e-6);
    if (model.has_complete_hessian()) {
      const Mat h = model.complete_hessian(rec, z, th);
      for (Eigen::Index l = 0; l < th.size(); ++l) {
        const Vec fdh = numeric_gradient([&](const Vec& x) { return model.complete_score(rec, z, x)(l); }, th);
        for (Eigen::Index c = 0; c < th.size(); ++c) CHECK(rel_err(h(l, c), fdh(c)) < 1e-6);
      }
    }
  };
  for (int t = 0; t < 100; ++t) {
    check(lmm, (Vec(3) << rng.normal(3, 2), 0.3 + 4 * rng.uniform(), 0.5 + 8 * rng.uniform()).finished(), d12);
    check(mix, (Vec(5) << 0.5 + 3 * rng.uniform(), 3 + 4 * rng.uniform(), 7 + 5 * rng.uniform(),
                0.1 + 0.3 * rng.uniform(), 0.1 + 0.4 * rng.uniform()).finished(), {});
    check(gmm, (Vec(3) << rng.normal(3, 1), rng.normal(0, 1), 0.1 + 0.8 * rng.uniform()).finished(), {});
    const Vec pth = (Vec(7) << 1.6 * std::exp(0.3 * rng.normal()), 31 * std::exp(0.3 * rng.normal()),
                     1.8 * std::exp(0.3 * rng.normal()), 0.2 + 0.4 * rng.uniform(), 0.2 + 0.4 * rng.uniform(),
                     0.2 + 0.4 * rng.uniform(), 0.3 + rng.uniform()).finished();
    check(pk, pth, pk_reference_design());
    check(pkv, (Vec(6) << pth(0), pth(1), pth(2), pth(3), pth(5), pth(6)).finished(), pk_reference_design());
  }
}

TEST_CASE("Poisson posterior") {
  const Vec theta = (Vec(5) << 2.0, 5.0, 9.0, 0.3, 0.5).finished();
  const Vec w = poisson_posterior(2.0, theta, 3);
  // alpha_k lambda_k^y e^{-lambda_k} normalized (y! cancels).
  double raw[3] = {0.3 * 4.0 * std::exp(-2.0), 0.5 * 25.0 * std::exp(-5.0), 0.2 * 81.0 * std::exp(-9.0)};
  const double tot = raw[0] + raw[1] + raw[2];
  for (int k = 0; k < 3; ++k) CHECK(w(k) == doctest::Approx(raw[k] / tot).epsilon(1e-12));
  CHECK(w(0) == doctest::Approx(0.6532).epsilon(1e-3));
  CHECK(w(1) == doctest::Approx(0.3388).epsilon(1e-3));
  CHECK(w(2) == doctest::Approx(0.0080).epsilon(2e-2));

  const Vec one = poisson_posterior(4.0, (Vec(1) << 3.0).finished(), 1);
  CHECK(one.size() == 1);
  CHECK(one(0) == 1.0);
  const Vec eq = poisson_posterior(7.0, (Vec(5) << 4.0, 4.0, 4.0, 0.3, 0.5).finished(), 3);
  CHECK(eq(0) == doctest::Approx(0.3));
  CHECK(eq(1) == doctest::Approx(0.5));
  CHECK(eq(2) == doctest::Approx(0.2));
}

TEST_CASE("Poisson mixture conditional score equals marginal score for y <= 50") {
  PoissonMixtureModel mix(3);
  const Vec theta = (Vec(5) << 2.0, 5.0, 9.0, 0.3, 0.5).finished();
  for (int y = 0; y <= 50; ++y) {
    IndividualRecord rec;
    rec.y = {static_cast<double>(y)};
    // Oracle: direct differentiation of log sum_k alpha_k Pois(y; lambda_k).
    const double a3 = 1.0 - theta(3) - theta(4);
    const double p[3] = {theta(3) * std::exp(-2.0) * std::pow(2.0, y), theta(4) * std::exp(-5.0) * std::pow(5.0, y),
                         a3 * std::exp(-9.0) * std::pow(9.0, y)};
    const double g = p[0] + p[1] + p[2];
    Vec direct(5);
    for (int k = 0; k < 3; ++k) direct(k) = p[k] * (y / theta(k) - 1.0) / g;
    direct(3) = (p[0] / theta(3) - p[2] / a3) / g;
    direct(4) = (p[1] / theta(4) - p[2] / a3) / g;
    const Vec e = mix.conditional_expected_score(rec, theta);
    CHECK((e - direct).norm() <= 1e-10 * std::max(1.0, direct.norm()));
    const Vec fd = numeric_gradient([&](const Vec& x) { return mix.marginal_loglik(rec, x); }, theta);
    for (int l = 0; l < 5; ++l) CHECK(rel_err(direct(l), fd(l)) < 1e-6);
    const Mat h = mix.marginal_hessian(rec, theta);
    for (int l = 0; l < 5; ++l) {
      const Vec fdh = numeric_gradient([&](const Vec& x) { return mix.marginal_score(rec, x)(l); }, theta);
      for (int c = 0; c < 5; ++c) CHECK(rel_err(h(l, c), fdh(c)) < 1e-6);
    }
  }
}

TEST_CASE("Gaussian mixture marginal derivatives") {
  GaussianMixture2Model gmm;
  const Vec theta = (Vec(3) << 3.0, 0.0, 2.0 / 3.0).finished();
  for (double y : {-2.0, 0.0, 1.3, 2.9, 5.0}) {
    IndividualRecord rec;
    rec.y = {y};
    const Vec fd = numeric_gradient([&](const Vec& x) { return gmm.marginal_loglik(rec, x); }, theta);
    const Vec s = gmm.marginal_score(rec, theta);
    for (int l = 0; l < 3; ++l) CHECK(rel_err(s(l), fd(l)) < 1e-6);
    const Mat h = gmm.marginal_hessian(rec, theta);
    for (int l = 0; l < 3; ++l) {
      const Vec fdh = numeric_gradient([&](const Vec& x) { return gmm.marginal_score(rec, x)(l); }, theta);
      for (int c = 0; c < 3; ++c) CHECK(rel_err(h(l, c), fdh(c)) < 1e-6);
    }
  }
}

TEST_CASE("Gaussian mixture EM") {
  GaussianMixture2Model gmm;
  const Vec truth = (Vec(3) << 3.0, 0.0, 2.0 / 3.0).finished();

  SUBCASE("all mass on one component gives the sample mean in one step") {
    const auto data = simulate_dataset(gmm, gmm.make_params(truth), uniform_design(200, {}), 1).data;
    double mean = 0.0;
    for (const auto& r : data.records) mean += r.y[0];
    mean /= 200.0;
    const auto r1 = gaussian_mixture_em(data, (Vec(3) << 1.0, -1.0, 1.0).finished());
    CHECK(r1.iterations == 1);
    CHECK(r1.theta(1) == doctest::Approx(mean).epsilon(1e-12));
    const auto r0 = gaussian_mixture_em(data, (Vec(3) << 1.0, -1.0, 0.0).finished());
    CHECK(r0.theta(0) == doctest::Approx(mean).epsilon(1e-12));
  }

  SUBCASE("log-likelihood never decreases") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto data = simulate_dataset(gmm, gmm.make_params(truth), uniform_design(150, {}), 1000 + seed).data;
      const auto r = gaussian_mixture_em(data, gmm.initial_estimate(data));
      for (std::size_t t = 1; t < r.loglik_trace.size(); ++t)
        CHECK(r.loglik_trace[t] >= r.loglik_trace[t - 1] - 1e-10);
    }
  }

  SUBCASE("n = 750 estimate within 3 SE of truth") {
    const auto data = simulate_dataset(gmm, gmm.make_params(truth), uniform_design(750, {}), 2024).data;
    const auto r = gaussian_mixture_em(data, gmm.initial_estimate(data));
    CHECK(r.converged);
    const FimMatrix f = marginal_score_fim(gmm, data, r.theta);
    const Mat cov = symmetric_inverse(750.0 * f.matrix());
    for (int l = 0; l < 3; ++l) CHECK(std::abs(r.theta(l) - truth(l)) < 3.0 * std::sqrt(cov(l, l)));
  }

  SUBCASE("label swap invariance") {
    const auto data = simulate_dataset(gmm, gmm.make_params(truth), uniform_design(300, {}), 5).data;
    const Vec start = (Vec(3) << 2.0, 0.5, 0.6).finished();
    const Vec swapped = (Vec(3) << 0.5, 2.0, 0.4).finished();
    const auto a = gaussian_mixture_em(data, start, 1e-12);
    const auto b = gaussian_mixture_em(data, swapped, 1e-12);
    CHECK((a.theta - b.theta).norm() < 1e-6);
  }
}

TEST_CASE("PK prediction") {
  CHECK(pk_prediction(320, 0.0, 1.6, 31, 1.8) == 0.0);
  const long double d = 320, ka = 1.6L, V = 31, Cl = 1.8L, t = 1;
  const long double direct = d * ka / (V * ka - Cl) * (std::exp(-Cl / V * t) - std::exp(-ka * t));
  CHECK(pk_prediction(320, 1.0, 1.6, 31, 1.8) == doctest::Approx(static_cast<double>(direct)).epsilon(1e-13));
  CHECK(pk_prediction(320, 1.0, 1.6, 31, 1.8) == doctest::Approx(7.944).epsilon(1e-4));
  CHECK(pk_prediction(320, 1e4, 1.6, 31, 1.8) < 1e-100);

  // Continuity through V ka = Cl: Cl = 49.6 at V = 31, ka = 1.6.
  const double at = pk_prediction(320, 2.0, 1.6, 31, 49.6);
  for (double eps : {1e-6, 1e-9, 1e-12}) {
    CHECK(rel_err(pk_prediction(320, 2.0, 1.6, 31, 49.6 * (1 + eps)), at) < 1e-8 + 4 * eps);
    CHECK(rel_err(pk_prediction(320, 2.0, 1.6, 31, 49.6 * (1 - eps)), at) < 1e-8 + 4 * eps);
  }
  CHECK(at == doctest::Approx(320 * 1.6 * 2.0 * std::exp(-3.2) / 31).epsilon(1e-12));

  for (double cl : {1.8, 49.0, 49.6, 50.3, 200.0})
    for (double tt : {0.25, 1.0, 7.0, 24.0}) {
      const auto p = pk_prediction_dv(320, tt, 1.6, 31, cl);
      const double h = 1e-5 * 31;
      const double fd = (pk_prediction(320, tt, 1.6, 31 + h, cl) - pk_prediction(320, tt, 1.6, 31 - h, cl)) / (2 * h);
      CHECK(p.value == doctest::Approx(pk_prediction(320, tt, 1.6, 31, cl)).epsilon(1e-12));
      CHECK(std::abs(p.d_volume - fd) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("reference PK design simulates") {
  PkNlmeModel pk;
  const Vec theta = (Vec(7) << 1.6, 31.0, 1.8, 0.4, 0.4, 0.4, 0.75).finished();
  const auto sim = simulate_dataset(pk, pk.make_params(theta), uniform_design(100, pk_reference_design()), 9);
  CHECK(sim.data.n() == 100);
  for (const auto& r : sim.data.records) CHECK(r.n_obs() == 10);
  const Vec init = pk.initial_estimate(sim.data);
  CHECK(init(0) > 0.5);
  CHECK(init(0) < 5.0);
  CHECK(init(1) > 15.0);
  CHECK(init(1) < 60.0);
  CHECK(init(2) > 0.9);
  CHECK(init(2) < 3.6);
}
