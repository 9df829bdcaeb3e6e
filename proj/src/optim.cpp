#include "latfim/optim.hpp"

#include <cmath>
#include <limits>

namespace latfim {

namespace {

struct Transform {
  const std::vector<ParamKind>& kinds;

  Vec to_natural(const Vec& u) const {
    Vec t(u.size());
    for (Eigen::Index l = 0; l < u.size(); ++l) {
      switch (kinds[static_cast<std::size_t>(l)]) {
        case ParamKind::location: t(l) = u(l); break;
        case ParamKind::positive:
        case ParamKind::variance: t(l) = std::exp(u(l)); break;
        case ParamKind::proportion: t(l) = 1.0 / (1.0 + std::exp(-u(l))); break;
      }
    }
    return t;
  }

  Vec to_free(const Vec& t) const {
    Vec u(t.size());
    for (Eigen::Index l = 0; l < t.size(); ++l) {
      switch (kinds[static_cast<std::size_t>(l)]) {
        case ParamKind::location: u(l) = t(l); break;
        case ParamKind::positive:
        case ParamKind::variance: u(l) = std::log(t(l)); break;
        case ParamKind::proportion: u(l) = std::log(t(l) / (1.0 - t(l))); break;
      }
    }
    return u;
  }

  // d theta / d u, elementwise
  Vec jacobian(const Vec& t) const {
    Vec d(t.size());
    for (Eigen::Index l = 0; l < t.size(); ++l) {
      switch (kinds[static_cast<std::size_t>(l)]) {
        case ParamKind::location: d(l) = 1.0; break;
        case ParamKind::positive:
        case ParamKind::variance: d(l) = t(l); break;
        case ParamKind::proportion: d(l) = t(l) * (1.0 - t(l)); break;
      }
    }
    return d;
  }
};

}  // namespace

OptimResult maximize_bounded(const std::function<double(const Vec&)>& value,
                             const std::function<Vec(const Vec&)>& gradient, const Vec& theta0,
                             const std::vector<ParamKind>& kinds, const OptimOptions& options) {
  const Transform tr{kinds};
  const Eigen::Index p = theta0.size();

  Vec u = tr.to_free(theta0);
  Vec theta = tr.to_natural(u);
  double f = value(theta);
  OptimResult out;
  out.theta = theta;
  out.value = f;
  if (!std::isfinite(f)) return out;

  Vec g_nat = gradient(theta);
  Vec g = g_nat.cwiseProduct(tr.jacobian(theta));  // ascent direction in u
  Mat h_inv = Mat::Identity(p, p);
  bool scaled = false;

  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it;
    out.gradient_norm = g_nat.norm();
    if (out.gradient_norm < options.gradient_tol * (1.0 + std::abs(f))) {
      out.converged = true;
      break;
    }
    Vec dir = h_inv * g;
    if (dir.dot(g) <= 0.0) {  // lost positive definiteness
      h_inv.setIdentity();
      dir = g;
    }
    double step = 1.0;
    const double slope = g.dot(dir);
    Vec u_new;
    double f_new = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
      u_new = u + step * dir;
      f_new = value(tr.to_natural(u_new));
      if (std::isfinite(f_new) && f_new >= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;

    const Vec theta_new = tr.to_natural(u_new);
    const Vec g_nat_new = gradient(theta_new);
    const Vec g_new = g_nat_new.cwiseProduct(tr.jacobian(theta_new));
    // BFGS on the minimization problem -f.
    const Vec s = u_new - u;
    const Vec y = g - g_new;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        h_inv *= sy / y.dot(y);
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Mat eye = Mat::Identity(p, p);
      h_inv = (eye - rho * s * y.transpose()) * h_inv * (eye - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    u = u_new;
    theta = theta_new;
    f = f_new;
    g = g_new;
    g_nat = g_nat_new;
  }
  out.theta = theta;
  out.value = f;
  out.gradient_norm = g_nat.norm();
  if (!out.converged) out.converged = out.gradient_norm < options.gradient_tol * (1.0 + std::abs(f));
  return out;
}

}  // namespace latfim
