#pragma once

#include "latfim/model.hpp"
#include "latfim/types.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace latfim {

enum class Provenance { score, observed, conditional_score, mc_reference, sa_byproduct, louis_sa };

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& text);

// Symmetric p x p Fisher information estimate. Only the upper triangle is
// taken from the input; the lower triangle is mirrored, so symmetry is exact.
class FimMatrix {
 public:
  FimMatrix() = default;
  FimMatrix(const Mat& upper, Provenance provenance, std::size_t n, std::vector<std::string> names = {});

  const Mat& matrix() const { return entries_; }
  double operator()(Eigen::Index r, Eigen::Index c) const { return entries_(r, c); }
  Eigen::Index dim() const { return entries_.rows(); }
  Provenance provenance() const { return provenance_; }
  std::size_t n() const { return n_; }
  const std::vector<std::string>& names() const { return names_; }

  // Provenances that are averages of outer products, hence PSD.
  bool is_outer_product() const;
  Vec eigenvalues() const;
  double min_eigenvalue() const;
  // min eigenvalue >= -tol * trace.
  bool is_psd(double relative_tol = 1e-10) const;

  // Upper triangle ordered by columns: (0,0), (0,1), (1,1), (0,2), ...
  Vec upper_by_columns() const;

 private:
  Mat entries_;
  Provenance provenance_ = Provenance::score;
  std::size_t n_ = 0;
  std::vector<std::string> names_;
};

// (1/n) sum_i s_i s_i^T
FimMatrix score_outer_fim(std::span<const Vec> scores, std::vector<std::string> names = {});
// -(1/n) sum_i H_i. Not projected to PSD.
FimMatrix observed_fim(std::span<const Mat> hessians, std::vector<std::string> names = {});

// Per-individual E[d/dtheta log f(y_i, Z_i; theta) | y_i].
using ConditionalExpectationProvider = std::function<Vec(const IndividualRecord&, const Vec&)>;

FimMatrix conditional_score_fim(const LatentModel& model, const Dataset& data, const Vec& theta,
                                const ConditionalExpectationProvider& provider);
// Uses the model's closed-form conditional expectation.
FimMatrix conditional_score_fim(const LatentModel& model, const Dataset& data, const Vec& theta);

// Analytic per-dataset estimators for models with closed-form marginals.
FimMatrix marginal_score_fim(const LatentModel& model, const Dataset& data, const Vec& theta);
FimMatrix marginal_observed_fim(const LatentModel& model, const Dataset& data, const Vec& theta);

struct McReference {
  FimMatrix fim;
  Mat standard_error;  // per-entry Monte Carlo standard error
  std::size_t draws = 0;
};

// (1/N) sum of observed-score outer products over N fresh simulated
// individuals. Draws are split into fixed chunks with their own streams and
// reduced in chunk order, so the result does not depend on `threads`.
McReference mc_reference_fim(const LatentModel& model, const Vec& theta, const IndividualDesign& design,
                             std::size_t draws, std::uint64_t seed, int threads = 1);

struct WaldInterval {
  std::string name;
  double estimate = 0.0;
  double standard_error = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// theta_l +- q_{1-alpha/2} sqrt([(n * fim)^{-1}]_{ll}); throws SingularFim when
// the relative eigenvalue cutoff 1e-12 is hit.
std::vector<WaldInterval> wald_confidence_intervals(const ParamVector& theta_hat, const FimMatrix& fim,
                                                    double alpha);

// Inverse through the symmetric eigendecomposition; throws SingularFim.
Mat symmetric_inverse(const Mat& a, double relative_cutoff = 1e-12);

void write_fim_csv(std::ostream& out, const FimMatrix& fim);
FimMatrix read_fim_csv(std::istream& in);

}  // namespace latfim
