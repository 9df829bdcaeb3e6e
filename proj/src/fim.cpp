#include "latfim/fim.hpp"

#include "latfim/csv.hpp"
#include "latfim/errors.hpp"
#include "latfim/parallel.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace latfim {

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::score: return "score";
    case Provenance::observed: return "observed";
    case Provenance::conditional_score: return "conditional-score";
    case Provenance::mc_reference: return "mc-reference";
    case Provenance::sa_byproduct: return "sa-byproduct";
    case Provenance::louis_sa: return "louis-sa";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& text) {
  for (Provenance p : {Provenance::score, Provenance::observed, Provenance::conditional_score,
                       Provenance::mc_reference, Provenance::sa_byproduct, Provenance::louis_sa})
    if (text == to_string(p)) return p;
  throw Error(ErrorKind::io_error, "unknown provenance '" + text + "'");
}

namespace {

std::vector<std::string> default_names(Eigen::Index p) {
  std::vector<std::string> names;
  for (Eigen::Index l = 0; l < p; ++l) names.push_back("theta_" + std::to_string(l + 1));
  return names;
}

// Running mean of upper triangles: M_k = M_{k-1} + (X_k - M_{k-1}) / k. A
// constant input sequence reproduces its value exactly.
class UpperMean {
 public:
  explicit UpperMean(Eigen::Index p) : mean_(Mat::Zero(p, p)) {}
  void add(const Mat& x) {
    ++count_;
    const double inv = 1.0 / static_cast<double>(count_);
    for (Eigen::Index c = 0; c < mean_.cols(); ++c)
      for (Eigen::Index r = 0; r <= c; ++r) mean_(r, c) += (x(r, c) - mean_(r, c)) * inv;
  }
  void add_outer(const Vec& s) {
    ++count_;
    const double inv = 1.0 / static_cast<double>(count_);
    for (Eigen::Index c = 0; c < mean_.cols(); ++c)
      for (Eigen::Index r = 0; r <= c; ++r) mean_(r, c) += (s(r) * s(c) - mean_(r, c)) * inv;
  }
  const Mat& mean() const { return mean_; }

 private:
  Mat mean_;
  std::size_t count_ = 0;
};

}  // namespace

FimMatrix::FimMatrix(const Mat& upper, Provenance provenance, std::size_t n, std::vector<std::string> names)
    : entries_(upper.rows(), upper.cols()), provenance_(provenance), n_(n), names_(std::move(names)) {
  if (upper.rows() != upper.cols()) throw Error(ErrorKind::dimension_mismatch, "FIM must be square");
  for (Eigen::Index c = 0; c < upper.cols(); ++c)
    for (Eigen::Index r = 0; r <= c; ++r) entries_(r, c) = entries_(c, r) = upper(r, c);
  if (names_.empty()) names_ = default_names(upper.rows());
  if (static_cast<Eigen::Index>(names_.size()) != upper.rows())
    throw Error(ErrorKind::dimension_mismatch, "FIM names do not match its dimension");
}

bool FimMatrix::is_outer_product() const {
  return provenance_ == Provenance::score || provenance_ == Provenance::conditional_score ||
         provenance_ == Provenance::sa_byproduct;
}

Vec FimMatrix::eigenvalues() const {
  Eigen::SelfAdjointEigenSolver<Mat> es(entries_, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

double FimMatrix::min_eigenvalue() const { return entries_.size() == 0 ? 0.0 : eigenvalues().minCoeff(); }

bool FimMatrix::is_psd(double relative_tol) const {
  return min_eigenvalue() >= -relative_tol * std::abs(entries_.trace());
}

Vec FimMatrix::upper_by_columns() const {
  const Eigen::Index p = dim();
  Vec v(p * (p + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < p; ++c)
    for (Eigen::Index r = 0; r <= c; ++r) v(k++) = entries_(r, c);
  return v;
}

FimMatrix score_outer_fim(std::span<const Vec> scores, std::vector<std::string> names) {
  if (scores.empty()) throw Error(ErrorKind::dimension_mismatch, "score_outer_fim needs at least one score");
  const Eigen::Index p = scores.front().size();
  UpperMean acc(p);
  for (const auto& s : scores) {
    if (s.size() != p) throw Error(ErrorKind::dimension_mismatch, "scores differ in length");
    acc.add_outer(s);
  }
  return FimMatrix(acc.mean(), Provenance::score, scores.size(), std::move(names));
}

FimMatrix observed_fim(std::span<const Mat> hessians, std::vector<std::string> names) {
  if (hessians.empty()) throw Error(ErrorKind::dimension_mismatch, "observed_fim needs at least one Hessian");
  const Eigen::Index p = hessians.front().rows();
  UpperMean acc(p);
  for (const auto& h : hessians) {
    if (h.rows() != p || h.cols() != p) throw Error(ErrorKind::dimension_mismatch, "Hessians differ in shape");
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    if ((h - h.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw Error(ErrorKind::asymmetric_input, "Hessian is not symmetric");
    acc.add(-h);
  }
  return FimMatrix(acc.mean(), Provenance::observed, hessians.size(), std::move(names));
}

FimMatrix conditional_score_fim(const LatentModel& model, const Dataset& data, const Vec& theta,
                                const ConditionalExpectationProvider& provider) {
  if (data.n() == 0) throw Error(ErrorKind::dimension_mismatch, "empty dataset");
  UpperMean acc(theta.size());
  for (const auto& rec : data.records) {
    const Vec e = provider(rec, theta);
    if (e.size() != theta.size()) throw Error(ErrorKind::dimension_mismatch, "provider returned wrong length");
    if (!e.allFinite()) throw Error(ErrorKind::provider_failure, "non-finite conditional expectation");
    acc.add_outer(e);
  }
  return FimMatrix(acc.mean(), Provenance::conditional_score, data.n(), model.param_names());
}

FimMatrix conditional_score_fim(const LatentModel& model, const Dataset& data, const Vec& theta) {
  return conditional_score_fim(model, data, theta, [&model](const IndividualRecord& rec, const Vec& t) {
    return model.conditional_expected_score(rec, t);
  });
}

FimMatrix marginal_score_fim(const LatentModel& model, const Dataset& data, const Vec& theta) {
  std::vector<Vec> scores;
  scores.reserve(data.n());
  for (const auto& rec : data.records) scores.push_back(model.marginal_score(rec, theta));
  return score_outer_fim(scores, model.param_names());
}

FimMatrix marginal_observed_fim(const LatentModel& model, const Dataset& data, const Vec& theta) {
  std::vector<Mat> hessians;
  hessians.reserve(data.n());
  for (const auto& rec : data.records) hessians.push_back(model.marginal_hessian(rec, theta));
  return observed_fim(hessians, model.param_names());
}

McReference mc_reference_fim(const LatentModel& model, const Vec& theta, const IndividualDesign& design,
                             std::size_t draws, std::uint64_t seed, int threads) {
  model.validate(theta);
  if (draws == 0) throw Error(ErrorKind::config_error, "mc_reference_fim needs draws > 0");
  const bool marginal = model.has_marginal();
  if (!marginal && !model.has_conditional_expectation())
    throw Error(ErrorKind::provider_failure, model.id() + " has no analytic observed score");
  const Eigen::Index p = theta.size();
  constexpr std::size_t chunk = 10000;
  const std::size_t chunks = (draws + chunk - 1) / chunk;
  std::vector<Mat> sum(chunks), sum_sq(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Rng rng(seed, {0x4D43u, c});
    Mat s1 = Mat::Zero(p, p), s2 = Mat::Zero(p, p);
    const std::size_t end = std::min(draws, (c + 1) * chunk);
    for (std::size_t d = c * chunk; d < end; ++d) {
      const auto sim = model.simulate(theta, design, rng);
      const Vec g = marginal ? model.marginal_score(sim.first, theta)
                             : model.conditional_expected_score(sim.first, theta);
      const Mat outer = g * g.transpose();
      s1 += outer;
      s2 += outer.cwiseProduct(outer);
    }
    sum[c] = std::move(s1);
    sum_sq[c] = std::move(s2);
  });
  Mat total = Mat::Zero(p, p), total_sq = Mat::Zero(p, p);
  for (std::size_t c = 0; c < chunks; ++c) {
    total += sum[c];
    total_sq += sum_sq[c];
  }
  const double nd = static_cast<double>(draws);
  const Mat mean = total / nd;
  const Mat var = (total_sq / nd - mean.cwiseProduct(mean)).cwiseMax(0.0);
  McReference out{FimMatrix(mean, Provenance::mc_reference, draws, model.param_names()),
                  (var / nd).cwiseSqrt(), draws};
  return out;
}

Mat symmetric_inverse(const Mat& a, double relative_cutoff) {
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  const Vec ev = es.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  if (!(top > 0.0) || ev.minCoeff() <= relative_cutoff * top) {
    std::ostringstream msg;
    msg << "matrix is singular or indefinite; eigenvalues:";
    for (Eigen::Index i = 0; i < ev.size(); ++i) msg << ' ' << format_double(ev(i));
    throw Error(ErrorKind::singular_fim, msg.str());
  }
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

std::vector<WaldInterval> wald_confidence_intervals(const ParamVector& theta_hat, const FimMatrix& fim,
                                                    double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::config_error, "alpha must lie in (0, 1]");
  if (fim.dim() != static_cast<Eigen::Index>(theta_hat.size()))
    throw Error(ErrorKind::dimension_mismatch, "FIM and parameter dimensions differ");
  if (fim.n() == 0) throw Error(ErrorKind::dimension_mismatch, "FIM records no sample size");
  const Mat cov = symmetric_inverse(static_cast<double>(fim.n()) * fim.matrix());
  const double q = alpha >= 1.0 ? 0.0
                                : boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0),
                                                        1.0 - alpha / 2.0);
  std::vector<WaldInterval> out;
  for (std::size_t l = 0; l < theta_hat.size(); ++l) {
    const auto li = static_cast<Eigen::Index>(l);
    WaldInterval w;
    w.name = l < theta_hat.names.size() ? theta_hat.names[l] : "theta_" + std::to_string(l + 1);
    w.estimate = theta_hat.values(li);
    w.standard_error = std::sqrt(cov(li, li));
    w.lower = w.estimate - q * w.standard_error;
    w.upper = w.estimate + q * w.standard_error;
    out.push_back(w);
  }
  return out;
}

void write_fim_csv(std::ostream& out, const FimMatrix& fim) {
  out << "# provenance: " << to_string(fim.provenance()) << "\r\n";
  out << "# n: " << fim.n() << "\r\n";
  CsvWriter w(out);
  const auto& names = fim.names();
  for (Eigen::Index c = 0; c < fim.dim(); ++c)
    for (Eigen::Index r = 0; r <= c; ++r)
      w.field(names[static_cast<std::size_t>(r)] + ":" + names[static_cast<std::size_t>(c)]);
  w.end_row();
  const Vec v = fim.upper_by_columns();
  for (Eigen::Index k = 0; k < v.size(); ++k) w.field(v(k));
  w.end_row();
}

FimMatrix read_fim_csv(std::istream& in) {
  std::string line;
  std::optional<Provenance> prov;
  std::optional<std::size_t> n;
  std::vector<std::string> header, values;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      std::string key = line.substr(1, colon - 1), val = line.substr(colon + 1);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(' '), e = s.find_last_not_of(' ');
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      key = trim(key);
      val = trim(val);
      if (key == "provenance") prov = provenance_from_string(val);
      if (key == "n") n = static_cast<std::size_t>(std::stoull(val));
    } else if (header.empty()) {
      header = split_csv_line(line);
    } else {
      values = split_csv_line(line);
    }
  }
  if (!prov || !n || header.empty() || values.size() != header.size())
    throw Error(ErrorKind::io_error, "malformed FIM file");
  Eigen::Index p = 0;
  while (p * (p + 1) / 2 < static_cast<Eigen::Index>(header.size())) ++p;
  if (p * (p + 1) / 2 != static_cast<Eigen::Index>(header.size()))
    throw Error(ErrorKind::io_error, "FIM entry count is not triangular");
  Mat upper = Mat::Zero(p, p);
  std::vector<std::string> names(static_cast<std::size_t>(p));
  Eigen::Index k = 0;
  for (Eigen::Index c = 0; c < p; ++c)
    for (Eigen::Index r = 0; r <= c; ++r, ++k) {
      upper(r, c) = std::stod(values[static_cast<std::size_t>(k)]);
      if (r == c) {
        const auto& h = header[static_cast<std::size_t>(k)];
        names[static_cast<std::size_t>(c)] = h.substr(0, h.find(':'));
      }
    }
  return FimMatrix(upper, *prov, *n, names);
}

}  // namespace latfim
