#pragma once

#include "latfim/fim.hpp"
#include "latfim/study/config.hpp"
#include "latfim/study/stats.hpp"

#include <optional>
#include <string>
#include <vector>

namespace latfim {

struct ComponentIndex {
  std::string label;  // "a:b"
  Eigen::Index row = 0;
  Eigen::Index col = 0;
};

// Resolves "a:b" labels against parameter names; empty `labels` selects the
// whole upper triangle ordered by columns.
std::vector<ComponentIndex> resolve_components(const std::vector<std::string>& labels,
                                               const std::vector<std::string>& names);

// Replicate values of the selected components for one estimator and one n.
struct EstimatorSamples {
  std::string estimator;  // "score" or "observed"
  std::size_t n = 0;
  std::vector<std::vector<double>> values;  // [component][replicate]
  std::vector<SampleSummary> summaries;     // against the reference
};

struct BiasStudyReport {
  std::vector<std::string> names;
  std::vector<ComponentIndex> components;
  FimMatrix reference;
  Mat reference_se;  // zero for the analytic LMM reference
  std::vector<EstimatorSamples> rows;
  std::size_t failures = 0;
};

BiasStudyReport run_bias_study(const StudyConfig& config);

struct DensityComponent {
  std::string estimator;
  std::string component;
  std::size_t n = 0;
  std::vector<double> normalized;  // sqrt(n) (I^(m) - I)
  bool degenerate = false;          // constant sample, no density
  KernelDensity density;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

struct DensityStudyReport {
  BiasStudyReport bias;
  std::vector<DensityComponent> components;
};

DensityStudyReport run_density_study(const StudyConfig& config);

struct ReplicationRow {
  int iteration = 0;
  Vec rel_bias_score, rel_se_score;
  Vec rel_bias_observed, rel_se_observed;
};

struct ReplicationReport {
  std::vector<std::string> names;
  Vec theta_reference;
  FimMatrix oracle_score;
  FimMatrix oracle_observed;
  std::vector<ReplicationRow> rows;
  std::size_t runs = 0;
  std::size_t failures = 0;
};

ReplicationReport run_saem_replication_study(const StudyConfig& config);

struct CoverageReport {
  std::vector<std::string> names;
  std::vector<Proportion> coverage;
  std::size_t replicates = 0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;
  std::vector<Vec> estimates;       // successful replicates, in replicate order
  std::vector<Mat> total_fims;      // n * I_sco(theta_hat), same order
  std::vector<Vec> standard_errors;
};

CoverageReport run_coverage_study(const StudyConfig& config);

struct MengReport {
  std::vector<std::string> names;  // reported ordering (pi, mu1, mu2)
  Mat mean_total;
  Mat se_total;
  CoverageReport coverage;
};

// Published reference values for the two-component mixture at n = 750, in the
// ordering (pi, mu1, mu2).
Mat published_mean_total_fim();
Mat published_meng_fim();

MengReport run_meng_comparison(const StudyConfig& config);

// Runs the configured study and writes <output_dir>/<study>/<name>*.csv plus
// an entry in <output_dir>/<study>/manifest.json. Returns the files written.
std::vector<std::string> run_study(const StudyConfig& config);

}  // namespace latfim
