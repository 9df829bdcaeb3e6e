#include "latfim/study/studies.hpp"

#include "latfim/csv.hpp"
#include "latfim/errors.hpp"
#include "latfim/models/gaussian_mixture.hpp"
#include "latfim/models/lmm.hpp"
#include "latfim/models/registry.hpp"
#include "latfim/parallel.hpp"
#include "latfim/saem_general.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

namespace latfim {

namespace {

// Stream tags, so each study draws from its own part of the key space.
constexpr std::uint64_t kTagBiasData = 0xB1A5;
constexpr std::uint64_t kTagReference = 0x4EF;
constexpr std::uint64_t kTagReplicationData = 0xDA7A;
constexpr std::uint64_t kTagReplicationRun = 0x5AE;
constexpr std::uint64_t kTagOracle = 0x0AC;
constexpr std::uint64_t kTagCoverage = 0xC0DE;

std::string label(const std::vector<std::string>& names, Eigen::Index r, Eigen::Index c) {
  return names[static_cast<std::size_t>(r)] + ":" + names[static_cast<std::size_t>(c)];
}

double diag_ratio(double value, double reference) { return (value - reference) / reference; }

}  // namespace

std::vector<ComponentIndex> resolve_components(const std::vector<std::string>& labels,
                                               const std::vector<std::string>& names) {
  std::vector<ComponentIndex> out;
  const auto p = static_cast<Eigen::Index>(names.size());
  if (labels.empty()) {
    for (Eigen::Index c = 0; c < p; ++c)
      for (Eigen::Index r = 0; r <= c; ++r) out.push_back({label(names, r, c), r, c});
    return out;
  }
  for (const auto& l : labels) {
    const auto colon = l.find(':');
    if (colon == std::string::npos) throw Error(ErrorKind::config_error, "component '" + l + "' is not of the form a:b");
    auto find = [&](const std::string& s) {
      const auto it = std::find(names.begin(), names.end(), s);
      if (it == names.end()) throw Error(ErrorKind::config_error, "unknown parameter '" + s + "' in component " + l);
      return static_cast<Eigen::Index>(it - names.begin());
    };
    out.push_back({l, find(l.substr(0, colon)), find(l.substr(colon + 1))});
  }
  return out;
}

// ---- bias tables and densities ------------------------------------------------

BiasStudyReport run_bias_study(const StudyConfig& config) {
  config.validate();
  const auto model = make_model(config.model, config.mixture_components);
  if (!model->has_marginal())
    throw Error(ErrorKind::config_error, "bias study needs a model with analytic marginals");
  BiasStudyReport report;
  report.names = model->param_names();
  report.components = resolve_components(config.components, report.names);
  const IndividualDesign design = default_design(config.model, config.n_obs);
  const auto p = static_cast<Eigen::Index>(report.names.size());

  if (config.model == "lmm") {
    const FimMatrix exact = lmm_analytic_fim(config.theta, config.n_obs);
    report.reference = FimMatrix(exact.matrix(), Provenance::score, 1, report.names);
    report.reference_se = Mat::Zero(p, p);
  } else {
    const McReference ref = mc_reference_fim(*model, config.theta, design, config.mc_draws,
                                             stream_key(config.seed, {kTagReference}), config.threads);
    report.reference = ref.fim;
    report.reference_se = ref.standard_error;
  }

  const ParamVector theta = model->make_params(config.theta);
  const std::size_t k = report.components.size();
  for (std::size_t n : config.n_values) {
    const std::size_t m_total = config.replicates;
    std::vector<std::optional<std::pair<Mat, Mat>>> results(m_total);
    parallel_for(m_total, config.threads, [&](std::size_t m) {
      try {
        const SimulatedData sim =
            simulate_dataset(*model, theta, uniform_design(n, design), stream_key(config.seed, {kTagBiasData, n, m}));
        results[m] = std::make_pair(marginal_score_fim(*model, sim.data, config.theta).matrix(),
                                    marginal_observed_fim(*model, sim.data, config.theta).matrix());
      } catch (const Error&) {
        results[m].reset();
      }
    });
    EstimatorSamples sco{"score", n, std::vector<std::vector<double>>(k), {}};
    EstimatorSamples obs{"observed", n, std::vector<std::vector<double>>(k), {}};
    for (const auto& r : results) {
      if (!r) {
        ++report.failures;
        continue;
      }
      for (std::size_t c = 0; c < k; ++c) {
        const auto& ci = report.components[c];
        sco.values[c].push_back(r->first(ci.row, ci.col));
        obs.values[c].push_back(r->second(ci.row, ci.col));
      }
    }
    for (EstimatorSamples* e : {&sco, &obs})
      for (std::size_t c = 0; c < k; ++c) {
        const auto& ci = report.components[c];
        e->summaries.push_back(summarize(e->values[c], report.reference(ci.row, ci.col)));
      }
    report.rows.push_back(std::move(sco));
    report.rows.push_back(std::move(obs));
  }
  return report;
}

DensityStudyReport run_density_study(const StudyConfig& config) {
  DensityStudyReport out;
  out.bias = run_bias_study(config);
  for (const auto& row : out.bias.rows) {
    const double root_n = std::sqrt(static_cast<double>(row.n));
    for (std::size_t c = 0; c < out.bias.components.size(); ++c) {
      const auto& ci = out.bias.components[c];
      DensityComponent d;
      d.estimator = row.estimator;
      d.component = ci.label;
      d.n = row.n;
      const double ref = out.bias.reference(ci.row, ci.col);
      for (double v : row.values[c]) d.normalized.push_back(root_n * (v - ref));
      const auto [lo, hi] = std::minmax_element(d.normalized.begin(), d.normalized.end());
      d.degenerate = d.normalized.size() < 2 || *hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi));
      if (!d.degenerate) {
        d.density = kernel_density(d.normalized);
        d.skewness = skewness(d.normalized);
        d.excess_kurtosis = excess_kurtosis(d.normalized);
      }
      out.components.push_back(std::move(d));
    }
  }
  return out;
}

// ---- SAEM replication --------------------------------------------------------

ReplicationReport run_saem_replication_study(const StudyConfig& config) {
  config.validate();
  const auto owned = make_model(config.model, config.mixture_components);
  const auto* model = dynamic_cast<const ExpoFamilyModel*>(owned.get());
  if (!model) throw Error(ErrorKind::config_error, "saem_replication needs an exponential-family model");
  ReplicationReport report;
  report.names = model->param_names();
  const std::size_t n = config.n_values.front();
  const Dataset data = simulate_dataset(*model, model->make_params(config.theta),
                                        uniform_design(n, default_design(config.model, config.n_obs)),
                                        stream_key(config.seed, {kTagReplicationData}))
                           .data;

  // Reference theta from a longer averaged run, then the long-chain oracle there.
  SaemConfig ref_cfg = config.saem;
  ref_cfg.iterations = config.oracle.reference_iterations > 0 ? config.oracle.reference_iterations
                                                              : 4 * config.saem.iterations;
  ref_cfg.averaging = true;
  ref_cfg.louis = false;
  ref_cfg.record_every = ref_cfg.iterations;
  ref_cfg.seed = stream_key(config.seed, {kTagReplicationRun, ~std::uint64_t{0}});
  const SaemResult ref = run_saem(*model, data, ref_cfg);
  report.theta_reference = ref.theta_averaged ? ref.theta_averaged->values : ref.theta.values;
  const ConditionalFimReference oracle =
      mc_conditional_fim(*model, data, report.theta_reference, config.oracle.draws,
                         stream_key(config.seed, {kTagOracle}), config.oracle.thin, config.oracle.burn_in,
                         config.threads);
  report.oracle_score = oracle.score;
  if (!oracle.observed) throw Error(ErrorKind::provider_failure, config.model + " has no complete-data Hessian");
  report.oracle_observed = *oracle.observed;

  const std::size_t runs = config.replicates;
  std::vector<std::optional<std::vector<IterationRecord>>> trajectories(runs);
  parallel_for(runs, config.threads, [&](std::size_t m) {
    SaemConfig cfg = config.saem;
    cfg.louis = true;
    cfg.averaging = false;
    cfg.seed = stream_key(config.seed, {kTagReplicationRun, m});
    try {
      trajectories[m] = run_saem(*model, data, cfg).trajectory;
    } catch (const Error&) {
      trajectories[m].reset();
    }
  });

  std::vector<const std::vector<IterationRecord>*> ok;
  for (const auto& t : trajectories) {
    if (t) ok.push_back(&*t);
    else ++report.failures;
  }
  report.runs = ok.size();
  if (ok.empty()) throw Error(ErrorKind::provider_failure, "every SAEM run failed");
  const Vec ref_sco = report.oracle_score.matrix().diagonal();
  const Vec ref_obs = report.oracle_observed.matrix().diagonal();
  const auto p = ref_sco.size();
  const double count = static_cast<double>(ok.size());
  for (std::size_t t = 0; t < ok.front()->size(); ++t) {
    ReplicationRow row;
    row.iteration = (*ok.front())[t].iteration;
    row.rel_bias_score = row.rel_se_score = row.rel_bias_observed = row.rel_se_observed = Vec::Zero(p);
    for (const auto* traj : ok) {
      const IterationRecord& rec = (*traj)[t];
      for (Eigen::Index l = 0; l < p; ++l) {
        const double rs = diag_ratio(rec.fim_diag(l), ref_sco(l));
        const double ro = diag_ratio(rec.louis_diag(l), ref_obs(l));
        row.rel_bias_score(l) += rs / count;
        row.rel_se_score(l) += rs * rs / count;
        row.rel_bias_observed(l) += ro / count;
        row.rel_se_observed(l) += ro * ro / count;
      }
    }
    row.rel_se_score = row.rel_se_score.cwiseSqrt();
    row.rel_se_observed = row.rel_se_observed.cwiseSqrt();
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---- coverage and the mixture comparison --------------------------------------

namespace {

struct FitOutcome {
  Vec theta;
  FimMatrix fim;
};

FitOutcome fit_replicate(const LatentModel& model, const Dataset& data, const StudyConfig& config, std::size_t m) {
  SaemConfig cfg = config.saem;
  cfg.seed = stream_key(config.seed, {kTagCoverage, m, 1});
  if (config.model == "gaussian_mixture2") {
    const EmResult em = gaussian_mixture_em(data, model.initial_estimate(data), config.em_tolerance,
                                            config.em_max_iterations);
    return {em.theta, marginal_score_fim(model, data, em.theta)};
  }
  if (config.model == "lmm") {
    const Vec t = lmm_marginal_mle(data);
    return {t, marginal_score_fim(model, data, t)};
  }
  if (const auto* expo = dynamic_cast<const ExpoFamilyModel*>(&model)) {
    if (expo->has_conditional_stats()) cfg.mode = SimulationMode::conditional_expectation;
    const SaemResult r = run_saem(*expo, data, cfg);
    if (model.has_marginal()) return {r.theta.values, marginal_score_fim(model, data, r.theta.values)};
    return {r.theta.values, r.fim};
  }
  const GeneralSaemResult r = run_general_saem(model, data, cfg);
  return {r.theta.values, r.fim};
}

}  // namespace

CoverageReport run_coverage_study(const StudyConfig& config) {
  config.validate();
  const auto model = make_model(config.model, config.mixture_components);
  CoverageReport report;
  report.names = model->param_names();
  report.replicates = config.replicates;
  const std::size_t n = config.n_values.front();
  const ParamVector truth = model->make_params(config.theta);
  const IndividualDesign design = default_design(config.model, config.n_obs);
  const auto p = static_cast<Eigen::Index>(report.names.size());

  struct Replicate {
    bool ok = false;
    std::string error;
    Vec theta, se;
    Mat total;
    std::vector<bool> hit;
  };
  std::vector<Replicate> reps(config.replicates);
  parallel_for(config.replicates, config.threads, [&](std::size_t m) {
    Replicate& r = reps[m];
    try {
      const Dataset data =
          simulate_dataset(*model, truth, uniform_design(n, design), stream_key(config.seed, {kTagCoverage, m})).data;
      const FitOutcome fit = fit_replicate(*model, data, config, m);
      const auto ci = wald_confidence_intervals(model->make_params(fit.theta), fit.fim, config.alpha);
      r.theta = fit.theta;
      r.total = static_cast<double>(fit.fim.n()) * fit.fim.matrix();
      r.se = Vec(p);
      for (Eigen::Index l = 0; l < p; ++l) {
        const auto& w = ci[static_cast<std::size_t>(l)];
        r.se(l) = w.standard_error;
        r.hit.push_back(w.lower <= config.theta(l) && config.theta(l) <= w.upper);
      }
      r.ok = true;
    } catch (const Error& e) {
      r.error = "replicate " + std::to_string(m) + ": " + e.what();
    }
  });

  std::vector<std::size_t> hits(static_cast<std::size_t>(p), 0);
  std::size_t effective = 0;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++report.failures;
      report.failure_messages.push_back(r.error);
      continue;
    }
    ++effective;
    for (std::size_t l = 0; l < hits.size(); ++l) hits[l] += r.hit[l] ? 1 : 0;
    report.estimates.push_back(r.theta);
    report.total_fims.push_back(r.total);
    report.standard_errors.push_back(r.se);
  }
  for (std::size_t h : hits) report.coverage.push_back(proportion(h, effective));
  return report;
}

Mat published_mean_total_fim() {
  Mat m(3, 3);
  m << 2685.184, -211.068, -251.808, -211.068, 170.927, -61.578, -251.808, -61.578, 392.859;
  return m;
}

Mat published_meng_fim() {
  Mat m(3, 3);
  m << 2591.3, -237.9, -231.8, -237.9, 155.8, -86.7, -231.8, -86.7, 394.5;
  return m;
}

MengReport run_meng_comparison(const StudyConfig& config) {
  if (config.model != "gaussian_mixture2")
    throw Error(ErrorKind::config_error, "meng_comparison is defined for gaussian_mixture2");
  MengReport out;
  out.coverage = run_coverage_study(config);
  // Internal order (mu1, mu2, pi) -> reported order (pi, mu1, mu2).
  const int perm[3] = {2, 0, 1};
  out.names = {"pi", "mu1", "mu2"};
  out.mean_total = Mat::Zero(3, 3);
  out.se_total = Mat::Zero(3, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      std::vector<double> v;
      for (const Mat& f : out.coverage.total_fims) v.push_back(f(perm[r], perm[c]));
      const SampleSummary s = summarize(v, 0.0);
      out.mean_total(r, c) = s.mean;
      out.se_total(r, c) = s.bias_se;
    }
  return out;
}

// ---- output -------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

class StudyWriter {
 public:
  StudyWriter(const StudyConfig& config) : dir_(fs::path(config.output_dir) / to_string(config.kind)), name_(config.name) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::io_error, "cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  // Opens <dir>/<name><suffix>.csv for writing.
  std::ofstream open(const std::string& suffix) {
    const fs::path path = dir_ / (name_ + suffix + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io_error, "cannot write " + path.string());
    files_.push_back(path.string());
    return out;
  }

  const fs::path& dir() const { return dir_; }
  std::vector<std::string>& files() { return files_; }

 private:
  fs::path dir_;
  std::string name_;
  std::vector<std::string> files_;
};

void write_bias(StudyWriter& w, const BiasStudyReport& r, const std::string& suffix) {
  std::ofstream out = w.open(suffix);
  CsvWriter csv(out);
  csv.field("estimator").field("n").field("m_effective").field("statistic");
  for (const auto& c : r.components) csv.field(c.label);
  csv.end_row();
  csv.field("reference").empty().empty().field("value");
  for (const auto& c : r.components) csv.field(r.reference(c.row, c.col));
  csv.end_row();
  csv.field("reference").empty().empty().field("mc_se");
  for (const auto& c : r.components) csv.field(r.reference_se(c.row, c.col));
  csv.end_row();
  for (const auto& row : r.rows) {
    const std::size_t m = row.values.empty() ? 0 : row.values.front().size();
    for (const char* stat : {"bias", "rmsd", "bias_se"}) {
      csv.field(row.estimator).field(row.n).field(m).field(stat);
      for (const auto& s : row.summaries) {
        const std::string st = stat;
        csv.field(st == "bias" ? s.bias : st == "rmsd" ? s.rmsd : s.bias_se);
      }
      csv.end_row();
    }
  }
  std::ofstream ref = w.open(suffix + "_reference");
  write_fim_csv(ref, r.reference);
}

void write_density(StudyWriter& w, const DensityStudyReport& r) {
  write_bias(w, r.bias, "_bias");
  {
    std::ofstream out = w.open("");
    CsvWriter csv(out);
    csv.row({"estimator", "n", "component", "x", "density"});
    for (const auto& d : r.components) {
      if (d.degenerate) continue;
      for (Eigen::Index g = 0; g < d.density.grid.size(); ++g) {
        csv.field(d.estimator).field(d.n).field(d.component).field(d.density.grid(g)).field(d.density.density(g));
        csv.end_row();
      }
    }
  }
  std::ofstream out = w.open("_summary");
  CsvWriter csv(out);
  csv.row({"estimator", "n", "component", "replicates", "degenerate", "bandwidth", "skewness", "excess_kurtosis"});
  for (const auto& d : r.components) {
    csv.field(d.estimator).field(d.n).field(d.component).field(d.normalized.size()).field(d.degenerate ? "1" : "0");
    if (d.degenerate) csv.empty().empty().empty();
    else csv.field(d.density.bandwidth).field(d.skewness).field(d.excess_kurtosis);
    csv.end_row();
  }
}

void write_replication(StudyWriter& w, const ReplicationReport& r) {
  {
    std::ofstream out = w.open("");
    CsvWriter csv(out);
    csv.field("iteration");
    for (const auto& name : r.names)
      csv.field("rel_bias_score_" + name).field("rel_se_score_" + name).field("rel_bias_observed_" + name)
          .field("rel_se_observed_" + name);
    csv.end_row();
    for (const auto& row : r.rows) {
      csv.field(row.iteration);
      for (Eigen::Index l = 0; l < row.rel_bias_score.size(); ++l)
        csv.field(row.rel_bias_score(l)).field(row.rel_se_score(l)).field(row.rel_bias_observed(l))
            .field(row.rel_se_observed(l));
      csv.end_row();
    }
  }
  {
    std::ofstream out = w.open("_oracle_score");
    write_fim_csv(out, r.oracle_score);
  }
  {
    std::ofstream out = w.open("_oracle_observed");
    write_fim_csv(out, r.oracle_observed);
  }
  std::ofstream out = w.open("_theta_reference");
  CsvWriter csv(out);
  csv.row({"parameter", "value"});
  for (std::size_t l = 0; l < r.names.size(); ++l) {
    csv.field(r.names[l]).field(r.theta_reference(static_cast<Eigen::Index>(l)));
    csv.end_row();
  }
  csv.field("runs").field(r.runs);
  csv.end_row();
  csv.field("failures").field(r.failures);
  csv.end_row();
}

void write_coverage(StudyWriter& w, const CoverageReport& r, const Vec& truth, const std::string& suffix) {
  {
    std::ofstream out = w.open(suffix);
    CsvWriter csv(out);
    csv.row({"parameter", "true_value", "coverage", "binomial_se", "hits", "m_effective", "failures"});
    for (std::size_t l = 0; l < r.names.size(); ++l) {
      const auto& c = r.coverage[l];
      csv.field(r.names[l]).field(truth(static_cast<Eigen::Index>(l))).field(c.rate).field(c.se).field(c.hits)
          .field(c.total).field(r.failures);
      csv.end_row();
    }
  }
  std::ofstream out = w.open(suffix + "_estimates");
  CsvWriter csv(out);
  for (const auto& name : r.names) csv.field(name);
  for (const auto& name : r.names) csv.field("se_" + name);
  csv.end_row();
  for (std::size_t m = 0; m < r.estimates.size(); ++m) {
    for (Eigen::Index l = 0; l < r.estimates[m].size(); ++l) csv.field(r.estimates[m](l));
    for (Eigen::Index l = 0; l < r.standard_errors[m].size(); ++l) csv.field(r.standard_errors[m](l));
    csv.end_row();
  }
}

void write_meng(StudyWriter& w, const MengReport& r, const Vec& truth) {
  {
    std::ofstream out = w.open("");
    CsvWriter csv(out);
    csv.row({"row", "col", "mean_total", "replicate_se", "published_mean", "z_score", "published_single_dataset"});
    const Mat pub = published_mean_total_fim(), meng = published_meng_fim();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        csv.field(r.names[a]).field(r.names[b]).field(r.mean_total(a, b)).field(r.se_total(a, b)).field(pub(a, b))
            .field((r.mean_total(a, b) - pub(a, b)) / r.se_total(a, b)).field(meng(a, b));
        csv.end_row();
      }
  }
  write_coverage(w, r.coverage, truth, "_coverage");
}

void update_manifest(const fs::path& dir, const StudyConfig& config, const std::vector<std::string>& files,
                     double seconds, std::size_t failures) {
  using nlohmann::json;
  const fs::path path = dir / "manifest.json";
  json manifest = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    try {
      manifest = json::parse(in);
    } catch (const json::exception&) {
      manifest = json::object();
    }
  }
  json entry;
  entry["config"] = json::parse(study_config_json(config));
  entry["library_version"] = "0.1.0";
  entry["compiler"] = __VERSION__;
  entry["master_seed"] = config.seed;
  entry["wall_time_seconds"] = seconds;
  entry["failures"] = failures;
  entry["files"] = files;
  manifest[config.name] = entry;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io_error, "cannot write " + path.string());
  out << manifest.dump(2) << "\n";
}

}  // namespace

std::vector<std::string> run_study(const StudyConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  StudyWriter writer(config);
  std::size_t failures = 0;
  switch (config.kind) {
    case StudyKind::bias_table: {
      const BiasStudyReport r = run_bias_study(config);
      failures = r.failures;
      write_bias(writer, r, "");
      break;
    }
    case StudyKind::density: {
      const DensityStudyReport r = run_density_study(config);
      failures = r.bias.failures;
      write_density(writer, r);
      break;
    }
    case StudyKind::saem_replication: {
      const ReplicationReport r = run_saem_replication_study(config);
      failures = r.failures;
      write_replication(writer, r);
      break;
    }
    case StudyKind::coverage: {
      const CoverageReport r = run_coverage_study(config);
      failures = r.failures;
      write_coverage(writer, r, config.theta, "");
      break;
    }
    case StudyKind::meng_comparison: {
      const MengReport r = run_meng_comparison(config);
      failures = r.coverage.failures;
      write_meng(writer, r, config.theta);
      break;
    }
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  update_manifest(writer.dir(), config, writer.files(), seconds, failures);
  return writer.files();
}

}  // namespace latfim
