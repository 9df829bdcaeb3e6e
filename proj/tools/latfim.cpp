// latfim command line: simulate, fit, fim, study, coverage.

#include "latfim/csv.hpp"
#include "latfim/errors.hpp"
#include "latfim/fim.hpp"
#include "latfim/models/gaussian_mixture.hpp"
#include "latfim/models/registry.hpp"
#include "latfim/saem.hpp"
#include "latfim/saem_general.hpp"
#include "latfim/study/config.hpp"
#include "latfim/study/studies.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

using namespace latfim;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  bool desk = false;
};

Vec parse_theta(const std::vector<double>& values, const std::string& model) {
  if (values.empty()) return default_theta(model);
  return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Dataset read_dataset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_error, "cannot open dataset '" + path + "'");
  return read_dataset_csv(in);
}

// Writes to `path`, or stdout when it is empty or "-".
template <typename F>
void emit(const std::string& path, F&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io_error, "cannot write '" + path + "'");
  write(out);
}

void write_estimates(std::ostream& out, const ParamVector& theta, const FimMatrix& fim) {
  CsvWriter csv(out);
  csv.row({"parameter", "estimate", "se", "lower95", "upper95"});
  for (const auto& w : wald_confidence_intervals(theta, fim, 0.05)) {
    csv.field(w.name).field(w.estimate).field(w.standard_error).field(w.lower).field(w.upper);
    csv.end_row();
  }
}

int run_simulate(const GlobalOptions& g, const std::string& model_id, const std::vector<double>& theta_values,
                 std::size_t n, std::size_t n_obs) {
  const auto model = make_model(model_id);
  const Vec theta = parse_theta(theta_values, model_id);
  const auto sim = simulate_dataset(*model, model->make_params(theta),
                                    uniform_design(n, default_design(model_id, n_obs)), g.seed.value_or(1));
  emit(g.out, [&](std::ostream& out) { write_dataset_csv(out, sim.data); });
  return 0;
}

int run_fit(const GlobalOptions& g, const std::string& model_id, const std::string& data_path, int iterations,
            int burn_in, const std::vector<double>& theta0) {
  const auto model = make_model(model_id);
  const Dataset data = read_dataset_file(data_path);
  const std::filesystem::path dir = g.out.empty() ? std::filesystem::path("fit") : std::filesystem::path(g.out);
  std::filesystem::create_directories(dir);
  SaemConfig cfg;
  cfg.iterations = iterations;
  cfg.schedule.burn_in = burn_in;
  cfg.seed = g.seed.value_or(1);
  if (!theta0.empty()) cfg.theta0 = parse_theta(theta0, model_id);

  ParamVector theta;
  FimMatrix fim;
  std::vector<IterationRecord> trajectory;
  bool pruned = false;
  if (model_id == "gaussian_mixture2") {
    const EmResult em = gaussian_mixture_em(data, cfg.theta0 ? *cfg.theta0 : model->initial_estimate(data));
    theta = model->make_params(em.theta);
    fim = marginal_score_fim(*model, data, em.theta);
  } else if (const auto* expo = dynamic_cast<const ExpoFamilyModel*>(model.get())) {
    SaemResult r = run_saem(*expo, data, cfg);
    theta = r.theta;
    fim = r.fim;
    trajectory = std::move(r.trajectory);
  } else {
    GeneralSaemResult r = run_general_saem(*model, data, cfg);
    theta = r.theta;
    fim = r.fim;
    trajectory = std::move(r.trajectory);
    pruned = true;
  }
  emit((dir / "estimates.csv").string(), [&](std::ostream& out) { write_estimates(out, theta, fim); });
  emit((dir / "fim.csv").string(), [&](std::ostream& out) { write_fim_csv(out, fim); });
  if (!trajectory.empty())
    emit((dir / "trajectory.csv").string(),
         [&](std::ostream& out) { write_trajectory_csv(out, trajectory, pruned); });
  std::cout << "wrote " << dir.string() << "\n";
  return 0;
}

int run_fim(const GlobalOptions& g, const std::string& model_id, const std::string& data_path,
            const std::vector<double>& theta_values, const std::string& estimator, std::size_t draws) {
  const auto model = make_model(model_id);
  const Vec theta = parse_theta(theta_values, model_id);
  FimMatrix fim;
  if (estimator == "reference") {
    fim = mc_reference_fim(*model, theta, default_design(model_id), draws, g.seed.value_or(1), g.threads).fim;
  } else {
    const Dataset data = read_dataset_file(data_path);
    if (estimator == "score") fim = marginal_score_fim(*model, data, theta);
    else if (estimator == "observed") fim = marginal_observed_fim(*model, data, theta);
    else if (estimator == "conditional")
      fim = model->has_conditional_expectation()
                ? conditional_score_fim(*model, data, theta)
                : mc_conditional_fim(*model, data, theta, draws, g.seed.value_or(1), 5, 2000, g.threads).score;
    else throw Error(ErrorKind::config_error, "unknown estimator '" + estimator + "'");
  }
  emit(g.out, [&](std::ostream& out) { write_fim_csv(out, fim); });
  return 0;
}

int run_study_command(const GlobalOptions& g, const std::string& preset_name, bool coverage_only) {
  StudyConfig config;
  if (!g.config.empty()) config = load_study_config(g.config, g.desk);
  else if (!preset_name.empty()) config = preset(preset_name, g.desk);
  else throw Error(ErrorKind::config_error, "give --config <file> or --preset <name>");
  if (g.seed) config.seed = *g.seed;
  if (!g.out.empty()) config.output_dir = g.out;
  config.threads = g.threads;
  if (coverage_only && config.kind != StudyKind::coverage && config.kind != StudyKind::meng_comparison)
    throw Error(ErrorKind::config_error, "the coverage command runs coverage or meng_comparison studies only");
  config.validate();
  for (const auto& f : run_study(config)) std::cout << f << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fisher information estimation in latent variable models"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Master seed");
  app.add_option("--config", g.config, "Study configuration (JSON)");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--desk", g.desk, "Use the reduced desk-scale preset");

  std::string model_id = "lmm", data_path, estimator = "score", preset_name;
  std::vector<double> theta;
  std::size_t n = 100, n_obs = 12, draws = 100000;
  int iterations = 3000, burn_in = 1000;

  auto* sim = app.add_subcommand("simulate", "Simulate a dataset");
  sim->add_option("--model", model_id, "Model id")->required();
  sim->add_option("--theta", theta, "Parameter values (default: study values)")->delimiter(',');
  sim->add_option("--n", n, "Individuals");
  sim->add_option("--n-obs", n_obs, "Observations per individual (lmm)");

  auto* fit = app.add_subcommand("fit", "Estimate theta and the FIM by SAEM (EM for gaussian_mixture2)");
  fit->add_option("--model", model_id, "Model id")->required();
  fit->add_option("--data", data_path, "Dataset CSV")->required();
  fit->add_option("--iterations", iterations, "SAEM iterations");
  fit->add_option("--burn-in", burn_in, "Burn-in iterations");
  fit->add_option("--theta", theta, "Starting values")->delimiter(',');

  auto* fim = app.add_subcommand("fim", "Estimate the FIM at a given theta");
  fim->add_option("--model", model_id, "Model id")->required();
  fim->add_option("--data", data_path, "Dataset CSV");
  fim->add_option("--theta", theta, "Parameter values")->delimiter(',');
  fim->add_option("--estimator", estimator, "score | observed | conditional | reference")
      ->check(CLI::IsMember({"score", "observed", "conditional", "reference"}));
  fim->add_option("--draws", draws, "Monte Carlo draws (conditional without closed form, reference)");

  auto* study = app.add_subcommand("study", "Run a study from --config or a preset");
  study->add_option("--preset", preset_name, "Preset name")->check(CLI::IsMember(preset_names()));
  auto* coverage = app.add_subcommand("coverage", "Run a coverage study from --config or a preset");
  coverage->add_option("--preset", preset_name, "Preset name")->check(CLI::IsMember(preset_names()));

  for (auto* sub : {sim, fit, fim, study, coverage}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*sim) return run_simulate(g, model_id, theta, n, n_obs);
    if (*fit) {
      if (fit->count("--data") && data_path.empty()) throw Error(ErrorKind::config_error, "--data is empty");
      return run_fit(g, model_id, data_path, iterations, burn_in, theta);
    }
    if (*fim) {
      if (estimator != "reference" && data_path.empty())
        throw Error(ErrorKind::config_error, "--data is required for this estimator");
      return run_fim(g, model_id, data_path, theta, estimator, draws);
    }
    if (*study) return run_study_command(g, preset_name, false);
    if (*coverage) return run_study_command(g, preset_name, true);
  } catch (const Error& e) {
    std::cerr << "latfim: " << e.what() << "\n";
    return e.is_config_error() ? kExitConfig : kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "latfim: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
