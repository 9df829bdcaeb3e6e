#pragma once

#include "latfim/saem.hpp"
#include "latfim/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace latfim {

enum class StudyKind { bias_table, density, saem_replication, coverage, meng_comparison };

const char* to_string(StudyKind kind);

// Long-chain reference for the SAEM replication study.
struct OracleConfig {
  std::size_t draws = 100000;
  int thin = 5;
  int burn_in = 2000;
  // SAEM iterations of the run that fixes the reference theta; 0 means four
  // times the study's iteration count.
  int reference_iterations = 0;
};

struct StudyConfig {
  StudyKind kind = StudyKind::bias_table;
  std::string name;
  std::string model;
  std::size_t mixture_components = 3;
  Vec theta;
  std::size_t n_obs = 12;  // observations per individual, LMM only
  std::vector<std::size_t> n_values;
  std::size_t replicates = 500;
  double alpha = 0.05;
  std::size_t mc_draws = 1000000;       // reference FIM for mixture bias tables
  std::vector<std::string> components;  // "a:b" labels; empty selects every upper-triangle entry
  SaemConfig saem;
  OracleConfig oracle;
  double em_tolerance = 1e-8;
  int em_max_iterations = 2000;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string output_dir = "results";

  void validate() const;
};

// Strict JSON parsing: unknown keys and wrong types raise ConfigError. A
// "preset" key loads that preset (desk variant when `desk` is set) and the
// remaining keys override it.
StudyConfig parse_study_config(const std::string& json_text, bool desk = false);
StudyConfig load_study_config(const std::string& path, bool desk = false);
std::string study_config_json(const StudyConfig& config);

std::vector<std::string> preset_names();
StudyConfig preset(const std::string& name, bool desk);

// True parameter values used throughout the studies.
Vec default_theta(const std::string& model_id);
IndividualDesign default_design(const std::string& model_id, std::size_t n_obs = 12);

}  // namespace latfim
