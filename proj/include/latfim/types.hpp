#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace latfim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// How a parameter component is constrained. Drives domain validation and the
// unconstrained reparameterization used by the generic optimizer.
enum class ParamKind {
  location,    // any real
  positive,    // > 0 (rates, volumes, clearances)
  variance,    // > 0
  proportion,  // in (0, 1); the implied last proportion is checked by the model
};

struct ParamVector {
  Vec values;
  std::vector<std::string> names;
  std::vector<ParamKind> kinds;

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  // Index of a named component; throws DimensionMismatch if absent.
  std::size_t index_of(const std::string& name) const;
  double operator[](const std::string& name) const { return values(static_cast<Eigen::Index>(index_of(name))); }
  // Finite-difference scale: max(1, |theta_l|).
  double scale(std::size_t l) const;
};

struct IndividualRecord {
  std::vector<double> y;
  std::vector<double> times;    // empty when the model has no time design
  std::optional<double> dose;

  std::size_t n_obs() const { return y.size(); }
};

struct Dataset {
  std::vector<IndividualRecord> records;

  std::size_t n() const { return records.size(); }
};

// Per-individual design used when simulating.
struct IndividualDesign {
  std::size_t n_obs = 1;
  std::vector<double> times;
  std::optional<double> dose;
};

std::vector<IndividualDesign> uniform_design(std::size_t n, const IndividualDesign& one);

// Latent variables of one individual. Discrete latents (mixture labels) are
// stored as the class index in a length-1 vector.
using Latent = Vec;
// One latent value per individual.
using LatentConfiguration = std::vector<Latent>;

// Validates record invariants (J >= 1, increasing times, positive dose).
void validate_record(const IndividualRecord& record);
void validate_dataset(const Dataset& data);

}  // namespace latfim
