#include "latfim/types.hpp"

#include "latfim/errors.hpp"

#include <algorithm>
#include <cmath>

namespace latfim {

std::size_t ParamVector::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorKind::dimension_mismatch, "no parameter named '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

double ParamVector::scale(std::size_t l) const {
  return std::max(1.0, std::abs(values(static_cast<Eigen::Index>(l))));
}

std::vector<IndividualDesign> uniform_design(std::size_t n, const IndividualDesign& one) {
  return std::vector<IndividualDesign>(n, one);
}

void validate_record(const IndividualRecord& record) {
  if (record.y.empty()) throw Error(ErrorKind::domain_violation, "record has no observations", "y");
  if (!record.times.empty()) {
    if (record.times.size() != record.y.size())
      throw Error(ErrorKind::dimension_mismatch, "times and y differ in length");
    for (std::size_t j = 1; j < record.times.size(); ++j)
      if (!(record.times[j] > record.times[j - 1]))
        throw Error(ErrorKind::domain_violation, "observation times must be strictly increasing", "time");
  }
  if (record.dose && !(*record.dose > 0.0)) throw Error(ErrorKind::domain_violation, "dose must be positive", "dose");
  for (double v : record.y)
    if (!std::isfinite(v)) throw Error(ErrorKind::domain_violation, "non-finite observation", "y");
}

void validate_dataset(const Dataset& data) {
  if (data.records.empty()) throw Error(ErrorKind::domain_violation, "dataset is empty", "n");
  for (const auto& r : data.records) validate_record(r);
}

}  // namespace latfim
