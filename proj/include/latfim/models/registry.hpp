#pragma once

#include "latfim/model.hpp"

#include <memory>
#include <string>
#include <vector>

namespace latfim {

// Model ids: lmm, poisson_mixture, gaussian_mixture2, pk_nlme, pk_nlme_fixed_v.
std::unique_ptr<LatentModel> make_model(const std::string& id, std::size_t mixture_components = 3);
std::vector<std::string> model_ids();

}  // namespace latfim
