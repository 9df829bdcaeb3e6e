#include "latfim/models/registry.hpp"

#include "latfim/errors.hpp"
#include "latfim/models/gaussian_mixture.hpp"
#include "latfim/models/lmm.hpp"
#include "latfim/models/pk.hpp"
#include "latfim/models/poisson_mixture.hpp"

namespace latfim {

std::unique_ptr<LatentModel> make_model(const std::string& id, std::size_t mixture_components) {
  if (id == "lmm") return std::make_unique<LinearMixedModel>();
  if (id == "poisson_mixture") return std::make_unique<PoissonMixtureModel>(mixture_components);
  if (id == "gaussian_mixture2") return std::make_unique<GaussianMixture2Model>();
  if (id == "pk_nlme") return std::make_unique<PkNlmeModel>();
  if (id == "pk_nlme_fixed_v") return std::make_unique<PkFixedVModel>();
  throw Error(ErrorKind::config_error, "unknown model id '" + id + "'");
}

std::vector<std::string> model_ids() {
  return {"lmm", "poisson_mixture", "gaussian_mixture2", "pk_nlme", "pk_nlme_fixed_v"};
}

}  // namespace latfim
