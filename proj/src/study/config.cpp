#include "latfim/study/config.hpp"

#include "latfim/errors.hpp"
#include "latfim/models/pk.hpp"
#include "latfim/models/registry.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace latfim {

using nlohmann::json;

const char* to_string(StudyKind kind) {
  switch (kind) {
    case StudyKind::bias_table: return "bias_table";
    case StudyKind::density: return "density";
    case StudyKind::saem_replication: return "saem_replication";
    case StudyKind::coverage: return "coverage";
    case StudyKind::meng_comparison: return "meng_comparison";
  }
  return "unknown";
}

namespace {

StudyKind kind_from_string(const std::string& s) {
  for (StudyKind k : {StudyKind::bias_table, StudyKind::density, StudyKind::saem_replication, StudyKind::coverage,
                      StudyKind::meng_comparison})
    if (s == to_string(k)) return k;
  throw Error(ErrorKind::config_error, "unknown study kind '" + s + "'");
}

[[noreturn]] void config_fail(const std::string& what) { throw Error(ErrorKind::config_error, what); }

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) config_fail(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) config_fail("unknown key '" + key + "' in " + where);
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    config_fail("key '" + key + "' has the wrong type");
  }
}

std::size_t get_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) config_fail("key '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

int get_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) config_fail("key '" + key + "' must be an integer");
  return v.get<int>();
}

double get_double(const json& v, const std::string& key) {
  if (!v.is_number()) config_fail("key '" + key + "' must be a number");
  return v.get<double>();
}

void apply_saem(SaemConfig& s, const json& obj) {
  reject_unknown(obj, {"iterations", "burn_in", "burn_value", "exponent", "mh_transitions", "adapt_proposals",
                       "prune_epsilon", "capacity", "record_every"},
                 "saem");
  for (const auto& [key, v] : obj.items()) {
    if (key == "iterations") s.iterations = get_int(v, key);
    else if (key == "burn_in") s.schedule.burn_in = get_int(v, key);
    else if (key == "burn_value") s.schedule.burn_value = get_double(v, key);
    else if (key == "exponent") s.schedule.exponent = get_double(v, key);
    else if (key == "mh_transitions") s.mh_transitions = get_int(v, key);
    else if (key == "adapt_proposals") s.adapt_proposals = get_as<bool>(v, key);
    else if (key == "prune_epsilon") s.prune_epsilon = get_double(v, key);
    else if (key == "capacity") s.capacity = get_count(v, key);
    else if (key == "record_every") s.record_every = get_int(v, key);
  }
}

void apply_oracle(OracleConfig& o, const json& obj) {
  reject_unknown(obj, {"draws", "thin", "burn_in", "reference_iterations"}, "oracle");
  for (const auto& [key, v] : obj.items()) {
    if (key == "draws") o.draws = get_count(v, key);
    else if (key == "thin") o.thin = get_int(v, key);
    else if (key == "burn_in") o.burn_in = get_int(v, key);
    else if (key == "reference_iterations") o.reference_iterations = get_int(v, key);
  }
}

void apply_overrides(StudyConfig& c, const json& obj) {
  for (const auto& [key, v] : obj.items()) {
    if (key == "preset") continue;
    if (key == "study") c.kind = kind_from_string(get_as<std::string>(v, key));
    else if (key == "name") c.name = get_as<std::string>(v, key);
    else if (key == "model") c.model = get_as<std::string>(v, key);
    else if (key == "mixture_components") c.mixture_components = get_count(v, key);
    else if (key == "theta") {
      const auto values = get_as<std::vector<double>>(v, key);
      c.theta = Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
    } else if (key == "n_obs") c.n_obs = get_count(v, key);
    else if (key == "n") {
      if (v.is_array()) {
        c.n_values.clear();
        for (const auto& x : v) c.n_values.push_back(get_count(x, key));
      } else {
        c.n_values = {get_count(v, key)};
      }
    } else if (key == "replicates") c.replicates = get_count(v, key);
    else if (key == "alpha") c.alpha = get_double(v, key);
    else if (key == "mc_draws") c.mc_draws = get_count(v, key);
    else if (key == "components") c.components = get_as<std::vector<std::string>>(v, key);
    else if (key == "saem") apply_saem(c.saem, v);
    else if (key == "oracle") apply_oracle(c.oracle, v);
    else if (key == "em") {
      reject_unknown(v, {"tolerance", "max_iterations"}, "em");
      if (v.contains("tolerance")) c.em_tolerance = get_double(v["tolerance"], "tolerance");
      if (v.contains("max_iterations")) c.em_max_iterations = get_int(v["max_iterations"], "max_iterations");
    } else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "threads") c.threads = get_int(v, key);
    else if (key == "output_dir") c.output_dir = get_as<std::string>(v, key);
  }
}

const std::set<std::string> kTopLevelKeys{"preset", "study", "name", "model", "mixture_components", "theta",
                                          "n_obs", "n", "replicates", "alpha", "mc_draws", "components",
                                          "saem", "oracle", "em", "seed", "threads", "output_dir"};

}  // namespace

void StudyConfig::validate() const {
  const auto ids = model_ids();
  if (std::find(ids.begin(), ids.end(), model) == ids.end()) config_fail("unknown model '" + model + "'");
  if (name.empty()) config_fail("study needs a name");
  if (name.find_first_of("/\\") != std::string::npos) config_fail("study name must not contain path separators");
  if (replicates < 2) config_fail("replicates must be at least 2");
  if (n_values.empty()) config_fail("at least one sample size n is required");
  for (std::size_t n : n_values)
    if (n < 1) config_fail("sample sizes must be at least 1");
  // alpha = 1 is accepted as the degenerate zero-width level.
  if (!(alpha > 0.0 && alpha <= 1.0)) config_fail("alpha must lie in (0, 1]");
  if (threads < 1) config_fail("threads must be at least 1");
  if (n_obs < 1) config_fail("n_obs must be at least 1");
  const auto m = make_model(model, mixture_components);
  if (static_cast<std::size_t>(theta.size()) != m->dim())
    config_fail(model + " expects " + std::to_string(m->dim()) + " parameters in theta");
  try {
    m->validate(theta);
  } catch (const Error& e) {
    config_fail(std::string("theta: ") + e.what());
  }
  saem.validate();
  switch (kind) {
    case StudyKind::bias_table:
    case StudyKind::density:
      if (!m->has_marginal()) config_fail(to_string(kind) + std::string(" needs a model with analytic marginals"));
      if (model != "lmm" && mc_draws < 2) config_fail("mc_draws must be at least 2");
      break;
    case StudyKind::saem_replication:
      if (!dynamic_cast<const ExpoFamilyModel*>(m.get()))
        config_fail("saem_replication needs an exponential-family model");
      if (oracle.draws < 2 || oracle.thin < 1 || oracle.burn_in < 0) config_fail("invalid oracle settings");
      break;
    case StudyKind::coverage: break;
    case StudyKind::meng_comparison:
      if (model != "gaussian_mixture2") config_fail("meng_comparison is defined for gaussian_mixture2");
      break;
  }
}

StudyConfig parse_study_config(const std::string& json_text, bool desk) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    config_fail(std::string("malformed JSON: ") + e.what());
  }
  reject_unknown(doc, kTopLevelKeys, "study config");
  StudyConfig c;
  if (doc.contains("preset")) {
    c = preset(get_as<std::string>(doc["preset"], "preset"), desk);
  } else {
    if (!doc.contains("study") || !doc.contains("model")) config_fail("config needs 'study' and 'model' (or 'preset')");
    c.model = get_as<std::string>(doc["model"], "model");
    if (!doc.contains("theta")) c.theta = default_theta(c.model);
  }
  apply_overrides(c, doc);
  if (c.theta.size() == 0) c.theta = default_theta(c.model);
  if (c.name.empty()) c.name = to_string(c.kind);
  c.validate();
  return c;
}

StudyConfig load_study_config(const std::string& path, bool desk) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io_error, "cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_study_config(text.str(), desk);
}

std::string study_config_json(const StudyConfig& c) {
  json j;
  j["study"] = to_string(c.kind);
  j["name"] = c.name;
  j["model"] = c.model;
  j["mixture_components"] = c.mixture_components;
  j["theta"] = std::vector<double>(c.theta.data(), c.theta.data() + c.theta.size());
  j["n_obs"] = c.n_obs;
  j["n"] = c.n_values;
  j["replicates"] = c.replicates;
  j["alpha"] = c.alpha;
  j["mc_draws"] = c.mc_draws;
  j["components"] = c.components;
  j["saem"] = {{"iterations", c.saem.iterations},
               {"burn_in", c.saem.schedule.burn_in},
               {"burn_value", c.saem.schedule.burn_value},
               {"exponent", c.saem.schedule.exponent},
               {"mh_transitions", c.saem.mh_transitions},
               {"adapt_proposals", c.saem.adapt_proposals},
               {"prune_epsilon", c.saem.prune_epsilon},
               {"capacity", c.saem.capacity},
               {"record_every", c.saem.record_every}};
  j["oracle"] = {{"draws", c.oracle.draws},
                 {"thin", c.oracle.thin},
                 {"burn_in", c.oracle.burn_in},
                 {"reference_iterations", c.oracle.reference_iterations}};
  j["em"] = {{"tolerance", c.em_tolerance}, {"max_iterations", c.em_max_iterations}};
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["output_dir"] = c.output_dir;
  return j.dump(2);
}

Vec default_theta(const std::string& model_id) {
  if (model_id == "lmm") return (Vec(3) << 3.0, 2.0, 5.0).finished();
  if (model_id == "poisson_mixture") return (Vec(5) << 2.0, 5.0, 9.0, 0.3, 0.5).finished();
  // pi is the weight of the mu2 = 0 component.
  if (model_id == "gaussian_mixture2") return (Vec(3) << 3.0, 0.0, 2.0 / 3.0).finished();
  if (model_id == "pk_nlme") return (Vec(7) << 1.6, 31.0, 1.8, 0.4, 0.4, 0.4, 0.75).finished();
  if (model_id == "pk_nlme_fixed_v") return (Vec(6) << 1.6, 31.0, 1.8, 0.4, 0.4, 0.75).finished();
  config_fail("unknown model '" + model_id + "'");
}

IndividualDesign default_design(const std::string& model_id, std::size_t n_obs) {
  if (model_id == "pk_nlme" || model_id == "pk_nlme_fixed_v") return pk_reference_design();
  IndividualDesign d;
  d.n_obs = model_id == "lmm" ? n_obs : 1;
  return d;
}

std::vector<std::string> preset_names() {
  return {"lmm_bias",          "poisson_bias",        "lmm_density",           "poisson_density",
          "pk_replication",    "pk_fixed_v_coverage", "gaussian_mixture_meng", "gaussian_mixture_coverage"};
}

StudyConfig preset(const std::string& name, bool desk) {
  StudyConfig c;
  c.name = name;
  if (name == "lmm_bias" || name == "poisson_bias") {
    c.kind = StudyKind::bias_table;
    c.model = name == "lmm_bias" ? "lmm" : "poisson_mixture";
    c.n_values = {20, 100, 500};
    c.replicates = desk ? 200 : 500;
    if (c.model == "poisson_mixture")
      c.components = {"lambda2:lambda2", "lambda3:lambda3", "alpha1:alpha1",
                      "alpha2:alpha2",   "lambda2:lambda3", "lambda3:alpha2"};
    else
      c.components = {"beta:beta", "eta2:eta2", "sigma2:sigma2", "beta:eta2", "beta:sigma2", "eta2:sigma2"};
  } else if (name == "lmm_density" || name == "poisson_density") {
    c.kind = StudyKind::density;
    c.model = name == "lmm_density" ? "lmm" : "poisson_mixture";
    c.n_values = {500};
    c.replicates = 500;
    if (c.model == "poisson_mixture")
      c.components = {"lambda2:lambda2", "alpha1:alpha1", "lambda2:lambda3"};
    else
      c.components = {"beta:beta", "beta:eta2", "beta:sigma2"};
  } else if (name == "pk_replication") {
    c.kind = StudyKind::saem_replication;
    c.model = "pk_nlme";
    c.n_values = {desk ? std::size_t{50} : std::size_t{100}};
    c.replicates = desk ? 50 : 500;
    c.saem.iterations = desk ? 1500 : 3000;
    c.saem.schedule.burn_in = desk ? 500 : 1000;
    c.saem.record_every = 10;
    // Five transitions leave the omega2 diagonals noise-inflated at K = 1500.
    c.saem.mh_transitions = 50;
    c.oracle.draws = 100000;
    c.oracle.reference_iterations = 10 * c.saem.iterations;
  } else if (name == "pk_fixed_v_coverage") {
    c.kind = StudyKind::coverage;
    c.model = "pk_nlme_fixed_v";
    c.n_values = {desk ? std::size_t{50} : std::size_t{100}};
    c.replicates = desk ? 200 : 500;
    c.saem.iterations = desk ? 600 : 3000;
    c.saem.schedule.burn_in = desk ? 200 : 1000;
    c.saem.capacity = 1000;
    c.saem.record_every = c.saem.iterations;
  } else if (name == "gaussian_mixture_meng" || name == "gaussian_mixture_coverage") {
    c.kind = name == "gaussian_mixture_meng" ? StudyKind::meng_comparison : StudyKind::coverage;
    c.model = "gaussian_mixture2";
    c.n_values = {750};
    c.replicates = desk ? 1000 : 10000;
  } else {
    config_fail("unknown preset '" + name + "'");
  }
  c.theta = default_theta(c.model);
  return c;
}

}  // namespace latfim
