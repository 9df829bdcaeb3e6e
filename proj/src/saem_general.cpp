#include "latfim/saem_general.hpp"

#include "latfim/errors.hpp"

#include <algorithm>
#include <cmath>

namespace latfim {

double WeightedSampleBuffer::total_weight() const {
  double w = 0.0;
  for (const auto& e : entries_) w += e.weight;
  return w;
}

WeightedLatents WeightedSampleBuffer::view() const {
  WeightedLatents v;
  v.configs.reserve(entries_.size());
  v.weights.reserve(entries_.size());
  for (const auto& e : entries_) {
    v.configs.push_back(&e.z);
    v.weights.push_back(e.weight);
  }
  return v;
}

void buffer_update(WeightedSampleBuffer& buffer, LatentConfiguration z, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorKind::config_error, "step size must lie in [0, 1]");
  for (auto& e : buffer.entries_) e.weight *= 1.0 - gamma;
  if (gamma > 0.0) buffer.entries_.push_back({std::move(z), gamma});
  double pruned = 0.0;
  // Weights decrease with age, so stale entries sit at the front.
  std::erase_if(buffer.entries_, [&](const WeightedSampleBuffer::Entry& e) {
    if (e.weight >= buffer.prune_epsilon_) return false;
    pruned += e.weight;
    return true;
  });
  buffer.last_pruned_ = pruned;
  buffer.pruned_total_ += pruned;
  if (buffer.entries_.size() > buffer.capacity_)
    throw Error(ErrorKind::capacity_exceeded, "weighted sample buffer holds " + std::to_string(buffer.entries_.size()) +
                                                  " entries, capacity " + std::to_string(buffer.capacity_));
}

double q_value(const WeightedSampleBuffer& buffer, const LatentModel& model, const Dataset& data, const Vec& theta) {
  return weighted_loglik(model, data, buffer.view(), theta);
}

MaximizeResult maximize_q(const WeightedSampleBuffer& buffer, const LatentModel& model, const Dataset& data,
                          const Vec& theta_init) {
  if (buffer.empty()) throw Error(ErrorKind::optim_failure, "empty sample buffer");
  MaximizeResult r = model.maximize_weighted(buffer.view(), data, theta_init);
  if (!r.converged || !r.theta.allFinite())
    throw Error(ErrorKind::optim_failure, "M-step gradient criterion not met (|grad Q| = " +
                                              std::to_string(r.gradient_norm) + ")");
  return r;
}

Vec delta_update(const Vec& delta, const Vec& score, double gamma) {
  if (delta.size() != score.size()) throw Error(ErrorKind::dimension_mismatch, "delta and score lengths differ");
  return (1.0 - gamma) * delta + gamma * score;
}

GeneralSaemResult run_general_saem(const LatentModel& model, const Dataset& data, const SaemConfig& config) {
  config.validate();
  validate_dataset(data);
  if (config.mode != SimulationMode::sample || config.louis || config.averaging)
    throw Error(ErrorKind::config_error, "the general algorithm supports plain sampling only");
  SaemConfig cfg = config;
  Vec theta = cfg.theta0 ? *cfg.theta0 : model.initial_estimate(data);
  model.validate(theta);
  cfg.theta0 = theta;
  LatentSampler sampler(model, data, theta, cfg);
  WeightedSampleBuffer buffer(cfg.prune_epsilon, cfg.capacity);
  const auto p = theta.size();
  std::vector<Vec> deltas(data.n(), Vec::Zero(p));

  GeneralSaemResult result;
  bool clamped = false;
  for (int k = 1; k <= cfg.iterations; ++k) {
    const double gamma = step_size(k, cfg.schedule);
    const LatentConfiguration& z = sampler.draw(data, theta, k);
    for (std::size_t i = 0; i < data.n(); ++i)
      deltas[i] = delta_update(deltas[i], model.complete_score(data.records[i], z[i], theta), gamma);
    buffer_update(buffer, z, gamma);
    result.max_buffer_size = std::max(result.max_buffer_size, buffer.size());
    const MaximizeResult m = maximize_q(buffer, model, data, theta);
    theta = m.theta;
    clamped = clamped || m.clamped;

    if (k % cfg.record_every == 0 || k == cfg.iterations) {
      IterationRecord rec;
      rec.iteration = k;
      rec.gamma = gamma;
      rec.theta = theta;
      rec.fim_diag = score_outer_fim(deltas).matrix().diagonal();
      rec.pruned_mass = buffer.pruned_mass();
      result.trajectory.push_back(std::move(rec));
    }
  }
  const FimMatrix f = score_outer_fim(deltas, model.param_names());
  result.fim = FimMatrix(f.matrix(), Provenance::sa_byproduct, data.n(), model.param_names());
  result.theta = model.make_params(theta);
  result.deltas = std::move(deltas);
  result.pruned_mass = buffer.pruned_mass();
  result.diagnostics.acceptance_rate = sampler.acceptance_rate();
  result.diagnostics.clamped = clamped;
  if (!result.trajectory.empty()) {
    const std::size_t start = result.trajectory.size() - std::max<std::size_t>(1, result.trajectory.size() / 10);
    Vec mean = Vec::Zero(p), m2 = Vec::Zero(p);
    double count = 0.0;
    for (std::size_t t = start; t < result.trajectory.size(); ++t) {
      count += 1.0;
      const Vec d = result.trajectory[t].theta - mean;
      mean += d / count;
      m2 += d.cwiseProduct(result.trajectory[t].theta - mean);
    }
    result.diagnostics.theta_tail_sd = count > 1.0 ? Vec((m2 / (count - 1.0)).cwiseSqrt()) : Vec(Vec::Zero(p));
  }
  return result;
}

}  // namespace latfim
