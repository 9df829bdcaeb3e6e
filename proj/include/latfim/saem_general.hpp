#pragma once

#include "latfim/fim.hpp"
#include "latfim/model.hpp"
#include "latfim/saem.hpp"

#include <deque>
#include <vector>

namespace latfim {

// Exact unrolling of Q_k = (1 - gamma_k) Q_{k-1} + gamma_k sum_i log f(y_i, Z_i^k; .)
// with Q_0 = 0: entry l carries weight gamma_l prod_{j>l} (1 - gamma_j).
class WeightedSampleBuffer {
 public:
  struct Entry {
    LatentConfiguration z;
    double weight = 0.0;
  };

  explicit WeightedSampleBuffer(double prune_epsilon = 1e-6, std::size_t capacity = 500)
      : prune_epsilon_(prune_epsilon), capacity_(capacity) {}

  const std::deque<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  double total_weight() const;
  double prune_epsilon() const { return prune_epsilon_; }
  std::size_t capacity() const { return capacity_; }
  double last_pruned_mass() const { return last_pruned_; }
  double pruned_mass() const { return pruned_total_; }

  WeightedLatents view() const;

  friend void buffer_update(WeightedSampleBuffer& buffer, LatentConfiguration z, double gamma);

 private:
  std::deque<Entry> entries_;
  double prune_epsilon_;
  std::size_t capacity_;
  double last_pruned_ = 0.0;
  double pruned_total_ = 0.0;
};

// Scales existing weights by (1 - gamma), appends z with weight gamma (skipped
// when gamma == 0), drops entries below prune_epsilon. Throws CapacityExceeded.
void buffer_update(WeightedSampleBuffer& buffer, LatentConfiguration z, double gamma);

double q_value(const WeightedSampleBuffer& buffer, const LatentModel& model, const Dataset& data, const Vec& theta);

// theta maximizing Q over the buffer, warm-started at theta_init. Throws
// OptimFailure if the gradient criterion is not met.
MaximizeResult maximize_q(const WeightedSampleBuffer& buffer, const LatentModel& model, const Dataset& data,
                          const Vec& theta_init);

// (1 - gamma) delta + gamma score
Vec delta_update(const Vec& delta, const Vec& score, double gamma);

struct GeneralSaemResult {
  ParamVector theta;
  FimMatrix fim;
  std::vector<Vec> deltas;
  std::vector<IterationRecord> trajectory;
  SaemDiagnostics diagnostics;
  double pruned_mass = 0.0;
  std::size_t max_buffer_size = 0;
};

GeneralSaemResult run_general_saem(const LatentModel& model, const Dataset& data, const SaemConfig& config);

}  // namespace latfim
