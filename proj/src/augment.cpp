#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "firefly/network.hpp"

namespace firefly::net {

namespace {

constexpr double kStepTolerance = 1e-12;
constexpr double kNormTolerance = 1e-9;

std::vector<double> random_direction(std::mt19937_64& rng, std::size_t n, double init_scale) {
  std::normal_distribution<double> normal(0.0, init_scale);
  std::vector<double> d(n);
  for (double& v : d) v = normal(rng);
  project_unit_ball(d);
  return d;
}

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

void project_unit_ball(std::span<double> delta) {
  const double norm = l2(delta);
  if (norm > 1.0) {
    for (double& v : delta) v /= norm;
  }
}

std::vector<double> AugmentedNetwork::gate_values() const {
  std::vector<double> eps;
  eps.reserve(candidates.size());
  for (const CandidateGate& g : candidates) eps.push_back(g.epsilon);
  return eps;
}

void AugmentedNetwork::set_gate_values(std::span<const double> eps) {
  if (eps.size() != candidates.size()) throw StructuralError("gate value count mismatch");
  for (std::size_t i = 0; i < eps.size(); ++i) candidates[i].epsilon = eps[i];
}

void AugmentedNetwork::project() {
  for (CandidateGate& g : candidates) {
    g.epsilon = std::clamp(g.epsilon, -step_size, step_size);
    project_unit_ball(g.delta);
  }
}

void add_width_candidates(AugmentedNetwork& aug, std::size_t layer, std::size_t m_prime, double init_scale,
                          std::uint64_t rng_seed, bool include_splits) {
  if (layer >= aug.base.layers.size()) throw StructuralError("add_width_candidates: invalid layer index");
  const Layer& L = aug.base.layers[layer];
  std::mt19937_64 rng(rng_seed);
  if (include_splits) {
    for (std::size_t i = 0; i < L.neurons.size(); ++i) {
      CandidateGate g;
      g.kind = GateKind::Split;
      g.layer = layer;
      g.host = i;
      g.epsilon = aug.step_size;
      g.delta = random_direction(rng, L.input_dim + 1, init_scale);
      aug.candidates.push_back(std::move(g));
    }
  }
  for (std::size_t i = 0; i < m_prime; ++i) {
    CandidateGate g;
    g.kind = GateKind::NewNeuron;
    g.layer = layer;
    g.epsilon = aug.step_size;
    g.delta = random_direction(rng, L.input_dim + 1 + L.output_dim, init_scale);
    aug.candidates.push_back(std::move(g));
  }
}

void add_depth_candidates(AugmentedNetwork& aug, std::size_t m_prime_per_slot, double init_scale,
                          std::uint64_t rng_seed) {
  const std::size_t slots = aug.base.residual_slot_count();
  if (slots == 0) throw StructuralError("add_depth_candidates: network has no residual slot");
  std::mt19937_64 rng(rng_seed);
  for (std::size_t s = 0; s < slots; ++s) {
    const std::size_t d = aug.base.layers[s].output_dim;
    for (std::size_t i = 0; i < m_prime_per_slot; ++i) {
      CandidateGate g;
      g.kind = GateKind::LayerNeuron;
      g.layer = s;
      g.epsilon = aug.step_size;
      g.delta = random_direction(rng, 2 * d + 1, init_scale);
      aug.candidates.push_back(std::move(g));
    }
  }
}

void add_unlock_candidates(AugmentedNetwork& aug, std::size_t layer, std::span<const std::size_t> hosts,
                           double init_scale, std::uint64_t rng_seed) {
  if (layer >= aug.base.layers.size()) throw StructuralError("add_unlock_candidates: invalid layer index");
  const Layer& L = aug.base.layers[layer];
  std::mt19937_64 rng(rng_seed);
  for (std::size_t host : hosts) {
    if (host >= L.neurons.size()) throw StructuralError("add_unlock_candidates: host out of range");
    CandidateGate g;
    g.kind = GateKind::UnlockCopy;
    g.layer = layer;
    g.host = host;
    g.epsilon = aug.step_size;
    g.delta = random_direction(rng, L.input_dim + 1, init_scale);
    aug.candidates.push_back(std::move(g));
  }
}

void add_unlock_candidates(AugmentedNetwork& aug, std::size_t layer, double init_scale, std::uint64_t rng_seed) {
  if (layer >= aug.base.layers.size()) throw StructuralError("add_unlock_candidates: invalid layer index");
  std::vector<std::size_t> all(aug.base.layers[layer].neurons.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  add_unlock_candidates(aug, layer, all, init_scale, rng_seed);
}

AugmentedNetwork attach_width_candidates(const GrowableNetwork& net, std::size_t layer, std::size_t m_prime,
                                         double step_size, double init_scale, std::uint64_t rng_seed) {
  if (!(step_size > 0.0)) throw ContractError("step size must be positive");
  AugmentedNetwork aug{net, {}, step_size};
  add_width_candidates(aug, layer, m_prime, init_scale, rng_seed);
  return aug;
}

AugmentedNetwork attach_depth_candidates(const GrowableNetwork& net, std::size_t m_prime_per_slot, double step_size,
                                         double init_scale, std::uint64_t rng_seed) {
  if (!(step_size > 0.0)) throw ContractError("step size must be positive");
  AugmentedNetwork aug{net, {}, step_size};
  add_depth_candidates(aug, m_prime_per_slot, init_scale, rng_seed);
  return aug;
}

GrowableNetwork materialize(const AugmentedNetwork& aug, std::span<const double> eps_hat,
                            const GrowthBudget& budget) {
  std::vector<std::vector<double>> deltas;
  deltas.reserve(aug.candidates.size());
  for (const CandidateGate& g : aug.candidates) deltas.push_back(g.delta);
  return materialize(aug, eps_hat, deltas, budget);
}

GrowableNetwork materialize(const AugmentedNetwork& aug, std::span<const double> eps_hat,
                            const std::vector<std::vector<double>>& delta_tilde, const GrowthBudget& budget) {
  const auto& cands = aug.candidates;
  if (eps_hat.size() != cands.size() || delta_tilde.size() != cands.size())
    throw StructuralError("materialize: selection length does not match candidate count");

  std::size_t width_used = 0;
  std::size_t depth_used = 0;
  std::map<std::size_t, std::size_t> active_slots;
  for (std::size_t c = 0; c < cands.size(); ++c) {
    if (!std::isfinite(eps_hat[c]) || std::abs(eps_hat[c]) > aug.step_size * (1.0 + kStepTolerance))
      throw ContractError("materialize: gate " + std::to_string(c) + " exceeds the step size");
    if (delta_tilde[c].size() != cands[c].delta.size())
      throw StructuralError("materialize: direction shape mismatch for gate " + std::to_string(c));
    if (l2(delta_tilde[c]) > 1.0 + kNormTolerance)
      throw ContractError("materialize: direction " + std::to_string(c) + " outside the unit ball");
    if (eps_hat[c] == 0.0) continue;
    if (cands[c].kind == GateKind::LayerNeuron) {
      ++depth_used;
      ++active_slots[cands[c].layer];
    } else {
      ++width_used;
    }
  }
  if (budget.width && width_used > *budget.width) throw ContractError("materialize: width budget exceeded");
  if (budget.depth_neurons && depth_used > *budget.depth_neurons)
    throw ContractError("materialize: depth neuron budget exceeded");
  if (budget.depth_layers && active_slots.size() > *budget.depth_layers)
    throw ContractError("materialize: depth layer budget exceeded");

  const GrowableNetwork& base = aug.base;
  GrowableNetwork out;
  out.head = base.head;

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> host_gate;
  for (std::size_t c = 0; c < cands.size(); ++c)
    if (cands[c].kind == GateKind::Split || cands[c].kind == GateKind::UnlockCopy)
      host_gate[{cands[c].layer, cands[c].host}] = c;

  for (std::size_t l = 0; l < base.layers.size(); ++l) {
    const Layer& src = base.layers[l];
    Layer dst;
    dst.activation = src.activation;
    dst.input_dim = src.input_dim;
    dst.output_dim = src.output_dim;
    for (std::size_t i = 0; i < src.neurons.size(); ++i) {
      const Neuron& host = src.neurons[i];
      auto it = host_gate.find({l, i});
      if (it == host_gate.end() || eps_hat[it->second] == 0.0) {
        dst.neurons.push_back(host);
        continue;
      }
      const double e = eps_hat[it->second];
      const std::vector<double>& d = delta_tilde[it->second];
      Neuron plus = host;
      for (std::size_t j = 0; j < d.size(); ++j) plus.theta[j] = host.theta[j] + e * d[j];
      if (cands[it->second].kind == GateKind::UnlockCopy) {
        dst.neurons.push_back(std::move(plus));
        continue;
      }
      Neuron minus = host;
      for (std::size_t j = 0; j < d.size(); ++j) minus.theta[j] = host.theta[j] - e * d[j];
      for (double& w : plus.out_weight) w *= 0.5;
      for (double& w : minus.out_weight) w *= 0.5;
      dst.neurons.push_back(std::move(plus));
      dst.neurons.push_back(std::move(minus));
    }
    for (std::size_t c = 0; c < cands.size(); ++c) {
      if (cands[c].kind != GateKind::NewNeuron || cands[c].layer != l || eps_hat[c] == 0.0) continue;
      const std::vector<double>& d = delta_tilde[c];
      Neuron n;
      n.theta.assign(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(src.input_dim + 1));
      for (std::size_t k = 0; k < src.output_dim; ++k) n.out_weight.push_back(eps_hat[c] * d[src.input_dim + 1 + k]);
      dst.neurons.push_back(std::move(n));
    }
    out.layers.push_back(std::move(dst));
  }

  // Existing blocks keep their order; a new block goes after the existing
  // blocks of its slot.
  for (std::size_t s = 0; s + 1 < base.layers.size(); ++s) {
    for (const ResidualBlock& b : base.residual_blocks)
      if (b.slot == s) out.residual_blocks.push_back(b);
    if (active_slots.find(s) == active_slots.end()) continue;
    const std::size_t d = base.layers[s].output_dim;
    ResidualBlock block;
    block.slot = s;
    for (std::size_t c = 0; c < cands.size(); ++c) {
      if (cands[c].kind != GateKind::LayerNeuron || cands[c].layer != s || eps_hat[c] == 0.0) continue;
      const std::vector<double>& dv = delta_tilde[c];
      Neuron n;
      n.theta.assign(dv.begin(), dv.begin() + static_cast<std::ptrdiff_t>(d + 1));
      for (std::size_t k = 0; k < d; ++k) n.out_weight.push_back(eps_hat[c] * dv[d + 1 + k]);
      block.neurons.push_back(std::move(n));
    }
    out.residual_blocks.push_back(std::move(block));
  }
  out.validate();
  return out;
}

}  // namespace firefly::net
