#include "firefly/growth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace firefly::growth {

using net::AugmentedNetwork;
using net::GateKind;
using net::GrowableNetwork;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::size_t WidthBudget::resolve(std::size_t current_neurons) const {
  if (!fraction) return count;
  const auto n = static_cast<std::size_t>(std::floor(*fraction * static_cast<double>(current_neurons)));
  return std::max<std::size_t>(n, 1);
}

void GrowthConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ContractError("growth.step_size must be positive");
  if (width_budget.fraction && !(*width_budget.fraction > 0.0))
    throw ContractError("growth.width_budget fraction must be positive");
  if (quadrature_points < 1) throw ContractError("growth.quadrature_points must be at least 1");
  if (!(step_one_lr > 0.0)) throw ContractError("growth.step_one_lr must be positive");
  if (!(init_scale > 0.0)) throw ContractError("growth.init_scale must be positive");
  if (!(penalty_weight >= 0.0)) throw ContractError("growth.penalty_weight must be non-negative");
}

std::string to_string(GrowMode::Kind k) {
  switch (k) {
    case GrowMode::Kind::Width: return "width";
    case GrowMode::Kind::Depth: return "depth";
    case GrowMode::Kind::Both: return "both";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Step One

StepOneResult step_one(AugmentedNetwork& aug, const Dataset& data, const GrowthConfig& cfg) {
  if (aug.candidates.empty()) throw ContractError("step_one: no candidates attached");
  aug.step_size = cfg.step_size;
  aug.project();

  ad::ParameterStore store;
  net::AugmentedBinding binding = net::bind_parameters(aug, store, /*freeze_base=*/true);
  ad::Tape tape;
  ad::Gradient grad;

  for (std::size_t it = 0; it < cfg.step_one_iters; ++it) {
    try {
      tape.reset(store);
      auto in = net::input_vars(tape, data.inputs);
      auto out = net::record_augmented(tape, aug, binding, in);
      ad::Var loss = net::record_loss(tape, out, data);
      if (cfg.penalty_weight > 0.0) {
        ad::Var penalty = tape.constant(0.0);
        for (const net::GateGroups& g : binding.gates)
          for (ad::Var d : tape.group(g.delta)) penalty = penalty + d * d;
        loss = loss + cfg.penalty_weight * penalty;
      }
      tape.backward(store, grad);
      ad::sgd_step(store, grad, cfg.step_one_lr);
    } catch (const NumericError& e) {
      throw NumericError("step_one iteration " + std::to_string(it) + ": " + e.what());
    }
    for (const net::GateGroups& g : binding.gates) {
      double& eps = store.group(g.epsilon)[0];
      eps = std::clamp(eps, -cfg.step_size, cfg.step_size);
      net::project_unit_ball(store.group(g.delta));
    }
  }
  net::unbind(store, binding, aug);

  StepOneResult r;
  for (const net::CandidateGate& g : aug.candidates) {
    r.tilde_epsilon.push_back(g.epsilon);
    r.tilde_delta.push_back(g.delta);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Step Two: integrated-gradient scores

ScoreVector integrated_gradient_scores(const GateGradient& gradient, std::span<const double> tilde_epsilon,
                                       std::size_t n) {
  if (n < 1) throw ContractError("integrated_gradient_scores: n must be at least 1");
  ScoreVector sv;
  sv.tilde_epsilon.assign(tilde_epsilon.begin(), tilde_epsilon.end());
  sv.scores.assign(tilde_epsilon.size(), 0.0);
  std::vector<double> gates(tilde_epsilon.begin(), tilde_epsilon.end());
  for (std::size_t i = 0; i < gates.size(); ++i) {
    const double t = tilde_epsilon[i];
    if (t == 0.0) {
      gates[i] = 0.0;
      sv.scores[i] = gradient(gates).at(i);
    } else {
      double sum = 0.0;
      for (std::size_t z = 1; z <= n; ++z) {
        gates[i] = static_cast<double>(2 * z - 1) / static_cast<double>(2 * n) * t;
        sum += gradient(gates).at(i);
      }
      sv.scores[i] = sum / static_cast<double>(n);
    }
    gates[i] = t;
    if (!std::isfinite(sv.scores[i])) throw NumericError("non-finite score for candidate " + std::to_string(i));
  }
  return sv;
}

ScoreVector integrated_gradient_scores(const AugmentedNetwork& aug, const Dataset& data, std::size_t n) {
  ad::ParameterStore store;
  net::AugmentedBinding binding = net::bind_parameters(aug, store, /*freeze_base=*/true);
  ad::Tape tape;
  ad::Gradient grad;
  GateGradient gradient = [&](std::span<const double> gates) {
    for (std::size_t i = 0; i < gates.size(); ++i) store.group(binding.gates[i].epsilon)[0] = gates[i];
    tape.reset(store);
    auto in = net::input_vars(tape, data.inputs);
    auto out = net::record_augmented(tape, aug, binding, in);
    net::record_loss(tape, out, data);
    tape.backward(store, grad);
    std::vector<double> g(gates.size());
    for (std::size_t i = 0; i < gates.size(); ++i) g[i] = grad.group(store, binding.gates[i].epsilon)[0];
    return g;
  };
  return integrated_gradient_scores(gradient, aug.gate_values(), n);
}

// ---------------------------------------------------------------------------
// Selection

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::vector<double> select_width(std::span<const double> scores, std::size_t budget, double step_size) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] != 0.0) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(scores[a]) > std::abs(scores[b]); });
  std::vector<double> eps(scores.size(), 0.0);
  for (std::size_t k = 0; k < std::min(budget, order.size()); ++k)
    eps[order[k]] = -step_size * sign(scores[order[k]]);
  return eps;
}

std::vector<double> select_depth(std::span<const DepthScore> scores, std::size_t neuron_budget,
                                 std::size_t layer_budget, double step_size) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = std::abs(scores[a].score);
    const double sb = std::abs(scores[b].score);
    if (sa != sb) return sa > sb;
    if (scores[a].slot != scores[b].slot) return scores[a].slot < scores[b].slot;
    return scores[a].index < scores[b].index;
  });
  std::vector<double> eps(scores.size(), 0.0);
  std::set<std::size_t> active;
  std::size_t used = 0;
  for (std::size_t k : order) {
    const DepthScore& s = scores[k];
    if (s.score == 0.0) continue;
    const bool opens = active.find(s.slot) == active.end();
    if (opens && active.size() >= layer_budget) continue;
    if (used >= neuron_budget) continue;
    eps[k] = -step_size * sign(s.score);
    active.insert(s.slot);
    ++used;
  }
  return eps;
}

// ---------------------------------------------------------------------------
// grow_step

GrowResult grow_step(const GrowableNetwork& net, const Dataset& data, const GrowthConfig& cfg, const GrowMode& mode) {
  cfg.validate();
  const bool width = mode.kind != GrowMode::Kind::Depth;
  const bool depth = mode.kind != GrowMode::Kind::Width;

  AugmentedNetwork aug{net, {}, cfg.step_size};
  std::size_t width_neurons = 0;
  if (width) {
    for (std::size_t k = 0; k < mode.layers.size(); ++k) {
      const std::size_t layer = mode.layers[k];
      net::add_width_candidates(aug, layer, cfg.m_prime, cfg.init_scale, derive_seed(cfg.rng_seed, layer));
      width_neurons += net::count_neurons(net, layer);
    }
  }
  if (depth && net.residual_slot_count() > 0)
    net::add_depth_candidates(aug, cfg.m_prime, cfg.init_scale, derive_seed(cfg.rng_seed, 1000003));

  GrowResult result{net, {}};
  GrowthReport& rep = result.report;
  rep.mode = to_string(mode.kind);
  rep.loss_before = net::loss(net, data);
  rep.neurons_before = net::count_neurons(net);
  rep.params_before = net::count_params(net);
  if (aug.candidates.empty()) {
    rep.loss_after = rep.loss_before;
    rep.neurons_after = rep.neurons_before;
    rep.params_after = rep.params_before;
    return result;
  }

  StepOneResult tilde = step_one(aug, data, cfg);
  ScoreVector sv = integrated_gradient_scores(aug, data, cfg.quadrature_points);

  std::vector<double> eps_hat(aug.candidates.size(), 0.0);
  std::vector<std::size_t> width_ids;
  std::vector<std::size_t> depth_ids;
  for (std::size_t c = 0; c < aug.candidates.size(); ++c)
    (aug.candidates[c].kind == GateKind::LayerNeuron ? depth_ids : width_ids).push_back(c);

  net::GrowthBudget budget;
  if (width) {
    const std::size_t eta = cfg.width_budget.resolve(width_neurons);
    budget.width = eta;
    std::vector<double> s;
    for (std::size_t c : width_ids) s.push_back(sv.scores[c]);
    std::vector<double> e = select_width(s, eta, cfg.step_size);
    for (std::size_t k = 0; k < width_ids.size(); ++k) eps_hat[width_ids[k]] = e[k];
  }
  if (depth) {
    budget.depth_neurons = cfg.depth_neuron_budget;
    budget.depth_layers = cfg.depth_layer_budget;
    std::vector<DepthScore> ds;
    std::vector<std::size_t> per_slot(net.layers.size(), 0);
    for (std::size_t c : depth_ids) {
      const std::size_t slot = aug.candidates[c].layer;
      ds.push_back(DepthScore{slot, per_slot[slot]++, sv.scores[c]});
    }
    std::vector<double> e = select_depth(ds, cfg.depth_neuron_budget, cfg.depth_layer_budget, cfg.step_size);
    for (std::size_t k = 0; k < depth_ids.size(); ++k) eps_hat[depth_ids[k]] = e[k];
  }

  result.net = net::materialize(aug, eps_hat, tilde.tilde_delta, budget);
  rep.loss_after = net::loss(result.net, data);
  rep.neurons_after = net::count_neurons(result.net);
  rep.params_after = net::count_params(result.net);
  for (std::size_t c = 0; c < aug.candidates.size(); ++c) {
    const net::CandidateGate& g = aug.candidates[c];
    rep.candidates.push_back(CandidateRecord{c, g.kind, g.layer, tilde.tilde_epsilon[c], sv.scores[c], eps_hat[c],
                                             eps_hat[c] != 0.0});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Parametric training and the outer loop

double train_network(GrowableNetwork& net, const Dataset& data, std::size_t iters, double learning_rate,
                     const FreezeMask* freeze) {
  ad::ParameterStore store;
  net::NetworkBinding binding = net::bind_parameters(net, store);
  if (freeze != nullptr) {
    for (std::size_t l = 0; l < freeze->size() && l < binding.layers.size(); ++l) {
      for (std::size_t i = 0; i < (*freeze)[l].size() && i < binding.layers[l].size(); ++i) {
        if ((*freeze)[l][i].theta) store.set_frozen(binding.layers[l][i].theta, true);
        if ((*freeze)[l][i].out) store.set_frozen(binding.layers[l][i].out, true);
      }
    }
  }
  ad::Tape tape;
  ad::Gradient grad;
  for (std::size_t it = 0; it < iters; ++it) {
    try {
      tape.reset(store);
      auto in = net::input_vars(tape, data.inputs);
      auto out = net::record_network(tape, net, binding, in);
      net::record_loss(tape, out, data);
      tape.backward(store, grad);
      ad::sgd_step(store, grad, learning_rate);
    } catch (const NumericError& e) {
      throw NumericError("training iteration " + std::to_string(it) + ": " + e.what());
    }
  }
  net::unbind(store, binding, net);
  return net::loss(net, data);
}

FireflyResult firefly_train(GrowableNetwork initial, const Dataset& data, const GrowthConfig& cfg,
                            const Schedule& schedule, const GrowMode& mode, const PhaseCallback& on_phase) {
  cfg.validate();
  FireflyResult res{std::move(initial), {}};
  auto boundary = [&](std::size_t phase, double loss, std::optional<GrowthReport> growth) {
    PhaseRecord rec{phase, loss, net::count_neurons(res.net), net::count_params(res.net), std::move(growth)};
    if (on_phase) on_phase(rec);
    res.history.push_back(std::move(rec));
  };

  double loss = train_network(res.net, data, schedule.train_iters_between_grows, schedule.learning_rate);
  boundary(0, loss, std::nullopt);
  for (std::size_t phase = 1; phase <= schedule.total_grow_phases; ++phase) {
    GrowthConfig phase_cfg = cfg;
    phase_cfg.rng_seed = derive_seed(cfg.rng_seed, phase);
    GrowResult grown = grow_step(res.net, data, phase_cfg, mode);
    res.net = std::move(grown.net);
    loss = train_network(res.net, data, schedule.train_iters_between_grows, schedule.learning_rate);
    boundary(phase, loss, std::move(grown.report));
  }
  return res;
}

}  // namespace firefly::growth
