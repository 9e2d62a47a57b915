#pragma once

// Firefly descent: grow a network by optimizing a gated over-grown network
// (Step One), scoring every gate by its integrated gradient (Step Two) and
// keeping the top-ranked gates under the size budgets.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "firefly/data.hpp"
#include "firefly/network.hpp"

namespace firefly::growth {

// Absolute neuron count, or a fraction of the current neuron count rounded
// down with a floor of one.
struct WidthBudget {
  std::size_t count = 1;
  std::optional<double> fraction;

  std::size_t resolve(std::size_t current_neurons) const;
};

struct GrowthConfig {
  double step_size = 0.01;
  WidthBudget width_budget;
  std::size_t depth_neuron_budget = 0;
  std::size_t depth_layer_budget = 0;
  std::size_t m_prime = 5;
  std::size_t quadrature_points = 3;
  std::size_t step_one_iters = 100;
  double step_one_lr = 0.1;
  double init_scale = 0.1;
  double penalty_weight = 0.0;
  std::uint64_t rng_seed = 0;

  // Throws ContractError naming the offending field.
  void validate() const;
};

struct ScoreVector {
  std::vector<double> scores;
  std::vector<double> tilde_epsilon;
};

struct StepOneResult {
  std::vector<double> tilde_epsilon;
  std::vector<std::vector<double>> tilde_delta;
};

// Jointly descends the loss over every gate value and direction with the
// base network frozen, clamping |eps_i| <= step_size and projecting each
// delta_i into the unit ball after every step. Updates `aug` in place.
StepOneResult step_one(net::AugmentedNetwork& aug, const Dataset& data, const GrowthConfig& cfg);

// Gradient of a loss with respect to the gate values.
using GateGradient = std::function<std::vector<double>(std::span<const double> gates)>;

// s_i = (1/n) sum_z dL/d eps_i at eps_i = (2z-1)/(2n) * tilde_eps_i, every
// other gate held at its tilde value. A zero tilde value scores the gradient
// at zero.
ScoreVector integrated_gradient_scores(const GateGradient& gradient, std::span<const double> tilde_epsilon,
                                       std::size_t n);
// Scores the gates of `aug` at their current values and directions.
ScoreVector integrated_gradient_scores(const net::AugmentedNetwork& aug, const Dataset& data, std::size_t n);

// Top `budget` gates by |s_i| (ties to the lower index, zero scores never
// chosen) get -step_size * sign(s_i); the rest stay 0.
std::vector<double> select_width(std::span<const double> scores, std::size_t budget, double step_size);

struct DepthScore {
  std::size_t slot = 0;
  std::size_t index = 0;
  double score = 0.0;
};

// Greedy descending-|s| pass that skips a candidate when it would open a slot
// beyond `layer_budget` or exceed `neuron_budget`. Output aligned with `scores`.
std::vector<double> select_depth(std::span<const DepthScore> scores, std::size_t neuron_budget,
                                 std::size_t layer_budget, double step_size);

struct GrowMode {
  enum class Kind { Width, Depth, Both };
  Kind kind = Kind::Width;
  std::vector<std::size_t> layers{0};  // width-grown layers

  static GrowMode width(std::vector<std::size_t> layers = {0}) { return {Kind::Width, std::move(layers)}; }
  static GrowMode depth() { return {Kind::Depth, {}}; }
  static GrowMode both(std::vector<std::size_t> layers = {0}) { return {Kind::Both, std::move(layers)}; }
};

std::string to_string(GrowMode::Kind k);

struct CandidateRecord {
  std::size_t id = 0;
  net::GateKind kind = net::GateKind::Split;
  std::size_t layer = 0;
  double tilde_epsilon = 0.0;
  double score = 0.0;
  double epsilon_hat = 0.0;
  bool selected = false;
};

struct GrowthReport {
  std::string mode;
  std::vector<CandidateRecord> candidates;
  double loss_before = 0.0;
  double loss_after = 0.0;
  std::size_t neurons_before = 0;
  std::size_t neurons_after = 0;
  std::size_t params_before = 0;
  std::size_t params_after = 0;
};

struct GrowResult {
  net::GrowableNetwork net;
  GrowthReport report;
};

GrowResult grow_step(const net::GrowableNetwork& net, const Dataset& data, const GrowthConfig& cfg,
                     const GrowMode& mode);

// Per-neuron freeze flags for the layers of a network (residual blocks stay
// trainable). Missing entries mean trainable.
struct NeuronFreeze {
  bool theta = false;
  bool out = false;
};
using FreezeMask = std::vector<std::vector<NeuronFreeze>>;

// Plain gradient descent on every unfrozen parameter. Returns the loss after
// the last step.
double train_network(net::GrowableNetwork& net, const Dataset& data, std::size_t iters, double learning_rate,
                     const FreezeMask* freeze = nullptr);

struct Schedule {
  std::size_t train_iters_between_grows = 10000;
  std::size_t total_grow_phases = 9;
  double learning_rate = 0.01;
};

struct PhaseRecord {
  std::size_t phase = 0;
  double loss = 0.0;
  std::size_t neurons = 0;
  std::size_t params = 0;
  std::optional<GrowthReport> growth;  // absent for phase 0
};

struct FireflyResult {
  net::GrowableNetwork net;
  std::vector<PhaseRecord> history;
};

using PhaseCallback = std::function<void(const PhaseRecord&)>;

// Alternates parametric training and grow_step; history holds one record per
// growth-phase boundary (total_grow_phases + 1 in all).
FireflyResult firefly_train(net::GrowableNetwork initial, const Dataset& data, const GrowthConfig& cfg,
                            const Schedule& schedule, const GrowMode& mode, const PhaseCallback& on_phase = {});

// Deterministic per-phase seed derivation.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace firefly::growth
