#pragma once

// Growable networks and their gated, augmented forms.
//
// A network is a composition of layers g_1, ..., g_d. Each layer is a sum of
// neurons: neuron i maps x in R^in to out_weight_i * act(theta_i . [x; 1]),
// so a layer's width can change without touching its input or output
// dimension. Between consecutive layers sit residual slots where blocks of
// the form x + sum_i out_weight_i * act(theta_i . [x; 1]) can be inserted.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "firefly/autodiff.hpp"
#include "firefly/data.hpp"

namespace firefly::net {

enum class Activation { Gaussian, Relu, Identity };
enum class HeadKind { Regression, Classification };

std::string to_string(Activation a);
std::string to_string(HeadKind h);
Activation activation_from_string(const std::string& s);
HeadKind head_from_string(const std::string& s);

struct Neuron {
  std::vector<double> theta;       // input weights followed by the bias
  std::vector<double> out_weight;  // one entry per layer output
};

struct Layer {
  Activation activation = Activation::Gaussian;
  std::size_t input_dim = 1;
  std::size_t output_dim = 1;
  std::vector<Neuron> neurons;
};

struct ResidualBlock {
  std::size_t slot = 0;  // applied after layers[slot]
  std::vector<Neuron> neurons;
};

class GrowableNetwork {
 public:
  HeadKind head = HeadKind::Regression;
  std::vector<Layer> layers;
  // Kept ordered by slot; blocks sharing a slot apply in list order.
  std::vector<ResidualBlock> residual_blocks;

  std::size_t input_dim() const { return layers.front().input_dim; }
  std::size_t output_dim() const { return layers.back().output_dim; }
  std::size_t residual_slot_count() const { return layers.empty() ? 0 : layers.size() - 1; }
  // Residual blocks use the activation of the layer that feeds the slot.
  Activation residual_activation(std::size_t slot) const { return layers.at(slot).activation; }

  // Throws StructuralError when dimensions do not chain.
  void validate() const;
};

// Single-layer RBF regression net f(x) = sum_i w_i exp(-(a_i x + b_i)^2 / 2).
GrowableNetwork make_rbf_network(std::span<const Neuron> neurons);

// Random network with the given layer widths; neuron parameters drawn from
// N(0, init_scale).
struct MlpShape {
  std::size_t input_dim = 2;
  std::vector<std::size_t> layer_output_dims;  // last entry is the output dimension
  std::vector<std::size_t> layer_widths;
  Activation activation = Activation::Relu;
  HeadKind head = HeadKind::Classification;
};
GrowableNetwork make_random_network(const MlpShape& shape, double init_scale, std::uint64_t seed);

std::size_t count_params(const GrowableNetwork& net);
std::size_t count_neurons(const GrowableNetwork& net, std::size_t layer);
std::size_t count_neurons(const GrowableNetwork& net);  // all layers and residual blocks

// ---------------------------------------------------------------------------
// Candidates and augmented networks

enum class GateKind {
  Split,        // host -> (act(theta + e d) + act(theta - e d)) / 2
  NewNeuron,    // adds e * act(x, d)
  LayerNeuron,  // residual neuron inside h_slot
  UnlockCopy,   // host -> act(theta + e d); used by continual learning
};

std::string to_string(GateKind k);

struct CandidateGate {
  GateKind kind = GateKind::Split;
  std::size_t layer = 0;  // layer for Split/NewNeuron/UnlockCopy, slot for LayerNeuron
  std::size_t host = 0;   // host neuron for Split/UnlockCopy
  double epsilon = 0.0;
  // Split/UnlockCopy: same shape as the host theta.
  // NewNeuron/LayerNeuron: [theta part ; out_weight part], one vector.
  std::vector<double> delta;
};

struct AugmentedNetwork {
  GrowableNetwork base;
  std::vector<CandidateGate> candidates;
  double step_size = 0.01;

  std::vector<double> gate_values() const;
  void set_gate_values(std::span<const double> eps);
  // Clamp every |epsilon| to step_size and rescale every delta into the unit ball.
  void project();
};

// Norm-projects `delta` into the unit ball.
void project_unit_ball(std::span<double> delta);

// Appends one Split gate per neuron in `layer` and m_prime NewNeuron gates.
// Directions are drawn from N(0, init_scale) and projected; gates start at
// +step_size.
void add_width_candidates(AugmentedNetwork& aug, std::size_t layer, std::size_t m_prime, double init_scale,
                          std::uint64_t rng_seed, bool include_splits = true);
void add_depth_candidates(AugmentedNetwork& aug, std::size_t m_prime_per_slot, double init_scale,
                          std::uint64_t rng_seed);
// One UnlockCopy gate per neuron in `layer`, or per listed host.
void add_unlock_candidates(AugmentedNetwork& aug, std::size_t layer, double init_scale, std::uint64_t rng_seed);
void add_unlock_candidates(AugmentedNetwork& aug, std::size_t layer, std::span<const std::size_t> hosts,
                           double init_scale, std::uint64_t rng_seed);

AugmentedNetwork attach_width_candidates(const GrowableNetwork& net, std::size_t layer, std::size_t m_prime,
                                         double step_size, double init_scale, std::uint64_t rng_seed);
AugmentedNetwork attach_depth_candidates(const GrowableNetwork& net, std::size_t m_prime_per_slot,
                                         double step_size, double init_scale, std::uint64_t rng_seed);

struct GrowthBudget {
  std::optional<std::size_t> width;         // Split + NewNeuron + UnlockCopy gates
  std::optional<std::size_t> depth_neurons;
  std::optional<std::size_t> depth_layers;
};

// Converts the gated network at (eps_hat, delta_tilde) into a plain network.
// Throws ContractError when eps_hat violates |eps| <= step_size or the budget.
GrowableNetwork materialize(const AugmentedNetwork& aug, std::span<const double> eps_hat,
                            const std::vector<std::vector<double>>& delta_tilde, const GrowthBudget& budget = {});
GrowableNetwork materialize(const AugmentedNetwork& aug, std::span<const double> eps_hat,
                            const GrowthBudget& budget = {});

// ---------------------------------------------------------------------------
// Parameter binding and tape recording

struct NeuronGroups {
  ad::GroupId theta;
  ad::GroupId out;
};

struct NetworkBinding {
  std::vector<std::vector<NeuronGroups>> layers;
  std::vector<std::vector<NeuronGroups>> residual;
};

struct GateGroups {
  ad::GroupId epsilon;
  ad::GroupId delta;
};

struct AugmentedBinding {
  NetworkBinding base;
  std::vector<GateGroups> gates;
};

NetworkBinding bind_parameters(const GrowableNetwork& net, ad::ParameterStore& store, bool frozen = false);
AugmentedBinding bind_parameters(const AugmentedNetwork& aug, ad::ParameterStore& store, bool freeze_base);

// Copies trained values back from the store.
void unbind(const ad::ParameterStore& store, const NetworkBinding& b, GrowableNetwork& net);
void unbind(const ad::ParameterStore& store, const AugmentedBinding& b, AugmentedNetwork& aug);

std::vector<ad::Var> input_vars(ad::Tape& tape, const Batch& x);

// Output columns of the network for the batch encoded by `inputs`.
std::vector<ad::Var> record_network(ad::Tape& tape, const GrowableNetwork& net, const NetworkBinding& b,
                                    std::span<const ad::Var> inputs);
std::vector<ad::Var> record_augmented(ad::Tape& tape, const AugmentedNetwork& aug, const AugmentedBinding& b,
                                      std::span<const ad::Var> inputs);

// Mean squared error (regression) or mean softmax cross-entropy (classification).
ad::Var record_loss(ad::Tape& tape, std::span<const ad::Var> outputs, const Dataset& data);

// ---------------------------------------------------------------------------
// Plain evaluation

Batch forward(const GrowableNetwork& net, const Batch& x);
Batch forward(const AugmentedNetwork& aug, const Batch& x);
double loss(const GrowableNetwork& net, const Dataset& data);
double loss(const AugmentedNetwork& aug, const Dataset& data);
// Fraction of argmax predictions matching labels.
double accuracy(const GrowableNetwork& net, const Dataset& data);

}  // namespace firefly::net
