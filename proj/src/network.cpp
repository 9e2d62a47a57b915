#include <algorithm>
#include <cmath>
#include <random>

#include "firefly/network.hpp"

namespace firefly::net {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Gaussian: return "gaussian";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "?";
}

std::string to_string(HeadKind h) { return h == HeadKind::Regression ? "regression" : "classification"; }

std::string to_string(GateKind k) {
  switch (k) {
    case GateKind::Split: return "split";
    case GateKind::NewNeuron: return "new";
    case GateKind::LayerNeuron: return "layer";
    case GateKind::UnlockCopy: return "unlock";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "gaussian") return Activation::Gaussian;
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw StructuralError("unknown activation '" + s + "'");
}

HeadKind head_from_string(const std::string& s) {
  if (s == "regression") return HeadKind::Regression;
  if (s == "classification") return HeadKind::Classification;
  throw StructuralError("unknown head kind '" + s + "'");
}

namespace {

void check_neuron(const Neuron& n, std::size_t in, std::size_t out, const std::string& where) {
  if (n.theta.size() != in + 1 || n.out_weight.size() != out)
    throw StructuralError(where + ": neuron shape does not match layer dimensions");
  for (double v : n.theta)
    if (!std::isfinite(v)) throw StructuralError(where + ": non-finite theta");
  for (double v : n.out_weight)
    if (!std::isfinite(v)) throw StructuralError(where + ": non-finite out_weight");
}

}  // namespace

void GrowableNetwork::validate() const {
  if (layers.empty()) throw StructuralError("network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Layer& L = layers[l];
    if (L.input_dim == 0 || L.output_dim == 0) throw StructuralError("layer with zero dimension");
    if (l > 0 && layers[l - 1].output_dim != L.input_dim)
      throw StructuralError("layer " + std::to_string(l) + " input dimension does not match previous output");
    for (const Neuron& n : L.neurons) check_neuron(n, L.input_dim, L.output_dim, "layer " + std::to_string(l));
  }
  std::size_t prev_slot = 0;
  for (const ResidualBlock& b : residual_blocks) {
    if (b.slot + 1 >= layers.size()) throw StructuralError("residual block slot out of range");
    if (b.slot < prev_slot) throw StructuralError("residual blocks not ordered by slot");
    prev_slot = b.slot;
    const std::size_t d = layers[b.slot].output_dim;
    for (const Neuron& n : b.neurons) check_neuron(n, d, d, "residual block");
  }
}

GrowableNetwork make_rbf_network(std::span<const Neuron> neurons) {
  GrowableNetwork net;
  net.head = HeadKind::Regression;
  Layer layer;
  layer.activation = Activation::Gaussian;
  layer.input_dim = 1;
  layer.output_dim = 1;
  layer.neurons.assign(neurons.begin(), neurons.end());
  net.layers.push_back(std::move(layer));
  net.validate();
  return net;
}

GrowableNetwork make_random_network(const MlpShape& shape, double init_scale, std::uint64_t seed) {
  if (shape.layer_output_dims.size() != shape.layer_widths.size() || shape.layer_widths.empty())
    throw StructuralError("make_random_network: widths and output dims must align");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_scale);
  GrowableNetwork net;
  net.head = shape.head;
  std::size_t in = shape.input_dim;
  for (std::size_t l = 0; l < shape.layer_widths.size(); ++l) {
    Layer layer;
    layer.activation = shape.activation;
    layer.input_dim = in;
    layer.output_dim = shape.layer_output_dims[l];
    for (std::size_t i = 0; i < shape.layer_widths[l]; ++i) {
      Neuron n;
      n.theta.resize(in + 1);
      n.out_weight.resize(layer.output_dim);
      for (double& v : n.theta) v = normal(rng);
      for (double& v : n.out_weight) v = normal(rng);
      layer.neurons.push_back(std::move(n));
    }
    in = layer.output_dim;
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  return net;
}

std::size_t count_params(const GrowableNetwork& net) {
  std::size_t total = 0;
  auto add = [&](const std::vector<Neuron>& ns) {
    for (const Neuron& n : ns) total += n.theta.size() + n.out_weight.size();
  };
  for (const Layer& l : net.layers) add(l.neurons);
  for (const ResidualBlock& b : net.residual_blocks) add(b.neurons);
  return total;
}

std::size_t count_neurons(const GrowableNetwork& net, std::size_t layer) {
  if (layer >= net.layers.size()) throw StructuralError("count_neurons: layer out of range");
  return net.layers[layer].neurons.size();
}

std::size_t count_neurons(const GrowableNetwork& net) {
  std::size_t total = 0;
  for (const Layer& l : net.layers) total += l.neurons.size();
  for (const ResidualBlock& b : net.residual_blocks) total += b.neurons.size();
  return total;
}

}  // namespace firefly::net
