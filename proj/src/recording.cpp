#include <algorithm>
#include <map>

#include "firefly/network.hpp"

namespace firefly::net {

namespace {

using ad::Tape;
using ad::Var;

Var activate(Tape& tape, Activation act, Var z) {
  switch (act) {
    case Activation::Gaussian: return tape.exp(tape.mul(tape.mul(z, z), tape.constant(-0.5)));
    case Activation::Relu: return tape.relu(z);
    case Activation::Identity: return z;
  }
  return z;
}

Var neuron_activation(Tape& tape, Activation act, std::span<const Var> inputs, std::span<const Var> theta) {
  const std::size_t in = inputs.size();
  return activate(tape, act, tape.affine(inputs, theta.first(in), theta[in]));
}

// One summand of a layer: activation `a` scaled per output by `weights`.
struct Term {
  Var activation;
  std::vector<Var> weights;
};

std::vector<Var> sum_terms(Tape& tape, const std::vector<Term>& terms, std::size_t out_dim,
                           std::span<const Var> skip, std::size_t rows) {
  std::vector<Var> outputs;
  outputs.reserve(out_dim);
  std::vector<Var> acts;
  std::vector<Var> ws;
  acts.reserve(terms.size());
  ws.reserve(terms.size());
  for (std::size_t k = 0; k < out_dim; ++k) {
    acts.clear();
    ws.clear();
    for (const Term& t : terms) {
      acts.push_back(t.activation);
      ws.push_back(t.weights[k]);
    }
    Var bias = !skip.empty() ? skip[k]
               : terms.empty() ? tape.constant(std::vector<double>(rows, 0.0))
                               : tape.constant(0.0);
    outputs.push_back(tape.affine(acts, ws, bias));
  }
  return outputs;
}

struct GateIndex {
  // (layer, host) -> gate index for Split / UnlockCopy
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> host_gate;
  std::vector<std::vector<std::size_t>> new_by_layer;
  std::vector<std::vector<std::size_t>> layer_by_slot;
};

GateIndex index_gates(const AugmentedNetwork& aug) {
  GateIndex idx;
  const std::size_t L = aug.base.layers.size();
  idx.new_by_layer.resize(L);
  idx.layer_by_slot.resize(L);
  for (std::size_t c = 0; c < aug.candidates.size(); ++c) {
    const CandidateGate& g = aug.candidates[c];
    switch (g.kind) {
      case GateKind::Split:
      case GateKind::UnlockCopy:
        if (g.layer >= L || g.host >= aug.base.layers[g.layer].neurons.size())
          throw StructuralError("gate host out of range");
        if (!idx.host_gate.emplace(std::make_pair(g.layer, g.host), c).second)
          throw StructuralError("two gates share one host neuron");
        break;
      case GateKind::NewNeuron:
        if (g.layer >= L) throw StructuralError("gate layer out of range");
        idx.new_by_layer[g.layer].push_back(c);
        break;
      case GateKind::LayerNeuron:
        if (g.layer + 1 >= L) throw StructuralError("gate slot out of range");
        idx.layer_by_slot[g.layer].push_back(c);
        break;
    }
  }
  return idx;
}

std::vector<Var> record_impl(Tape& tape, const GrowableNetwork& net, const NetworkBinding& b,
                             const AugmentedNetwork* aug, const AugmentedBinding* ab, std::span<const Var> inputs) {
  if (inputs.size() != net.input_dim())
    throw StructuralError("input dimension " + std::to_string(inputs.size()) + " does not match network input " +
                          std::to_string(net.input_dim()));
  if (b.layers.size() != net.layers.size() || b.residual.size() != net.residual_blocks.size())
    throw StructuralError("binding does not match network structure");
  GateIndex gates;
  if (aug != nullptr) gates = index_gates(*aug);

  std::vector<Var> x(inputs.begin(), inputs.end());
  std::size_t rows = 1;
  for (const Var& v : inputs) rows = std::max(rows, v.size());
  std::size_t next_block = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    std::vector<Term> terms;
    terms.reserve(layer.neurons.size());
    for (std::size_t i = 0; i < layer.neurons.size(); ++i) {
      const NeuronGroups& g = b.layers[l][i];
      auto it = aug != nullptr ? gates.host_gate.find({l, i}) : gates.host_gate.end();
      if (it == gates.host_gate.end()) {
        std::vector<Var> theta = tape.group(g.theta);
        terms.push_back(Term{neuron_activation(tape, layer.activation, x, theta), tape.group(g.out)});
        continue;
      }
      const CandidateGate& gate = aug->candidates[it->second];
      const GateGroups& gg = ab->gates[it->second];
      std::vector<Var> theta = tape.group(g.theta);
      std::vector<Var> delta = tape.group(gg.delta);
      if (delta.size() != theta.size()) throw StructuralError("split direction shape mismatch");
      Var eps = tape.group(gg.epsilon)[0];
      std::vector<Var> plus;
      plus.reserve(theta.size());
      for (std::size_t j = 0; j < theta.size(); ++j) plus.push_back(tape.add(theta[j], tape.mul(eps, delta[j])));
      Var a_plus = neuron_activation(tape, layer.activation, x, plus);
      if (gate.kind == GateKind::UnlockCopy) {
        terms.push_back(Term{a_plus, tape.group(g.out)});
        continue;
      }
      std::vector<Var> minus;
      minus.reserve(theta.size());
      for (std::size_t j = 0; j < theta.size(); ++j) minus.push_back(tape.sub(theta[j], tape.mul(eps, delta[j])));
      Var a_minus = neuron_activation(tape, layer.activation, x, minus);
      Var half = tape.constant(0.5);
      Var a = tape.add(tape.mul(half, a_plus), tape.mul(half, a_minus));
      terms.push_back(Term{a, tape.group(g.out)});
    }
    if (aug != nullptr) {
      for (std::size_t c : gates.new_by_layer[l]) {
        const GateGroups& gg = ab->gates[c];
        std::vector<Var> delta = tape.group(gg.delta);
        if (delta.size() != layer.input_dim + 1 + layer.output_dim)
          throw StructuralError("new-neuron parameter shape mismatch");
        Var eps = tape.group(gg.epsilon)[0];
        Var a = neuron_activation(tape, layer.activation, x, std::span<const Var>(delta).first(layer.input_dim + 1));
        std::vector<Var> w;
        for (std::size_t k = 0; k < layer.output_dim; ++k)
          w.push_back(tape.mul(eps, delta[layer.input_dim + 1 + k]));
        terms.push_back(Term{a, std::move(w)});
      }
    }
    x = sum_terms(tape, terms, layer.output_dim, {}, rows);

    if (l + 1 == net.layers.size()) break;
    const Activation ract = net.residual_activation(l);
    const std::size_t d = layer.output_dim;
    while (next_block < net.residual_blocks.size() && net.residual_blocks[next_block].slot == l) {
      const ResidualBlock& block = net.residual_blocks[next_block];
      std::vector<Term> rterms;
      for (std::size_t i = 0; i < block.neurons.size(); ++i) {
        const NeuronGroups& g = b.residual[next_block][i];
        std::vector<Var> theta = tape.group(g.theta);
        rterms.push_back(Term{neuron_activation(tape, ract, x, theta), tape.group(g.out)});
      }
      x = sum_terms(tape, rterms, d, x, rows);
      ++next_block;
    }
    if (aug != nullptr && !gates.layer_by_slot[l].empty()) {
      std::vector<Term> rterms;
      for (std::size_t c : gates.layer_by_slot[l]) {
        const GateGroups& gg = ab->gates[c];
        std::vector<Var> delta = tape.group(gg.delta);
        if (delta.size() != 2 * d + 1) throw StructuralError("layer-neuron parameter shape mismatch");
        Var eps = tape.group(gg.epsilon)[0];
        Var a = neuron_activation(tape, ract, x, std::span<const Var>(delta).first(d + 1));
        std::vector<Var> w;
        for (std::size_t k = 0; k < d; ++k) w.push_back(tape.mul(eps, delta[d + 1 + k]));
        rterms.push_back(Term{a, std::move(w)});
      }
      x = sum_terms(tape, rterms, d, x, rows);
    }
  }
  return x;
}

NeuronGroups bind_neuron(ad::ParameterStore& store, const Neuron& n, const std::string& prefix, bool frozen) {
  return NeuronGroups{store.add_group(prefix + ".theta", n.theta, frozen),
                      store.add_group(prefix + ".out", n.out_weight, frozen)};
}

void unbind_neuron(const ad::ParameterStore& store, const NeuronGroups& g, Neuron& n) {
  auto t = store.group(g.theta);
  auto o = store.group(g.out);
  n.theta.assign(t.begin(), t.end());
  n.out_weight.assign(o.begin(), o.end());
}

}  // namespace

NetworkBinding bind_parameters(const GrowableNetwork& net, ad::ParameterStore& store, bool frozen) {
  NetworkBinding b;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto& groups = b.layers.emplace_back();
    for (std::size_t i = 0; i < net.layers[l].neurons.size(); ++i)
      groups.push_back(bind_neuron(store, net.layers[l].neurons[i],
                                   "layer" + std::to_string(l) + ".n" + std::to_string(i), frozen));
  }
  for (std::size_t r = 0; r < net.residual_blocks.size(); ++r) {
    auto& groups = b.residual.emplace_back();
    for (std::size_t i = 0; i < net.residual_blocks[r].neurons.size(); ++i)
      groups.push_back(bind_neuron(store, net.residual_blocks[r].neurons[i],
                                   "res" + std::to_string(r) + ".n" + std::to_string(i), frozen));
  }
  return b;
}

AugmentedBinding bind_parameters(const AugmentedNetwork& aug, ad::ParameterStore& store, bool freeze_base) {
  AugmentedBinding b;
  b.base = bind_parameters(aug.base, store, freeze_base);
  for (std::size_t c = 0; c < aug.candidates.size(); ++c) {
    const CandidateGate& g = aug.candidates[c];
    const std::string prefix = "gate" + std::to_string(c);
    const double eps[1] = {g.epsilon};
    b.gates.push_back(GateGroups{store.add_group(prefix + ".epsilon", eps), store.add_group(prefix + ".delta", g.delta)});
  }
  return b;
}

void unbind(const ad::ParameterStore& store, const NetworkBinding& b, GrowableNetwork& net) {
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    for (std::size_t i = 0; i < net.layers[l].neurons.size(); ++i)
      unbind_neuron(store, b.layers[l][i], net.layers[l].neurons[i]);
  for (std::size_t r = 0; r < net.residual_blocks.size(); ++r)
    for (std::size_t i = 0; i < net.residual_blocks[r].neurons.size(); ++i)
      unbind_neuron(store, b.residual[r][i], net.residual_blocks[r].neurons[i]);
}

void unbind(const ad::ParameterStore& store, const AugmentedBinding& b, AugmentedNetwork& aug) {
  unbind(store, b.base, aug.base);
  for (std::size_t c = 0; c < aug.candidates.size(); ++c) {
    aug.candidates[c].epsilon = store.group(b.gates[c].epsilon)[0];
    auto d = store.group(b.gates[c].delta);
    aug.candidates[c].delta.assign(d.begin(), d.end());
  }
}

std::vector<ad::Var> input_vars(ad::Tape& tape, const Batch& x) {
  std::vector<ad::Var> vars;
  vars.reserve(x.dim());
  for (const auto& col : x.columns) vars.push_back(tape.constant(col));
  return vars;
}

std::vector<ad::Var> record_network(ad::Tape& tape, const GrowableNetwork& net, const NetworkBinding& b,
                                    std::span<const ad::Var> inputs) {
  return record_impl(tape, net, b, nullptr, nullptr, inputs);
}

std::vector<ad::Var> record_augmented(ad::Tape& tape, const AugmentedNetwork& aug, const AugmentedBinding& b,
                                      std::span<const ad::Var> inputs) {
  if (b.gates.size() != aug.candidates.size()) throw StructuralError("binding does not match candidate list");
  return record_impl(tape, aug.base, b.base, &aug, &b, inputs);
}

ad::Var record_loss(ad::Tape& tape, std::span<const ad::Var> outputs, const Dataset& data) {
  if (data.kind == TaskKind::Classification) {
    if (outputs.size() != static_cast<std::size_t>(data.num_classes))
      throw StructuralError("classifier output count does not match class count");
    return tape.mean(tape.softmax_cross_entropy(outputs, data.labels));
  }
  if (outputs.size() != data.targets.dim()) throw StructuralError("regression output dimension mismatch");
  ad::Var total = tape.mean(tape.squared_error(outputs[0], tape.constant(data.targets.columns[0])));
  for (std::size_t k = 1; k < outputs.size(); ++k)
    total = tape.add(total, tape.mean(tape.squared_error(outputs[k], tape.constant(data.targets.columns[k]))));
  if (outputs.size() > 1) total = tape.mul(total, tape.constant(1.0 / static_cast<double>(outputs.size())));
  return total;
}

namespace {

Batch collect(const std::vector<ad::Var>& outs) {
  Batch y;
  for (const ad::Var& v : outs) {
    auto s = v.value();
    y.columns.emplace_back(s.begin(), s.end());
  }
  return y;
}

}  // namespace

Batch forward(const GrowableNetwork& net, const Batch& x) {
  ad::ParameterStore store;
  NetworkBinding b = bind_parameters(net, store, true);
  ad::Tape tape(store);
  auto in = input_vars(tape, x);
  return collect(record_network(tape, net, b, in));
}

Batch forward(const AugmentedNetwork& aug, const Batch& x) {
  ad::ParameterStore store;
  AugmentedBinding b = bind_parameters(aug, store, true);
  ad::Tape tape(store);
  auto in = input_vars(tape, x);
  return collect(record_augmented(tape, aug, b, in));
}

double loss(const GrowableNetwork& net, const Dataset& data) {
  ad::ParameterStore store;
  NetworkBinding b = bind_parameters(net, store, true);
  ad::Tape tape(store);
  auto in = input_vars(tape, data.inputs);
  auto out = record_network(tape, net, b, in);
  return record_loss(tape, out, data).scalar();
}

double loss(const AugmentedNetwork& aug, const Dataset& data) {
  ad::ParameterStore store;
  AugmentedBinding b = bind_parameters(aug, store, true);
  ad::Tape tape(store);
  auto in = input_vars(tape, data.inputs);
  auto out = record_augmented(tape, aug, b, in);
  return record_loss(tape, out, data).scalar();
}

double accuracy(const GrowableNetwork& net, const Dataset& data) {
  if (data.kind != TaskKind::Classification) throw StructuralError("accuracy needs a classification dataset");
  if (data.size() == 0) return 0.0;
  Batch y = forward(net, data.inputs);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < y.dim(); ++k)
      if (y.columns[k][r] > y.columns[best][r]) best = k;
    if (static_cast<int>(best) == data.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace firefly::net
