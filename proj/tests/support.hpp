#pragma once

// Test-side oracles: a plain-double network evaluator written independently
// of the tape, finite differences on top of it, and random configurations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "firefly/autodiff.hpp"
#include "firefly/data.hpp"
#include "firefly/network.hpp"

namespace testsupport {

using firefly::Batch;
using firefly::Dataset;
using firefly::TaskKind;
using firefly::net::Activation;
using firefly::net::GrowableNetwork;
using firefly::net::HeadKind;
using firefly::net::Neuron;

inline double act(Activation a, double z) {
  switch (a) {
    case Activation::Gaussian: return std::exp(-0.5 * z * z);
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Identity: return z;
  }
  return z;
}

inline double preact(const Neuron& n, const std::vector<double>& x) {
  double z = n.theta.back();
  for (std::size_t j = 0; j < x.size(); ++j) z += n.theta[j] * x[j];
  return z;
}

// Smallest |pre-activation| of any rectifier unit on the sample; large values
// mean finite differences never straddle a kink.
struct Eval {
  std::vector<double> out;
  double relu_margin = INFINITY;
};

inline Eval eval_row(const GrowableNetwork& net, std::vector<double> x) {
  Eval e;
  std::size_t block = 0;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    std::vector<double> y(layer.output_dim, 0.0);
    for (const Neuron& n : layer.neurons) {
      const double z = preact(n, x);
      if (layer.activation == Activation::Relu) e.relu_margin = std::min(e.relu_margin, std::abs(z));
      const double a = act(layer.activation, z);
      for (std::size_t k = 0; k < y.size(); ++k) y[k] += n.out_weight[k] * a;
    }
    x = y;
    if (l + 1 == net.layers.size()) break;
    for (; block < net.residual_blocks.size() && net.residual_blocks[block].slot == l; ++block) {
      std::vector<double> h = x;
      for (const Neuron& n : net.residual_blocks[block].neurons) {
        const double z = preact(n, x);
        if (layer.activation == Activation::Relu) e.relu_margin = std::min(e.relu_margin, std::abs(z));
        const double a = act(layer.activation, z);
        for (std::size_t k = 0; k < h.size(); ++k) h[k] += n.out_weight[k] * a;
      }
      x = h;
    }
  }
  e.out = x;
  return e;
}

inline std::vector<double> row(const Batch& b, std::size_t r) {
  std::vector<double> x(b.dim());
  for (std::size_t k = 0; k < b.dim(); ++k) x[k] = b.columns[k][r];
  return x;
}

inline Batch ref_forward(const GrowableNetwork& net, const Batch& x) {
  Batch y;
  y.columns.assign(net.output_dim(), std::vector<double>(x.rows()));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Eval e = eval_row(net, row(x, r));
    for (std::size_t k = 0; k < e.out.size(); ++k) y.columns[k][r] = e.out[k];
  }
  return y;
}

inline double ref_relu_margin(const GrowableNetwork& net, const Batch& x) {
  double m = INFINITY;
  for (std::size_t r = 0; r < x.rows(); ++r) m = std::min(m, eval_row(net, row(x, r)).relu_margin);
  return m;
}

// Mean squared error averaged over output columns, or mean softmax
// cross-entropy, matching the library's loss definitions.
inline double ref_loss(const GrowableNetwork& net, const Dataset& d) {
  const std::size_t n = d.size();
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> y = eval_row(net, row(d.inputs, r)).out;
    if (d.kind == TaskKind::Classification) {
      const double mx = *std::max_element(y.begin(), y.end());
      double s = 0.0;
      for (double v : y) s += std::exp(v - mx);
      total += mx + std::log(s) - y[static_cast<std::size_t>(d.labels[r])];
    } else {
      double se = 0.0;
      for (std::size_t k = 0; k < y.size(); ++k) {
        const double diff = y[k] - d.targets.columns[k][r];
        se += diff * diff;
      }
      total += se / static_cast<double>(y.size());
    }
  }
  return total / static_cast<double>(n);
}

// Reverse-mode gradient of the library loss, flattened in binding order.
inline std::vector<double> ad_gradient(const GrowableNetwork& net, const Dataset& d) {
  firefly::ad::ParameterStore store;
  auto b = firefly::net::bind_parameters(net, store);
  firefly::ad::Tape tape(store);
  auto in = firefly::net::input_vars(tape, d.inputs);
  auto out = firefly::net::record_network(tape, net, b, in);
  firefly::net::record_loss(tape, out, d);
  firefly::ad::Gradient g;
  tape.backward(store, g);
  return g.values;
}

// Central differences of the reference loss, in the same binding order.
inline std::vector<double> fd_gradient(const GrowableNetwork& net, const Dataset& d, double h) {
  firefly::ad::ParameterStore store;
  auto b = firefly::net::bind_parameters(net, store);
  std::vector<double> g(store.size());
  GrowableNetwork probe = net;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const double v = store.values()[i];
    store.values()[i] = v + h;
    firefly::net::unbind(store, b, probe);
    const double up = ref_loss(probe, d);
    store.values()[i] = v - h;
    firefly::net::unbind(store, b, probe);
    const double down = ref_loss(probe, d);
    store.values()[i] = v;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Worst relative error over entries whose absolute error exceeds `floor`.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double err = std::abs(a[i] - b[i]);
    if (err <= floor) continue;
    worst = std::max(worst, err / std::max(std::abs(a[i]), std::abs(b[i])));
  }
  return worst;
}

struct Problem {
  GrowableNetwork net;
  Dataset data;
};

inline Batch random_batch(std::mt19937_64& rng, std::size_t rows, std::size_t dim, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Batch b;
  b.columns.assign(dim, std::vector<double>(rows));
  for (auto& c : b.columns)
    for (double& v : c) v = normal(rng);
  return b;
}

inline Neuron random_neuron(std::mt19937_64& rng, std::size_t in, std::size_t out, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Neuron n;
  n.theta.resize(in + 1);
  n.out_weight.resize(out);
  for (double& v : n.theta) v = normal(rng);
  for (double& v : n.out_weight) v = normal(rng);
  return n;
}

// Random RBF regression net or a 1-3 layer MLP (with optional residual
// blocks) under a regression or classification loss.
inline Problem random_problem(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<std::size_t> small(1, 4);
  Problem p;
  const std::size_t rows = small(rng) + 3;
  if (coin(rng) == 0) {
    const std::size_t width = small(rng);
    std::vector<Neuron> ns;
    for (std::size_t i = 0; i < width; ++i) ns.push_back(random_neuron(rng, 1, 1, 1.0));
    p.net = firefly::net::make_rbf_network(ns);
    p.data.kind = TaskKind::Regression;
    p.data.inputs = random_batch(rng, rows, 1, 1.5);
    p.data.targets = random_batch(rng, rows, 1, 1.0);
    return p;
  }
  std::uniform_int_distribution<std::size_t> depth(1, 3);
  const std::size_t layers = depth(rng);
  const std::size_t in_dim = small(rng);
  const std::size_t out_dim = small(rng) + 1;
  const bool classify = coin(rng) == 1;
  p.net.head = classify ? HeadKind::Classification : HeadKind::Regression;
  std::size_t in = in_dim;
  const Activation kinds[] = {Activation::Gaussian, Activation::Relu, Activation::Identity};
  std::uniform_int_distribution<int> pick(0, 2);
  for (std::size_t l = 0; l < layers; ++l) {
    firefly::net::Layer layer;
    layer.activation = kinds[pick(rng)];
    layer.input_dim = in;
    layer.output_dim = l + 1 == layers ? out_dim : small(rng);
    const std::size_t width = small(rng);
    for (std::size_t i = 0; i < width; ++i) layer.neurons.push_back(random_neuron(rng, in, layer.output_dim, 0.8));
    in = layer.output_dim;
    p.net.layers.push_back(std::move(layer));
  }
  for (std::size_t s = 0; s + 1 < layers; ++s) {
    if (coin(rng) == 0) continue;
    firefly::net::ResidualBlock block;
    block.slot = s;
    const std::size_t d = p.net.layers[s].output_dim;
    const std::size_t width = small(rng);
    for (std::size_t i = 0; i < width; ++i) block.neurons.push_back(random_neuron(rng, d, d, 0.5));
    p.net.residual_blocks.push_back(std::move(block));
  }
  p.net.validate();
  p.data.inputs = random_batch(rng, rows, in_dim, 1.0);
  if (classify) {
    p.data.kind = TaskKind::Classification;
    p.data.num_classes = static_cast<int>(out_dim);
    std::uniform_int_distribution<int> label(0, static_cast<int>(out_dim) - 1);
    for (std::size_t r = 0; r < rows; ++r) p.data.labels.push_back(label(rng));
  } else {
    p.data.kind = TaskKind::Regression;
    p.data.targets = random_batch(rng, rows, out_dim, 1.0);
  }
  return p;
}

// Draws problems until every rectifier pre-activation sits well away from 0.
inline Problem random_smooth_problem(std::mt19937_64& rng, double margin = 1e-3) {
  for (;;) {
    Problem p = random_problem(rng);
    if (ref_relu_margin(p.net, p.data.inputs) > margin) return p;
  }
}

inline double max_abs_diff(const Batch& a, const Batch& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.dim(); ++k)
    for (std::size_t r = 0; r < a.rows(); ++r) m = std::max(m, std::abs(a.columns[k][r] - b.columns[k][r]));
  return m;
}


// One brand-new-neuron gate feeding a smooth 2-3 layer network, opened to a
// random value in [0.05, 0.5]. The loss along the gate path is then smooth and
// not a polynomial, so midpoint quadrature has a real truncation error.
struct GateInstance {
  firefly::net::AugmentedNetwork aug;
  Dataset data;
};

inline GateInstance random_gate_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<std::size_t> small(1, 3);
  std::uniform_int_distribution<std::uint64_t> seed(0, 1u << 30);
  std::uniform_real_distribution<double> open(0.05, 0.5);
  const std::size_t layers = small(rng) == 1 ? 2 : 3;
  const std::size_t in_dim = small(rng);
  const std::size_t out_dim = small(rng) + 1;
  const bool classify = coin(rng) == 1;
  firefly::net::MlpShape shape;
  shape.input_dim = in_dim;
  for (std::size_t l = 0; l < layers; ++l) {
    shape.layer_output_dims.push_back(l + 1 == layers ? out_dim : small(rng) + 1);
    shape.layer_widths.push_back(small(rng) + 1);
  }
  shape.activation = Activation::Gaussian;
  shape.head = classify ? HeadKind::Classification : HeadKind::Regression;
  GateInstance g{firefly::net::AugmentedNetwork{firefly::net::make_random_network(shape, 0.8, seed(rng)), {}, 1.0},
                 Dataset{}};
  firefly::net::add_width_candidates(g.aug, 0, 1, 1.0, seed(rng), false);
  g.aug.set_gate_values(std::vector<double>{open(rng)});
  const std::size_t rows = small(rng) * 4;
  g.data.inputs = random_batch(rng, rows, in_dim, 1.0);
  if (classify) {
    g.data.kind = TaskKind::Classification;
    g.data.num_classes = static_cast<int>(out_dim);
    std::uniform_int_distribution<int> label(0, static_cast<int>(out_dim) - 1);
    for (std::size_t r = 0; r < rows; ++r) g.data.labels.push_back(label(rng));
  } else {
    g.data.kind = TaskKind::Regression;
    g.data.targets = random_batch(rng, rows, out_dim, 1.0);
  }
  return g;
}

}  // namespace testsupport
