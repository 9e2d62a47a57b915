#include "firefly/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace firefly::bench {

using net::GrowableNetwork;
using net::Neuron;

ToyRbfTruth gen_toy_truth(std::uint64_t seed, std::size_t m, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  ToyRbfTruth truth;
  truth.seed = seed;
  for (std::size_t i = 0; i < m; ++i) {
    Neuron n;
    n.out_weight = {normal(rng)};
    const double a = normal(rng);
    const double b = normal(rng);
    n.theta = {a, b};
    truth.neurons.push_back(std::move(n));
  }
  return truth;
}

Dataset gen_toy_dataset(const ToyRbfTruth& truth, std::size_t n_points, std::uint64_t seed, double lo, double hi) {
  if (n_points < 1) throw ContractError("gen_toy_dataset: n_points must be at least 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(lo, hi);
  Dataset d;
  d.kind = TaskKind::Regression;
  d.inputs.columns.assign(1, std::vector<double>(n_points));
  for (double& x : d.inputs.columns[0]) x = uniform(rng);
  d.targets = net::forward(truth.network(), d.inputs);
  return d;
}

GrowableNetwork initial_rbf_network(std::size_t width, double init_scale, std::uint64_t seed) {
  net::MlpShape shape;
  shape.input_dim = 1;
  shape.layer_output_dims = {1};
  shape.layer_widths = {width};
  shape.activation = net::Activation::Gaussian;
  shape.head = net::HeadKind::Regression;
  return net::make_random_network(shape, init_scale, seed);
}

namespace {

std::vector<double> random_direction(std::mt19937_64& rng, std::size_t n, double init_scale) {
  std::normal_distribution<double> normal(0.0, init_scale);
  std::vector<double> d(n);
  for (double& v : d) v = normal(rng);
  net::project_unit_ball(d);
  return d;
}

GrowableNetwork split_neuron(const GrowableNetwork& net, std::size_t j, std::span<const double> delta, double eps) {
  GrowableNetwork out = net;
  auto& neurons = out.layers[0].neurons;
  Neuron plus = neurons[j];
  Neuron minus = neurons[j];
  for (std::size_t k = 0; k < delta.size(); ++k) {
    plus.theta[k] += eps * delta[k];
    minus.theta[k] -= eps * delta[k];
  }
  for (double& w : plus.out_weight) w *= 0.5;
  for (double& w : minus.out_weight) w *= 0.5;
  neurons[j] = std::move(plus);
  neurons.insert(neurons.begin() + static_cast<std::ptrdiff_t>(j) + 1, std::move(minus));
  return out;
}

GrowableNetwork add_neuron(const GrowableNetwork& net, std::span<const double> proposal, double eps) {
  GrowableNetwork out = net;
  net::Layer& layer = out.layers[0];
  Neuron n;
  n.theta.assign(proposal.begin(), proposal.begin() + static_cast<std::ptrdiff_t>(layer.input_dim + 1));
  for (std::size_t k = 0; k < layer.output_dim; ++k) n.out_weight.push_back(eps * proposal[layer.input_dim + 1 + k]);
  layer.neurons.push_back(std::move(n));
  return out;
}

}  // namespace

RandomGrowResult baseline_random_split_plus_new(const GrowableNetwork& net, const Dataset& data,
                                                const BaselineConfig& cfg, std::size_t m_prime,
                                                std::mt19937_64& rng) {
  if (cfg.k_trials < 1) throw ContractError("random baseline: k_trials must be at least 1");
  const net::Layer& layer = net.layers.at(0);
  const std::size_t m = layer.neurons.size();
  std::vector<std::vector<double>> proposals;
  for (std::size_t i = 0; i < m_prime; ++i)
    proposals.push_back(random_direction(rng, layer.input_dim + 1 + layer.output_dim, cfg.init_scale));

  RandomGrowResult best;
  best.pool_size = m + m_prime;
  if (best.pool_size == 0) throw ContractError("random baseline: empty candidate pool");
  double best_loss = 0.0;
  for (std::size_t trial = 0; trial < cfg.k_trials; ++trial) {
    std::uniform_int_distribution<std::size_t> pick(0, best.pool_size - 1);
    const std::size_t j = pick(rng);
    GrowableNetwork grown;
    if (j < m) {
      std::vector<double> delta = random_direction(rng, layer.input_dim + 1, cfg.init_scale);
      grown = split_neuron(net, j, delta, cfg.step_size);
    } else {
      grown = add_neuron(net, proposals[j - m], cfg.step_size);
    }
    const double loss = growth::train_network(grown, data, cfg.finetune_iters, cfg.learning_rate);
    best.trial_losses.push_back(loss);
    if (trial == 0 || loss < best_loss) {
      best_loss = loss;
      best.chosen = trial;
      best.net = std::move(grown);
    }
  }
  return best;
}

RandomGrowResult baseline_random_split(const GrowableNetwork& net, const Dataset& data, const BaselineConfig& cfg,
                                       std::mt19937_64& rng) {
  return baseline_random_split_plus_new(net, data, cfg, 0, rng);
}

growth::FireflyResult random_growth_train(GrowableNetwork initial, const Dataset& data, const BaselineConfig& cfg,
                                          std::size_t m_prime, const growth::Schedule& schedule,
                                          std::uint64_t seed, const growth::PhaseCallback& on_phase) {
  std::mt19937_64 rng(seed);
  growth::FireflyResult res{std::move(initial), {}};
  auto boundary = [&](std::size_t phase, double loss) {
    growth::PhaseRecord rec{phase, loss, net::count_neurons(res.net), net::count_params(res.net), std::nullopt};
    if (on_phase) on_phase(rec);
    res.history.push_back(std::move(rec));
  };
  double loss = growth::train_network(res.net, data, schedule.train_iters_between_grows, schedule.learning_rate);
  boundary(0, loss);
  for (std::size_t phase = 1; phase <= schedule.total_grow_phases; ++phase) {
    RandomGrowResult grown = baseline_random_split_plus_new(res.net, data, cfg, m_prime, rng);
    res.net = std::move(grown.net);
    loss = growth::train_network(res.net, data, schedule.train_iters_between_grows, schedule.learning_rate);
    boundary(phase, loss);
  }
  return res;
}

std::vector<double> baseline_scratch(std::span<const std::size_t> widths, const Dataset& data,
                                     std::size_t train_iters, double learning_rate, double init_scale,
                                     std::uint64_t seed) {
  std::vector<double> losses;
  for (std::size_t w : widths) {
    GrowableNetwork net = initial_rbf_network(w, init_scale, growth::derive_seed(seed, w));
    losses.push_back(growth::train_network(net, data, train_iters, learning_rate));
  }
  return losses;
}

// ---------------------------------------------------------------------------

namespace {

Dataset sample_task(const std::vector<std::array<double, 2>>& centers, const std::vector<int>& center_class,
                    const ClSuiteConfig& cfg, std::size_t per_class, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, cfg.cluster_sd);
  Dataset d;
  d.kind = TaskKind::Classification;
  d.num_classes = cfg.num_classes;
  d.inputs.columns.assign(2, {});
  // Round-robin over each class's clusters.
  for (int c = 0; c < cfg.num_classes; ++c) {
    std::vector<std::size_t> mine;
    for (std::size_t j = 0; j < centers.size(); ++j)
      if (center_class[j] == c) mine.push_back(j);
    for (std::size_t p = 0; p < per_class; ++p) {
      const auto& mu = centers[mine[p % mine.size()]];
      d.inputs.columns[0].push_back(mu[0] + noise(rng));
      d.inputs.columns[1].push_back(mu[1] + noise(rng));
      d.labels.push_back(c);
    }
  }
  return d;
}

}  // namespace

std::vector<ClTask> gen_cl_tasks(std::size_t T, std::uint64_t seed, const ClSuiteConfig& cfg) {
  if (T < 1) throw ContractError("gen_cl_tasks: T must be at least 1");
  if (cfg.num_classes < 2 || cfg.clusters_per_class < 1) throw ContractError("gen_cl_tasks: invalid suite shape");
  std::vector<ClTask> tasks;
  const std::size_t n_centers = static_cast<std::size_t>(cfg.num_classes) * cfg.clusters_per_class;
  for (std::size_t t = 0; t < T; ++t) {
    std::mt19937_64 rng(growth::derive_seed(seed, t));
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> shift(0.0, 0.5);
    const double phi = angle(rng);
    const double ox = shift(rng);
    const double oy = shift(rng);
    std::vector<std::array<double, 2>> centers;
    for (std::size_t j = 0; j < n_centers; ++j) {
      const double a = phi + 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_centers);
      centers.push_back({ox + cfg.ring_radius * std::cos(a), oy + cfg.ring_radius * std::sin(a)});
    }
    std::vector<int> center_class(n_centers);
    for (std::size_t j = 0; j < n_centers; ++j) center_class[j] = static_cast<int>(j % static_cast<std::size_t>(cfg.num_classes));
    std::shuffle(center_class.begin(), center_class.end(), rng);
    ClTask task;
    task.train = sample_task(centers, center_class, cfg, cfg.train_per_class, rng);
    task.test = sample_task(centers, center_class, cfg, cfg.test_per_class, rng);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

// ---------------------------------------------------------------------------

std::string to_csv(const Dataset& data) {
  std::string out;
  const std::size_t din = data.inputs.dim();
  auto name = [](const char* base, std::size_t k, std::size_t dim) {
    return dim == 1 ? std::string(base) : std::string(base) + std::to_string(k + 1);
  };
  for (std::size_t k = 0; k < din; ++k) {
    if (k > 0) out += ',';
    out += name("x", k, din);
  }
  if (data.kind == TaskKind::Classification) {
    out += ",label";
  } else {
    for (std::size_t k = 0; k < data.targets.dim(); ++k) out += "," + name("y", k, data.targets.dim());
  }
  out += '\n';
  char buf[40];
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (std::size_t k = 0; k < din; ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", data.inputs.columns[k][r]);
      if (k > 0) out += ',';
      out += buf;
    }
    if (data.kind == TaskKind::Classification) {
      out += ',' + std::to_string(data.labels[r]);
    } else {
      for (std::size_t k = 0; k < data.targets.dim(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", data.targets.columns[k][r]);
        out += ',';
        out += buf;
      }
    }
    out += '\n';
  }
  return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw StructuralError("cannot write " + path.string());
  out << to_csv(data);
}

}  // namespace firefly::bench
