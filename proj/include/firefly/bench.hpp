#pragma once

// Ground-truth generators and the random-search / from-scratch baselines used
// to compare growing strategies.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "firefly/data.hpp"
#include "firefly/growth.hpp"
#include "firefly/network.hpp"

namespace firefly::bench {

struct ToyRbfTruth {
  std::vector<net::Neuron> neurons;
  std::uint64_t seed = 0;

  net::GrowableNetwork network() const { return net::make_rbf_network(neurons); }
};

// m RBF units with every weight i.i.d. N(0, scale).
ToyRbfTruth gen_toy_truth(std::uint64_t seed, std::size_t m = 15, double scale = 3.0);

// x ~ Uniform([lo, hi]), y = f_truth(x) without noise.
Dataset gen_toy_dataset(const ToyRbfTruth& truth, std::size_t n_points = 1000, std::uint64_t seed = 0,
                        double lo = -5.0, double hi = 5.0);

// Single-layer RBF net with `width` random neurons drawn from N(0, init_scale).
net::GrowableNetwork initial_rbf_network(std::size_t width, double init_scale, std::uint64_t seed);

struct BaselineConfig {
  std::size_t k_trials = 3;
  std::size_t finetune_iters = 100;
  double learning_rate = 0.01;
  double step_size = 0.01;
  double init_scale = 0.1;
};

struct RandomGrowResult {
  net::GrowableNetwork net;
  std::vector<double> trial_losses;  // post-finetune loss of every trial
  std::size_t chosen = 0;
  std::size_t pool_size = 0;
};

// k random splits (random neuron, random direction), each fine-tuned; keeps
// the lowest-loss one.
RandomGrowResult baseline_random_split(const net::GrowableNetwork& net, const Dataset& data,
                                       const BaselineConfig& cfg, std::mt19937_64& rng);

// Like baseline_random_split, but each trial draws uniformly from the m
// existing neurons plus m_prime fresh new-neuron proposals.
RandomGrowResult baseline_random_split_plus_new(const net::GrowableNetwork& net, const Dataset& data,
                                                const BaselineConfig& cfg, std::size_t m_prime,
                                                std::mt19937_64& rng);

// Alternates training and one random growth per phase; history mirrors
// growth::firefly_train.
growth::FireflyResult random_growth_train(net::GrowableNetwork initial, const Dataset& data,
                                          const BaselineConfig& cfg, std::size_t m_prime,
                                          const growth::Schedule& schedule, std::uint64_t seed,
                                          const growth::PhaseCallback& on_phase = {});

// Independent fixed-width trainings from random initialization; one loss per width.
std::vector<double> baseline_scratch(std::span<const std::size_t> widths, const Dataset& data,
                                     std::size_t train_iters, double learning_rate, double init_scale,
                                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Continual-learning suite

struct ClSuiteConfig {
  int num_classes = 3;
  std::size_t clusters_per_class = 2;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
  double ring_radius = 2.5;
  double cluster_sd = 0.45;
};

struct ClTask {
  Dataset train;
  Dataset test;
};

// T 2-D Gaussian-cluster classification tasks; each task rotates the cluster
// ring, shifts it, and reassigns clusters to classes.
std::vector<ClTask> gen_cl_tasks(std::size_t T, std::uint64_t seed, const ClSuiteConfig& cfg = {});

// ---------------------------------------------------------------------------
// CSV: `x,y` for 1-D regression, `x1,x2,label` for 2-D classification.

std::string to_csv(const Dataset& data);
void write_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace firefly::bench
