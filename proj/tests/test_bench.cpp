#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <sstream>

#include "firefly/bench.hpp"
#include "support.hpp"

using namespace firefly;
using namespace firefly::bench;

namespace {

bool same_bits(const Batch& a, const Batch& b) {
  if (a.dim() != b.dim()) return false;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    if (a.columns[k].size() != b.columns[k].size()) return false;
    for (std::size_t r = 0; r < a.columns[k].size(); ++r)
      if (std::bit_cast<std::uint64_t>(a.columns[k][r]) != std::bit_cast<std::uint64_t>(b.columns[k][r])) return false;
  }
  return true;
}

}  // namespace

TEST(ToyTruth, ShapeAndDeterminism) {
  auto a = gen_toy_truth(4);
  auto b = gen_toy_truth(4);
  ASSERT_EQ(a.neurons.size(), 15u);
  EXPECT_EQ(net::count_params(a.network()), 45u);
  for (std::size_t i = 0; i < 15; ++i) {
    EXPECT_EQ(a.neurons[i].theta, b.neurons[i].theta);
    EXPECT_EQ(a.neurons[i].out_weight, b.neurons[i].out_weight);
  }
  EXPECT_NE(gen_toy_truth(5).neurons[0].theta, a.neurons[0].theta);
}

TEST(ToyTruth, WeightsHaveTheRequestedSpread) {
  double sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t s = 0; s < 200; ++s)
    for (const auto& neuron : gen_toy_truth(s).neurons) {
      for (double v : neuron.theta) sq += v * v, ++n;
      sq += neuron.out_weight[0] * neuron.out_weight[0], ++n;
    }
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(n)), 3.0, 0.1);
}

TEST(ToyDataset, DomainDeterminismAndNoiselessTargets) {
  auto truth = gen_toy_truth(1);
  auto d = gen_toy_dataset(truth, 1000, 9);
  ASSERT_EQ(d.size(), 1000u);
  for (double x : d.inputs.columns[0]) {
    EXPECT_GE(x, -5.0);
    EXPECT_LE(x, 5.0);
  }
  EXPECT_TRUE(same_bits(d.inputs, gen_toy_dataset(truth, 1000, 9).inputs));
  EXPECT_TRUE(same_bits(d.targets, gen_toy_dataset(truth, 1000, 9).targets));
  // Targets recomputed with the independent evaluator.
  auto ref = testsupport::ref_forward(truth.network(), d.inputs);
  EXPECT_LE(testsupport::max_abs_diff(ref, d.targets), 1e-12);
  auto direct = net::forward(truth.network(), d.inputs);
  EXPECT_TRUE(same_bits(direct, d.targets));
  EXPECT_THROW(gen_toy_dataset(truth, 0, 1), ContractError);
}

TEST(RandomSplit, ArgminContractAndPool) {
  auto truth = gen_toy_truth(2);
  auto data = gen_toy_dataset(truth, 200, 3);
  auto net0 = initial_rbf_network(3, 1.0, 4);
  BaselineConfig cfg;
  cfg.finetune_iters = 20;
  std::mt19937_64 rng(5);
  auto r = baseline_random_split_plus_new(net0, data, cfg, 5, rng);
  EXPECT_EQ(r.pool_size, 8u);
  ASSERT_EQ(r.trial_losses.size(), 3u);
  for (double l : r.trial_losses) EXPECT_LE(r.trial_losses[r.chosen], l);
  EXPECT_EQ(net::count_neurons(r.net), 4u);
  EXPECT_DOUBLE_EQ(net::loss(r.net, data), r.trial_losses[r.chosen]);

  cfg.k_trials = 1;
  std::mt19937_64 rng1(6);
  auto single = baseline_random_split(net0, data, cfg, rng1);
  EXPECT_EQ(single.trial_losses.size(), 1u);
  EXPECT_EQ(single.chosen, 0u);
  EXPECT_EQ(single.pool_size, 3u);
  cfg.k_trials = 0;
  EXPECT_THROW(baseline_random_split(net0, data, cfg, rng1), ContractError);
}

TEST(RandomSplit, NoNewProposalsReducesToSplitting) {
  auto truth = gen_toy_truth(3);
  auto data = gen_toy_dataset(truth, 100, 4);
  auto net0 = initial_rbf_network(2, 1.0, 5);
  BaselineConfig cfg;
  cfg.finetune_iters = 10;
  std::mt19937_64 a(7), b(7);
  auto x = baseline_random_split_plus_new(net0, data, cfg, 0, a);
  auto y = baseline_random_split(net0, data, cfg, b);
  EXPECT_EQ(x.trial_losses, y.trial_losses);
  EXPECT_EQ(x.chosen, y.chosen);
}

TEST(RandomSplit, SplitKeepsFunctionToSecondOrder) {
  auto truth = gen_toy_truth(6);
  auto data = gen_toy_dataset(truth, 100, 7);
  auto net0 = initial_rbf_network(2, 1.0, 8);
  BaselineConfig cfg;
  cfg.finetune_iters = 0;
  cfg.k_trials = 1;
  cfg.step_size = 1e-4;
  std::mt19937_64 rng(9);
  auto r = baseline_random_split(net0, data, cfg, rng);
  EXPECT_LE(testsupport::max_abs_diff(net::forward(r.net, data.inputs), net::forward(net0, data.inputs)), 1e-7);
}

TEST(RandomGrowth, HistoryMirrorsFirefly) {
  auto truth = gen_toy_truth(7);
  auto data = gen_toy_dataset(truth, 100, 8);
  BaselineConfig cfg;
  cfg.finetune_iters = 5;
  growth::Schedule sch{50, 3, 0.02};
  auto r = random_growth_train(initial_rbf_network(1, 1.0, 9), data, cfg, 5, sch, 11);
  ASSERT_EQ(r.history.size(), 4u);
  for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(r.history[p].neurons, 1 + p);
  auto again = random_growth_train(initial_rbf_network(1, 1.0, 9), data, cfg, 5, sch, 11);
  for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(r.history[p].loss, again.history[p].loss);
}

TEST(Scratch, WidthOneCannotFitAFifteenNeuronTruth) {
  auto truth = gen_toy_truth(0);
  auto data = gen_toy_dataset(truth, 1000, 1);
  std::vector<std::size_t> widths{1, 2, 3};
  auto a = baseline_scratch(widths, data, 500, 0.02, 1.0, 3);
  auto b = baseline_scratch(widths, data, 500, 0.02, 1.0, 3);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a, b);
  // The best single Gaussian bump still leaves a clearly positive loss.
  EXPECT_GT(a[0], 0.1);
  std::vector<std::size_t> all{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  EXPECT_EQ(baseline_scratch(all, data, 1, 0.02, 1.0, 3).size(), 10u);
}

TEST(ClSuite, ShapeAndDeterminism) {
  auto one = gen_cl_tasks(1, 3);
  ASSERT_EQ(one.size(), 1u);
  auto tasks = gen_cl_tasks(10, 3);
  ASSERT_EQ(tasks.size(), 10u);
  ClSuiteConfig cfg;
  for (const auto& t : tasks) {
    EXPECT_EQ(t.train.kind, TaskKind::Classification);
    EXPECT_EQ(t.train.num_classes, cfg.num_classes);
    EXPECT_EQ(t.train.size(), static_cast<std::size_t>(cfg.num_classes) * cfg.train_per_class);
    EXPECT_EQ(t.test.size(), static_cast<std::size_t>(cfg.num_classes) * cfg.test_per_class);
    EXPECT_EQ(t.train.inputs.dim(), 2u);
  }
  auto again = gen_cl_tasks(10, 3);
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_TRUE(same_bits(tasks[t].train.inputs, again[t].train.inputs));
    EXPECT_EQ(tasks[t].train.labels, again[t].train.labels);
  }
  EXPECT_FALSE(same_bits(tasks[0].train.inputs, gen_cl_tasks(1, 4)[0].train.inputs));
  EXPECT_THROW(gen_cl_tasks(0, 1), ContractError);
}

TEST(ClSuite, TasksAreMutuallyDistinguishable) {
  // A fixed-size probe trained on task i should transfer poorly to task j.
  auto tasks = gen_cl_tasks(5, 11);
  net::MlpShape shape;
  shape.input_dim = 2;
  shape.layer_output_dims = {3};
  shape.layer_widths = {16};
  shape.activation = net::Activation::Relu;
  shape.head = net::HeadKind::Classification;
  double cross = 0.0;
  double own = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto probe = net::make_random_network(shape, 0.5, 100 + i);
    growth::train_network(probe, tasks[i].train, 1500, 0.1);
    own += net::accuracy(probe, tasks[i].test);
    for (std::size_t j = 0; j < tasks.size(); ++j) {
      if (j == i) continue;
      cross += net::accuracy(probe, tasks[j].test);
      ++pairs;
    }
  }
  own /= static_cast<double>(tasks.size());
  cross /= static_cast<double>(pairs);
  EXPECT_GT(own, 0.8);
  EXPECT_LT(cross, 0.7);
}

TEST(Csv, HeadersAndPrecision) {
  auto truth = gen_toy_truth(1);
  auto d = gen_toy_dataset(truth, 3, 2);
  std::string csv = to_csv(d);
  EXPECT_EQ(csv.substr(0, 4), "x,y\n");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  const double x = std::stod(line.substr(0, line.find(',')));
  EXPECT_EQ(std::bit_cast<std::uint64_t>(x), std::bit_cast<std::uint64_t>(d.inputs.columns[0][0]));

  auto c = gen_cl_tasks(1, 2)[0].train;
  EXPECT_EQ(to_csv(c).substr(0, 12), "x1,x2,label\n");
}
