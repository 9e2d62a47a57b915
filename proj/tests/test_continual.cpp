#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "firefly/bench.hpp"
#include "firefly/continual.hpp"
#include "support.hpp"

using namespace firefly;
using namespace firefly::continual;

namespace {

ContinualConfig quick_config() {
  ContinualConfig cfg;
  cfg.train_iters = 200;
  cfg.mask.head_iters = 100;
  cfg.mask.epochs = 100;
  cfg.max_grow_rounds = 2;
  cfg.growth.step_one_iters = 20;
  cfg.growth.width_budget.count = 2;
  cfg.seed = 5;
  return cfg;
}

bool bitwise(const Batch& a, const Batch& b) {
  for (std::size_t k = 0; k < a.dim(); ++k)
    for (std::size_t r = 0; r < a.rows(); ++r)
      if (std::bit_cast<std::uint64_t>(a.columns[k][r]) != std::bit_cast<std::uint64_t>(b.columns[k][r])) return false;
  return a.dim() == b.dim();
}

}  // namespace

TEST(Master, EmptyAndParams) {
  auto m = make_master(2, 3, net::Activation::Relu);
  EXPECT_EQ(m.neuron_count(), 0u);
  EXPECT_EQ(m.task_count(), 0u);
  EXPECT_EQ(master_params(m), 0u);
  EXPECT_THROW(make_master(0, 3, net::Activation::Relu), ContractError);
  EXPECT_EQ(to_string(NeuronRole::UnlockedCopy), "unlocked-copy");
}

TEST(Mask, ThresholdIncludesOneHalf) {
  std::vector<double> g{0.5, 0.4999999, 1.0, 0.0};
  auto m = binarize_gates(g, 3);
  EXPECT_EQ(m.task_id, 3u);
  EXPECT_EQ(m.bits, (std::vector<bool>{true, false, true, false}));
  EXPECT_EQ(m.count(), 2u);
}

TEST(Mask, NoEpochsMeansAllOnes) {
  auto tasks = bench::gen_cl_tasks(2, 1);
  auto master = make_master(2, 3, net::Activation::Relu);
  grow_for_task(master, tasks[0].train, quick_config());
  MaskTrainConfig mc;
  mc.epochs = 0;
  auto gates = train_mask_gates(master, tasks[1].train, mc);
  EXPECT_EQ(gates, std::vector<double>(master.neuron_count(), 1.0));
  auto m = train_selection_mask(master, tasks[1].train, mc, 2);
  EXPECT_EQ(m.count(), master.neuron_count());
}

TEST(Mask, GatesStayInTheUnitInterval) {
  auto tasks = bench::gen_cl_tasks(2, 2);
  auto master = make_master(2, 3, net::Activation::Relu);
  grow_for_task(master, tasks[0].train, quick_config());
  MaskTrainConfig mc;
  mc.epochs = 200;
  mc.learning_rate = 5.0;
  mc.mask_l1 = 0.05;
  for (double g : train_mask_gates(master, tasks[1].train, mc)) {
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, 1.0);
  }
}

TEST(Mask, FullReuseBeatsTheEmptyMask) {
  auto tasks = bench::gen_cl_tasks(1, 3);
  auto master = make_master(2, 3, net::Activation::Relu);
  grow_for_task(master, tasks[0].train, quick_config());
  MaskTrainConfig mc;
  mc.epochs = 0;
  std::vector<std::vector<double>> head;
  train_mask_gates(master, tasks[0].train, mc, &head);
  net::GrowableNetwork full;
  full.head = net::HeadKind::Classification;
  full.layers.push_back(net::Layer{net::Activation::Relu, 2, 3, {}});
  for (std::size_t i = 0; i < master.neuron_count(); ++i)
    full.layers[0].neurons.push_back(net::Neuron{master.thetas[i], head[i]});
  // An empty mask leaves all-zero logits: loss ln(3).
  EXPECT_LT(net::loss(full, tasks[0].train), std::log(3.0));
}

TEST(GrowForTask, FirstTaskOwnsEverything) {
  auto tasks = bench::gen_cl_tasks(1, 4);
  auto master = make_master(2, 3, net::Activation::Relu);
  auto cfg = quick_config();
  auto out = grow_for_task(master, tasks[0].train, cfg);
  EXPECT_EQ(master.task_count(), 1u);
  EXPECT_EQ(out.mask.count(), master.neuron_count());
  EXPECT_GE(master.neuron_count(), cfg.initial_width);
  EXPECT_EQ(out.reused, 0u);
  EXPECT_EQ(out.copies, 0u);
  EXPECT_EQ(out.brand_new, master.neuron_count());
  for (std::size_t i = 0; i < master.neuron_count(); ++i) {
    EXPECT_TRUE(master.locked[i]);
    EXPECT_EQ(master.provenance[i].task, 1u);
    EXPECT_EQ(master.provenance[i].kind, NeuronRole::BrandNew);
  }
  ASSERT_FALSE(out.rounds.empty());
  EXPECT_EQ(out.rounds[0].round, 0u);
  EXPECT_EQ(out.rounds.back().master_params, master_params(master));
  EXPECT_TRUE(bitwise(net::forward(retrieve_task_model(master, 1), tasks[0].test.inputs),
                      net::forward(out.snapshot, tasks[0].test.inputs)));
}

TEST(GrowForTask, LockDisciplineAndNonForgetting) {
  auto tasks = bench::gen_cl_tasks(4, 6);
  auto master = make_master(2, 3, net::Activation::Relu);
  auto cfg = quick_config();
  cfg.target_accuracy = 1.0;  // forces growth rounds on every task
  std::vector<net::GrowableNetwork> snaps;
  std::vector<std::size_t> params{0};
  for (std::size_t t = 0; t < 4; ++t) {
    const std::size_t before_neurons = master.neuron_count();
    const auto before_thetas = master.thetas;
    const auto before_masks = master.masks;
    auto out = grow_for_task(master, tasks[t].train, cfg);
    snaps.push_back(out.snapshot);
    // Earlier neurons are untouched, earlier masks only zero-extended.
    for (std::size_t i = 0; i < before_neurons; ++i) EXPECT_EQ(master.thetas[i], before_thetas[i]);
    for (std::size_t s = 0; s < before_masks.size(); ++s) {
      for (std::size_t i = 0; i < master.neuron_count(); ++i)
        EXPECT_EQ(master.masks[s].bits[i], i < before_masks[s].bits.size() && before_masks[s].bits[i]);
    }
    // Capacity accounting: new bodies plus this task's head rows.
    const std::size_t added = master.neuron_count() - before_neurons;
    EXPECT_EQ(added, out.copies + out.brand_new);
    EXPECT_EQ(master_params(master) - params.back(), added * 3 + out.mask.count() * 3);
    EXPECT_EQ(out.mask.count(), out.reused + added);
    params.push_back(master_params(master));
    for (std::size_t i = before_neurons; i < master.neuron_count(); ++i) {
      const auto& p = master.provenance[i];
      EXPECT_EQ(p.task, t + 1);
      if (p.kind == NeuronRole::UnlockedCopy) {
        ASSERT_TRUE(p.parent.has_value());
        EXPECT_LT(*p.parent, before_neurons);
      }
    }
    for (bool l : master.locked) EXPECT_TRUE(l);
    // Every completed task still retrieves its end-of-task function bitwise.
    for (std::size_t s = 0; s <= t; ++s)
      EXPECT_TRUE(bitwise(net::forward(retrieve_task_model(master, s + 1), tasks[s].test.inputs),
                          net::forward(snaps[s], tasks[s].test.inputs)))
          << "task " << s + 1 << " after task " << t + 1;
  }
  for (std::size_t t = 1; t < params.size(); ++t) EXPECT_GE(params[t], params[t - 1]);
}

TEST(GrowForTask, ZeroBudgetOnlyReuses) {
  auto tasks = bench::gen_cl_tasks(2, 7);
  auto master = make_master(2, 3, net::Activation::Relu);
  auto cfg = quick_config();
  grow_for_task(master, tasks[0].train, cfg);
  const std::size_t n = master.neuron_count();
  cfg.growth.width_budget.count = 0;
  cfg.target_accuracy = 1.0;
  auto out = grow_for_task(master, tasks[1].train, cfg);
  EXPECT_EQ(master.neuron_count(), n);
  EXPECT_EQ(out.copies + out.brand_new, 0u);
  EXPECT_EQ(out.mask.count(), out.reused);
}

TEST(GrowForTask, RejectsMismatchedData) {
  auto master = make_master(2, 4, net::Activation::Relu);
  auto tasks = bench::gen_cl_tasks(1, 8);
  EXPECT_THROW(grow_for_task(master, tasks[0].train, quick_config()), StructuralError);
  Dataset empty;
  empty.kind = TaskKind::Classification;
  EXPECT_THROW(grow_for_task(master, empty, quick_config()), ContractError);
}

TEST(Retrieve, UnknownTaskIsStructural) {
  auto tasks = bench::gen_cl_tasks(1, 9);
  auto master = make_master(2, 3, net::Activation::Relu);
  grow_for_task(master, tasks[0].train, quick_config());
  EXPECT_THROW(retrieve_task_model(master, 0), StructuralError);
  EXPECT_THROW(retrieve_task_model(master, 2), StructuralError);
}

TEST(Evaluate, TableShapeAndMean) {
  auto tasks = bench::gen_cl_tasks(2, 10);
  auto master = make_master(2, 3, net::Activation::Relu);
  std::vector<Dataset> tests{tasks[0].test};
  grow_for_task(master, tasks[0].train, quick_config());
  auto one = evaluate_all_tasks(master, tests);
  ASSERT_EQ(one.tasks.size(), 1u);
  EXPECT_EQ(one.master_params, master_params(master));
  grow_for_task(master, tasks[1].train, quick_config());
  tests.push_back(tasks[1].test);
  auto two = evaluate_all_tasks(master, tests);
  ASSERT_EQ(two.tasks.size(), 2u);
  EXPECT_DOUBLE_EQ(two.mean_accuracy, 0.5 * (two.tasks[0].accuracy + two.tasks[1].accuracy));
  EXPECT_EQ(two.tasks[0].accuracy, one.tasks[0].accuracy);
  EXPECT_EQ(two.tasks[1].task_id, 2u);
  EXPECT_THROW(evaluate_all_tasks(master, std::span<const Dataset>(tests).first(1)), ContractError);
}
