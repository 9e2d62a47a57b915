#pragma once

// Mask-based continual learning on a growing master network.
//
// The master keeps one body neuron (theta) per unit ever created. Each task t
// records a binary mask over the master neurons and its own output head, one
// out-weight row per masked neuron in master order. Neurons are locked once
// their task completes; a later task that wants to change one trains a copy
// instead, so every earlier task can be rebuilt exactly from its mask.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "firefly/data.hpp"
#include "firefly/growth.hpp"
#include "firefly/network.hpp"

namespace firefly::continual {

enum class NeuronRole { InheritedLocked, UnlockedCopy, BrandNew };
std::string to_string(NeuronRole r);

struct Provenance {
  std::size_t task = 0;  // task that created the neuron
  NeuronRole kind = NeuronRole::BrandNew;
  std::optional<std::size_t> parent;  // master index of the unlocked original
};

struct TaskMask {
  std::size_t task_id = 0;
  std::vector<bool> bits;  // one per master neuron; zero-extended as the master grows

  std::size_t count() const;
};

struct MasterNetwork {
  std::size_t input_dim = 2;
  std::size_t output_dim = 3;
  net::Activation activation = net::Activation::Relu;
  std::vector<std::vector<double>> thetas;
  std::vector<bool> locked;
  std::vector<Provenance> provenance;
  std::vector<TaskMask> masks;
  // heads[t - 1][k]: out weights of the k-th masked neuron of task t.
  std::vector<std::vector<std::vector<double>>> heads;

  std::size_t neuron_count() const { return thetas.size(); }
  std::size_t task_count() const { return masks.size(); }
};

MasterNetwork make_master(std::size_t input_dim, std::size_t output_dim, net::Activation activation);

// Body parameters plus every task head.
std::size_t master_params(const MasterNetwork& master);

struct MaskTrainConfig {
  std::size_t head_iters = 300;  // head fit with all gates at 1
  std::size_t epochs = 300;      // gate descent with the head frozen
  double learning_rate = 0.5;
  double mask_l1 = 0.0;
};

// Relaxed gates in [0, 1], one per master neuron, learned with every body
// weight frozen. `head` receives the fitted head (one row per master neuron).
std::vector<double> train_mask_gates(const MasterNetwork& master, const Dataset& data, const MaskTrainConfig& cfg,
                                     std::vector<std::vector<double>>* head = nullptr);
// Gate >= 0.5 keeps the neuron.
TaskMask binarize_gates(std::span<const double> gates, std::size_t task_id);
TaskMask train_selection_mask(const MasterNetwork& master, const Dataset& data, const MaskTrainConfig& cfg,
                              std::size_t task_id, std::vector<std::vector<double>>* head = nullptr);

struct ContinualConfig {
  growth::GrowthConfig growth;  // width_budget is the per-round budget over copies + new neurons
  MaskTrainConfig mask;
  std::size_t initial_width = 4;
  double initial_init_scale = 1.0;
  std::size_t train_iters = 500;
  double learning_rate = 0.1;
  double target_accuracy = 0.95;
  std::size_t max_grow_rounds = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RoundLog {
  std::size_t task_id = 0;
  std::size_t round = 0;  // 0 is the pre-growth fit
  std::size_t neurons_added_copy = 0;
  std::size_t neurons_added_new = 0;
  std::size_t master_params = 0;  // as if the task were committed now
  double train_acc = 0.0;
};

struct TaskOutcome {
  TaskMask mask;
  net::GrowableNetwork snapshot;  // task model at the end of training
  std::vector<RoundLog> rounds;
  std::size_t copies = 0;
  std::size_t brand_new = 0;
  std::size_t reused = 0;
};

// Learns the next task (id = task_count() + 1) and commits it to the master.
TaskOutcome grow_for_task(MasterNetwork& master, const Dataset& train, const ContinualConfig& cfg);

// Throws StructuralError for an unknown task id (ids start at 1).
net::GrowableNetwork retrieve_task_model(const MasterNetwork& master, std::size_t task_id);

struct TaskMetrics {
  std::size_t task_id = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct EvaluationTable {
  std::vector<TaskMetrics> tasks;
  double mean_accuracy = 0.0;
  std::size_t master_params = 0;
};

// tests[s] evaluates task s + 1; only the first task_count() entries are used.
EvaluationTable evaluate_all_tasks(const MasterNetwork& master, std::span<const Dataset> tests);

}  // namespace firefly::continual
