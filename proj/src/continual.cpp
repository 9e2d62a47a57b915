#include "firefly/continual.hpp"

#include <algorithm>
#include <cmath>

#include "firefly/autodiff.hpp"

namespace firefly::continual {

using net::GrowableNetwork;
using net::Neuron;

std::string to_string(NeuronRole r) {
  switch (r) {
    case NeuronRole::InheritedLocked: return "inherited-locked";
    case NeuronRole::UnlockedCopy: return "unlocked-copy";
    case NeuronRole::BrandNew: return "brand-new";
  }
  return "?";
}

std::size_t TaskMask::count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true)); }

MasterNetwork make_master(std::size_t input_dim, std::size_t output_dim, net::Activation activation) {
  if (input_dim == 0 || output_dim == 0) throw ContractError("make_master: dimensions must be positive");
  MasterNetwork m;
  m.input_dim = input_dim;
  m.output_dim = output_dim;
  m.activation = activation;
  return m;
}

std::size_t master_params(const MasterNetwork& master) {
  std::size_t n = 0;
  for (const auto& t : master.thetas) n += t.size();
  for (const auto& head : master.heads)
    for (const auto& row : head) n += row.size();
  return n;
}

void ContinualConfig::validate() const {
  growth.validate();
  if (!(learning_rate > 0.0)) throw ContractError("continual: learning_rate must be positive");
  if (!(mask.learning_rate > 0.0)) throw ContractError("continual: mask.learning_rate must be positive");
  if (mask.mask_l1 < 0.0) throw ContractError("continual: mask.mask_l1 must be nonnegative");
  if (!(target_accuracy >= 0.0 && target_accuracy <= 1.0))
    throw ContractError("continual: target_accuracy must lie in [0, 1]");
  if (!(initial_init_scale > 0.0)) throw ContractError("continual: initial_init_scale must be positive");
}

// ---------------------------------------------------------------------------
// Mask training

namespace {

double activate(net::Activation a, double z) {
  switch (a) {
    case net::Activation::Gaussian: return std::exp(z * z * -0.5);
    case net::Activation::Relu: return z > 0.0 ? z : 0.0;
    case net::Activation::Identity: return z;
  }
  return z;
}

std::vector<double> activations(const std::vector<double>& theta, net::Activation act, const Batch& x) {
  std::vector<double> a(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double z = theta.back();
    for (std::size_t k = 0; k < x.dim(); ++k) z += theta[k] * x.columns[k][r];
    a[r] = activate(act, z);
  }
  return a;
}

}  // namespace

std::vector<double> train_mask_gates(const MasterNetwork& master, const Dataset& data, const MaskTrainConfig& cfg,
                                     std::vector<std::vector<double>>* head_out) {
  if (data.kind != TaskKind::Classification) throw ContractError("train_mask_gates: classification data required");
  const std::size_t n = master.neuron_count();
  const std::size_t C = master.output_dim;
  std::vector<double> gates(n, 1.0);
  std::vector<std::vector<double>> head(n, std::vector<double>(C, 0.0));
  if (n == 0) {
    if (head_out) *head_out = head;
    return gates;
  }

  std::vector<std::vector<double>> acts;
  for (const auto& theta : master.thetas) acts.push_back(activations(theta, master.activation, data.inputs));

  ad::ParameterStore store;
  const ad::GroupId g_gates = store.add_group("gates", gates);
  std::vector<double> flat(n * C, 0.0);
  const ad::GroupId g_head = store.add_group("head", flat);
  ad::Tape tape;
  ad::Gradient grad;

  auto step = [&](std::size_t it, const char* what) {
    try {
      tape.reset(store);
      std::vector<ad::Var> a;
      for (const auto& col : acts) a.push_back(tape.constant(col));
      std::vector<ad::Var> g = tape.group(g_gates);
      std::vector<ad::Var> h = tape.group(g_head);
      ad::Var zero = tape.constant(0.0);
      std::vector<ad::Var> logits;
      std::vector<ad::Var> w(n);
      for (std::size_t k = 0; k < C; ++k) {
        for (std::size_t i = 0; i < n; ++i) w[i] = g[i] * h[i * C + k];
        logits.push_back(tape.affine(a, w, zero));
      }
      ad::Var loss = tape.mean(tape.softmax_cross_entropy(logits, data.labels));
      if (cfg.mask_l1 > 0.0) {
        ad::Var s = zero;
        for (ad::Var gi : g) s = s + gi;
        loss = loss + cfg.mask_l1 * s;
      }
      tape.backward(store, grad);
      ad::sgd_step(store, grad, cfg.learning_rate);
    } catch (const NumericError& e) {
      throw NumericError(std::string(what) + " iteration " + std::to_string(it) + ": " + e.what());
    }
  };

  store.set_frozen(g_gates, true);
  for (std::size_t it = 0; it < cfg.head_iters; ++it) step(it, "mask head fit");
  store.set_frozen(g_gates, false);
  store.set_frozen(g_head, true);
  for (std::size_t it = 0; it < cfg.epochs; ++it) {
    step(it, "mask gate training");
    for (double& v : store.group(g_gates)) v = std::clamp(v, 0.0, 1.0);
  }

  auto gv = store.group(g_gates);
  gates.assign(gv.begin(), gv.end());
  auto hv = store.group(g_head);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < C; ++k) head[i][k] = hv[i * C + k];
  if (head_out) *head_out = std::move(head);
  return gates;
}

TaskMask binarize_gates(std::span<const double> gates, std::size_t task_id) {
  TaskMask m;
  m.task_id = task_id;
  for (double g : gates) m.bits.push_back(g >= 0.5);
  return m;
}

TaskMask train_selection_mask(const MasterNetwork& master, const Dataset& data, const MaskTrainConfig& cfg,
                              std::size_t task_id, std::vector<std::vector<double>>* head) {
  return binarize_gates(train_mask_gates(master, data, cfg, head), task_id);
}

// ---------------------------------------------------------------------------
// Growing one task

namespace {

struct Member {
  NeuronRole role = NeuronRole::BrandNew;
  std::optional<std::size_t> master_index;  // inherited neurons only
  std::optional<std::size_t> parent;        // unlocked copies only
};

growth::FreezeMask freeze_inherited(const std::vector<Member>& members) {
  growth::FreezeMask f(1);
  for (const Member& m : members) f[0].push_back({m.role == NeuronRole::InheritedLocked, false});
  return f;
}

// Inherited members first, everything else after, both in current order.
void reorder(GrowableNetwork& ft, std::vector<Member>& members) {
  std::vector<std::size_t> order(members.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_partition(order.begin(), order.end(),
                        [&](std::size_t i) { return members[i].role == NeuronRole::InheritedLocked; });
  std::vector<Neuron> neurons;
  std::vector<Member> ms;
  for (std::size_t i : order) {
    neurons.push_back(std::move(ft.layers[0].neurons[i]));
    ms.push_back(members[i]);
  }
  ft.layers[0].neurons = std::move(neurons);
  members = std::move(ms);
}

std::size_t params_if_committed(const MasterNetwork& master, const std::vector<Member>& members) {
  std::size_t added = 0;
  for (const Member& m : members)
    if (m.role != NeuronRole::InheritedLocked) ++added;
  return master_params(master) + added * (master.input_dim + 1) + members.size() * master.output_dim;
}

GrowableNetwork empty_task_network(const MasterNetwork& master) {
  GrowableNetwork ft;
  ft.head = net::HeadKind::Classification;
  net::Layer layer;
  layer.activation = master.activation;
  layer.input_dim = master.input_dim;
  layer.output_dim = master.output_dim;
  ft.layers.push_back(std::move(layer));
  return ft;
}

}  // namespace

TaskOutcome grow_for_task(MasterNetwork& master, const Dataset& train, const ContinualConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw ContractError("grow_for_task: task data is empty");
  if (train.kind != TaskKind::Classification || train.inputs.dim() != master.input_dim ||
      static_cast<std::size_t>(train.num_classes) != master.output_dim)
    throw StructuralError("grow_for_task: task data does not match the master network");

  const std::size_t task_id = master.task_count() + 1;
  const std::uint64_t task_seed = growth::derive_seed(cfg.seed, task_id);
  TaskOutcome out;

  GrowableNetwork ft = empty_task_network(master);
  std::vector<Member> members;
  if (master.neuron_count() == 0) {
    net::MlpShape shape{master.input_dim, {master.output_dim}, {cfg.initial_width}, master.activation,
                        net::HeadKind::Classification};
    ft = net::make_random_network(shape, cfg.initial_init_scale, task_seed);
    members.assign(cfg.initial_width, Member{});
  } else {
    std::vector<std::vector<double>> head;
    TaskMask draft = train_selection_mask(master, train, cfg.mask, task_id, &head);
    for (std::size_t i = 0; i < master.neuron_count(); ++i) {
      if (!draft.bits[i]) continue;
      ft.layers[0].neurons.push_back(Neuron{master.thetas[i], head[i]});
      members.push_back(Member{NeuronRole::InheritedLocked, i, std::nullopt});
    }
  }

  auto fit = [&] {
    growth::FreezeMask freeze = freeze_inherited(members);
    growth::train_network(ft, train, cfg.train_iters, cfg.learning_rate, &freeze);
  };
  auto log_round = [&](std::size_t round, std::size_t copies, std::size_t fresh) {
    out.rounds.push_back(RoundLog{task_id, round, copies, fresh, params_if_committed(master, members),
                                  net::accuracy(ft, train)});
  };

  fit();
  log_round(0, 0, 0);

  for (std::size_t round = 1; round <= cfg.max_grow_rounds; ++round) {
    if (out.rounds.back().train_acc >= cfg.target_accuracy) break;
    growth::GrowthConfig gcfg = cfg.growth;
    gcfg.rng_seed = growth::derive_seed(task_seed, round);
    std::size_t copies = 0;
    std::size_t fresh = 0;

    if (task_id == 1) {
      const std::size_t before = ft.layers[0].neurons.size();
      growth::GrowResult grown = growth::grow_step(ft, train, gcfg, growth::GrowMode::width());
      ft = std::move(grown.net);
      fresh = ft.layers[0].neurons.size() - before;
      members.assign(ft.layers[0].neurons.size(), Member{});
    } else {
      net::AugmentedNetwork aug{ft, {}, gcfg.step_size};
      std::vector<std::size_t> hosts;
      for (std::size_t i = 0; i < members.size(); ++i)
        if (members[i].role == NeuronRole::InheritedLocked) hosts.push_back(i);
      net::add_unlock_candidates(aug, 0, hosts, gcfg.init_scale, growth::derive_seed(gcfg.rng_seed, 0));
      net::add_width_candidates(aug, 0, gcfg.m_prime, gcfg.init_scale, growth::derive_seed(gcfg.rng_seed, 1),
                                /*include_splits=*/false);
      if (aug.candidates.empty()) break;

      growth::StepOneResult tilde = growth::step_one(aug, train, gcfg);
      growth::ScoreVector sv = growth::integrated_gradient_scores(aug, train, gcfg.quadrature_points);
      const std::size_t eta = gcfg.width_budget.resolve(ft.layers[0].neurons.size());
      std::vector<double> eps_hat = growth::select_width(sv.scores, eta, gcfg.step_size);
      ft = net::materialize(aug, eps_hat, tilde.tilde_delta, net::GrowthBudget{eta, std::nullopt, std::nullopt});

      std::vector<Member> next = members;
      for (std::size_t c = 0; c < aug.candidates.size(); ++c) {
        if (eps_hat[c] == 0.0) continue;
        const net::CandidateGate& g = aug.candidates[c];
        if (g.kind == net::GateKind::UnlockCopy) {
          next[g.host] = Member{NeuronRole::UnlockedCopy, std::nullopt, members[g.host].master_index};
          ++copies;
        } else {
          next.push_back(Member{NeuronRole::BrandNew, std::nullopt, std::nullopt});
          ++fresh;
        }
      }
      members = std::move(next);
      reorder(ft, members);
    }
    fit();
    log_round(round, copies, fresh);
  }

  // Commit: append every neuron this task created, record the mask and head,
  // then lock.
  const std::vector<Neuron>& neurons = ft.layers[0].neurons;
  TaskMask mask;
  mask.task_id = task_id;
  std::vector<std::size_t> index(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    const Member& m = members[i];
    if (m.role == NeuronRole::InheritedLocked) {
      if (neurons[i].theta != master.thetas[*m.master_index])
        throw StructuralError("grow_for_task: locked neuron " + std::to_string(*m.master_index) + " was modified");
      index[i] = *m.master_index;
      ++out.reused;
      continue;
    }
    index[i] = master.neuron_count();
    master.thetas.push_back(neurons[i].theta);
    master.locked.push_back(false);
    master.provenance.push_back(Provenance{task_id, m.role, m.parent});
    (m.role == NeuronRole::UnlockedCopy ? out.copies : out.brand_new) += 1;
  }
  if (!std::is_sorted(index.begin(), index.end()))
    throw StructuralError("grow_for_task: task neurons are not in master order");
  mask.bits.assign(master.neuron_count(), false);
  std::vector<std::vector<double>> head;
  for (std::size_t i = 0; i < members.size(); ++i) {
    mask.bits[index[i]] = true;
    head.push_back(neurons[i].out_weight);
  }
  for (TaskMask& old : master.masks) old.bits.resize(master.neuron_count(), false);
  master.masks.push_back(mask);
  master.heads.push_back(std::move(head));
  std::fill(master.locked.begin(), master.locked.end(), true);

  out.mask = std::move(mask);
  out.snapshot = std::move(ft);
  return out;
}

GrowableNetwork retrieve_task_model(const MasterNetwork& master, std::size_t task_id) {
  if (task_id == 0 || task_id > master.task_count())
    throw StructuralError("retrieve_task_model: unknown task id " + std::to_string(task_id));
  const TaskMask& mask = master.masks[task_id - 1];
  const auto& head = master.heads[task_id - 1];
  GrowableNetwork net = empty_task_network(master);
  std::size_t k = 0;
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (!mask.bits[i]) continue;
    if (i >= master.neuron_count() || k >= head.size())
      throw StructuralError("retrieve_task_model: mask and head disagree for task " + std::to_string(task_id));
    net.layers[0].neurons.push_back(Neuron{master.thetas[i], head[k++]});
  }
  if (k != head.size())
    throw StructuralError("retrieve_task_model: mask and head disagree for task " + std::to_string(task_id));
  return net;
}

EvaluationTable evaluate_all_tasks(const MasterNetwork& master, std::span<const Dataset> tests) {
  if (tests.size() < master.task_count()) throw ContractError("evaluate_all_tasks: missing test data");
  EvaluationTable table;
  for (std::size_t t = 1; t <= master.task_count(); ++t) {
    GrowableNetwork net = retrieve_task_model(master, t);
    table.tasks.push_back(TaskMetrics{t, net::loss(net, tests[t - 1]), net::accuracy(net, tests[t - 1])});
  }
  double sum = 0.0;
  for (const TaskMetrics& m : table.tasks) sum += m.accuracy;
  table.mean_accuracy = table.tasks.empty() ? 0.0 : sum / static_cast<double>(table.tasks.size());
  table.master_params = master_params(master);
  return table;
}

}  // namespace firefly::continual
