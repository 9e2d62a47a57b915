#include "firefly/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "firefly/checkpoint.hpp"

namespace firefly::exp {

using json = nlohmann::json;

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::ToyRbf: return "toy-rbf";
    case ExperimentKind::WidthMlp: return "width-mlp";
    case ExperimentKind::DepthMlp: return "depth-mlp";
    case ExperimentKind::Continual: return "continual";
  }
  return "?";
}

namespace {

ExperimentKind kind_from_string(const std::string& s) {
  for (auto k : {ExperimentKind::ToyRbf, ExperimentKind::WidthMlp, ExperimentKind::DepthMlp, ExperimentKind::Continual})
    if (to_string(k) == s) return k;
  throw ConfigError("experiment: unknown kind '" + s + "'");
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Strict view of one JSON object: every key must be consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? std::string("config") : path_) + ": expected an object");
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(name(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = as_count(*v, name(key));
  }
  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) out = static_cast<int>(as_count(*v, name(key)));
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(name(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  template <class T>
  void get_list(const std::string& key, std::vector<T>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(name(key) + ": expected an array");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        out.push_back(static_cast<T>(as_count((*v)[i], name(key) + "[" + std::to_string(i) + "]")));
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(name(it.key()) + ": unknown key");
  }

  static std::uint64_t as_count(const json& v, const std::string& field) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError(field + ": expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_growth(const json& j, growth::GrowthConfig& g) {
  Fields f(j, "growth");
  f.get("step_size", g.step_size);
  f.get("width_budget", g.width_budget.count);
  if (const json* v = f.find("width_fraction")) {
    if (!v->is_number()) throw ConfigError("growth.width_fraction: expected a number");
    g.width_budget.fraction = v->get<double>();
  }
  f.get("depth_neuron_budget", g.depth_neuron_budget);
  f.get("depth_layer_budget", g.depth_layer_budget);
  f.get("m_prime", g.m_prime);
  f.get("quadrature_points", g.quadrature_points);
  f.get("step_one_iters", g.step_one_iters);
  f.get("step_one_lr", g.step_one_lr);
  f.get("init_scale", g.init_scale);
  f.get("penalty_weight", g.penalty_weight);
  std::size_t seed = g.rng_seed;
  f.get("rng_seed", seed);
  g.rng_seed = seed;
  f.finish();
}

void parse_continual(const json& j, RunConfig& cfg) {
  Fields f(j, "continual");
  continual::ContinualConfig& c = cfg.cl;
  f.get("tasks", cfg.cl_tasks);
  f.get("initial_width", c.initial_width);
  f.get("initial_init_scale", c.initial_init_scale);
  f.get("train_iters", c.train_iters);
  f.get("learning_rate", c.learning_rate);
  f.get("target_accuracy", c.target_accuracy);
  f.get("max_grow_rounds", c.max_grow_rounds);
  f.get("scratch_width", cfg.scratch_width);
  f.get("scratch_iters", cfg.scratch_iters);
  std::string head = "per-task";
  f.get("head", head);
  if (head != "per-task") throw ConfigError("continual.head: only 'per-task' is supported");
  if (const json* m = f.find("mask")) {
    Fields mf(*m, "continual.mask");
    mf.get("head_iters", c.mask.head_iters);
    mf.get("epochs", c.mask.epochs);
    mf.get("learning_rate", c.mask.learning_rate);
    mf.get("mask_l1", c.mask.mask_l1);
    mf.finish();
  }
  f.finish();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  Fields f(j, "");
  std::string kind = to_string(cfg.kind);
  f.get("experiment", kind);
  cfg.kind = kind_from_string(kind);

  if (const json* m = f.find("method")) {
    if (!m->is_string()) throw ConfigError("method: expected a string");
    cfg.methods = {m->get<std::string>()};
  }
  if (const json* m = f.find("methods")) {
    if (!m->is_array()) throw ConfigError("methods: expected an array");
    cfg.methods.clear();
    for (const json& v : *m) {
      if (!v.is_string()) throw ConfigError("methods: expected strings");
      cfg.methods.push_back(v.get<std::string>());
    }
  }
  f.get_list("seeds", cfg.seeds);
  f.get("output_dir", cfg.output_dir);
  f.get_list("m_prime_sweep", cfg.m_prime_sweep);
  if (const json* g = f.find("growth")) parse_growth(*g, cfg.growth);
  if (const json* s = f.find("schedule")) {
    Fields sf(*s, "schedule");
    sf.get("train_iters_between_grows", cfg.schedule.train_iters_between_grows);
    sf.get("total_grow_phases", cfg.schedule.total_grow_phases);
    sf.get("learning_rate", cfg.schedule.learning_rate);
    sf.finish();
  }
  if (const json* b = f.find("baseline")) {
    Fields bf(*b, "baseline");
    bf.get("k_trials", cfg.baseline.k_trials);
    bf.get("finetune_iters", cfg.baseline.finetune_iters);
    bf.finish();
  }
  if (const json* i = f.find("initial")) {
    Fields inf(*i, "initial");
    inf.get("width", cfg.initial_width);
    inf.get("init_scale", cfg.initial_init_scale);
    inf.finish();
  }
  if (const json* t = f.find("toy")) {
    Fields tf(*t, "toy");
    tf.get("n_points", cfg.toy.n_points);
    tf.get("truth_neurons", cfg.toy.truth_neurons);
    tf.get("truth_scale", cfg.toy.truth_scale);
    tf.finish();
  }
  if (const json* m = f.find("mlp")) {
    Fields mf(*m, "mlp");
    mf.get("hidden_dim", cfg.mlp.hidden_dim);
    mf.get("initial_width", cfg.mlp.initial_width);
    mf.get("init_scale", cfg.mlp.init_scale);
    mf.finish();
  }
  if (const json* s = f.find("suite")) {
    Fields sf(*s, "suite");
    sf.get("num_classes", cfg.suite.num_classes);
    sf.get("clusters_per_class", cfg.suite.clusters_per_class);
    sf.get("train_per_class", cfg.suite.train_per_class);
    sf.get("test_per_class", cfg.suite.test_per_class);
    sf.get("ring_radius", cfg.suite.ring_radius);
    sf.get("cluster_sd", cfg.suite.cluster_sd);
    sf.finish();
  }
  if (const json* c = f.find("continual")) parse_continual(*c, cfg);
  f.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  std::set<std::uint64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) throw ConfigError("seeds: seeds must be distinct");
  if (methods.empty() && m_prime_sweep.empty()) throw ConfigError("methods: at least one method is required");

  std::set<std::string> allowed;
  switch (kind) {
    case ExperimentKind::ToyRbf: allowed = {std::begin(kMethods), std::end(kMethods)}; break;
    case ExperimentKind::WidthMlp: allowed = {"firefly", "firefly-split-only", "scratch"}; break;
    case ExperimentKind::DepthMlp: allowed = {"firefly", "scratch"}; break;
    case ExperimentKind::Continual: allowed = {"firefly"}; break;
  }
  for (const std::string& m : methods)
    if (!allowed.count(m)) throw ConfigError("methods: '" + m + "' is not valid for experiment " + to_string(kind));
  if (!m_prime_sweep.empty() && kind != ExperimentKind::ToyRbf)
    throw ConfigError("m_prime_sweep: only supported for toy-rbf");

  try {
    growth.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("growth: ") + e.what());
  }
  if (!(schedule.learning_rate > 0.0)) throw ConfigError("schedule.learning_rate: must be positive");
  if (baseline.k_trials < 1) throw ConfigError("baseline.k_trials: must be at least 1");
  if (initial_width < 1) throw ConfigError("initial.width: must be at least 1");
  if (!(initial_init_scale > 0.0)) throw ConfigError("initial.init_scale: must be positive");
  if (toy.n_points < 1) throw ConfigError("toy.n_points: must be at least 1");
  if (mlp.hidden_dim < 1) throw ConfigError("mlp.hidden_dim: must be at least 1");
  if (!(mlp.init_scale > 0.0)) throw ConfigError("mlp.init_scale: must be positive");
  if (suite.num_classes < 2) throw ConfigError("suite.num_classes: must be at least 2");
  if (suite.clusters_per_class < 1) throw ConfigError("suite.clusters_per_class: must be at least 1");
  if (suite.train_per_class < 1 || suite.test_per_class < 1)
    throw ConfigError("suite: per-class sample counts must be at least 1");
  if (kind == ExperimentKind::DepthMlp && (growth.depth_neuron_budget == 0 || growth.depth_layer_budget == 0))
    throw ConfigError("growth.depth_neuron_budget: depth-mlp needs positive depth budgets");
  if (kind == ExperimentKind::Continual) {
    if (cl_tasks < 1) throw ConfigError("continual.tasks: must be at least 1");
    try {
      continual::ContinualConfig c = cl;
      c.growth = growth;
      c.validate();
    } catch (const ContractError& e) {
      throw ConfigError(e.what());
    }
  }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("--seeds: '" + item + "' is not a nonnegative integer");
    seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw ConfigError("--seeds: empty list");
  return seeds;
}

// ---------------------------------------------------------------------------
// Problems and single runs

ToyProblem toy_problem(const RunConfig& cfg, std::uint64_t seed) {
  ToyProblem p;
  p.truth = bench::gen_toy_truth(seed, cfg.toy.truth_neurons, cfg.toy.truth_scale);
  p.data = bench::gen_toy_dataset(p.truth, cfg.toy.n_points, growth::derive_seed(seed, 1));
  p.initial = bench::initial_rbf_network(cfg.initial_width, cfg.initial_init_scale, growth::derive_seed(seed, 2));
  return p;
}

namespace {

net::MlpShape mlp_shape(const RunConfig& cfg, std::size_t width) {
  return net::MlpShape{2, {cfg.mlp.hidden_dim, static_cast<std::size_t>(cfg.suite.num_classes)}, {width, width},
                       net::Activation::Relu, net::HeadKind::Classification};
}

}  // namespace

MlpProblem mlp_problem(const RunConfig& cfg, std::uint64_t seed) {
  MlpProblem p;
  p.data = bench::gen_cl_tasks(1, growth::derive_seed(seed, 1), cfg.suite)[0].train;
  p.initial = net::make_random_network(mlp_shape(cfg, cfg.mlp.initial_width), cfg.mlp.init_scale,
                                       growth::derive_seed(seed, 2));
  return p;
}

namespace {

growth::FireflyResult scratch_curve(const RunConfig& cfg, std::uint64_t seed, const growth::PhaseCallback& on_phase) {
  growth::FireflyResult res;
  const growth::Schedule& s = cfg.schedule;
  for (std::size_t phase = 0; phase <= s.total_grow_phases; ++phase) {
    const std::uint64_t run_seed = growth::derive_seed(growth::derive_seed(seed, 5), phase);
    net::GrowableNetwork net;
    Dataset data;
    if (cfg.kind == ExperimentKind::ToyRbf) {
      data = toy_problem(cfg, seed).data;
      net = bench::initial_rbf_network(cfg.initial_width + phase, cfg.initial_init_scale, run_seed);
    } else {
      data = mlp_problem(cfg, seed).data;
      if (cfg.kind == ExperimentKind::WidthMlp) {
        // Same total neuron count as a width-grown net at this phase.
        const std::size_t total = 2 * cfg.mlp.initial_width + phase * cfg.growth.width_budget.count;
        net::MlpShape shape = mlp_shape(cfg, 0);
        shape.layer_widths = {total - total / 2, total / 2};
        net = net::make_random_network(shape, cfg.mlp.init_scale, run_seed);
      } else {
        net = net::make_random_network(mlp_shape(cfg, cfg.mlp.initial_width), cfg.mlp.init_scale, run_seed);
        const std::size_t extra = phase * cfg.growth.depth_neuron_budget;
        if (extra > 0) {
          net::MlpShape block{cfg.mlp.hidden_dim, {cfg.mlp.hidden_dim}, {extra}, net::Activation::Relu,
                              net::HeadKind::Regression};
          net::GrowableNetwork tmp = net::make_random_network(block, cfg.mlp.init_scale, growth::derive_seed(run_seed, 1));
          net.residual_blocks.push_back(net::ResidualBlock{0, tmp.layers[0].neurons});
        }
      }
    }
    const double loss = growth::train_network(net, data, s.train_iters_between_grows, s.learning_rate);
    growth::PhaseRecord rec{phase, loss, net::count_neurons(net), net::count_params(net), std::nullopt};
    if (on_phase) on_phase(rec);
    res.history.push_back(std::move(rec));
    res.net = std::move(net);
  }
  return res;
}

}  // namespace

growth::FireflyResult run_method(const RunConfig& cfg, const std::string& method, std::uint64_t seed,
                                 std::size_t m_prime, const growth::PhaseCallback& on_phase) {
  std::size_t next_phase = 0;
  growth::PhaseCallback track = [&](const growth::PhaseRecord& rec) {
    next_phase = rec.phase + 1;
    if (on_phase) on_phase(rec);
  };
  try {
    growth::GrowthConfig g = cfg.growth;
    g.m_prime = m_prime;
    g.rng_seed = growth::derive_seed(cfg.growth.rng_seed, seed);
    bench::BaselineConfig b = cfg.baseline;
    b.learning_rate = cfg.schedule.learning_rate;
    b.step_size = cfg.growth.step_size;
    b.init_scale = cfg.growth.init_scale;

    if (method == "scratch") return scratch_curve(cfg, seed, track);
    if (cfg.kind == ExperimentKind::ToyRbf) {
      ToyProblem p = toy_problem(cfg, seed);
      if (method == "firefly" || method == "firefly-split-only") {
        if (method == "firefly-split-only") g.m_prime = 0;
        return growth::firefly_train(p.initial, p.data, g, cfg.schedule, growth::GrowMode::width(), track);
      }
      if (method == "rand-split" || method == "rand-split-new")
        return bench::random_growth_train(p.initial, p.data, b, method == "rand-split" ? 0 : m_prime, cfg.schedule,
                                          growth::derive_seed(seed, 4), track);
    } else {
      MlpProblem p = mlp_problem(cfg, seed);
      if (cfg.kind == ExperimentKind::WidthMlp && (method == "firefly" || method == "firefly-split-only")) {
        if (method == "firefly-split-only") g.m_prime = 0;
        return growth::firefly_train(p.initial, p.data, g, cfg.schedule, growth::GrowMode::width({0, 1}), track);
      }
      if (cfg.kind == ExperimentKind::DepthMlp && method == "firefly")
        return growth::firefly_train(p.initial, p.data, g, cfg.schedule, growth::GrowMode::depth(), track);
    }
  } catch (const NumericError& e) {
    throw NumericError("phase " + std::to_string(next_phase) + ": " + e.what());
  }
  throw ConfigError("methods: '" + method + "' is not valid for experiment " + to_string(cfg.kind));
}

// ---------------------------------------------------------------------------
// Records

std::string boundary_record(const std::string& method, std::uint64_t seed, const growth::PhaseRecord& rec) {
  json j{{"record", "boundary"}, {"method", method}, {"seed", seed}, {"phase", rec.phase},
         {"loss", rec.loss},     {"neurons", rec.neurons}, {"params", rec.params}};
  return j.dump();
}

std::vector<std::string> candidate_records(const std::string& method, std::uint64_t seed,
                                           const growth::PhaseRecord& rec) {
  std::vector<std::string> out;
  if (!rec.growth) return out;
  const growth::GrowthReport& g = *rec.growth;
  for (const growth::CandidateRecord& c : g.candidates) {
    json j{{"record", "candidate"},      {"method", method},          {"seed", seed},
           {"phase", rec.phase},         {"mode", g.mode},            {"candidate_id", c.id},
           {"kind", net::to_string(c.kind)}, {"layer", c.layer},      {"tilde_epsilon", c.tilde_epsilon},
           {"score", c.score},           {"epsilon_hat", c.epsilon_hat}, {"selected", c.selected},
           {"loss_before", g.loss_before}, {"loss_after", g.loss_after}, {"neurons", g.neurons_after},
           {"params", g.params_after}};
    out.push_back(j.dump());
  }
  return out;
}

std::vector<BoundaryRow> read_boundaries(std::istream& in, const std::string& source) {
  std::vector<BoundaryRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw ConfigError(where + "corrupt record (invalid JSON)");
    }
    if (!j.is_object() || !j.contains("record") || !j["record"].is_string())
      throw ConfigError(where + "corrupt record (missing record type)");
    if (j["record"] != "boundary") continue;
    try {
      BoundaryRow r;
      r.method = j.at("method").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.phase = j.at("phase").get<std::size_t>();
      if (!j.at("loss").is_number()) throw ConfigError("loss");
      r.loss = j.at("loss").get<double>();
      r.neurons = j.at("neurons").get<std::size_t>();
      r.params = j.at("params").get<std::size_t>();
      rows.push_back(std::move(r));
    } catch (const std::exception&) {
      throw ConfigError(where + "corrupt boundary record");
    }
  }
  return rows;
}

std::vector<AggregateRow> aggregate(const std::vector<BoundaryRow>& rows) {
  std::vector<std::string> order;
  std::map<std::pair<std::string, std::size_t>, std::vector<const BoundaryRow*>> groups;
  for (const BoundaryRow& r : rows) {
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
    groups[{r.method, r.phase}].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const std::string& m : order) {
    for (auto it = groups.lower_bound({m, 0}); it != groups.end() && it->first.first == m; ++it) {
      const auto& g = it->second;
      AggregateRow a;
      a.method = m;
      a.phase = it->first.second;
      a.n_seeds = g.size();
      double sl = 0.0;
      double sn = 0.0;
      for (const BoundaryRow* r : g) {
        sl += r->loss;
        sn += static_cast<double>(r->neurons);
      }
      const double n = static_cast<double>(g.size());
      a.mean_loss = sl / n;
      a.neurons = sn / n;
      if (g.size() > 1) {
        double ss = 0.0;
        for (const BoundaryRow* r : g) ss += (r->loss - a.mean_loss) * (r->loss - a.mean_loss);
        a.std_loss = std::sqrt(ss / (n - 1.0));
      }
      out.push_back(std::move(a));
    }
  }
  return out;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::string out = "method,phase,neurons,mean_loss,std_loss,n_seeds\n";
  for (const AggregateRow& r : rows)
    out += r.method + "," + std::to_string(r.phase) + "," + fmt(r.neurons) + "," + fmt(r.mean_loss) + "," +
           fmt(r.std_loss) + "," + std::to_string(r.n_seeds) + "\n";
  return out;
}

std::string aggregate_json(const std::vector<AggregateRow>& rows) {
  json arr = json::array();
  for (const AggregateRow& r : rows)
    arr.push_back({{"method", r.method}, {"phase", r.phase}, {"neurons", r.neurons}, {"mean_loss", r.mean_loss},
                   {"std_loss", r.std_loss}, {"n_seeds", r.n_seeds}});
  return arr.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Drivers

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::size_t pool_size(std::size_t threads, std::size_t jobs) {
  return std::max<std::size_t>(1, std::min(threads, jobs));
}

}  // namespace

RunSummary run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir, std::size_t threads) {
  cfg.validate();
  if (cfg.kind == ExperimentKind::Continual) throw ConfigError("experiment: use the continual driver");
  std::filesystem::create_directories(out_dir / "logs");
  std::filesystem::create_directories(out_dir / "checkpoints");

  struct Job {
    std::string label;
    std::string method;
    std::size_t m_prime;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const std::string& m : cfg.methods)
    for (std::uint64_t s : cfg.seeds) jobs.push_back({m, m, cfg.growth.m_prime, s});
  for (std::size_t mp : cfg.m_prime_sweep)
    for (std::uint64_t s : cfg.seeds) jobs.push_back({"firefly-mprime-" + std::to_string(mp), "firefly", mp, s});

  std::vector<std::vector<BoundaryRow>> rows(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      const Job& job = jobs[k];
      try {
        const std::string stem = job.label + "_seed" + std::to_string(job.seed);
        std::ofstream log(out_dir / "logs" / (stem + ".jsonl"), std::ios::binary);
        if (!log) throw ConfigError("cannot write log for " + stem);
        auto on_phase = [&](const growth::PhaseRecord& rec) {
          for (const std::string& c : candidate_records(job.label, job.seed, rec)) log << c << '\n';
          log << boundary_record(job.label, job.seed, rec) << '\n';
          log.flush();
          rows[k].push_back(BoundaryRow{job.label, job.seed, rec.phase, rec.loss, rec.neurons, rec.params});
        };
        growth::FireflyResult res = run_method(cfg, job.method, job.seed, job.m_prime, on_phase);
        save_checkpoint(res.net, out_dir / "checkpoints" / (stem + ".json"));
      } catch (const NumericError& e) {
        errors[k] = std::make_exception_ptr(
            NumericError(job.label + " seed " + std::to_string(job.seed) + " " + e.what()));
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = pool_size(threads, jobs.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<BoundaryRow> all;
  for (const auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  RunSummary summary{aggregate(all), out_dir};
  write_text(out_dir / "aggregate.csv", aggregate_csv(summary.table));

  json methods = json::array();
  std::map<std::string, const AggregateRow*> last;
  std::vector<std::string> order;
  for (const AggregateRow& r : summary.table) {
    if (!last.count(r.method)) order.push_back(r.method);
    last[r.method] = &r;
  }
  for (const std::string& m : order) {
    const AggregateRow& r = *last[m];
    methods.push_back({{"method", m}, {"final_phase", r.phase}, {"final_neurons", r.neurons},
                       {"mean_final_loss", r.mean_loss}, {"std_final_loss", r.std_loss}, {"n_seeds", r.n_seeds}});
  }
  json summary_json{{"experiment", to_string(cfg.kind)}, {"seeds", cfg.seeds}, {"methods", methods}};
  write_text(out_dir / "summary.json", summary_json.dump(2) + "\n");
  return summary;
}

bool bitwise_equal(const Batch& a, const Batch& b) {
  if (a.dim() != b.dim()) return false;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    if (a.columns[k].size() != b.columns[k].size()) return false;
    for (std::size_t r = 0; r < a.columns[k].size(); ++r)
      if (std::bit_cast<std::uint64_t>(a.columns[k][r]) != std::bit_cast<std::uint64_t>(b.columns[k][r]))
        return false;
  }
  return true;
}

net::GrowableNetwork train_scratch_task(const RunConfig& cfg, const Dataset& train, std::size_t width,
                                        std::uint64_t seed) {
  net::MlpShape shape{train.inputs.dim(), {static_cast<std::size_t>(train.num_classes)}, {width},
                      net::Activation::Relu, net::HeadKind::Classification};
  net::GrowableNetwork net = net::make_random_network(shape, cfg.cl.initial_init_scale, seed);
  growth::train_network(net, train, cfg.scratch_iters, cfg.cl.learning_rate);
  return net;
}

std::vector<ContinualSummary> run_continual(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir / "logs");
  continual::ContinualConfig ccfg = cfg.cl;
  ccfg.growth = cfg.growth;
  std::vector<ContinualSummary> all;
  json seeds_json = json::array();

  for (std::uint64_t seed : cfg.seeds) {
    const std::vector<bench::ClTask> tasks = bench::gen_cl_tasks(cfg.cl_tasks, growth::derive_seed(seed, 7), cfg.suite);
    continual::MasterNetwork master =
        continual::make_master(2, static_cast<std::size_t>(cfg.suite.num_classes), net::Activation::Relu);
    ccfg.seed = growth::derive_seed(seed, 8);
    std::vector<Dataset> tests;
    std::vector<Batch> probes;
    std::ofstream log(out_dir / "logs" / ("continual_seed" + std::to_string(seed) + ".jsonl"), std::ios::binary);
    if (!log) throw ConfigError("cannot write continual log");
    std::size_t widest = 0;

    for (std::size_t t = 0; t < tasks.size(); ++t) {
      continual::TaskOutcome outcome;
      try {
        outcome = continual::grow_for_task(master, tasks[t].train, ccfg);
      } catch (const NumericError& e) {
        throw NumericError("continual seed " + std::to_string(seed) + " task " + std::to_string(t + 1) + ": " +
                           e.what());
      }
      tests.push_back(tasks[t].test);
      probes.push_back(net::forward(outcome.snapshot, tasks[t].test.inputs));
      widest = std::max(widest, outcome.mask.count());
      continual::EvaluationTable table = continual::evaluate_all_tasks(master, tests);
      for (std::size_t r = 0; r < outcome.rounds.size(); ++r) {
        const continual::RoundLog& rl = outcome.rounds[r];
        json rec{{"record", "round"},
                 {"task_id", rl.task_id},
                 {"round", rl.round},
                 {"neurons_added_copy", rl.neurons_added_copy},
                 {"neurons_added_new", rl.neurons_added_new},
                 {"master_params", rl.master_params},
                 {"train_acc", rl.train_acc},
                 {"eval_acc_per_task", json::array()}};
        if (r + 1 == outcome.rounds.size()) {
          rec["master_params"] = table.master_params;
          for (const auto& m : table.tasks) rec["eval_acc_per_task"].push_back(m.accuracy);
        }
        log << rec.dump() << '\n';
      }
      log.flush();
    }

    ContinualSummary s;
    s.table = continual::evaluate_all_tasks(master, tests);
    for (std::size_t t = 0; t < tasks.size(); ++t)
      s.retrieval_exact = s.retrieval_exact &&
                          bitwise_equal(net::forward(continual::retrieve_task_model(master, t + 1), tests[t].inputs),
                                        probes[t]);
    const std::size_t width = cfg.scratch_width > 0 ? cfg.scratch_width : std::max<std::size_t>(widest, 1);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      net::GrowableNetwork scratch =
          train_scratch_task(cfg, tasks[t].train, width, growth::derive_seed(growth::derive_seed(seed, 9), t));
      s.scratch_accuracy.push_back(net::accuracy(scratch, tasks[t].test));
      s.scratch_params_total += net::count_params(scratch);
    }
    json per_task = json::array();
    for (const auto& m : s.table.tasks)
      per_task.push_back({{"task_id", m.task_id}, {"loss", m.loss}, {"accuracy", m.accuracy}});
    double scratch_mean = 0.0;
    for (double a : s.scratch_accuracy) scratch_mean += a;
    scratch_mean /= static_cast<double>(s.scratch_accuracy.size());
    seeds_json.push_back({{"seed", seed},
                          {"tasks", per_task},
                          {"mean_accuracy", s.table.mean_accuracy},
                          {"master_params", s.table.master_params},
                          {"scratch_mean_accuracy", scratch_mean},
                          {"scratch_params_total", s.scratch_params_total},
                          {"scratch_width", width},
                          {"retrieval_exact", s.retrieval_exact}});
    all.push_back(std::move(s));
  }
  json summary{{"experiment", "continual"}, {"seeds", seeds_json}};
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  return all;
}

std::vector<std::filesystem::path> generate_data(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (std::uint64_t seed : cfg.seeds) {
    const std::string tag = "seed" + std::to_string(seed);
    if (cfg.kind == ExperimentKind::ToyRbf) {
      const auto path = out_dir / ("toy_" + tag + ".csv");
      bench::write_csv(toy_problem(cfg, seed).data, path);
      written.push_back(path);
    } else if (cfg.kind == ExperimentKind::Continual) {
      const auto tasks = bench::gen_cl_tasks(cfg.cl_tasks, growth::derive_seed(seed, 7), cfg.suite);
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        const std::string stem = "cl_" + tag + "_task" + std::to_string(t + 1);
        bench::write_csv(tasks[t].train, out_dir / (stem + "_train.csv"));
        bench::write_csv(tasks[t].test, out_dir / (stem + "_test.csv"));
        written.push_back(out_dir / (stem + "_train.csv"));
        written.push_back(out_dir / (stem + "_test.csv"));
      }
    } else {
      const auto path = out_dir / ("mlp_" + tag + ".csv");
      bench::write_csv(mlp_problem(cfg, seed).data, path);
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace firefly::exp
