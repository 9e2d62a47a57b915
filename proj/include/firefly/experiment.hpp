#pragma once

// Experiment runner behind the command-line tool: strict JSON configs,
// per-seed growth logs, aggregate tables and reports.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "firefly/bench.hpp"
#include "firefly/continual.hpp"
#include "firefly/growth.hpp"

namespace firefly::exp {

// Invalid configuration or usage; maps to exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { ToyRbf, WidthMlp, DepthMlp, Continual };
std::string to_string(ExperimentKind k);

inline constexpr const char* kMethods[] = {"firefly", "firefly-split-only", "rand-split", "rand-split-new", "scratch"};

struct ToyData {
  std::size_t n_points = 1000;
  std::size_t truth_neurons = 15;
  double truth_scale = 3.0;
};

struct MlpSpec {
  std::size_t hidden_dim = 4;
  std::size_t initial_width = 2;  // per layer
  double init_scale = 0.5;
};

struct RunConfig {
  ExperimentKind kind = ExperimentKind::ToyRbf;
  std::vector<std::string> methods{"firefly"};
  std::vector<std::uint64_t> seeds{0};
  growth::GrowthConfig growth;
  growth::Schedule schedule;
  bench::BaselineConfig baseline;
  std::size_t initial_width = 1;
  double initial_init_scale = 1.0;
  ToyData toy;
  MlpSpec mlp;
  bench::ClSuiteConfig suite;
  std::size_t cl_tasks = 10;
  continual::ContinualConfig cl;
  std::size_t scratch_width = 0;  // 0: match the widest task model
  std::size_t scratch_iters = 2000;
  std::vector<std::size_t> m_prime_sweep;
  std::string output_dir;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Parses a JSON document; unknown keys and ill-typed values are ConfigErrors.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

// Comma-separated integer list.
std::vector<std::uint64_t> parse_seed_list(const std::string& csv);

// ---------------------------------------------------------------------------
// Single runs

struct ToyProblem {
  bench::ToyRbfTruth truth;
  Dataset data;
  net::GrowableNetwork initial;
};
ToyProblem toy_problem(const RunConfig& cfg, std::uint64_t seed);

struct MlpProblem {
  Dataset data;
  net::GrowableNetwork initial;
};
MlpProblem mlp_problem(const RunConfig& cfg, std::uint64_t seed);

// One method on one seed; history has one record per phase boundary. A
// NumericError escaping this call names the phase that failed.
growth::FireflyResult run_method(const RunConfig& cfg, const std::string& method, std::uint64_t seed,
                                 std::size_t m_prime, const growth::PhaseCallback& on_phase = {});

// ---------------------------------------------------------------------------
// Logs and aggregation

struct BoundaryRow {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t phase = 0;
  double loss = 0.0;
  std::size_t neurons = 0;
  std::size_t params = 0;
};

struct AggregateRow {
  std::string method;
  std::size_t phase = 0;
  double neurons = 0.0;
  double mean_loss = 0.0;
  double std_loss = 0.0;  // sample standard deviation; 0 for a single seed
  std::size_t n_seeds = 0;
};

std::string boundary_record(const std::string& method, std::uint64_t seed, const growth::PhaseRecord& rec);
std::vector<std::string> candidate_records(const std::string& method, std::uint64_t seed,
                                           const growth::PhaseRecord& rec);

// Reads boundary records from JSONL text; other record types are skipped.
// Throws ConfigError "<source>:<line>: ..." on a corrupt line.
std::vector<BoundaryRow> read_boundaries(std::istream& in, const std::string& source);

// Grouped by (method, phase), methods in first-seen order.
std::vector<AggregateRow> aggregate(const std::vector<BoundaryRow>& rows);
std::string aggregate_csv(const std::vector<AggregateRow>& rows);
std::string aggregate_json(const std::vector<AggregateRow>& rows);

// ---------------------------------------------------------------------------
// Drivers

struct RunSummary {
  std::vector<AggregateRow> table;
  std::filesystem::path out_dir;
};

// Runs every (method, seed) of a growth experiment and writes logs/,
// checkpoints/, aggregate.csv and summary.json under out_dir. `threads`
// caps concurrently running seeds.
RunSummary run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir, std::size_t threads = 1);

struct ContinualSummary {
  continual::EvaluationTable table;
  std::vector<double> scratch_accuracy;
  std::size_t scratch_params_total = 0;
  bool retrieval_exact = true;
};

// One continual-learning run per seed; writes logs/continual_seed<k>.jsonl and summary.json.
std::vector<ContinualSummary> run_continual(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Scratch reference for one task: an independent model of `width` neurons.
net::GrowableNetwork train_scratch_task(const RunConfig& cfg, const Dataset& train, std::size_t width,
                                        std::uint64_t seed);

// Dataset CSVs for the configured experiment.
std::vector<std::filesystem::path> generate_data(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Snapshot forward outputs are compared bitwise against retrieval.
bool bitwise_equal(const Batch& a, const Batch& b);

}  // namespace firefly::exp
