// firefly: run growth experiments and aggregate their logs.
//
// Exit status: 0 ok, 2 configuration or usage error, 3 numeric failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "firefly/errors.hpp"
#include "firefly/experiment.hpp"

namespace {

using firefly::exp::ConfigError;
using firefly::exp::RunConfig;

constexpr int kUsage = 2;
constexpr int kNumeric = 3;

std::size_t thread_cap() {
  const char* env = std::getenv("FIREFLY_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const unsigned long n = std::strtoul(env, &end, 10);
  if (*end != '\0' || n == 0) throw ConfigError("FIREFLY_THREADS: expected a positive integer");
  return n;
}

RunConfig resolve(const std::string& config_path, const std::string& seeds, std::string& out_dir) {
  RunConfig cfg = firefly::exp::load_config(config_path);
  if (!seeds.empty()) {
    cfg.seeds = firefly::exp::parse_seed_list(seeds);
    cfg.validate();
  }
  if (out_dir.empty()) out_dir = cfg.output_dir;
  if (out_dir.empty()) throw ConfigError("--out: no output directory given (flag or output_dir)");
  return cfg;
}

int report(const std::vector<std::string>& inputs, const std::string& format) {
  std::vector<firefly::exp::BoundaryRow> rows;
  std::vector<std::filesystem::path> files;
  for (const std::string& in : inputs) {
    if (std::filesystem::is_directory(in)) {
      std::vector<std::filesystem::path> found;
      for (const auto& e : std::filesystem::recursive_directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".jsonl") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  for (const auto& f : files) {
    std::ifstream is(f);
    if (!is) throw ConfigError("cannot read " + f.string());
    auto part = firefly::exp::read_boundaries(is, f.string());
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const auto table = firefly::exp::aggregate(rows);
  std::cout << (format == "json" ? firefly::exp::aggregate_json(table) : firefly::exp::aggregate_csv(table));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grow networks by firefly descent and compare against baselines"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string seeds;
  std::string format = "csv";
  std::vector<std::string> inputs;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seeds", seeds, "comma-separated seed list overriding the config");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "write dataset CSVs");
  add_common(gen);
  CLI::App* run = app.add_subcommand("run", "run a growth experiment");
  add_common(run);
  CLI::App* cont = app.add_subcommand("continual", "run the continual-learning suite");
  add_common(cont);
  CLI::App* rep = app.add_subcommand("report", "aggregate boundary records from JSONL logs");
  rep->add_option("inputs", inputs, "log files or directories")->required();
  rep->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (rep->parsed()) return report(inputs, format);
    RunConfig cfg = resolve(config_path, seeds, out_dir);
    if (gen->parsed()) {
      for (const auto& p : firefly::exp::generate_data(cfg, out_dir)) std::cout << p.string() << '\n';
      return 0;
    }
    if (cont->parsed() || cfg.kind == firefly::exp::ExperimentKind::Continual) {
      if (cfg.kind != firefly::exp::ExperimentKind::Continual)
        throw ConfigError("experiment: the continual subcommand needs experiment \"continual\"");
      const auto summaries = firefly::exp::run_continual(cfg, out_dir);
      for (std::size_t i = 0; i < summaries.size(); ++i)
        std::cout << "seed " << cfg.seeds[i] << ": mean accuracy " << summaries[i].table.mean_accuracy
                  << ", master params " << summaries[i].table.master_params << ", retrieval "
                  << (summaries[i].retrieval_exact ? "exact" : "MISMATCH") << '\n';
      return 0;
    }
    const auto summary = firefly::exp::run_experiment(cfg, out_dir, thread_cap());
    std::cout << firefly::exp::aggregate_csv(summary.table);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const firefly::ContractError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const firefly::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
