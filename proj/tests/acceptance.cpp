// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "firefly/experiment.hpp"
#include "firefly/growth.hpp"
#include "support.hpp"

using namespace firefly;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail, double seconds) {
  std::printf("%s criterion %d: %s (%.1fs)\n", pass ? "PASS" : "FAIL", id, detail.c_str(), seconds);
  std::fflush(stdout);
  failures += !pass;
}

template <class F>
void timed(int id, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool pass = false;
  try {
    pass = body(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  report(id, pass, detail, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Standard error of the difference of two independent sample means.
double pooled_se(const std::vector<double>& a, const std::vector<double>& b) {
  return std::sqrt(variance(a) / static_cast<double>(a.size()) + variance(b) / static_cast<double>(b.size()));
}

std::vector<double> finals(const std::vector<std::vector<double>>& curves) {
  std::vector<double> f;
  for (const auto& c : curves) f.push_back(c.back());
  return f;
}

// Toy setting: 1 -> 10 neurons, 10,000 iterations per phase, 20 truth seeds.
exp::RunConfig toy_config() {
  exp::RunConfig cfg;
  cfg.kind = exp::ExperimentKind::ToyRbf;
  cfg.seeds.clear();
  for (std::uint64_t s = 0; s < 20; ++s) cfg.seeds.push_back(s);
  cfg.schedule = growth::Schedule{10000, 9, 0.02};
  cfg.growth.init_scale = 1.0;
  cfg.initial_width = 1;
  return cfg;
}

std::vector<double> curve(const exp::RunConfig& cfg, const std::string& method, std::uint64_t seed,
                          std::size_t m_prime) {
  std::vector<double> c;
  for (const auto& h : exp::run_method(cfg, method, seed, m_prime).history) c.push_back(h.loss);
  return c;
}

std::vector<double> brute_force_width(const std::vector<double>& s, std::size_t budget, double e) {
  const std::size_t n = s.size();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= 3;
  std::vector<double> best(n, 0.0);
  double best_v = 0.0;
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<double> eps(n);
    std::size_t c = code, nz = 0;
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i, c /= 3) {
      eps[i] = (static_cast<double>(c % 3) - 1.0) * e;
      nz += eps[i] != 0.0;
      v += eps[i] * s[i];
    }
    if (nz <= budget && v < best_v) best_v = v, best = eps;
  }
  return best;
}

net::GrowableNetwork random_mlp(std::uint64_t seed, std::size_t layers) {
  net::MlpShape shape;
  shape.input_dim = 2;
  shape.layer_output_dims.assign(layers, 3);
  shape.layer_output_dims.back() = 2;
  shape.layer_widths.assign(layers, 4);
  shape.activation = net::Activation::Gaussian;
  shape.head = net::HeadKind::Regression;
  return net::make_random_network(shape, 0.7, seed);
}

}  // namespace

int main() {
  // Criteria 1 and 2 share the toy runs: m'=0 is the split-only variant.
  const exp::RunConfig toy = toy_config();
  std::map<std::string, std::vector<std::vector<double>>> curves;
  const auto toy_t0 = std::chrono::steady_clock::now();
  for (std::uint64_t seed : toy.seeds) {
    curves["firefly"].push_back(curve(toy, "firefly", seed, 5));
    curves["split-only"].push_back(curve(toy, "firefly-split-only", seed, 0));
    curves["rand-split"].push_back(curve(toy, "rand-split", seed, 0));
    curves["rand-split-new"].push_back(curve(toy, "rand-split-new", seed, 5));
    curves["mprime-1"].push_back(curve(toy, "firefly", seed, 1));
    std::printf("  toy seed %llu: firefly %.4g split-only %.4g rand-split %.4g rand-split-new %.4g m'=1 %.4g\n",
                static_cast<unsigned long long>(seed), curves["firefly"].back().back(),
                curves["split-only"].back().back(), curves["rand-split"].back().back(),
                curves["rand-split-new"].back().back(), curves["mprime-1"].back().back());
    std::fflush(stdout);
  }
  const double toy_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - toy_t0).count();

  {
    const auto ff = finals(curves["firefly"]);
    const auto so = finals(curves["split-only"]);
    const auto rsn = finals(curves["rand-split-new"]);
    const bool a = mean(ff) < mean(so) && mean(so) - mean(ff) > pooled_se(ff, so);
    const bool b = mean(ff) <= mean(rsn);
    auto plateau = [&](const std::string& m) {
      std::size_t n = 0;
      for (const auto& c : curves[m]) n += (c[5] - c[9]) < 0.2 * c[5];
      return n;
    };
    std::size_t reach = 0;
    for (const auto& c : curves["firefly"]) reach += c[9] < 0.05 * c[0];
    const std::size_t half = toy.seeds.size() / 2;
    const bool c = plateau("split-only") > half && plateau("rand-split") > half && reach > half;
    std::string detail = fmt("(a) firefly %.4g vs split-only %.4g, se %.3g; ", mean(ff), mean(so), pooled_se(ff, so));
    detail += fmt("(b) rand-split-new %.4g; ", mean(rsn));
    detail += fmt("(c) plateau split-only %.0f/20, rand-split %.0f/20, firefly <5%% on %.0f/20", double(plateau("split-only")),
                  double(plateau("rand-split")), double(reach));
    detail += std::string(" [a ") + (a ? "ok" : "no") + ", b " + (b ? "ok" : "no") + ", c " + (c ? "ok" : "no") + "]";
    report(1, a && b && c, detail, toy_seconds);
  }

  {
    const auto m0 = finals(curves["split-only"]);
    const auto m1 = finals(curves["mprime-1"]);
    const auto m5 = finals(curves["firefly"]);
    const bool pass = mean(m1) < mean(m0) && mean(m5) <= mean(m1) + pooled_se(m5, m1);
    report(2, pass,
           fmt("mean final loss m'=0 %.4g, m'=1 %.4g, m'=5 %.4g, se(5,1) %.3g", mean(m0), mean(m1), mean(m5),
               pooled_se(m5, m1)),
           0.0);
  }

  timed(3, [](std::string& detail) {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      auto p = testsupport::random_smooth_problem(rng);
      worst = std::max(worst, testsupport::max_rel_error(testsupport::ad_gradient(p.net, p.data),
                                                         testsupport::fd_gradient(p.net, p.data, 1e-4), 1e-8));
    }
    detail = fmt("max relative error %.3g over 100 configurations", worst);
    return worst <= 1e-5;
  });

  timed(4, [](std::string& detail) {
    std::mt19937_64 rng(4);
    auto x = testsupport::random_batch(rng, 256, 2, 1.5);
    double lo_s = INFINITY, hi_s = 0, lo_n = INFINITY, hi_n = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto base_net = random_mlp(seed, 2);
      auto base = net::forward(base_net, x);
      auto ratio = [&](net::AugmentedNetwork& aug) {
        auto dev = [&](double e) {
          aug.set_gate_values(std::vector<double>(aug.candidates.size(), e));
          return testsupport::max_abs_diff(net::forward(aug, x), base);
        };
        return dev(1e-2) / dev(5e-3);
      };
      auto split = net::attach_width_candidates(base_net, 0, 0, 1.0, 0.5, seed);
      net::add_width_candidates(split, 1, 0, 0.5, seed + 1);
      net::AugmentedNetwork fresh{base_net, {}, 1.0};
      net::add_width_candidates(fresh, 0, 5, 0.5, seed, false);
      const double rs = ratio(split), rn = ratio(fresh);
      lo_s = std::min(lo_s, rs), hi_s = std::max(hi_s, rs);
      lo_n = std::min(lo_n, rn), hi_n = std::max(hi_n, rn);
    }
    detail = fmt("split ratios [%.3f, %.3f], new-neuron ratios [%.3f, %.3f]", lo_s, hi_s, lo_n, hi_n);
    return lo_s >= 3.5 && hi_s <= 4.5 && lo_n >= 1.8 && hi_n <= 2.2;
  });

  timed(5, [](std::string& detail) {
    std::mt19937_64 rng(5);
    std::size_t identity_ok = 0, monotone = 0;
    for (int trial = 0; trial < 50; ++trial) {
      auto g = testsupport::random_gate_instance(rng);
      auto off = g.aug;
      off.set_gate_values(std::vector<double>{0.0});
      const double dl = net::loss(g.aug, g.data) - net::loss(off, g.data);
      auto err = [&](std::size_t n) {
        auto sv = growth::integrated_gradient_scores(g.aug, g.data, n);
        return std::abs(sv.scores[0] * sv.tilde_epsilon[0] - dl);
      };
      identity_ok += err(64) <= 1e-4 * std::abs(dl) + 1e-8;
      const double e1 = err(1), e3 = err(3), e16 = err(16);
      monotone += e3 < e1 && e16 < e3;
    }
    detail = fmt("identity at n=64 on %.0f/50, monotone 1->3->16 on %.0f/50", double(identity_ok), double(monotone));
    return identity_ok == 50 && monotone >= 45;
  });

  timed(6, [](std::string& detail) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> len(1, 8);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = len(rng);
      std::uniform_int_distribution<std::size_t> eta(0, n);
      const std::size_t budget = eta(rng);
      std::vector<double> s(n);
      for (double& v : s) v = normal(rng);
      mismatches += growth::select_width(s, budget, 0.01) != brute_force_width(s, budget, 0.01);
    }
    detail = fmt("%.0f mismatches over 200 instances", double(mismatches));
    return mismatches == 0;
  });

  timed(7, [](std::string& detail) {
    std::mt19937_64 rng(7);
    auto x = testsupport::random_batch(rng, 128, 2, 1.5);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto base_net = random_mlp(seed, 3);
      auto aug = net::attach_depth_candidates(base_net, 4, 1.0, 0.5, seed);
      aug.set_gate_values(std::vector<double>(aug.candidates.size(), 0.0));
      worst = std::max(worst, testsupport::max_abs_diff(net::forward(aug, x), net::forward(base_net, x)));
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> small(0, 6);
    std::size_t violations = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t slots = small(rng) + 1;
      std::vector<growth::DepthScore> ds;
      for (std::size_t sl = 0; sl < slots; ++sl) {
        const std::size_t k = small(rng);
        for (std::size_t i = 0; i < k; ++i) ds.push_back(growth::DepthScore{sl, i, normal(rng)});
      }
      const std::size_t nb = small(rng), lb = small(rng);
      auto e = growth::select_depth(ds, nb, lb, 0.01);
      std::size_t neurons = 0;
      std::set<std::size_t> active;
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (e[i] != 0.0) ++neurons, active.insert(ds[i].slot);
      violations += neurons > nb || active.size() > lb;
    }
    detail = fmt("gates-off deviation %.3g, budget violations %.0f/200", worst, double(violations));
    return worst <= 1e-12 && violations == 0;
  });

  timed(8, [](std::string& detail) {
    exp::RunConfig cfg;
    cfg.kind = exp::ExperimentKind::Continual;
    cfg.seeds = {0};
    cfg.cl_tasks = 10;
    const auto dir = std::filesystem::temp_directory_path() / "firefly_acceptance_continual";
    std::filesystem::remove_all(dir);
    const auto s = exp::run_continual(cfg, dir).at(0);
    const double scratch = mean(s.scratch_accuracy);
    char buf[256];
    std::snprintf(buf, sizeof buf, "retrieval %s; mean accuracy %.4f vs scratch %.4f; params %zu vs scratch %zu",
                  s.retrieval_exact ? "bit-identical" : "MISMATCH", s.table.mean_accuracy, scratch,
                  s.table.master_params, s.scratch_params_total);
    detail = buf;
    return s.retrieval_exact && s.table.mean_accuracy >= scratch - 0.05 &&
           s.table.master_params < s.scratch_params_total;
  });

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
  return failures == 0 ? 0 : 1;
}
