// stabsel: command-line front end for stable model selection and conformal
// experiments. Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "stabsel/config.hpp"
#include "stabsel/stabsel.hpp"

namespace fs = std::filesystem;
using namespace stabsel;

namespace {

std::vector<double> parse_list(const std::string& text, const std::string& field) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || end == cell.c_str() || *end != '\0') {
      throw InvalidArgument(field + ": cannot parse '" + cell + "' as a number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw InvalidArgument(field + ": empty list");
  return out;
}

Json json_list(std::span<const double> v) {
  Json arr = Json::array();
  for (double x : v) arr.push_back(json_number(x));
  return arr;
}

std::size_t resolve_threads(std::size_t from_config, std::size_t from_flag) {
  if (from_flag > 0) return from_flag;
  if (const char* env = std::getenv("STABSEL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v < 1) throw InvalidArgument("STABSEL_THREADS: must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return from_config;
}

std::string resolve_out_dir(const std::string& from_config, const std::string& from_flag) {
  if (!from_flag.empty()) return from_flag;
  if (const char* env = std::getenv("STABSEL_OUT_DIR")) return env;
  return from_config;
}

std::ofstream open_output(const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("output: cannot write '" + path.string() + "'");
  return out;
}

// Baselines carry their model index so several can share one run.
std::string method_label(const MethodSpec& m) {
  std::string label(to_string(m.kind));
  if (m.kind == MethodKind::single_model_baseline) label += ":" + std::to_string(m.baseline_model);
  return label;
}

struct Flags {
  std::string config;
  std::string out;
  std::size_t threads = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

struct SelectArgs {
  std::string sizes;
  std::string prior;
  std::string mechanism = "minse";
  double eta = 0.0;
  double exp_eta = 0.0;
  double tau = 0.0;
  double alpha = 0.1;
  double alpha_prime = 0.05;
  double scale = 1.0;
  std::size_t samples = 100000;
};

int cmd_select(const SelectArgs& a, const Flags& flags) {
  MechanismConfig cfg;
  cfg.kind = parse_mechanism(a.mechanism);
  const auto sizes = parse_list(a.sizes, "sizes");
  if (a.exp_eta != 0.0) {
    if (!(a.exp_eta >= 1.0)) throw InvalidArgument("exp_eta: must be >= 1");
    cfg.eta = std::log(a.exp_eta);
  } else {
    cfg.eta = a.eta;
  }
  cfg.tau = a.tau;
  cfg.alpha = a.alpha;
  cfg.alpha_prime = a.alpha_prime;
  cfg.scale = a.scale;
  if (!a.prior.empty()) cfg.prior = Prior(parse_list(a.prior, "prior"));
  const Prior b = cfg.prior_for(sizes.size());

  Json rec;
  rec["mechanism"] = std::string(to_string(cfg.kind));
  rec["sizes"] = json_list(sizes);
  std::vector<double> p;
  double gamma = std::exp(certified_eta(cfg));
  double tau = cfg.kind == MechanismKind::minse ? cfg.tau : 0.0;
  if (auto dist = selection_distribution(cfg, sizes)) {
    p = dist->p;
    gamma = dist->budget_used.gamma;
    tau = dist->budget_used.tau;
  } else {
    // Laplace: empirical selection frequencies.
    detail::require(a.samples >= 1, "samples: must be >= 1");
    Rng rng(flags.seed_given ? flags.seed : 1);
    p.assign(sizes.size(), 0.0);
    for (std::size_t s = 0; s < a.samples; ++s) p[select_index(cfg, sizes, rng)] += 1.0;
    for (auto& v : p) v /= static_cast<double>(a.samples);
    rec["samples"] = a.samples;
  }
  rec["p"] = json_list(p);
  rec["expected_size"] = json_number(expected_size(p, sizes));
  // Mechanisms without a prior are certified against the uniform reference.
  const bool uses_prior = cfg.kind == MechanismKind::minse || cfg.kind == MechanismKind::ada_minse;
  const Prior reference = uses_prior ? b : Prior::uniform(sizes.size());
  const double excess = certificate_excess(p, reference, gamma);
  rec["certificate"] = {{"exp_eta", json_number(gamma)},
                        {"eta", json_number(std::log(gamma))},
                        {"tau", json_number(tau)},
                        {"reference", uses_prior && cfg.prior ? "prior" : "uniform"},
                        {"excess", json_number(excess)},
                        {"satisfied", excess <= tau + kCertificateTol}};
  if (cfg.kind == MechanismKind::ada_minse) {
    rec["gamma_star"] = json_number(gamma);
    rec["tau_star"] = json_number(tau);
  }
  std::cout << rec.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// run / recalibrate
// ---------------------------------------------------------------------------

void load_data(RunConfig& rc) {
  if (rc.scenario.kind == ScenarioKind::csv) rc.scenario.data = read_csv_dataset(rc.data_path);
}

int write_batch(RunConfig rc, const Flags& flags) {
  if (flags.seed_given) rc.seeds = {flags.seed};
  rc.threads = resolve_threads(rc.threads, flags.threads);
  rc.output.dir = resolve_out_dir(rc.output.dir, flags.out);
  load_data(rc);

  std::vector<RunMetrics> results;
  for (const auto& method : rc.methods) {
    results.push_back(run_batch_scenario(rc.scenario, method, rc.seeds, rc.threads));
  }

  const fs::path dir(rc.output.dir);
  auto csv = open_output(dir / (rc.output.prefix + "_seeds.csv"));
  csv << "seed,method,scenario,coverage,mean_length,n_test\n";
  Json summary;
  summary["scenario"] = std::string(to_string(rc.scenario.kind));
  summary["alpha"] = json_number(rc.scenario.params.alpha);
  summary["K"] = rc.scenario.params.k;
  summary["n_seeds"] = rc.seeds.size();
  summary["methods"] = Json::array();
  for (std::size_t mi = 0; mi < rc.methods.size(); ++mi) {
    const auto& method = rc.methods[mi];
    const auto& metrics = results[mi];
    for (const auto& r : metrics.per_seed) {
      csv << r.seed << ',' << method_label(method) << ',' << to_string(rc.scenario.kind) << ','
          << fmt_double(r.coverage) << ',' << fmt_double(r.mean_length) << ',' << r.n_test << '\n';
    }
    Json m;
    m["method"] = method_label(method);
    m["eta"] = json_number(method.eta);
    m["tau"] = json_number(method.tau);
    m["base_level"] = json_number(method.base_level(rc.scenario.params.alpha));
    m["coverage"] = {{"mean", json_number(metrics.coverage.mean)}, {"se", json_number(metrics.coverage.se)}};
    m["miscoverage"] = json_number(1.0 - metrics.coverage.mean);
    m["mean_length"] = {{"mean", json_number(metrics.mean_length.mean)}, {"se", json_number(metrics.mean_length.se)}};
    std::size_t unbounded = 0;
    for (const auto& r : metrics.per_seed) unbounded += r.n_unbounded;
    m["n_unbounded"] = unbounded;
    if (rc.scenario.kind == ScenarioKind::group_coin_flip) {
      m["group_coverage"] = {json_number(metrics.group_coverage[0]), json_number(metrics.group_coverage[1])};
      m["group_counts"] = {metrics.group_counts[0], metrics.group_counts[1]};
    }
    if (rc.scenario.kind == ScenarioKind::worst_case_oracle && method.kind == MethodKind::minse) {
      const double bound = std::min(1.0, std::exp(method.eta) / static_cast<double>(rc.scenario.params.k) + method.tau);
      m["theoretical_miscoverage"] = json_number(bound);
    }
    summary["methods"].push_back(m);
  }
  auto js = open_output(dir / (rc.output.prefix + "_summary.json"));
  js << summary.dump(2) << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// online
// ---------------------------------------------------------------------------

int cmd_online(OnlineRunConfig oc, const Flags& flags) {
  if (flags.seed_given) oc.seeds = {flags.seed};
  oc.threads = resolve_threads(oc.threads, flags.threads);
  oc.output.dir = resolve_out_dir(oc.output.dir, flags.out);
  std::optional<Dataset> csv_data;
  if (oc.stream.kind == StreamSpec::Kind::csv) csv_data = read_csv_dataset(oc.stream.path);

  std::vector<OnlineResult> results(oc.seeds.size());
  std::vector<std::exception_ptr> errors(oc.seeds.size());
  auto run_one = [&](std::size_t i) {
    const auto seed = oc.seeds[i];
    try {
      const auto stream = make_stream(oc, seed, csv_data ? &*csv_data : nullptr);
      results[i] = run_online(stream, oc.online, derive_seed(seed, 4));
    } catch (const NumericError& e) {
      errors[i] = std::make_exception_ptr(NumericError("seed " + std::to_string(seed) + ", " + e.what()));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(oc.threads, 1, oc.seeds.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < oc.seeds.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < oc.seeds.size(); i += workers) run_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const fs::path dir(oc.output.dir);
  auto trace = open_output(dir / (oc.output.prefix + "_trace.csv"));
  trace << kTraceHeader << '\n';
  Json summary;
  summary["steps"] = oc.stream.t_len;
  summary["K"] = oc.online.learners.size();
  summary["alpha"] = json_number(oc.online.budget.alpha);
  summary["alpha_prime"] = json_number(*oc.online.budget.alpha_prime);
  summary["eta"] = json_number(oc.online.budget.eta);
  summary["tau"] = json_number(oc.online.budget.tau);
  summary["coma_alpha"] = json_number(oc.online.coma_alpha);
  summary["per_seed"] = Json::array();
  bool empty = true;
  std::vector<double> coma_cov, ada_cov, comb_cov, coma_len, ada_len, comb_len, ada_beta;
  for (std::size_t i = 0; i < oc.seeds.size(); ++i) {
    const auto& res = results[i];
    write_trace_rows(trace, oc.seeds[i], res.records);
    const auto& s = res.summary;
    if (s.empty()) continue;
    empty = false;
    summary["per_seed"].push_back({{"seed", oc.seeds[i]},
                                   {"coma_coverage", json_number(s.coma.coverage)},
                                   {"coma_mean_length", json_number(s.coma.mean_length)},
                                   {"adacoma_coverage", json_number(s.ada_option2.coverage)},
                                   {"adacoma_mean_length", json_number(s.ada_option2.mean_length)},
                                   {"adacoma_comb_coverage", json_number(s.ada_option1.coverage)},
                                   {"adacoma_comb_mean_length", json_number(s.ada_option1.mean_length)},
                                   {"adacoma_beta", json_number(s.ada_beta)},
                                   {"coma_beta", json_number(s.coma_beta)}});
    coma_cov.push_back(s.coma.coverage);
    ada_cov.push_back(s.ada_option2.coverage);
    comb_cov.push_back(s.ada_option1.coverage);
    coma_len.push_back(s.coma.mean_length);
    ada_len.push_back(s.ada_option2.mean_length);
    comb_len.push_back(s.ada_option1.mean_length);
    ada_beta.push_back(s.ada_beta);
  }
  summary["empty"] = empty;
  if (!empty) {
    auto ms = [](const std::vector<double>& v) {
      const auto r = mean_se(v);
      return Json{{"mean", json_number(r.mean)}, {"se", json_number(r.se)}};
    };
    const double gamma = std::exp(oc.online.budget.eta);
    const double beta = mean_se(ada_beta).mean;
    summary["coma"] = {{"coverage", ms(coma_cov)}, {"mean_length", ms(coma_len)}};
    summary["adacoma"] = {{"coverage", ms(ada_cov)},
                          {"mean_length", ms(ada_len)},
                          {"miscoverage_bound", json_number(beta * gamma + oc.online.budget.tau)}};
    summary["adacoma_comb"] = {{"coverage", ms(comb_cov)},
                               {"mean_length", ms(comb_len)},
                               {"miscoverage_bound", json_number(2.0 * (beta * gamma + oc.online.budget.tau))}};
    summary["adacoma_beta"] = json_number(beta);
  }
  auto js = open_output(dir / (oc.output.prefix + "_summary.json"));
  js << summary.dump(2) << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stable model selection for conformal prediction"};
  app.require_subcommand(1);
  Flags flags;
  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", flags.config, "JSON configuration file");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Run a single seed instead of the configured list");
    sub->add_option("--out", flags.out, "Output directory (overrides config and STABSEL_OUT_DIR)");
    sub->add_option("--threads", flags.threads, "Worker threads (overrides config and STABSEL_THREADS)");
  };

  SelectArgs sel;
  auto* select = app.add_subcommand("select", "Selection distribution for one size profile");
  select->add_option("--sizes", sel.sizes, "Comma-separated set sizes")->required();
  select->add_option("--prior", sel.prior, "Comma-separated prior (default uniform)");
  select->add_option("--mechanism", sel.mechanism, "argmin, laplace, exponential, minse or ada_minse");
  select->add_option("--eta", sel.eta, "Stability parameter eta");
  select->add_option("--exp-eta", sel.exp_eta, "e^eta, alternative to --eta");
  select->add_option("--tau", sel.tau, "Additive slack tau");
  select->add_option("--alpha", sel.alpha, "Total miscoverage budget (ada_minse)");
  select->add_option("--alpha-prime", sel.alpha_prime, "Base miscoverage level (ada_minse)");
  select->add_option("--scale", sel.scale, "Size scale L (laplace, exponential)");
  select->add_option("--samples", sel.samples, "Monte Carlo draws for the Laplace mechanism");
  add_common(select, false);

  auto* run = app.add_subcommand("run", "Batch experiment from a config");
  add_common(run, true);
  auto* online = app.add_subcommand("online", "Online COMA / AdaCOMA episode from a config");
  add_common(online, true);
  auto* recal = app.add_subcommand("recalibrate", "Post-selection recalibration on a CSV dataset");
  add_common(recal, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  for (auto* sub : {select, run, online, recal}) {
    if (sub->count("--seed")) flags.seed_given = true;
  }

  try {
    if (select->parsed()) return cmd_select(sel, flags);
    if (run->parsed()) return write_batch(parse_run_config(cfg::load(flags.config)), flags);
    if (recal->parsed()) return write_batch(parse_recalibrate_config(cfg::load(flags.config)), flags);
    if (online->parsed()) return cmd_online(parse_online_config(cfg::load(flags.config)), flags);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
