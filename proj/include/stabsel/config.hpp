#pragma once

// JSON run configurations for the command-line tool. Every object is checked
// against its list of known keys before any field is read.

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "stabsel/error.hpp"
#include "stabsel/experiments.hpp"
#include "stabsel/online.hpp"
#include "stabsel/report.hpp"

namespace stabsel {

using Json = nlohmann::json;

/// A double rounded to 12 significant digits, for JSON summaries. Non-finite
/// values become null.
inline Json json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::strtod(fmt_double(v).c_str(), nullptr);
}

namespace cfg {

inline void check_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw InvalidArgument(where + ": expected an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known) throw InvalidArgument(where + "." + item.key() + ": unknown key");
  }
}

inline double get_double(const Json& obj, const std::string& where, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw InvalidArgument(where + "." + key + ": expected a number");
  return v.get<double>();
}

inline std::size_t get_count(const Json& obj, const std::string& where, const char* key, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw InvalidArgument(where + "." + key + ": expected a nonnegative integer");
  }
  return v.get<std::size_t>();
}

inline std::string get_string(const Json& obj, const std::string& where, const char* key, std::string fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_string()) throw InvalidArgument(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline Json load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config: cannot open '" + path + "'");
  try {
    return Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument(std::string("config: parse error: ") + e.what());
  }
}

/// "seeds": a count (seeds 1..n) or an explicit list.
inline std::vector<std::uint64_t> parse_seeds(const Json& root, std::size_t fallback_count) {
  if (!root.contains("seeds")) return seed_range(fallback_count);
  const auto& v = root.at("seeds");
  if (v.is_number_integer()) {
    if (v.get<long long>() < 1) throw InvalidArgument("seeds: count must be >= 1");
    return seed_range(v.get<std::size_t>());
  }
  if (!v.is_array() || v.empty()) throw InvalidArgument("seeds: expected a count or a nonempty list");
  std::vector<std::uint64_t> seeds;
  for (const auto& s : v) {
    if (!s.is_number_unsigned()) throw InvalidArgument("seeds: entries must be nonnegative integers");
    seeds.push_back(s.get<std::uint64_t>());
  }
  return seeds;
}

inline ScenarioParams parse_params(const Json& j, const std::string& where, ScenarioParams p = {}) {
  p.k = get_count(j, where, "K", p.k);
  p.alpha = get_double(j, where, "alpha", p.alpha);
  p.n_train = get_count(j, where, "n_train", p.n_train);
  p.m = get_count(j, where, "m", p.m);
  p.n_aux = get_count(j, where, "n_aux", p.n_aux);
  p.n_test = get_count(j, where, "n_test", p.n_test);
  p.d = get_count(j, where, "d", p.d);
  p.blocks = get_count(j, where, "blocks", p.blocks);
  p.noise = get_double(j, where, "noise", p.noise);
  p.t_len = get_count(j, where, "T", p.t_len);
  p.ar = get_double(j, where, "ar", p.ar);
  p.ma = get_double(j, where, "ma", p.ma);
  p.lags = get_count(j, where, "lags", p.lags);
  return p;
}

inline MethodSpec parse_method_spec(const Json& j, const std::string& where) {
  check_keys(j, where,
             {"kind", "eta", "exp_eta", "tau", "alpha_prime", "baseline_model", "alpha_base", "scale", "aux_mechanism",
              "alpha_tilde"});
  if (!j.contains("kind")) throw InvalidArgument(where + ".kind: required");
  MethodSpec m;
  m.kind = parse_method(get_string(j, where, "kind", ""));
  if (j.contains("eta") && j.contains("exp_eta")) throw InvalidArgument(where + ": give eta or exp_eta, not both");
  m.eta = get_double(j, where, "eta", 0.0);
  if (j.contains("exp_eta")) {
    const double g = get_double(j, where, "exp_eta", 1.0);
    if (!(g >= 1.0)) throw InvalidArgument(where + ".exp_eta: must be >= 1");
    m.eta = std::log(g);
  }
  m.tau = get_double(j, where, "tau", 0.0);
  m.alpha_prime = get_double(j, where, "alpha_prime", m.alpha_prime);
  m.baseline_model = get_count(j, where, "baseline_model", 0);
  if (j.contains("alpha_base")) m.alpha_base = get_double(j, where, "alpha_base", 0.0);
  m.scale = get_double(j, where, "scale", 0.0);
  if (j.contains("aux_mechanism")) m.aux_mechanism = parse_mechanism(get_string(j, where, "aux_mechanism", "minse"));
  if (j.contains("alpha_tilde")) m.alpha_tilde = get_double(j, where, "alpha_tilde", 0.1);
  return m;
}

}  // namespace cfg

struct OutputSpec {
  std::string dir = ".";
  std::string prefix = "run";
};

namespace cfg {

inline OutputSpec parse_output(const Json& root) {
  OutputSpec out;
  if (root.contains("output")) {
    const auto& o = root.at("output");
    check_keys(o, "output", {"dir", "prefix"});
    out.dir = get_string(o, "output", "dir", out.dir);
    out.prefix = get_string(o, "output", "prefix", out.prefix);
  }
  return out;
}

}  // namespace cfg

/// Batch configuration for `run` and `recalibrate`.
struct RunConfig {
  Scenario scenario;
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds;
  OutputSpec output;
  std::size_t threads = 1;
  std::string data_path;

  void validate() const {
    scenario.params.validate(scenario.kind);
    detail::require(!methods.empty(), "methods: need at least one method");
    for (const auto& m : methods) m.validate(scenario.params.alpha);
    detail::require(threads >= 1, "threads: must be >= 1");
  }
};

inline RunConfig parse_run_config(const Json& root) {
  cfg::check_keys(root, "config", {"scenario", "method", "methods", "seeds", "output", "threads", "data"});
  RunConfig rc;
  if (!root.contains("scenario")) throw InvalidArgument("scenario: required");
  const auto& s = root.at("scenario");
  cfg::check_keys(s, "scenario",
                  {"kind", "K", "alpha", "n_train", "m", "n_aux", "n_test", "d", "blocks", "noise", "T", "ar", "ma",
                   "lags"});
  rc.scenario.kind = parse_scenario(cfg::get_string(s, "scenario", "kind", "coin_flip"));
  ScenarioParams defaults;
  if (rc.scenario.kind == ScenarioKind::toy_regression) defaults.noise = 0.25;
  rc.scenario.params = cfg::parse_params(s, "scenario", defaults);

  if (root.contains("method") && root.contains("methods")) {
    throw InvalidArgument("methods: give either method or methods, not both");
  }
  if (root.contains("method")) {
    rc.methods.push_back(cfg::parse_method_spec(root.at("method"), "method"));
  } else if (root.contains("methods")) {
    const auto& arr = root.at("methods");
    if (!arr.is_array()) throw InvalidArgument("methods: expected a list");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      rc.methods.push_back(cfg::parse_method_spec(arr[i], "methods[" + std::to_string(i) + "]"));
    }
  } else {
    throw InvalidArgument("method: required");
  }
  rc.seeds = cfg::parse_seeds(root, 50);
  rc.output = cfg::parse_output(root);
  rc.threads = cfg::get_count(root, "config", "threads", 1);
  rc.data_path = cfg::get_string(root, "config", "data", "");
  if (rc.scenario.kind == ScenarioKind::csv && rc.data_path.empty()) {
    throw InvalidArgument("data: csv scenario needs a data path");
  }
  rc.validate();
  return rc;
}

/// Recalibration on user data: a csv scenario with an aux-driven selector.
inline RunConfig parse_recalibrate_config(const Json& root) {
  cfg::check_keys(root, "config", {"data", "K", "alpha", "blocks", "selector", "seeds", "output", "threads"});
  RunConfig rc;
  rc.data_path = cfg::get_string(root, "config", "data", "");
  if (rc.data_path.empty()) throw InvalidArgument("data: required");
  rc.scenario.kind = ScenarioKind::csv;
  rc.scenario.params.k = cfg::get_count(root, "config", "K", 5);
  rc.scenario.params.alpha = cfg::get_double(root, "config", "alpha", 0.1);
  rc.scenario.params.blocks = cfg::get_count(root, "config", "blocks", 5);
  MethodSpec m;
  m.kind = MethodKind::recalibrated;
  if (root.contains("selector")) {
    const auto& s = root.at("selector");
    cfg::check_keys(s, "selector", {"mechanism", "eta", "tau", "alpha_prime", "alpha_tilde"});
    m.aux_mechanism = parse_mechanism(cfg::get_string(s, "selector", "mechanism", "minse"));
    m.eta = cfg::get_double(s, "selector", "eta", 0.0);
    m.tau = cfg::get_double(s, "selector", "tau", 0.0);
    m.alpha_prime = cfg::get_double(s, "selector", "alpha_prime", m.alpha_prime);
    if (s.contains("alpha_tilde")) m.alpha_tilde = cfg::get_double(s, "selector", "alpha_tilde", 0.1);
  }
  rc.methods.push_back(m);
  rc.seeds = cfg::parse_seeds(root, 1);
  rc.output = cfg::parse_output(root);
  rc.output.prefix = rc.output.prefix == "run" ? "recalibrate" : rc.output.prefix;
  rc.threads = cfg::get_count(root, "config", "threads", 1);
  rc.validate();
  return rc;
}

struct StreamSpec {
  enum class Kind { arma, csv };
  Kind kind = Kind::arma;
  std::size_t t_len = 10000;
  double ar = 0.9;
  double ma = 0.1;
  double noise_sd = 1.0;
  std::size_t lags = 3;
  std::string path;
};

struct OnlineRunConfig {
  StreamSpec stream;
  OnlineConfig online;
  std::vector<std::uint64_t> seeds;
  OutputSpec output;
  std::size_t threads = 1;
};

inline LearnerSpec parse_learner(const Json& j, const std::string& where) {
  cfg::check_keys(j, where, {"kind", "learning_rate", "penalty", "strength", "window", "retrain"});
  LearnerSpec spec;
  const auto kind = cfg::get_string(j, where, "kind", "sgd");
  if (kind == "sgd") {
    spec.kind = LearnerSpec::Kind::sgd;
  } else if (kind == "rolling_ols") {
    spec.kind = LearnerSpec::Kind::rolling_ols;
  } else {
    throw InvalidArgument(where + ".kind: unknown learner '" + kind + "'");
  }
  spec.learning_rate = cfg::get_double(j, where, "learning_rate", spec.learning_rate);
  const auto penalty = cfg::get_string(j, where, "penalty", "none");
  if (penalty == "none") {
    spec.penalty = SgdRegressor::Penalty::none;
  } else if (penalty == "l1") {
    spec.penalty = SgdRegressor::Penalty::l1;
  } else if (penalty == "l2") {
    spec.penalty = SgdRegressor::Penalty::l2;
  } else {
    throw InvalidArgument(where + ".penalty: must be none, l1 or l2");
  }
  spec.strength = cfg::get_double(j, where, "strength", 0.0);
  spec.window = cfg::get_count(j, where, "window", spec.window);
  spec.retrain = cfg::get_count(j, where, "retrain", spec.retrain);
  if (spec.kind == LearnerSpec::Kind::sgd) {
    detail::require(spec.learning_rate > 0.0, where + ".learning_rate: must be > 0");
    detail::require(spec.strength >= 0.0, where + ".strength: must be >= 0");
  } else {
    detail::require(spec.window >= 2, where + ".window: must be >= 2");
    detail::require(spec.retrain >= 1, where + ".retrain: must be >= 1");
  }
  return spec;
}

inline OnlineRunConfig parse_online_config(const Json& root) {
  cfg::check_keys(root, "config",
                  {"stream", "learners", "warmup", "window", "aci_gamma", "coma_alpha", "budget", "weights", "scale",
                   "seeds", "output", "threads"});
  OnlineRunConfig oc;
  if (root.contains("stream")) {
    const auto& s = root.at("stream");
    cfg::check_keys(s, "stream", {"kind", "T", "ar", "ma", "noise_sd", "lags", "path"});
    const auto kind = cfg::get_string(s, "stream", "kind", "arma_stream");
    if (kind == "arma_stream") {
      oc.stream.kind = StreamSpec::Kind::arma;
    } else if (kind == "csv") {
      oc.stream.kind = StreamSpec::Kind::csv;
    } else {
      throw InvalidArgument("stream.kind: must be arma_stream or csv");
    }
    oc.stream.t_len = cfg::get_count(s, "stream", "T", oc.stream.t_len);
    oc.stream.ar = cfg::get_double(s, "stream", "ar", oc.stream.ar);
    oc.stream.ma = cfg::get_double(s, "stream", "ma", oc.stream.ma);
    oc.stream.noise_sd = cfg::get_double(s, "stream", "noise_sd", oc.stream.noise_sd);
    oc.stream.lags = cfg::get_count(s, "stream", "lags", oc.stream.lags);
    oc.stream.path = cfg::get_string(s, "stream", "path", "");
  }
  if (oc.stream.kind == StreamSpec::Kind::arma && !(std::abs(oc.stream.ar) < 1.0)) {
    throw InvalidArgument("stream.ar: |ar| must be < 1 for a stationary stream");
  }
  detail::require(oc.stream.noise_sd >= 0.0, "stream.noise_sd: must be >= 0");
  detail::require(oc.stream.lags >= 1, "stream.lags: must be >= 1");
  if (oc.stream.kind == StreamSpec::Kind::csv && oc.stream.path.empty()) {
    throw InvalidArgument("stream.path: csv stream needs a path");
  }

  auto& o = oc.online;
  if (root.contains("learners")) {
    const auto& arr = root.at("learners");
    if (!arr.is_array() || arr.empty()) throw InvalidArgument("learners: expected a nonempty list");
    o.learners.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      o.learners.push_back(parse_learner(arr[i], "learners[" + std::to_string(i) + "]"));
    }
  }
  o.warmup = cfg::get_count(root, "config", "warmup", o.warmup);
  o.window = cfg::get_count(root, "config", "window", o.window);
  detail::require(o.window >= 1, "window: must be >= 1");
  o.aci_gamma = cfg::get_double(root, "config", "aci_gamma", o.aci_gamma);
  detail::require(o.aci_gamma > 0.0, "aci_gamma: must be > 0");
  o.scale = cfg::get_double(root, "config", "scale", o.scale);
  detail::require(o.scale > 0.0, "scale: must be > 0");

  if (root.contains("budget")) {
    const auto& b = root.at("budget");
    cfg::check_keys(b, "budget", {"alpha", "alpha_prime", "eta", "exp_eta", "tau"});
    if (b.contains("eta") && b.contains("exp_eta")) throw InvalidArgument("budget: give eta or exp_eta, not both");
    o.budget.alpha = cfg::get_double(b, "budget", "alpha", o.budget.alpha);
    o.budget.alpha_prime = cfg::get_double(b, "budget", "alpha_prime", *o.budget.alpha_prime);
    o.budget.eta = cfg::get_double(b, "budget", "eta", o.budget.eta);
    if (b.contains("exp_eta")) {
      const double g = cfg::get_double(b, "budget", "exp_eta", 1.0);
      if (!(g >= 1.0)) throw InvalidArgument("budget.exp_eta: must be >= 1");
      o.budget.eta = std::log(g);
    }
    o.budget.tau = cfg::get_double(b, "budget", "tau", o.budget.tau);
  }
  o.budget.validate();
  const double ap = *o.budget.alpha_prime;
  detail::require(ap > 0.0 && ap < 1.0, "budget.alpha_prime: must lie in (0, 1)");
  o.coma_alpha = cfg::get_double(root, "config", "coma_alpha", o.budget.alpha);
  detail::require(o.coma_alpha > 0.0 && o.coma_alpha < 1.0, "coma_alpha: must lie in (0, 1)");

  if (root.contains("weights")) {
    const auto& w = root.at("weights");
    cfg::check_keys(w, "weights", {"rule", "eta"});
    const auto rule = cfg::get_string(w, "weights", "rule", "adahedge");
    if (rule == "adahedge") {
      o.rule = ComaWeights::Rule::adahedge;
    } else if (rule == "hedge") {
      o.rule = ComaWeights::Rule::hedge;
    } else {
      throw InvalidArgument("weights.rule: must be adahedge or hedge");
    }
    o.hedge_eta = cfg::get_double(w, "weights", "eta", o.hedge_eta);
    detail::require(o.hedge_eta >= 0.0, "weights.eta: must be >= 0");
  }
  oc.seeds = cfg::parse_seeds(root, 1);
  oc.output = cfg::parse_output(root);
  if (!root.contains("output") || !root.at("output").contains("prefix")) oc.output.prefix = "online";
  oc.threads = cfg::get_count(root, "config", "threads", 1);
  detail::require(oc.threads >= 1, "threads: must be >= 1");
  return oc;
}

/// The stream of one online seed: warmup + T rows.
inline Dataset make_stream(const OnlineRunConfig& oc, std::uint64_t seed, const Dataset* csv) {
  const std::size_t total = oc.online.warmup + oc.stream.t_len;
  if (oc.stream.kind == StreamSpec::Kind::csv) {
    detail::require(csv != nullptr, "stream: csv data not loaded");
    return csv->slice(0, std::min(total, csv->size()));
  }
  Rng rng(derive_seed(seed, 3));
  return gen_arma_stream(total, oc.stream.ar, oc.stream.ma, oc.stream.noise_sd, rng, oc.stream.lags);
}

}  // namespace stabsel
