// Batch entry point. Every subcommand writes report.json and manifest.json
// into --out-dir; CSV tables go next to them. Exit codes: 0 all checks pass,
// 1 a margin is negative beyond slack, 2 config error, 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fineq/io.hpp"

using namespace fineq;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string format = "json";
  double slack = 0.01;
};

struct Outcome {
  json results;
  bool passed = true;
  std::vector<std::string> citations;
  std::vector<std::pair<std::string, std::string>> tables;  // file name, CSV body
};

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("bad number '") + tok + "' in " + what);
    }
  }
  require(!out.empty(), std::string("empty list for ") + what);
  return out;
}

std::size_t parse_count(double v, const char* what) {
  require(v >= 1.0 && v == std::floor(v) && v < 1e12, std::string(what) + " must be a positive integer");
  return static_cast<std::size_t>(v);
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write '" + p.string() + "'");
  out << body;
}

void add_citations(Outcome& o, const ModelBundle& b) {
  for (const auto& pb : b.predicted) o.citations.push_back(pb.citation);
}

void add_citations(Outcome& o, const VerificationReport& r) {
  for (const auto& c : r.checks) o.citations.push_back(c.citation);
}

void add_citations(Outcome& o, const MomentCheckReport& r) {
  for (const auto& c : r.citations) o.citations.push_back(c);
}

json predictions_json(const ModelBundle& b) {
  json pred = json::array();
  for (const auto& p : b.predicted) pred.push_back(to_json(p));
  return pred;
}

// Resolves the model spec: a JSON file, or a bare model name with defaults.
json load_model_spec(const std::string& arg, std::optional<std::size_t> n_override) {
  const auto names = model_names();
  const bool is_name = std::find(names.begin(), names.end(), arg) != names.end();
  if (!is_name && !fs::exists(arg)) throw InvalidArgument("model file '" + arg + "' not found");
  json spec = is_name ? json{{"model", arg}, {"params", json::object()}} : read_json_file(arg);
  if (n_override) {
    if (!spec.contains("params")) spec["params"] = json::object();
    spec["params"]["n"] = *n_override;
  }
  return spec;
}

// ============================================================================
// constants
// ============================================================================

struct ConstantsArgs {
  std::string model;
  std::optional<std::size_t> n;
  std::string p = "1.05,1.2,1.5,2";
  std::string q;
  int starts = 16;
  std::string checks = "main,diagram,predictions";
};

Outcome run_constants(const ConstantsArgs& a, const Globals& g, json& config) {
  const json spec = load_model_spec(a.model, a.n);
  const auto p_grid = parse_list(a.p, "--p");
  std::vector<double> diagram_p;
  if (!a.q.empty()) {
    for (double q : parse_list(a.q, "--q")) {
      require(q >= 1.0 && q < 2.0, "--q values must lie in [1,2)");
      diagram_p.push_back(q == 1.0 ? 2.0 : 2.0 / q);
    }
  }
  config["model_spec"] = spec;
  config["p"] = p_grid;
  config["q"] = a.q;
  config["starts"] = a.starts;
  config["checks"] = a.checks;
  require(a.starts >= 1, "--starts must be positive");

  auto b = build_model(spec);
  OptimizerOptions opts;
  opts.starts = a.starts;
  opts.seed = g.seed;
  ConstantEstimator est(b.kernel, opts);

  Outcome o;
  add_citations(o, b);
  o.results["model"] = b.metadata;
  o.results["states"] = b.space().size();
  o.results["predicted"] = predictions_json(b);
  o.results["poincare"] = to_json(est.poincare());
  auto run = [&](const std::string& key, VerificationReport rep) {
    for (auto& c : rep.checks) c.slack = std::max(c.slack, one_sided_slack(c.rhs, g.slack));
    add_citations(o, rep);
    o.passed = o.passed && rep.passed();
    o.results[key] = to_json(rep);
  };
  const auto wanted = [&](const std::string& name) { return a.checks.find(name) != std::string::npos; };
  if (wanted("main")) run("main_theorem", verify_main_theorem(est, p_grid));
  if (wanted("diagram")) {
    auto rep = verify_implication_diagram(est, diagram_p, g.slack);
    run("implication_diagram", rep);
  }
  if (wanted("predictions")) run("predictions", check_predictions(b, est, p_grid, g.slack));
  return o;
}

// ============================================================================
// moments
// ============================================================================

struct MomentsArgs {
  std::string model;
  std::optional<std::size_t> n;
  std::string function = "coordinate_sum";
  std::string r = "2,3,4,6,8";
  std::string regime = "auto";
  std::optional<double> a, s, p0;
  std::string variant = "both";
};

SquareMatrix seeded_matrix(std::size_t n, std::uint64_t seed) {
  RandomStream rng(seed, 17);
  SquareMatrix m(n, std::vector<double>(n));
  for (auto& row : m)
    for (double& v : row) v = rng.normal();
  return m;
}

ScalarField build_function(const ModelBundle& b, const std::string& spec, std::uint64_t seed, json& config) {
  const std::size_t n = b.space().size();
  if (spec == "coordinate_sum" || spec.rfind("coordinate:", 0) == 0) {
    require(!b.configs.empty(), "function '" + spec + "' needs a model with configurations");
    ScalarField f(n, 0.0);
    const bool all = spec == "coordinate_sum";
    const std::size_t idx = all ? 0 : static_cast<std::size_t>(parse_list(spec.substr(11), "coordinate index")[0]);
    for (std::size_t x = 0; x < n; ++x) {
      require(all || idx < b.configs[x].size(), "coordinate index out of range");
      if (all) {
        for (int c : b.configs[x]) f[x] += c;
      } else {
        f[x] = b.configs[x][idx];
      }
    }
    return f;
  }
  if (spec == "hoeffding") {
    require(b.metadata.value("model", "") == "interchange", "function 'hoeffding' needs the interchange model");
    const auto m = seeded_matrix(b.metadata["n"].get<std::size_t>(), seed);
    config["matrix"] = m;
    ScalarField f(n);
    for (std::size_t x = 0; x < n; ++x) f[x] = hoeffding_statistic(m, b.configs[x]);
    return f;
  }
  require(fs::exists(spec), "function '" + spec + "' is neither a known kind nor a file");
  const json j = read_json_file(spec);
  require(j.contains("values"), "function JSON needs 'values'");
  auto f = j.at("values").get<std::vector<double>>();
  b.space().check_field(f);
  config["function_values"] = f;
  return f;
}

BecknerRegime resolve_regime(const MomentsArgs& a, const ModelBundle& b, const Globals& g) {
  if (a.regime == "explicit" || (a.regime == "auto" && a.a)) {
    require(a.a.has_value(), "--regime explicit needs --a");
    return {*a.a, a.s.value_or(0.0), a.p0, "caller"};
  }
  if (a.regime == "predicted" || a.regime == "auto") {
    for (const auto& pb : b.predicted) {
      if (pb.kind == "alpha_p" && pb.lower && !pb.c_unspecified) return {*pb.lower, 0.0, a.p0, pb.citation};
    }
    require(a.regime == "auto", "model has no explicit alpha_p prediction; use --regime estimated or --a");
  }
  require(a.regime == "auto" || a.regime == "estimated", "--regime must be auto, explicit, predicted or estimated");
  OptimizerOptions opts;
  opts.seed = g.seed;
  const double rho0 = optimal_mlsi(b.kernel, opts).value;
  // alpha_p >= K_p rho0 with K_p >= 0.17 on (1,2].
  return {0.17 * rho0 * (1.0 - g.slack), 0.0, a.p0, "estimated: alpha_p >= 0.17 rho0_est"};
}

Outcome run_moments(const MomentsArgs& a, const Globals& g, json& config) {
  const json spec = load_model_spec(a.model, a.n);
  const auto rs = parse_list(a.r, "--r");
  config["model_spec"] = spec;
  config["function"] = a.function;
  config["r"] = rs;
  config["variant"] = a.variant;
  auto b = build_model(spec);
  const auto f = build_function(b, a.function, g.seed, config);
  const auto regime = resolve_regime(a, b, g);
  config["regime"] = {{"a", regime.a}, {"s", regime.s}, {"provenance", regime.provenance}};
  config["regime"]["p0"] = regime.p0 ? json(*regime.p0) : json(nullptr);

  Outcome o;
  add_citations(o, b);
  o.results["model"] = b.metadata;
  o.results["predicted"] = predictions_json(b);
  o.results["regime_recommended"] = regime.recommended();
  std::vector<MomentCheckReport> reps;
  const bool both = a.variant == "both";
  require(both || a.variant == "onesided" || a.variant == "twosided", "--variant must be both, onesided or twosided");
  if (both || a.variant == "onesided") reps.push_back(check_onesided_moments(b.kernel, f, regime, rs));
  if (both || a.variant == "twosided") reps.push_back(check_twosided_moments(b.kernel, f, regime, rs));
  if (a.function == "hoeffding") {
    reps.push_back(symmetric_group_moment_check(b.metadata["n"].get<std::size_t>(), f, rs));
  }
  json arr = json::array();
  std::string csv;
  for (const auto& r : reps) {
    add_citations(o, r);
    o.passed = o.passed && r.passed();
    arr.push_back(to_json(r));
    std::istringstream lines(to_csv(r));
    std::string line;
    bool header = true;
    while (std::getline(lines, line)) {
      if (header) {
        if (csv.empty()) csv = "check," + line + "\n";
        header = false;
        continue;
      }
      csv += r.name + "," + line + "\n";
    }
  }
  o.results["checks"] = arr;
  o.tables.push_back({"moments.csv", csv});
  return o;
}

// ============================================================================
// chaos
// ============================================================================

struct ChaosArgs {
  std::string tensor;
  bool oracle = false;
  int starts = 64;
  std::string r = "2,4,8,16";
  std::optional<double> C;
  std::string calibration;
  std::string family = "seeded-quadratics";
  std::size_t count = 10;
  std::size_t dim = 5;
  double samples = 1e5;
};

json partition_json(const Partition& p) {
  json blocks = json::array();
  for (const auto& bl : p.blocks) {
    json b = json::array();
    for (int v : bl) b.push_back(v + 1);
    blocks.push_back(b);
  }
  return blocks;
}

Outcome run_chaos_norms(const ChaosArgs& a, const Globals& g, json& config) {
  require(!a.tensor.empty(), "--tensor is required");
  const auto t = tensor_from_json(read_json_file(a.tensor));
  config["tensor"] = to_json(t);
  config["starts"] = a.starts;
  config["oracle"] = a.oracle;
  NormOptions opts;
  opts.starts = a.starts;
  opts.seed = g.seed;
  Outcome o;
  o.citations.push_back("||A||_I = sup over unit x^(1..k) of sum A_i prod_l x^(l)_{i_Il}");
  const double full = t.frobenius();
  json rows = json::array();
  for (const auto& p : enumerate_partitions(t.order)) {
    const auto res = partition_norm(t, p, opts);
    json row{{"partition", partition_json(p)}, {"value", res.value},         {"method", res.method},
             {"lower_bound", res.lower_bound}, {"frobenius", res.upper_bound}, {"converged", res.converged}};
    const bool bounded = res.value <= full * (1.0 + 1e-12) + 1e-12;
    row["bounded_by_frobenius"] = bounded;
    o.passed = o.passed && bounded;
    rows.push_back(row);
  }
  o.results["norms"] = rows;
  if (a.oracle) {
    require(t.order == 2, "--oracle compares against the SVD and needs a matrix");
    Partition split{{{0}, {1}}};
    const double am = alternating_maximization(t, split, opts).value;
    const double svd = spectral_norm(t);
    const bool match = std::abs(am - svd) <= 1e-8 * std::max(1.0, svd);
    o.results["oracle"] = {{"alternating", am}, {"svd", svd}, {"match", match}};
    o.passed = o.passed && match;
  }
  return o;
}

Outcome run_chaos_bound(const ChaosArgs& a, const Globals& g, json& config) {
  require(!a.tensor.empty(), "--tensor is required");
  double C = 0.0;
  if (a.C) {
    C = *a.C;
  } else if (!a.calibration.empty()) {
    C = read_json_file(a.calibration).at("constant").get<double>();
  } else {
    throw InvalidArgument("missing chaos constant: pass --C or run `chaos calibrate` and pass --calibration");
  }
  const auto t = tensor_from_json(read_json_file(a.tensor));
  const auto rs = parse_list(a.r, "--r");
  const auto samples = parse_count(a.samples, "--samples");
  config["tensor"] = to_json(t);
  config["C"] = C;
  config["r"] = rs;
  config["samples"] = samples;
  NormOptions opts;
  opts.seed = g.seed;
  Outcome o;
  o.citations.push_back("||<A, G_1 x ... x G_d>||_r <= C_d sum_I r^{|I|/2} ||A||_I");
  const auto mc = chaos_moments_mc(t, rs, samples, g.seed);
  json rows = json::array();
  std::string csv = "r,moment,upper_ci,bound\n";
  for (const auto& m : mc) {
    const double bound = chaos_moment_bound(t, m.r, C, opts);
    const bool dom = bound >= m.upper_ci;
    o.passed = o.passed && dom;
    rows.push_back({{"r", m.r}, {"moment", m.norm}, {"upper_ci", m.upper_ci}, {"bound", bound}, {"dominated", dom}});
    std::ostringstream line;
    line << std::setprecision(17) << m.r << ',' << m.norm << ',' << m.upper_ci << ',' << bound << '\n';
    csv += line.str();
  }
  o.results["rows"] = rows;
  o.tables.push_back({"chaos_moments.csv", csv});
  return o;
}

Outcome run_chaos_calibrate(const ChaosArgs& a, const Globals& g, json& config) {
  require(a.family == "seeded-quadratics", "--family must be seeded-quadratics");
  const auto rs = parse_list(a.r, "--r");
  const auto samples = parse_count(a.samples, "--samples");
  config["family"] = a.family;
  config["count"] = a.count;
  config["dim"] = a.dim;
  config["r"] = rs;
  config["samples"] = samples;
  const auto family = seeded_quadratic_family(a.count, a.dim, g.seed);
  const auto cal = calibrate_chaos_constant(family, rs, samples, g.seed, a.family);
  Outcome o;
  o.citations.push_back("||<A, G_1 x G_2>||_r <= C_2 sum_I r^{|I|/2} ||A||_I");
  o.results = {{"constant", cal.constant}, {"family", cal.family}, {"samples", cal.samples},
               {"seed", cal.seed},         {"r_values", cal.r_values}, {"ratios", cal.ratios}};
  o.tables.push_back({"calibration.json", o.results.dump(2) + "\n"});
  return o;
}

// ============================================================================
// poisson
// ============================================================================

struct PoissonArgs {
  std::string window;
  std::size_t dim = 2;
  double side = 1.0;
  double intensity = 30.0;
  double radius = 0.1;
  std::string H = "all";
  std::string functional = "count";
  double samples = 1e5;
  std::string r = "2,4";
  std::size_t qpts = 4;
  double alpha = 1.5;
  std::string t = "1,2,4,8,16";
};

Window resolve_window(const PoissonArgs& a, json& config) {
  Window w = a.window.empty() ? Window::box(a.dim, a.side, a.intensity) : window_from_json(read_json_file(a.window));
  w.validate();
  config["window"] = to_json(w);
  config["radius"] = a.radius;
  return w;
}

Outcome run_poisson_mecke(const PoissonArgs& a, const Globals& g, json& config) {
  const auto w = resolve_window(a, config);
  const auto samples = parse_count(a.samples, "--samples");
  config["H"] = a.H;
  config["samples"] = samples;
  config["qpts"] = a.qpts;
  Outcome o;
  o.citations.push_back("E sum_{x in eta} H(eta - delta_x, x) = int E H(eta, x) lambda(dx)");
  json rows = json::array();
  bool found = false;
  for (const auto& term : mecke_library(a.radius)) {
    if (a.H != "all" && a.H != term.name) continue;
    found = true;
    const auto m = mecke_check(w, term, samples, g.seed, a.qpts);
    o.passed = o.passed && m.passed();
    rows.push_back(to_json(m));
  }
  require(found, "unknown Mecke function '" + a.H + "'");
  o.results["mecke"] = rows;
  return o;
}

Outcome run_poisson_moments(const PoissonArgs& a, const Globals& g, json& config) {
  const auto w = resolve_window(a, config);
  const auto samples = parse_count(a.samples, "--samples");
  const auto rs = parse_list(a.r, "--r");
  config["functional"] = a.functional;
  config["samples"] = samples;
  config["r"] = rs;
  auto F = make_functional(a.functional, a.radius, w);
  const auto rep = poisson_moment_check(*F, w, rs, samples, g.seed);
  Outcome o;
  add_citations(o, rep);
  o.passed = rep.passed();
  o.results["moments"] = to_json(rep);
  o.tables.push_back({"moments.csv", to_csv(rep)});
  return o;
}

Outcome run_poisson_count(const PoissonArgs& a, const Globals& g, json& config) {
  const auto w = resolve_window(a, config);
  const auto samples = parse_count(a.samples, "--samples");
  config["samples"] = samples;
  const auto st = count_statistics(w, samples, g.seed);
  const double lv = w.intensity * w.volume();
  Outcome o;
  o.citations.push_back("eta(W) ~ Poisson(lambda(W))");
  const bool mean_ok = std::abs(st.mean - lv) <= 3.0 * st.mean_stderr;
  const bool var_ok = std::abs(st.variance - lv) <= 3.0 * st.variance_stderr;
  const bool ks_ok = st.ks_statistic < st.ks_threshold;
  o.passed = mean_ok && var_ok && ks_ok;
  o.results = {{"lambda_volume", lv},      {"mean", st.mean},
               {"mean_stderr", st.mean_stderr}, {"variance", st.variance},
               {"variance_stderr", st.variance_stderr}, {"ks_statistic", st.ks_statistic},
               {"ks_threshold", st.ks_threshold}, {"mean_within_3sigma", mean_ok},
               {"variance_within_3sigma", var_ok}, {"ks_passed", ks_ok}};
  return o;
}

Outcome run_poisson_ustat(const PoissonArgs& a, const Globals& g, json& config) {
  const auto w = resolve_window(a, config);
  const auto samples = parse_count(a.samples, "--samples");
  const auto ts = parse_list(a.t, "--t");
  int m = 0;
  if (a.functional == "gilbert_edges") m = 2;
  if (a.functional == "gilbert_triangles") m = 3;
  require(m > 0, "ustat-tail needs --functional gilbert_edges or gilbert_triangles");
  config["functional"] = a.functional;
  config["alpha"] = a.alpha;
  config["t"] = ts;
  config["samples"] = samples;
  const auto st = u_stat_tail_study(w, m, a.radius, a.alpha, ts, samples, g.seed);
  Outcome o;
  o.citations.push_back("P(U - EU >= t) <= 2 exp(-min(t^2/(C' m^2 a EU^alpha), t^{2-alpha}/(C' m^2 a)))");
  json rows = json::array();
  for (const auto& r : st.rows) {
    o.passed = o.passed && r.dominated();
    rows.push_back(to_json(r));
  }
  o.results = {{"functional", st.functional}, {"m", st.m},     {"alpha", st.alpha}, {"a", st.a},
               {"EU", st.EU},                 {"C_prime", st.C_prime}, {"rows", rows}};
  o.tables.push_back({"tail.csv", tail_csv(st.rows)});
  return o;
}

// ============================================================================
// zoo
// ============================================================================

Outcome run_zoo_list(json&) {
  Outcome o;
  o.results["models"] = model_names();
  return o;
}

Outcome run_zoo_build(const std::string& model, std::optional<std::size_t> n, json& config) {
  const json spec = load_model_spec(model, n);
  config["model_spec"] = spec;
  const auto b = build_model(spec);
  Outcome o;
  add_citations(o, b);
  o.results = to_json(b);
  o.results["detailed_balance_violations"] = check_detailed_balance(b.kernel).size();
  o.passed = check_detailed_balance(b.kernel).empty();
  return o;
}

// ============================================================================
// Output
// ============================================================================

void emit(const std::string& command, const json& config, const Globals& g, Outcome o, const std::string& error = "") {
  const fs::path dir(g.out_dir);
  fs::create_directories(dir);
  std::sort(o.citations.begin(), o.citations.end());
  o.citations.erase(std::unique(o.citations.begin(), o.citations.end()), o.citations.end());
  const auto manifest_cfg = json{{"command", command}, {"config", config}, {"slack", g.slack}};
  auto manifest = RunManifest::make(command, manifest_cfg, g.seed);
  json report{{"command", command}, {"config", config},           {"config_hash", manifest.config_hash},
              {"seed", g.seed},     {"tool_version", kToolVersion}, {"passed", o.passed && error.empty()},
              {"citations", o.citations}, {"results", o.results}};
  if (!error.empty()) report["error"] = error;
  write_file(dir / "report.json", report.dump(2) + "\n");
  manifest.outputs.push_back((dir / "report.json").string());
  for (const auto& [name, body] : o.tables) {
    write_file(dir / name, body);
    manifest.outputs.push_back((dir / name).string());
  }
  write_file(dir / "manifest.json", to_json(manifest).dump(2) + "\n");
  if (g.format == "csv") {
    for (const auto& [name, body] : o.tables) std::cout << body;
  } else {
    std::cout << json{{"command", command}, {"passed", report["passed"]}, {"report", (dir / "report.json").string()}}.dump()
              << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional inequality and concentration checks on finite state spaces and Poisson processes"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for reports")->capture_default_str();
  app.add_option("--format", g.format, "Console format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  app.add_option("--slack", g.slack, "Relative slack for one-sided checks")->check(CLI::Range(0.0, 1.0))->capture_default_str();

  std::function<Outcome(json&)> action;
  std::string command;

  ConstantsArgs ca;
  auto* cons = app.add_subcommand("constants", "Estimate constants and verify the inequality diagram");
  cons->add_option("--model", ca.model, "Model JSON file or model name")->required();
  cons->add_option("--n", ca.n, "Override params.n");
  cons->add_option("--p", ca.p, "Comma-separated p grid in (1,2]")->capture_default_str();
  cons->add_option("--q", ca.q, "Comma-separated q grid in [1,2) for the diagram");
  cons->add_option("--starts", ca.starts, "Optimizer starts")->capture_default_str();
  cons->add_option("--checks", ca.checks, "Subset of main,diagram,predictions")->capture_default_str();
  cons->callback([&] {
    command = "constants";
    action = [&](json& c) { return run_constants(ca, g, c); };
  });

  MomentsArgs ma;
  auto* mom = app.add_subcommand("moments", "Exact moment inequality checks");
  mom->add_option("--model", ma.model, "Model JSON file or model name")->required();
  mom->add_option("--n", ma.n, "Override params.n");
  mom->add_option("--function", ma.function, "coordinate_sum, coordinate:I, hoeffding or a JSON file")
      ->capture_default_str();
  mom->add_option("--r", ma.r, "Comma-separated moment orders >= 2")->capture_default_str();
  mom->add_option("--regime", ma.regime, "auto, explicit, predicted or estimated")->capture_default_str();
  mom->add_option("--a", ma.a, "Beckner regime coefficient a");
  mom->add_option("--s", ma.s, "Beckner regime exponent s");
  mom->add_option("--p0", ma.p0, "Beckner regime floor p0");
  mom->add_option("--variant", ma.variant, "both, onesided or twosided")->capture_default_str();
  mom->callback([&] {
    command = "moments";
    action = [&](json& c) { return run_moments(ma, g, c); };
  });

  ChaosArgs ch;
  auto* chaos = app.add_subcommand("chaos", "Tensor norms and Gaussian chaos bounds");
  chaos->require_subcommand(1);
  auto* norms = chaos->add_subcommand("norms", "Partition norms of a tensor");
  norms->add_option("--tensor", ch.tensor, "Tensor JSON file")->required();
  norms->add_flag("--oracle", ch.oracle, "Compare with the SVD (matrices)");
  norms->add_option("--starts", ch.starts, "Random starts")->capture_default_str();
  norms->callback([&] {
    command = "chaos norms";
    action = [&](json& c) { return run_chaos_norms(ch, g, c); };
  });
  auto* bound = chaos->add_subcommand("bound", "Moment bound against Monte Carlo");
  bound->add_option("--tensor", ch.tensor, "Tensor JSON file")->required();
  bound->add_option("--r", ch.r, "Comma-separated moment orders")->capture_default_str();
  bound->add_option("--C", ch.C, "Chaos constant C_d");
  bound->add_option("--calibration", ch.calibration, "Calibration JSON from `chaos calibrate`");
  bound->add_option("--samples", ch.samples, "Monte Carlo samples")->capture_default_str();
  bound->callback([&] {
    command = "chaos bound";
    action = [&](json& c) { return run_chaos_bound(ch, g, c); };
  });
  auto* calib = chaos->add_subcommand("calibrate", "Calibrate C_2 on a seeded family");
  calib->add_option("--family", ch.family, "Family name")->capture_default_str();
  calib->add_option("--count", ch.count, "Family size")->capture_default_str();
  calib->add_option("--dim", ch.dim, "Matrix dimension")->capture_default_str();
  calib->add_option("--r", ch.r, "Comma-separated moment orders")->capture_default_str();
  calib->add_option("--samples", ch.samples, "Monte Carlo samples")->capture_default_str();
  calib->callback([&] {
    command = "chaos calibrate";
    action = [&](json& c) { return run_chaos_calibrate(ch, g, c); };
  });

  PoissonArgs pa;
  auto* poi = app.add_subcommand("poisson", "Poisson process checks");
  poi->require_subcommand(1);
  auto window_opts = [&](CLI::App* sc) {
    sc->add_option("--window", pa.window, "Window JSON file");
    sc->add_option("--dim", pa.dim, "Box dimension")->capture_default_str();
    sc->add_option("--side", pa.side, "Box side")->capture_default_str();
    sc->add_option("--intensity", pa.intensity, "Intensity")->capture_default_str();
    sc->add_option("--radius", pa.radius, "Interaction radius")->capture_default_str();
    sc->add_option("--samples", pa.samples, "Monte Carlo samples")->capture_default_str();
  };
  auto* mecke = poi->add_subcommand("mecke", "Mecke formula check");
  window_opts(mecke);
  mecke->add_option("--H", pa.H, "Library function name or all")->capture_default_str();
  mecke->add_option("--qpts", pa.qpts, "Uniform points per replica")->capture_default_str();
  mecke->callback([&] {
    command = "poisson mecke";
    action = [&](json& c) { return run_poisson_mecke(pa, g, c); };
  });
  auto* pmom = poi->add_subcommand("moments", "Moment inequality by Monte Carlo");
  window_opts(pmom);
  pmom->add_option("--functional", pa.functional, "count, gilbert_edges, gilbert_triangles, ball_covering")
      ->capture_default_str();
  pmom->add_option("--r", pa.r, "Comma-separated moment orders")->capture_default_str();
  pmom->callback([&] {
    command = "poisson moments";
    action = [&](json& c) { return run_poisson_moments(pa, g, c); };
  });
  auto* pcount = poi->add_subcommand("count", "Count mean, variance and normal approximation");
  window_opts(pcount);
  pcount->callback([&] {
    command = "poisson count";
    action = [&](json& c) { return run_poisson_count(pa, g, c); };
  });
  auto* ust = poi->add_subcommand("ustat-tail", "U-statistic tail against the bound");
  window_opts(ust);
  ust->add_option("--functional", pa.functional, "gilbert_edges or gilbert_triangles")->capture_default_str();
  ust->add_option("--alpha", pa.alpha, "Self-bounding exponent")->capture_default_str();
  ust->add_option("--t", pa.t, "Comma-separated deviations")->capture_default_str();
  ust->callback([&] {
    command = "poisson ustat-tail";
    action = [&](json& c) { return run_poisson_ustat(pa, g, c); };
  });

  std::string zmodel;
  std::optional<std::size_t> zn;
  auto* zoo = app.add_subcommand("zoo", "Model zoo");
  zoo->require_subcommand(1);
  zoo->add_subcommand("list", "List model names")->callback([&] {
    command = "zoo list";
    action = [&](json& c) { return run_zoo_list(c); };
  });
  auto* zbuild = zoo->add_subcommand("build", "Build a model and print its bundle");
  zbuild->add_option("--model", zmodel, "Model JSON file or model name")->required();
  zbuild->add_option("--n", zn, "Override params.n");
  zbuild->callback([&] {
    command = "zoo build";
    action = [&](json& c) { return run_zoo_build(zmodel, zn, c); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  json config = json::object();
  try {
    Outcome o = action(config);
    const bool passed = o.passed;
    emit(command, config, g, std::move(o));
    return passed ? 0 : 1;
  } catch (const NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    try {
      emit(command, config, g, Outcome{}, e.what());
    } catch (const std::exception&) {
    }
    return 3;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
}
