#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "chaos.hpp"
#include "constants.hpp"
#include "models.hpp"
#include "moments.hpp"
#include "poisson.hpp"

namespace fineq {

using nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";

// ============================================================================
// Spaces and kernels
// ============================================================================

inline json to_json(const FiniteSpace& s) { return {{"labels", s.labels()}, {"mu", s.mu()}}; }

inline FiniteSpace space_from_json(const json& j) {
  require(j.is_object() && j.contains("labels") && j.contains("mu"), "space JSON needs 'labels' and 'mu'");
  return FiniteSpace(j.at("labels").get<std::vector<std::string>>(), j.at("mu").get<std::vector<double>>());
}

inline json to_json(const Kernel& k) {
  json rates = json::array();
  for (const auto& e : k.entries()) rates.push_back({e.from, e.to, e.rate});
  return {{"space", to_json(k.space())}, {"rates", rates}};
}

inline Kernel kernel_from_json(const json& j) {
  require(j.is_object() && j.contains("space") && j.contains("rates"), "kernel JSON needs 'space' and 'rates'");
  auto space = space_from_json(j.at("space"));
  std::vector<RateEntry> entries;
  for (const auto& r : j.at("rates")) {
    require(r.is_array() && r.size() == 3, "kernel JSON: each rate is [x, y, q]");
    entries.push_back({r[0].get<std::size_t>(), r[1].get<std::size_t>(), r[2].get<double>()});
  }
  return Kernel(std::move(space), std::move(entries));
}

inline json to_json(const PredictedBound& b) {
  json j{{"kind", b.kind}, {"citation", b.citation}, {"c_unspecified", b.c_unspecified},
         {"linear_in_p", b.linear_in_p}};
  j["lower"] = b.lower ? json(*b.lower) : json(nullptr);
  j["upper"] = b.upper ? json(*b.upper) : json(nullptr);
  return j;
}

inline json to_json(const ModelBundle& b) {
  json j = to_json(b.kernel);
  json pred = json::array();
  for (const auto& p : b.predicted) pred.push_back(to_json(p));
  j["predicted"] = pred;
  j["metadata"] = b.metadata;
  if (!b.configs.empty()) j["configs"] = b.configs;
  return j;
}

// ============================================================================
// Model specs
// ============================================================================

inline std::vector<std::string> model_names() {
  return {"two_point", "random_chain", "kernel",     "glauber",   "ising",
          "hardcore",  "interchange",  "multislice", "zero_range", "erg_params"};
}

template <class T>
T param(const json& p, const char* key) {
  require(p.contains(key), std::string("model params: missing '") + key + "'");
  try {
    return p.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("model params: bad '") + key + "': " + e.what());
  }
}

template <class T>
T param_or(const json& p, const char* key, T fallback) {
  return p.contains(key) ? param<T>(p, key) : fallback;
}

inline ModelBundle build_model(const json& spec) {
  require(spec.is_object() && spec.contains("model"), "model spec needs a 'model' field");
  const auto name = spec.at("model").get<std::string>();
  const json p = spec.value("params", json::object());
  if (name == "two_point") return build_two_point(param_or(p, "p", 0.5), param_or(p, "scale", 1.0));
  if (name == "random_chain") {
    return build_random_chain(param<std::size_t>(p, "states"), param_or<std::uint64_t>(p, "seed", 0),
                              param_or(p, "edge_probability", 0.6));
  }
  if (name == "kernel") {
    ModelBundle b{kernel_from_json(param<json>(p, "kernel")), {}, {{"model", "kernel"}}, {}};
    validate_reversible(b.kernel);
    require_irreducible(b.kernel);
    return b;
  }
  if (name == "glauber") {
    if (p.contains("marginals")) {
      return build_glauber(ProductSpec::from_marginals(param<std::vector<std::vector<double>>>(p, "marginals")));
    }
    ProductSpec s;
    s.alphabet = param<std::vector<std::vector<std::string>>>(p, "alphabet");
    s.support = param<std::vector<std::vector<int>>>(p, "support");
    s.weights = param<std::vector<double>>(p, "weights");
    return build_glauber(s);
  }
  if (name == "ising") {
    return build_ising(param<std::vector<std::vector<double>>>(p, "J"), param<std::vector<double>>(p, "h"));
  }
  if (name == "hardcore") {
    const double eta = param<double>(p, "eta");
    if (p.contains("star")) {
      const auto n = param<std::size_t>(p, "star");
      return build_hardcore(n + 1, star_edges(n), eta);
    }
    return build_hardcore(param<std::size_t>(p, "vertices"),
                          param<std::vector<std::pair<std::size_t, std::size_t>>>(p, "edges"), eta);
  }
  if (name == "interchange") return build_interchange(param<std::size_t>(p, "n"));
  if (name == "multislice") return build_multislice(param<std::vector<int>>(p, "kappa"));
  if (name == "zero_range") {
    return build_zero_range(param<int>(p, "m"), param<std::vector<std::vector<double>>>(p, "lambdas"),
                            param<std::vector<double>>(p, "p"));
  }
  if (name == "erg_params") {
    return build_erg(param<std::size_t>(p, "vertices"), param<std::vector<double>>(p, "gammas"),
                     param<std::vector<std::string>>(p, "patterns"));
  }
  throw InvalidArgument("unknown model '" + name + "'");
}

// ============================================================================
// Reports
// ============================================================================

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const ConstantReport& r) {
  json j{{"kind", to_string(r.kind)},
         {"value", finite_or_null(r.value)},
         {"witness", r.witness},
         {"iterations", r.iterations},
         {"gap_certificate", finite_or_null(r.gap_certificate)},
         {"converged", r.converged},
         {"constant_limit", r.constant_limit},
         {"best_start", r.best_start},
         {"starts", r.starts}};
  j["parameter"] = r.parameter ? json(*r.parameter) : json(nullptr);
  j["margins"] = json::object();
  return j;
}

inline json to_json(const Check& c) {
  return {{"name", c.name},          {"lhs", finite_or_null(c.lhs)},       {"rhs", finite_or_null(c.rhs)},
          {"slack", c.slack},        {"margin", finite_or_null(c.margin())}, {"passed", c.passed()},
          {"citation", c.citation}};
}

inline json to_json(const VerificationReport& r) {
  json checks = json::array(), consts = json::array(), values = json::object();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  for (const auto& c : r.constants) consts.push_back(to_json(c));
  for (const auto& [k, v] : r.values) values[k] = finite_or_null(v);
  return {{"name", r.name}, {"passed", r.passed()}, {"checks", checks}, {"constants", consts}, {"values", values}};
}

inline json to_json(const MomentRow& r) {
  return {{"variant", r.variant},       {"r", r.r},
          {"lhs", finite_or_null(r.lhs)}, {"rhs", finite_or_null(r.rhs)},
          {"margin", finite_or_null(r.margin())}, {"lhs_stderr", r.lhs_stderr},
          {"rhs_stderr", r.rhs_stderr}, {"lhs_lower", r.lhs_lower}};
}

inline json to_json(const MomentCheckReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  json j{{"name", r.name},       {"method", r.method},         {"samples", r.sample_count},
         {"seed", r.seed},       {"rows", rows},               {"citations", r.citations},
         {"passed", r.passed()}, {"min_margin", finite_or_null(r.min_margin())}};
  if (r.regime) {
    j["regime"] = {{"a", r.regime->a}, {"s", r.regime->s}, {"provenance", r.regime->provenance}};
    j["regime"]["p0"] = r.regime->p0 ? json(*r.regime->p0) : json(nullptr);
  }
  return j;
}

inline std::string to_csv(const MomentCheckReport& r) {
  std::ostringstream o;
  o << std::setprecision(17) << "variant,r,lhs,rhs,margin,lhs_stderr,rhs_stderr,lhs_lower\n";
  for (const auto& row : r.rows) {
    o << row.variant << ',' << row.r << ',' << row.lhs << ',' << row.rhs << ',' << row.margin() << ','
      << row.lhs_stderr << ',' << row.rhs_stderr << ',' << row.lhs_lower << '\n';
  }
  return o.str();
}

inline json to_json(const TailRow& r) {
  return {{"t", r.t}, {"empirical", r.empirical}, {"ci_lo", r.ci.lo}, {"ci_hi", r.ci.hi},
          {"bound", finite_or_null(r.bound)}, {"dominated", r.dominated()}};
}

inline std::string tail_csv(const std::vector<TailRow>& rows) {
  std::ostringstream o;
  o << std::setprecision(17) << "t,empirical,ci_lo,ci_hi,bound\n";
  for (const auto& r : rows) o << r.t << ',' << r.empirical << ',' << r.ci.lo << ',' << r.ci.hi << ',' << r.bound << '\n';
  return o.str();
}

inline json to_json(const MeckeResult& m) {
  return {{"name", m.name},           {"lhs", m.lhs},
          {"rhs", m.rhs},             {"lhs_stderr", m.lhs_stderr},
          {"rhs_stderr", m.rhs_stderr}, {"diff_stderr", m.diff_stderr},
          {"z", m.z()},               {"samples", m.samples},
          {"passed", m.passed()}};
}

inline json to_json(const IndexedTensor& t) { return {{"order", t.order}, {"dim", t.dim}, {"entries", t.entries}}; }

inline IndexedTensor tensor_from_json(const json& j) {
  require(j.is_object() && j.contains("order") && j.contains("dim") && j.contains("entries"),
          "tensor JSON needs 'order', 'dim' and 'entries'");
  return IndexedTensor(j.at("order").get<int>(), j.at("dim").get<std::size_t>(),
                       j.at("entries").get<std::vector<double>>());
}

inline json to_json(const PointConfiguration& c) {
  json pts = json::array();
  for (std::size_t i = 0; i < c.size(); ++i) {
    auto p = c.point(i);
    pts.push_back(std::vector<double>(p.begin(), p.end()));
  }
  return {{"dimension", c.dimension()}, {"points", pts}};
}

inline PointConfiguration configuration_from_json(const json& j) {
  const auto d = j.at("dimension").get<std::size_t>();
  PointConfiguration c(d);
  for (const auto& p : j.at("points")) c.add(p.get<std::vector<double>>());
  return c;
}

inline json to_json(const Window& w) {
  return {{"lower", w.lower}, {"upper", w.upper}, {"intensity", w.intensity}};
}

inline Window window_from_json(const json& j) {
  Window w{j.at("lower").get<std::vector<double>>(), j.at("upper").get<std::vector<double>>(),
           j.at("intensity").get<double>()};
  w.validate();
  return w;
}

// ============================================================================
// Run manifests
// ============================================================================

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string timestamp;
  std::vector<std::string> outputs;

  static RunManifest make(const std::string& command, const json& resolved_config, std::uint64_t seed) {
    RunManifest m;
    m.command = command;
    m.config_hash = hex64(fnv1a64(resolved_config.dump()));
    m.seed = seed;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream o;
    o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    m.timestamp = o.str();
    return m;
  }
};

inline json to_json(const RunManifest& m) {
  return {{"command", m.command},         {"config_hash", m.config_hash}, {"seed", m.seed},
          {"tool_version", m.tool_version}, {"timestamp", m.timestamp},     {"outputs", m.outputs}};
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("invalid JSON in '" + path + "': " + e.what());
  }
}

}  // namespace fineq
