#include "spde/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>

#include <fmt/format.h>

#include "spde/guided_bridge.hpp"
#include "spde/h_transform.hpp"
#include "spde/ou_analytics.hpp"
#include "spde/parallel.hpp"
#include "spde/quadrature.hpp"
#include "spde/rng.hpp"
#include "spde/stats.hpp"

namespace spde::harness {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Schema helpers. Every error names the dotted path of the offending field.

[[noreturn]] void bad(const std::string& at, const std::string& what) { throw ConfigError(at + ": " + what); }

std::string join(const std::string& at, const std::string& key) { return at.empty() ? key : at + "." + key; }

const json& object_at(const json& parent, const std::string& at, const char* key) {
  const std::string here = join(at, key);
  if (!parent.contains(key)) bad(here, "required field is missing");
  const json& v = parent.at(key);
  if (!v.is_object()) bad(here, "must be an object");
  return v;
}

void only_keys(const json& obj, const std::string& at, std::initializer_list<const char*> allowed) {
  for (const auto& [k, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      bad(join(at, k), "unknown field");
  }
}

double number(const json& obj, const std::string& at, const char* key, std::optional<double> def = std::nullopt) {
  const std::string here = join(at, key);
  if (!obj.contains(key)) {
    if (!def) bad(here, "required field is missing");
    return *def;
  }
  const json& v = obj.at(key);
  if (!v.is_number()) bad(here, "must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) bad(here, "must be finite");
  return d;
}

double positive(const json& obj, const std::string& at, const char* key, std::optional<double> def = std::nullopt) {
  const double d = number(obj, at, key, def);
  if (!(d > 0.0)) bad(join(at, key), "must be positive");
  return d;
}

std::uint64_t count(const json& obj, const std::string& at, const char* key,
                    std::optional<std::uint64_t> def = std::nullopt) {
  const std::string here = join(at, key);
  if (!obj.contains(key)) {
    if (!def) bad(here, "required field is missing");
    return *def;
  }
  const json& v = obj.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() < 0) bad(here, "must be non-negative");
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  bad(here, "must be an integer");
}

std::string word(const json& obj, const std::string& at, const char* key, std::optional<std::string> def,
                 std::initializer_list<const char*> allowed) {
  const std::string here = join(at, key);
  if (!obj.contains(key)) {
    if (!def) bad(here, "required field is missing");
    return *def;
  }
  const json& v = obj.at(key);
  if (!v.is_string()) bad(here, "must be a string");
  const auto s = v.get<std::string>();
  if (allowed.size() > 0 && std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return s == a; })) {
    std::string list;
    for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    bad(here, fmt::format("'{}' is not one of {}", s, list));
  }
  return s;
}

std::vector<double> numbers(const json& obj, const std::string& at, const char* key,
                            std::optional<std::vector<double>> def = std::nullopt,
                            std::optional<std::size_t> size = std::nullopt) {
  const std::string here = join(at, key);
  std::vector<double> out;
  if (!obj.contains(key)) {
    if (!def) bad(here, "required field is missing");
    out = *def;
  } else {
    const json& v = obj.at(key);
    if (!v.is_array()) bad(here, "must be an array of numbers");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) bad(fmt::format("{}[{}]", here, i), "must be a number");
      out.push_back(v[i].get<double>());
      if (!std::isfinite(out.back())) bad(fmt::format("{}[{}]", here, i), "must be finite");
    }
  }
  if (size && out.size() != *size) bad(here, fmt::format("must have {} entries, got {}", *size, out.size()));
  return out;
}

std::vector<double> times_in(const json& obj, const std::string& at, const char* key, std::vector<double> def,
                             double lo, double hi, bool open_hi) {
  auto t = numbers(obj, at, key, std::move(def));
  if (t.empty()) bad(join(at, key), "must not be empty");
  for (std::size_t i = 0; i < t.size(); ++i) {
    const bool ok = t[i] >= lo && (open_hi ? t[i] < hi : t[i] <= hi);
    if (!ok) bad(fmt::format("{}[{}]", join(at, key), i), fmt::format("time {} outside [{}, {}{}", t[i], lo, hi, open_hi ? ")" : "]"));
  }
  return t;
}

std::vector<double> scaled(double T, std::initializer_list<double> fractions) {
  std::vector<double> out;
  for (double f : fractions) out.push_back(f * T);
  return out;
}

// ---------------------------------------------------------------------------
// Resolution: defaults filled in, randomized choices materialized.

json resolve_model(const json& in) {
  const std::string at = "model";
  only_keys(in, at, {"J", "L", "lambda", "q"});
  json out;
  const auto J = count(in, at, "J");
  if (J == 0) bad("model.J", "must be at least 1");
  out["J"] = J;
  out["L"] = positive(in, at, "L", 1.0);

  auto rule_or_values = [&](const char* key, const char* rule_name) {
    const std::string here = join(at, key);
    json block = in.contains(key) ? in.at(key) : json{{"rule", rule_name}};
    if (block.is_array()) block = json{{"values", block}};
    if (!block.is_object()) bad(here, "must be an object or an array of numbers");
    if (block.contains("values")) {
      only_keys(block, here, {"values"});
      return json{{"values", numbers(block, here, "values", std::nullopt, J)}};
    }
    only_keys(block, here, {"rule", "rho"});
    const auto rule = word(block, here, "rule", rule_name, {rule_name});
    json r{{"rule", rule}};
    if (std::string(key) == "q") r["rho"] = number(block, here, "rho", 0.0);
    return r;
  };
  out["lambda"] = rule_or_values("lambda", "dirichlet");
  out["q"] = rule_or_values("q", "power");
  return out;
}

SpectralModel build_model(const json& m) {
  const std::size_t J = m["J"].get<std::size_t>();
  const double L = m["L"].get<double>();
  std::vector<double> lambda(J), q(J);
  if (m["lambda"].contains("values")) {
    lambda = m["lambda"]["values"].get<std::vector<double>>();
  } else {
    for (std::size_t j = 0; j < J; ++j) {
      const double k = static_cast<double>(j + 1) * std::numbers::pi / L;
      lambda[j] = -k * k;
    }
  }
  if (m["q"].contains("values")) {
    q = m["q"]["values"].get<std::vector<double>>();
  } else {
    const double rho = m["q"]["rho"].get<double>();
    for (std::size_t j = 0; j < J; ++j) q[j] = std::pow(static_cast<double>(j + 1), -rho);
  }
  try {
    return SpectralModel(std::move(lambda), std::move(q), L);
  } catch (const DomainError& e) {
    bad("model", e.what());
  }
}

json resolve_dynamics(const json& in, std::size_t J) {
  const std::string at = "dynamics";
  only_keys(in, at, {"nonlinearity", "x0"});
  json out;
  const json nl = in.contains("nonlinearity") ? in.at("nonlinearity") : json{{"kind", "zero"}};
  if (!nl.is_object()) bad("dynamics.nonlinearity", "must be an object");
  only_keys(nl, "dynamics.nonlinearity", {"kind", "alpha", "oversampling"});
  const auto kind = word(nl, "dynamics.nonlinearity", "kind", "zero", {"zero", "linear", "bounded-rational", "sine"});
  const double alpha = number(nl, "dynamics.nonlinearity", "alpha", kind == "zero" ? 0.0 : std::optional<double>{});
  if (kind == "zero" && alpha != 0.0) bad("dynamics.nonlinearity.alpha", "must be 0 for the zero nonlinearity");
  const auto over = count(nl, "dynamics.nonlinearity", "oversampling", 4);
  if (over < 2) bad("dynamics.nonlinearity.oversampling", "must be at least 2");
  out["nonlinearity"] = {{"kind", kind}, {"alpha", alpha}, {"oversampling", over}};

  const json x0 = in.contains("x0") ? in.at("x0") : json{{"kind", "zero"}};
  if (!x0.is_object()) bad("dynamics.x0", "must be an object");
  only_keys(x0, "dynamics.x0", {"kind", "coeffs"});
  const auto x0_kind = word(x0, "dynamics.x0", "kind", "zero", {"zero", "explicit", "stationary"});
  out["x0"] = {{"kind", x0_kind}};
  if (x0_kind == "explicit") out["x0"]["coeffs"] = numbers(x0, "dynamics.x0", "coeffs", std::nullopt, J);
  else if (x0.contains("coeffs")) bad("dynamics.x0.coeffs", "only allowed with kind 'explicit'");
  return out;
}

Nonlinearity build_nonlinearity(const json& d) {
  Nonlinearity F;
  F.kind = parse_nonlinearity_kind(d["nonlinearity"]["kind"].get<std::string>());
  F.alpha = d["nonlinearity"]["alpha"].get<double>();
  F.oversampling = d["nonlinearity"]["oversampling"].get<std::size_t>();
  return F;
}

json resolve_grid(const json& in) {
  const std::string at = "grid";
  only_keys(in, at, {"horizon", "nodes", "kind", "ratio", "min_final_step_fraction"});
  json out;
  out["horizon"] = positive(in, at, "horizon");
  const auto nodes = count(in, at, "nodes");
  if (nodes < 2) bad("grid.nodes", "must be at least 2");
  out["nodes"] = nodes;
  const auto kind = word(in, at, "kind", "uniform", {"uniform", "geometric"});
  out["kind"] = kind;
  if (kind == "geometric") {
    const double ratio = number(in, at, "ratio", 0.7);
    if (!(ratio > 0.0 && ratio < 1.0)) bad("grid.ratio", "must lie in (0, 1)");
    const double minf = number(in, at, "min_final_step_fraction", 1e-6);
    if (!(minf > 0.0 && minf < 1.0)) bad("grid.min_final_step_fraction", "must lie in (0, 1)");
    out["ratio"] = ratio;
    out["min_final_step_fraction"] = minf;
  } else {
    for (const char* k : {"ratio", "min_final_step_fraction"})
      if (in.contains(k)) bad(join(at, k), "only allowed for geometric grids");
  }
  return out;
}

TimeGrid build_grid(const json& g) {
  const double T = g["horizon"].get<double>();
  const auto n = g["nodes"].get<std::size_t>();
  try {
    if (g["kind"] == "geometric")
      return TimeGrid::geometric_toward_end(T, n, g["ratio"].get<double>(), g["min_final_step_fraction"].get<double>());
    return TimeGrid::uniform(T, n);
  } catch (const DomainError& e) {
    bad("grid", e.what());
  } catch (const std::invalid_argument& e) {
    bad("grid", e.what());
  }
}

json resolve_sampling(const json& in, bool needs_paths) {
  const std::string at = "sampling";
  only_keys(in, at, {"paths", "seed"});
  json out;
  out["seed"] = count(in, at, "seed");
  const auto paths = count(in, at, "paths", needs_paths ? std::optional<std::uint64_t>{} : 0);
  if (needs_paths && paths == 0) bad("sampling.paths", "must be at least 1");
  out["paths"] = paths;
  return out;
}

json resolve_output(const json& in) {
  const std::string at = "output";
  only_keys(in, at, {"directory", "formats", "dump_paths"});
  json out;
  out["directory"] = word(in, at, "directory", "run", {});
  std::vector<std::string> formats{"csv", "json"};
  if (in.contains("formats")) {
    const auto& f = in.at("formats");
    if (!f.is_array()) bad("output.formats", "must be an array of strings");
    formats.clear();
    for (std::size_t i = 0; i < f.size(); ++i) {
      const std::string here = fmt::format("output.formats[{}]", i);
      if (!f[i].is_string()) bad(here, "must be a string");
      const auto s = f[i].get<std::string>();
      if (s != "csv" && s != "json" && s != "paths" && s != "weights")
        bad(here, fmt::format("'{}' is not one of csv, json, paths, weights", s));
      if (std::find(formats.begin(), formats.end(), s) == formats.end()) formats.push_back(s);
    }
    std::sort(formats.begin(), formats.end());
  }
  for (const char* req : {"csv", "json"})
    if (std::find(formats.begin(), formats.end(), req) == formats.end())
      bad("output.formats", fmt::format("'{}' is always written and must be listed", req));
  out["formats"] = formats;
  const bool dump = std::find(formats.begin(), formats.end(), "paths") != formats.end();
  out["dump_paths"] = count(in, at, "dump_paths", dump ? 16 : 0);
  if (!dump && out["dump_paths"].get<std::uint64_t>() > 0)
    bad("output.dump_paths", "requires 'paths' in output.formats");
  return out;
}

json random_test_functions(std::size_t J, std::size_t n, std::uint64_t seed) {
  // a_j ~ N(0, 1) / (j + 1), c ~ N(0, 1), phase by a fair coin.
  const NormalStream stream(seed, StreamTag::Auxiliary, 0);
  json list = json::array();
  for (std::size_t f = 0; f < n; ++f) {
    std::vector<double> z(J + 1);
    stream.normals(f, z);
    std::vector<double> a(J);
    for (std::size_t j = 0; j < J; ++j) a[j] = z[j] / static_cast<double>(j + 1);
    list.push_back({{"a", a}, {"c", z[J]}, {"phase", stream.uniform(f, 0) < 0.5 ? "sin" : "cos"}});
  }
  return list;
}

json resolve_task(const json& in, const json& model, const json& dynamics, const json& grid, std::uint64_t seed) {
  const std::string at = "task";
  const auto kind = word(in, at, "kind", std::nullopt,
                         {"forward", "ou-bridge", "guided", "conditioned", "dynkin", "martingale-diag", "gamma-diag",
                          "ck-check"});
  const std::size_t J = model["J"].get<std::size_t>();
  const double T = grid["horizon"].get<double>();
  const bool zero_F = dynamics["nonlinearity"]["kind"] == "zero" || dynamics["nonlinearity"]["alpha"] == 0.0;
  const bool stationary = dynamics["x0"]["kind"] == "stationary";
  if (stationary && kind != "forward")
    bad("dynamics.x0.kind", fmt::format("a stationary initial state is only supported by task 'forward', not '{}'", kind));
  json out{{"kind", kind}};

  if (kind == "forward") {
    only_keys(in, at, {"kind", "observe_times"});
    out["observe_times"] = times_in(in, at, "observe_times", scaled(T, {0.25, 0.5, 0.75, 1.0}), 0.0, T, false);
  } else if (kind == "ou-bridge") {
    only_keys(in, at, {"kind", "y", "observe_times"});
    if (!zero_F) bad("dynamics.nonlinearity.kind", "task 'ou-bridge' describes the linear process; use 'zero'");
    out["y"] = numbers(in, at, "y", std::nullopt, J);
    out["observe_times"] = times_in(in, at, "observe_times", scaled(T, {0.25, 0.5, 0.75}), 0.0, T, false);
  } else if (kind == "guided") {
    only_keys(in, at, {"kind", "y", "conditioning", "obs_var", "weight_cutoff", "cutoffs", "observe_times"});
    out["y"] = numbers(in, at, "y", std::nullopt, J);
    const auto cond = word(in, at, "conditioning", "exact", {"exact", "noisy-obs"});
    out["conditioning"] = cond;
    if (cond == "noisy-obs") {
      const auto var = numbers(in, at, "obs_var", std::nullopt, J);
      for (std::size_t j = 0; j < J; ++j)
        if (!(var[j] > 0.0)) bad(fmt::format("task.obs_var[{}]", j), "must be positive");
      out["obs_var"] = var;
    } else {
      if (in.contains("obs_var")) bad("task.obs_var", "only allowed with noisy-obs conditioning");
      if (grid["kind"] != "geometric") bad("grid.kind", "exact conditioning needs a 'geometric' grid");
    }
    const double S = number(in, at, "weight_cutoff", 0.95 * T);
    if (!(S > 0.0 && S < T)) bad("task.weight_cutoff", fmt::format("must lie in (0, {})", T));
    out["weight_cutoff"] = S;
    auto cut = numbers(in, at, "cutoffs", std::vector<double>{S});
    for (std::size_t i = 0; i < cut.size(); ++i)
      if (!(cut[i] > 0.0 && cut[i] < T)) bad(fmt::format("task.cutoffs[{}]", i), fmt::format("must lie in (0, {})", T));
    if (std::find(cut.begin(), cut.end(), S) == cut.end()) cut.push_back(S);
    std::sort(cut.begin(), cut.end());
    cut.erase(std::unique(cut.begin(), cut.end()), cut.end());
    out["cutoffs"] = cut;
    out["observe_times"] = times_in(in, at, "observe_times", scaled(T, {0.25, 0.5, 0.75}), 0.0, T, false);
  } else if (kind == "conditioned") {
    only_keys(in, at, {"kind", "endpoint", "weight_cutoff", "observe_times"});
    const json& ep = object_at(in, at, "endpoint");
    const auto ek = word(ep, "task.endpoint", "kind", std::nullopt, {"fixed", "tilted"});
    if (ek == "fixed") {
      only_keys(ep, "task.endpoint", {"kind", "y"});
      out["endpoint"] = {{"kind", ek}, {"y", numbers(ep, "task.endpoint", "y", std::nullopt, J)}};
    } else {
      only_keys(ep, "task.endpoint", {"kind", "mean", "var"});
      out["endpoint"] = {{"kind", ek},
                         {"mean", numbers(ep, "task.endpoint", "mean", std::vector<double>(J, 0.0), J)},
                         {"var", numbers(ep, "task.endpoint", "var", std::nullopt, J)}};
    }
    if (grid["kind"] != "geometric") bad("grid.kind", "task 'conditioned' needs a 'geometric' grid");
    const double S = number(in, at, "weight_cutoff", 0.95 * T);
    if (!(S > 0.0 && S < T)) bad("task.weight_cutoff", fmt::format("must lie in (0, {})", T));
    out["weight_cutoff"] = S;
    out["observe_times"] = times_in(in, at, "observe_times", scaled(T, {0.25, 0.5, 0.75}), 0.0, T, false);
  } else if (kind == "dynkin") {
    only_keys(in, at, {"kind", "test_functions", "output_times", "max_statistic"});
    json tf = in.contains("test_functions") ? in.at("test_functions") : json{{"random", json::object()}};
    if (tf.is_object()) {
      only_keys(tf, "task.test_functions", {"random"});
      const json& r = object_at(tf, "task.test_functions", "random");
      only_keys(r, "task.test_functions.random", {"count", "seed"});
      const auto n = count(r, "task.test_functions.random", "count", 3);
      if (n == 0) bad("task.test_functions.random.count", "must be at least 1");
      const auto s = count(r, "task.test_functions.random", "seed", seed);
      tf = random_test_functions(J, n, s);
    }
    if (!tf.is_array() || tf.empty()) bad("task.test_functions", "must be a non-empty array or {\"random\": {...}}");
    json list = json::array();
    for (std::size_t i = 0; i < tf.size(); ++i) {
      const std::string here = fmt::format("task.test_functions[{}]", i);
      if (!tf[i].is_object()) bad(here, "must be an object");
      only_keys(tf[i], here, {"a", "c", "phase"});
      list.push_back({{"a", numbers(tf[i], here, "a", std::nullopt, J)},
                      {"c", number(tf[i], here, "c", 0.0)},
                      {"phase", word(tf[i], here, "phase", "sin", {"sin", "cos"})}});
    }
    out["test_functions"] = list;
    out["output_times"] = times_in(in, at, "output_times", scaled(T, {0.25, 0.5, 0.75, 1.0}), 0.0, T, false);
    out["max_statistic"] = positive(in, at, "max_statistic", 4.0);
  } else if (kind == "martingale-diag") {
    only_keys(in, at, {"kind", "h", "observe_times", "novikov_cutoff"});
    const json& h = object_at(in, at, "h");
    only_keys(h, "task.h", {"kind", "T", "y"});
    word(h, "task.h", "kind", "guiding", {"guiding"});
    const double Th = positive(h, "task.h", "T");
    if (!(Th > T)) bad("task.h.T", fmt::format("must exceed the grid horizon {} (h is singular at its horizon)", T));
    out["h"] = {{"kind", "guiding"}, {"T", Th}, {"y", numbers(h, "task.h", "y", std::vector<double>(J, 0.0), J)}};
    out["observe_times"] = times_in(in, at, "observe_times", scaled(T, {0.25, 0.5, 0.75, 1.0}), 0.0, T, false);
    const double S = number(in, at, "novikov_cutoff", T);
    if (!(S > 0.0 && S <= T)) bad("task.novikov_cutoff", fmt::format("must lie in (0, {}]", T));
    out["novikov_cutoff"] = S;
  } else if (kind == "gamma-diag") {
    only_keys(in, at, {"kind", "cutoff", "points", "y", "lipschitz"});
    const double S = number(in, at, "cutoff", 0.9 * T);
    if (!(S > 0.0 && S < T)) bad("task.cutoff", fmt::format("must lie in (0, {})", T));
    out["cutoff"] = S;
    const auto pts = count(in, at, "points", 100);
    if (pts < 2) bad("task.points", "must be at least 2");
    out["points"] = pts;
    out["y"] = numbers(in, at, "y", std::vector<double>(J, 0.0), J);
    const json lp = in.contains("lipschitz") ? in.at("lipschitz") : json::object();
    if (!lp.is_object()) bad("task.lipschitz", "must be an object");
    only_keys(lp, "task.lipschitz", {"pairs", "radius", "tolerance"});
    const auto pairs = count(lp, "task.lipschitz", "pairs", 2000);
    if (pairs == 0) bad("task.lipschitz.pairs", "must be at least 1");
    out["lipschitz"] = {{"pairs", pairs},
                        {"radius", positive(lp, "task.lipschitz", "radius", 1.0)},
                        {"tolerance", positive(lp, "task.lipschitz", "tolerance", 0.05)}};
  } else {  // ck-check
    only_keys(in, at, {"kind", "modes", "s", "t", "xs", "ys", "rs", "nodes", "tolerance"});
    const auto modes = numbers(in, at, "modes", std::vector<double>{0.0, std::min<double>(1.0, J - 1.0)});
    std::vector<std::size_t> m;
    for (std::size_t i = 0; i < modes.size(); ++i) {
      if (modes[i] < 0 || modes[i] >= static_cast<double>(J) || modes[i] != std::floor(modes[i]))
        bad(fmt::format("task.modes[{}]", i), fmt::format("must be a mode index in [0, {})", J));
      m.push_back(static_cast<std::size_t>(modes[i]));
    }
    out["modes"] = m;
    const double s = number(in, at, "s", 0.0);
    const double t = number(in, at, "t", T);
    if (!(s < t)) bad("task.t", "must exceed task.s");
    out["s"] = s;
    out["t"] = t;
    out["xs"] = numbers(in, at, "xs", std::vector<double>{-0.5, 0.0, 0.8});
    out["ys"] = numbers(in, at, "ys", std::vector<double>{-0.3, 0.1, 0.6});
    const auto rs = numbers(in, at, "rs", std::vector<double>{s + 0.25 * (t - s), s + 0.5 * (t - s), s + 0.75 * (t - s)});
    for (std::size_t i = 0; i < rs.size(); ++i)
      if (!(rs[i] > s && rs[i] < t)) bad(fmt::format("task.rs[{}]", i), "intermediate time must lie in (s, t)");
    out["rs"] = rs;
    const auto nodes = count(in, at, "nodes", kDefaultHermiteNodes);
    if (nodes < 2) bad("task.nodes", "must be at least 2");
    out["nodes"] = nodes;
    out["tolerance"] = positive(in, at, "tolerance", 1e-8);
  }
  return out;
}

bool uses_paths(const std::string& kind) { return kind != "gamma-diag" && kind != "ck-check"; }

}  // namespace

const std::vector<std::string>& task_kinds() {
  static const std::vector<std::string> kinds{"forward", "ou-bridge",       "guided",     "conditioned",
                                              "dynkin",  "martingale-diag", "gamma-diag", "ck-check"};
  return kinds;
}

json resolve_scenario(const json& scenario) {
  if (!scenario.is_object()) bad("(root)", "scenario must be a JSON object");
  only_keys(scenario, "", {"schema", "model", "dynamics", "task", "grid", "sampling", "output"});
  if (scenario.contains("schema") && scenario.at("schema") != "spde-bridge/scenario/1")
    bad("schema", "unsupported schema identifier");
  json out;
  out["schema"] = "spde-bridge/scenario/1";
  out["model"] = resolve_model(object_at(scenario, "", "model"));
  const std::size_t J = out["model"]["J"].get<std::size_t>();
  const json dyn = scenario.contains("dynamics") ? scenario.at("dynamics") : json::object();
  if (!dyn.is_object()) bad("dynamics", "must be an object");
  out["dynamics"] = resolve_dynamics(dyn, J);
  out["grid"] = resolve_grid(object_at(scenario, "", "grid"));
  const json& task = object_at(scenario, "", "task");
  const auto kind = word(task, "task", "kind", std::nullopt, {});
  if (std::find(task_kinds().begin(), task_kinds().end(), kind) == task_kinds().end())
    bad("task.kind", fmt::format("unknown task '{}'", kind));
  out["sampling"] = resolve_sampling(object_at(scenario, "", "sampling"), uses_paths(kind));
  out["task"] = resolve_task(task, out["model"], out["dynamics"], out["grid"], out["sampling"]["seed"]);
  const json outblk = scenario.contains("output") ? scenario.at("output") : json::object();
  if (!outblk.is_object()) bad("output", "must be an object");
  out["output"] = resolve_output(outblk);
  // Validate that the model and grid can actually be built.
  build_model(out["model"]);
  build_grid(out["grid"]);
  return out;
}

namespace {

// ---------------------------------------------------------------------------
// Running.

struct Context {
  json scenario;
  SpectralModel model;
  Nonlinearity F;
  TimeGrid grid;
  std::uint64_t seed;
  std::size_t n_paths;
  unsigned threads;
  bool assert_mode;
  std::size_t dump_count;
  bool write_weights;

  std::vector<SummaryRow> rows{};
  std::vector<double> allowance{};  // extra assertion slack per row
  json diagnostics = json::object();
  std::vector<std::string> failures{};
  std::vector<Path> dumped{};
  std::vector<std::vector<double>> weights{};  // per path, per cutoff

  Field x0(std::size_t path) const {
    const auto& x = scenario["dynamics"]["x0"];
    if (x["kind"] == "explicit") return Field{x["coeffs"].get<std::vector<double>>()};
    if (x["kind"] == "stationary") return sample_stationary(model, seed, path);
    return Field(model.J());
  }

  void row(std::string quantity, int mode, double time, double node_time, double value, double se, double reference,
           std::string unit, std::string provenance, double slack = 0.0) {
    rows.push_back({std::move(quantity), mode, time, node_time, value, se, reference, std::move(unit),
                    std::move(provenance)});
    allowance.push_back(slack);
  }
};

Field field_of(const json& v) { return Field{v.get<std::vector<double>>()}; }

std::vector<std::size_t> nodes_for(const TimeGrid& grid, const std::vector<double>& times) {
  std::vector<std::size_t> k;
  for (double t : times) k.push_back(grid.nearest_index(t));
  return k;
}

// values[p][o * J + j] -> mean / variance rows per observation time and mode.
void moment_rows(Context& c, const std::vector<double>& times, const std::vector<std::size_t>& nodes,
                 const std::vector<std::vector<double>>& values, const char* provenance,
                 const std::function<std::optional<GaussianLaw>(double)>& reference,
                 const std::function<std::optional<GaussianLaw>(std::size_t)>& slack = {}) {
  const std::size_t J = c.model.J();
  std::vector<double> col(values.size());
  for (std::size_t o = 0; o < times.size(); ++o) {
    const double tn = c.grid[nodes[o]];
    const auto ref = reference(tn);
    const auto allow = slack ? slack(nodes[o]) : std::nullopt;
    for (std::size_t j = 0; j < J; ++j) {
      for (std::size_t p = 0; p < values.size(); ++p) col[p] = values[p][o * J + j];
      const auto m = mean_estimate(col);
      const auto v = variance_estimate(col);
      const int mode = static_cast<int>(j);
      c.row("mean", mode, times[o], tn, m.mean, m.stderr_, ref ? ref->mean[j] : kNaN, "coeff", provenance,
            allow ? std::abs(allow->mean[j]) : 0.0);
      c.row("var", mode, times[o], tn, v.mean, v.stderr_, ref ? ref->var.diag[j] : kNaN, "coeff^2", provenance,
            allow ? std::abs(allow->var.diag[j]) : 0.0);
    }
  }
}

void weighted_rows(Context& c, const std::string& suffix, double S, const std::vector<double>& times,
                   const std::vector<std::size_t>& nodes, const std::vector<std::vector<double>>& values,
                   const std::vector<double>& logw, const char* provenance,
                   const std::function<std::optional<GaussianLaw>(double)>& reference,
                   const std::function<std::optional<GaussianLaw>(std::size_t)>& slack) {
  const std::size_t J = c.model.J();
  std::vector<double> col(values.size()), dev(values.size());
  for (std::size_t o = 0; o < times.size(); ++o) {
    const double tn = c.grid[nodes[o]];
    const auto ref = reference ? reference(tn) : std::nullopt;
    const auto allow = slack ? slack(nodes[o]) : std::nullopt;
    for (std::size_t j = 0; j < J; ++j) {
      for (std::size_t p = 0; p < values.size(); ++p) col[p] = values[p][o * J + j];
      const auto m = self_normalized_estimate(logw, col);
      for (std::size_t p = 0; p < values.size(); ++p) dev[p] = (col[p] - m.value) * (col[p] - m.value);
      auto v = self_normalized_estimate(logw, dev);
      // Small-sample correction; exact for equal weights.
      if (m.ess > 1.0) {
        v.value *= m.ess / (m.ess - 1.0);
        v.stderr_ *= m.ess / (m.ess - 1.0);
      }
      const int mode = static_cast<int>(j);
      c.row("mean" + suffix, mode, times[o], tn, m.value, m.stderr_, ref ? ref->mean[j] : kNaN, "coeff", provenance,
            allow ? std::abs(allow->mean[j]) : 0.0);
      c.row("var" + suffix, mode, times[o], tn, v.value, v.stderr_, ref ? ref->var.diag[j] : kNaN, "coeff^2",
            provenance, allow ? std::abs(allow->var.diag[j]) : 0.0);
    }
  }
  const auto e = self_normalized_estimate(logw, std::vector<double>(logw.size(), 1.0));
  c.row("ess" + suffix, -1, S, S, e.ess, 0.0, kNaN, "paths", provenance);
}

void run_forward(Context& c) {
  const auto times = c.scenario["task"]["observe_times"].get<std::vector<double>>();
  const auto nodes = nodes_for(c.grid, times);
  const std::size_t J = c.model.J();
  const MildScheme scheme(c.model, c.grid);
  const NemytskiiOperator prototype(c.model, c.F);
  auto values = map_indices(c.n_paths, c.threads, [&](std::size_t p) {
    NemytskiiOperator op = prototype;
    std::vector<double> out(times.size() * J);
    stream_path(scheme, op, c.x0(p), NormalStream(c.seed, StreamTag::Increments, p),
                [&](std::size_t k, const Field& x, const Field&) {
                  for (std::size_t o = 0; o < nodes.size(); ++o)
                    if (nodes[o] == k) std::copy(x.coeffs.begin(), x.coeffs.end(), out.begin() + o * J);
                });
    return out;
  });
  const bool stationary = c.scenario["dynamics"]["x0"]["kind"] == "stationary";
  const Field x0 = stationary ? Field(J) : c.x0(0);
  moment_rows(c, times, nodes, values, "simulate_path", [&](double t) -> std::optional<GaussianLaw> {
    if (!c.F.is_zero()) return std::nullopt;
    if (stationary) return GaussianLaw{Field(J), covariance_Qinf(c.model)};
    return ou_transition(c.model, 0.0, x0, t);
  });
  for (std::size_t p = 0; p < c.dump_count; ++p)
    c.dumped.push_back(simulate_path(c.model, c.F, c.x0(p), c.grid, c.seed, {p}));
}

void run_ou_bridge(Context& c) {
  const auto& task = c.scenario["task"];
  const auto times = task["observe_times"].get<std::vector<double>>();
  const auto nodes = nodes_for(c.grid, times);
  const std::size_t J = c.model.J();
  const OuBridge bridge(c.model, c.x0(0), c.grid.horizon(), field_of(task["y"]));
  auto values = map_indices(c.n_paths, c.threads, [&](std::size_t p) {
    const Path path = bridge.sample(c.grid, c.seed, p);
    std::vector<double> out(times.size() * J);
    for (std::size_t o = 0; o < nodes.size(); ++o)
      std::copy(path.states[nodes[o]].coeffs.begin(), path.states[nodes[o]].coeffs.end(), out.begin() + o * J);
    return out;
  });
  moment_rows(c, times, nodes, values, "ou_bridge_exact_sample",
              [&](double t) -> std::optional<GaussianLaw> { return bridge.marginal_mean_var(t); });
  for (std::size_t p = 0; p < c.dump_count; ++p) c.dumped.push_back(bridge.sample(c.grid, c.seed, p));
}

// Law of Z(t) given a noisy observation v of Z(T) with per-mode noise variance obs_var.
GaussianLaw noisy_posterior(const SpectralModel& model, const Field& x0, double t, double T, const Field& v,
                            const std::vector<double>& obs_var) {
  const std::size_t J = model.J();
  GaussianLaw law{Field(J), DiagonalOperator{std::vector<double>(J)}};
  for (std::size_t j = 0; j < J; ++j) {
    const double m = std::exp(model.lambda(j) * t) * x0[j];
    const double s = model.q_t(j, t);
    const double e = std::exp(model.lambda(j) * (T - t));
    const double gain = s * e / (e * e * s + model.q_t(j, T - t) + obs_var[j]);
    law.mean[j] = m + gain * (v[j] - e * m);
    law.var.diag[j] = s - gain * e * s;
  }
  return law;
}

void run_guided(Context& c) {
  const auto& task = c.scenario["task"];
  const auto times = task["observe_times"].get<std::vector<double>>();
  const auto nodes = nodes_for(c.grid, times);
  const auto cutoffs = task["cutoffs"].get<std::vector<double>>();
  const double S = task["weight_cutoff"].get<double>();
  const std::size_t J = c.model.J();
  const bool exact = task["conditioning"] == "exact";
  GuidedSpec spec{field_of(task["y"]), c.grid.horizon(), exact ? Conditioning::Exact : Conditioning::NoisyObs,
                  exact ? std::vector<double>{} : task["obs_var"].get<std::vector<double>>(), S};
  const GuidedSampler sampler(c.model, c.F, spec, c.grid);
  const Field x0 = c.x0(0);

  struct PathOut {
    std::vector<double> values, logw;
  };
  auto outs = map_indices(c.n_paths, c.threads, [&](std::size_t p) {
    PathOut o{std::vector<double>(times.size() * J), {}};
    o.logw = sampler.stream(x0, c.seed, p, cutoffs, [&](std::size_t k, const Field& x) {
      for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i] == k) std::copy(x.coeffs.begin(), x.coeffs.end(), o.values.begin() + i * J);
    });
    return o;
  });
  std::vector<std::vector<double>> values(outs.size());
  std::vector<std::vector<double>> logw(cutoffs.size(), std::vector<double>(outs.size()));
  for (std::size_t p = 0; p < outs.size(); ++p) {
    values[p] = std::move(outs[p].values);
    for (std::size_t i = 0; i < cutoffs.size(); ++i) logw[i][p] = outs[p].logw[i];
  }

  std::function<std::optional<GaussianLaw>(double)> reference;
  std::function<std::optional<GaussianLaw>(std::size_t)> slack;
  if (c.F.is_zero()) {
    if (exact) {
      const OuBridge bridge(c.model, x0, c.grid.horizon(), spec.y);
      reference = [bridge](double t) -> std::optional<GaussianLaw> { return bridge.marginal_mean_var(t); };
    } else {
      reference = [&c, x0, spec](double t) -> std::optional<GaussianLaw> {
        return noisy_posterior(c.model, x0, t, spec.T, spec.y, spec.obs_var);
      };
    }
    // The linear scheme has an exactly computable law; its offset from the
    // continuous answer is the time-discretization allowance.
    slack = [&, reference](std::size_t k) -> std::optional<GaussianLaw> {
      auto law = sampler.linear_scheme_moments(x0, k);
      const auto ref = *reference(c.grid[k]);
      for (std::size_t j = 0; j < J; ++j) {
        law.mean[j] -= ref.mean[j];
        law.var.diag[j] -= ref.var.diag[j];
      }
      return law;
    };
    for (std::size_t o = 0; o < nodes.size(); ++o) {
      const auto d = *slack(nodes[o]);
      for (std::size_t j = 0; j < J; ++j) {
        const double tn = c.grid[nodes[o]];
        c.row("scheme_bias_mean", static_cast<int>(j), times[o], tn, d.mean[j], 0.0, kNaN, "coeff",
              "linear_scheme_moments");
        c.row("scheme_bias_var", static_cast<int>(j), times[o], tn, d.var.diag[j], 0.0, kNaN, "coeff^2",
              "linear_scheme_moments");
      }
    }
  }

  const auto primary = static_cast<std::size_t>(std::find(cutoffs.begin(), cutoffs.end(), S) - cutoffs.begin());
  weighted_rows(c, "", S, times, nodes, values, logw[primary], "guided_bridge", reference, slack);
  if (cutoffs.size() > 1) {
    for (std::size_t i = 0; i < cutoffs.size(); ++i)
      weighted_rows(c, fmt::format("_S{:g}", cutoffs[i]), cutoffs[i], times, nodes, values, logw[i], "guided_bridge",
                    reference, slack);
  }
  json per_cutoff = json::array();
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    const auto m = mean_estimate(logw[i]);
    const auto e = self_normalized_estimate(logw[i], std::vector<double>(logw[i].size(), 1.0));
    per_cutoff.push_back({{"cutoff", cutoffs[i]}, {"ess", e.ess}, {"log_weight_mean", m.mean},
                          {"log_weight_max", *std::max_element(logw[i].begin(), logw[i].end())},
                          {"log_weight_min", *std::min_element(logw[i].begin(), logw[i].end())}});
  }
  c.diagnostics["weights"] = per_cutoff;
  if (c.write_weights)
    for (std::size_t p = 0; p < outs.size(); ++p) {
      std::vector<double> w(cutoffs.size());
      for (std::size_t i = 0; i < cutoffs.size(); ++i) w[i] = logw[i][p];
      c.weights.push_back(std::move(w));
    }
  for (std::size_t p = 0; p < c.dump_count; ++p) c.dumped.push_back(sampler.simulate(x0, c.seed, p).path);
}

void run_conditioned(Context& c) {
  const auto& task = c.scenario["task"];
  const auto times = task["observe_times"].get<std::vector<double>>();
  const auto nodes = nodes_for(c.grid, times);
  const double S = task["weight_cutoff"].get<double>();
  const double T = c.grid.horizon();
  const std::size_t J = c.model.J();
  const Field x0 = c.x0(0);
  const auto& ep = task["endpoint"];
  EndpointSampler endpoint;
  if (ep["kind"] == "fixed") {
    endpoint = field_of(ep["y"]);
  } else {
    TiltSpec tilt{field_of(ep["mean"]), ep["var"].get<std::vector<double>>()};
    tilt.validate(c.model);
    endpoint = tilt;
  }
  auto make_sampler = [&](const Field& y) {
    return GuidedSampler(c.model, c.F, GuidedSpec{y, T, Conditioning::Exact, {}, S}, c.grid);
  };
  std::optional<GuidedSampler> fixed;
  if (std::holds_alternative<Field>(endpoint)) fixed.emplace(make_sampler(std::get<Field>(endpoint)));
  const std::vector<double> cut{S};

  struct PathOut {
    std::vector<double> values;
    double logw = 0.0;
  };
  auto outs = map_indices(c.n_paths, c.threads, [&](std::size_t p) {
    PathOut o{std::vector<double>(times.size() * J)};
    auto observe = [&](std::size_t k, const Field& x) {
      for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i] == k) std::copy(x.coeffs.begin(), x.coeffs.end(), o.values.begin() + i * J);
    };
    if (fixed) {
      o.logw = fixed->stream(x0, c.seed, p, cut, observe)[0];
    } else {
      const auto sampler = make_sampler(draw_endpoint(c.model, endpoint, c.seed, p));
      o.logw = sampler.stream(x0, c.seed, p, cut, observe)[0];
    }
    return o;
  });
  std::vector<std::vector<double>> values(outs.size());
  std::vector<double> logw(outs.size());
  for (std::size_t p = 0; p < outs.size(); ++p) {
    values[p] = std::move(outs[p].values);
    logw[p] = outs[p].logw;
  }

  std::function<std::optional<GaussianLaw>(double)> reference;
  if (c.F.is_zero()) {
    // Bridge marginals are affine in the endpoint: mean a + b y, variance fixed.
    reference = [&, T](double t) -> std::optional<GaussianLaw> {
      GaussianLaw law{Field(J), DiagonalOperator{std::vector<double>(J)}};
      for (std::size_t j = 0; j < J; ++j) {
        const double qT = c.model.q_t(j, T);
        const double qt = c.model.q_t(j, t);
        const double b = std::exp(c.model.lambda(j) * (T - t)) * qt / qT;
        const double a = std::exp(c.model.lambda(j) * t) * x0[j] - b * std::exp(c.model.lambda(j) * T) * x0[j];
        const double var = qt - std::exp(2.0 * c.model.lambda(j) * (T - t)) * qt * qt / qT;
        if (const auto* y = std::get_if<Field>(&endpoint)) {
          law.mean[j] = a + b * (*y)[j];
          law.var.diag[j] = var;
        } else {
          const auto& tilt = std::get<TiltSpec>(endpoint);
          law.mean[j] = a + b * tilt.mean[j];
          law.var.diag[j] = var + b * b * tilt.var[j];
        }
      }
      return law;
    };
  }
  weighted_rows(c, "", S, times, nodes, values, logw, "sample_conditioned", reference, {});
  if (c.write_weights)
    for (double w : logw) c.weights.push_back({w});
  for (std::size_t p = 0; p < c.dump_count; ++p) {
    const Field y = fixed ? std::get<Field>(endpoint) : draw_endpoint(c.model, endpoint, c.seed, p);
    c.dumped.push_back(make_sampler(y).simulate(x0, c.seed, p).path);
  }
}

void run_dynkin(Context& c) {
  const auto& task = c.scenario["task"];
  const auto times = task["output_times"].get<std::vector<double>>();
  std::vector<ExpTestFunction> phis;
  for (const auto& f : task["test_functions"])
    phis.push_back({field_of(f["a"]), f["c"].get<double>(), f["phase"] == "sin" ? Phase::Sin : Phase::Cos});
  const auto stats =
      dynkin_residual_simulated(c.model, c.F, c.x0(0), c.grid, phis, c.n_paths, c.seed, times, c.threads);
  const double limit = task["max_statistic"].get<double>();
  json diag = json::array();
  for (std::size_t f = 0; f < stats.size(); ++f) {
    for (std::size_t o = 0; o < times.size(); ++o)
      c.row("dynkin_residual", static_cast<int>(f), times[o], c.grid[c.grid.nearest_index(times[o])],
            stats[f].estimate[o], stats[f].stderr_[o], 0.0, "1", "dynkin_residual");
    c.row("dynkin_max_statistic", static_cast<int>(f), times.back(), c.grid[c.grid.nearest_index(times.back())],
          stats[f].max_statistic, 0.0, kNaN, "stderr", "dynkin_residual");
    diag.push_back({{"max_statistic", stats[f].max_statistic}});
    if (c.assert_mode && !(stats[f].max_statistic <= limit))
      c.failures.push_back(
          fmt::format("dynkin test function {}: max statistic {:.3f} > {}", f, stats[f].max_statistic, limit));
  }
  c.diagnostics["test_functions"] = diag;
  for (std::size_t p = 0; p < c.dump_count; ++p)
    c.dumped.push_back(simulate_path(c.model, c.F, c.x0(p), c.grid, c.seed, {p}));
}

void run_martingale(Context& c) {
  const auto& task = c.scenario["task"];
  const auto times = task["observe_times"].get<std::vector<double>>();
  const auto nodes = nodes_for(c.grid, times);
  const double S = task["novikov_cutoff"].get<double>();
  const GuidingH h(c.model, c.F, task["h"]["T"].get<double>(), field_of(task["h"]["y"]));
  const Field x0 = c.x0(0);
  const std::size_t n_obs = times.size();

  // Per path: [E_def(o)], [E_gir(o)], [relative gap(o)], novikov.
  auto per_path = map_indices(c.n_paths, c.threads, [&](std::size_t p) {
    const Path path = simulate_path(c.model, c.F, x0, c.grid, c.seed, {p});
    const auto ld = log_exp_martingale_from_definition(path, h);
    const auto lg = log_exp_martingale_from_girsanov(path, h, c.model);
    std::vector<double> out(3 * n_obs + 1);
    for (std::size_t o = 0; o < n_obs; ++o) {
      const std::size_t k = nodes[o];
      out[o] = std::exp(ld[k]);
      out[n_obs + o] = std::exp(lg[k]);
      out[2 * n_obs + o] = std::abs(std::expm1(lg[k] - ld[k]));
    }
    out[3 * n_obs] = novikov_path_value(path, h, c.model, S);
    return out;
  });

  std::vector<double> col(c.n_paths);
  auto column = [&](std::size_t idx) {
    for (std::size_t p = 0; p < c.n_paths; ++p) col[p] = per_path[p][idx];
    return col;
  };
  for (std::size_t o = 0; o < n_obs; ++o) {
    const double tn = c.grid[nodes[o]];
    const auto d = mean_estimate(column(o));
    c.row("E_h_definition", -1, times[o], tn, d.mean, d.stderr_, 1.0, "1", "exp_martingale_from_definition");
    const auto g = mean_estimate(column(n_obs + o));
    c.row("E_h_girsanov", -1, times[o], tn, g.mean, g.stderr_, 1.0, "1", "exp_martingale_from_girsanov");
    auto gaps = column(2 * n_obs + o);
    const auto mid = gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2);
    std::nth_element(gaps.begin(), mid, gaps.end());
    double median = *mid;
    if (gaps.size() % 2 == 0) median = 0.5 * (median + *std::max_element(gaps.begin(), mid));
    c.row("relative_gap_median", -1, times[o], tn, median, 0.0, kNaN, "1", "exp_martingale_from_girsanov");
  }
  const auto nov = mean_estimate(column(3 * n_obs));
  c.row("novikov", -1, S, S, nov.mean, nov.stderr_, kNaN, "1", "novikov_estimate");
  c.diagnostics["harmonic"] = h.generator_ratio() == GeneratorRatio::Harmonic;
  for (std::size_t p = 0; p < c.dump_count; ++p)
    c.dumped.push_back(simulate_path(c.model, c.F, x0, c.grid, c.seed, {p}));
}

void run_gamma(Context& c) {
  const auto& task = c.scenario["task"];
  const double T = c.grid.horizon();
  const double S = task["cutoff"].get<double>();
  const auto n = task["points"].get<std::size_t>();
  std::vector<double> t_grid(n);
  for (std::size_t i = 0; i < n; ++i) t_grid[i] = S * static_cast<double>(i) / static_cast<double>(n - 1);

  double sup = -1.0;
  std::size_t arg = 0;
  double worst_rel = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = T - t_grid[i];
    const double hs = gamma_hs_norm_sq(c.model, r);
    // Second route: squared diagonal of the operator itself.
    const auto g = gamma_operator(c.model, r);
    CompensatedSum direct;
    for (double d : g.diag) direct.add(d * d);
    c.row("gamma_hs_norm_sq", -1, t_grid[i], t_grid[i], hs, 0.0, direct.value(), "1", "gamma_hs_norm_sq");
    if (!std::isfinite(hs) && c.assert_mode) c.failures.push_back(fmt::format("gamma HS norm not finite at t = {}", t_grid[i]));
    worst_rel = std::max(worst_rel, std::abs(hs - direct.value()) / std::abs(direct.value()));
    if (hs > sup) {
      sup = hs;
      arg = i;
    }
  }
  c.diagnostics["gamma"] = {{"sup", sup}, {"argsup_time", t_grid[arg]}, {"max_relative_deviation", worst_rel}};
  if (c.assert_mode) {
    if (!(worst_rel <= 1e-10))
      c.failures.push_back(fmt::format("gamma HS norm deviates from direct sum by {:.3g} relative", worst_rel));
    if (arg + 1 != n) c.failures.push_back(fmt::format("gamma HS norm sup at t = {}, expected {}", t_grid[arg], S));
  }

  const auto& lp = task["lipschitz"];
  const GuidingH h(c.model, c.F, T, field_of(task["y"]));
  const double probe = lipschitz_probe(h, c.model, t_grid, lp["pairs"].get<std::size_t>(),
                                       lp["radius"].get<double>(), c.seed);
  const double closed = guiding_lipschitz_constant(c.model, T, t_grid);
  c.row("lipschitz", -1, S, S, probe, 0.0, closed, "1", "lipschitz_probe");
  const double tol = lp["tolerance"].get<double>();
  if (c.assert_mode && !(std::abs(probe - closed) <= tol * closed))
    c.failures.push_back(fmt::format("lipschitz probe {:.6g} vs closed form {:.6g}", probe, closed));
}

void run_ck(Context& c) {
  const auto& task = c.scenario["task"];
  const double s = task["s"].get<double>();
  const double t = task["t"].get<double>();
  const auto nodes = task["nodes"].get<std::size_t>();
  const double tol = task["tolerance"].get<double>();
  double worst = 0.0;
  for (auto mode : task["modes"].get<std::vector<std::size_t>>())
    for (double r : task["rs"].get<std::vector<double>>())
      for (double x : task["xs"].get<std::vector<double>>())
        for (double y : task["ys"].get<std::vector<double>>()) {
          const double res = chapman_kolmogorov_residual(c.model, mode, s, x, r, t, y, nodes);
          worst = std::max(worst, res);
          c.row(fmt::format("ck_residual_x{:g}_y{:g}", x, y), static_cast<int>(mode), r, r, res, 0.0, 0.0, "density",
                "chapman_kolmogorov_residual");
          if (c.assert_mode && !(res < tol))
            c.failures.push_back(fmt::format("CK residual {:.3g} at mode {}, x = {}, r = {}, y = {}", res, mode, x, r, y));
        }
  c.diagnostics["max_residual"] = worst;
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

void write_outputs(const Context& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& sc = c.scenario;

  json manifest;
  manifest["tool"] = kToolName;
  manifest["version"] = kToolVersion;
  manifest["rng"] = {{"name", kRngName},
                     {"counter_layout", "[step, mode_block | uniform bit, path_lo, path_hi & 0xffff | tag << 16]"},
                     {"key", "master seed"},
                     {"tags", {{"increments", 1}, {"initial_state", 2}, {"endpoint", 3}, {"auxiliary", 4}}}};
  manifest["master_seed"] = sc["sampling"]["seed"];
  manifest["scenario"] = sc;
  manifest["model"] = {{"id", c.model.identifier()},
                       {"lambda", std::vector<double>(c.model.lambda().begin(), c.model.lambda().end())},
                       {"q", std::vector<double>(c.model.q().begin(), c.model.q().end())}};
  manifest["grid"] = {{"nodes", c.grid.size()},
                      {"max_step", c.grid.max_step()},
                      {"final_step", c.grid.dt(c.grid.size() - 2)}};
  {
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "summary.csv");
    out << "quantity,mode,time,node_time,value,stderr,reference,unit,provenance\n";
    for (const auto& r : c.rows)
      out << r.quantity << ',' << r.mode << ',' << fmt_double(r.time) << ',' << fmt_double(r.node_time) << ','
          << fmt_double(r.value) << ',' << fmt_double(r.stderr_) << ',' << fmt_double(r.reference) << ',' << r.unit
          << ',' << r.provenance << '\n';
  }
  {
    json diag = c.diagnostics;
    diag["task"] = sc["task"]["kind"];
    diag["paths"] = c.n_paths;
    if (c.assert_mode) diag["assertion_failures"] = c.failures;
    std::ofstream out(dir / "diagnostics.json");
    out << diag.dump(2) << '\n';
  }
  if (c.write_weights) {
    std::ofstream out(dir / "weights.csv");
    const auto& task = sc["task"];
    std::vector<double> cut = task.contains("cutoffs") ? task["cutoffs"].get<std::vector<double>>()
                                                       : std::vector<double>{task.value("weight_cutoff", 0.0)};
    out << "path";
    for (double s : cut) out << ",log_weight_S" << fmt_double(s);
    out << '\n';
    for (std::size_t p = 0; p < c.weights.size(); ++p) {
      out << p;
      for (double w : c.weights[p]) out << ',' << fmt_double(w);
      out << '\n';
    }
  }
  if (!c.dumped.empty()) write_path_dump(dir / "paths.spdb", c.dumped);
}

}  // namespace

RunResult run_scenario(const json& scenario, const RunOptions& options) {
  json resolved = resolve_scenario(scenario);
  const auto& fmts = resolved["output"]["formats"];
  const std::string kind = resolved["task"]["kind"];
  const bool weights = std::find(fmts.begin(), fmts.end(), "weights") != fmts.end();
  if (weights && kind != "guided" && kind != "conditioned")
    bad("output.formats", "'weights' is only produced by the guided and conditioned tasks");
  if (resolved["output"]["dump_paths"].get<std::uint64_t>() > 0 && !uses_paths(kind))
    bad("output.formats", fmt::format("task '{}' produces no paths to dump", kind));

  Context c{resolved,
            build_model(resolved["model"]),
            build_nonlinearity(resolved["dynamics"]),
            build_grid(resolved["grid"]),
            resolved["sampling"]["seed"].get<std::uint64_t>(),
            resolved["sampling"]["paths"].get<std::size_t>(),
            std::max(1u, options.threads),
            options.assert_mode,
            std::min<std::size_t>(resolved["output"]["dump_paths"].get<std::size_t>(),
                                  resolved["sampling"]["paths"].get<std::size_t>()),
            weights};

  try {
    if (kind == "forward") run_forward(c);
    else if (kind == "ou-bridge") run_ou_bridge(c);
    else if (kind == "guided") run_guided(c);
    else if (kind == "conditioned") run_conditioned(c);
    else if (kind == "dynkin") run_dynkin(c);
    else if (kind == "martingale-diag") run_martingale(c);
    else if (kind == "gamma-diag") run_gamma(c);
    else run_ck(c);
  } catch (const DomainError& e) {
    throw DomainError(fmt::format("task '{}': {}", kind, e.what()));
  }

  // Generic closed-form check: |value - reference| <= 4 stderr + allowance.
  if (c.assert_mode) {
    for (std::size_t i = 0; i < c.rows.size(); ++i) {
      const auto& r = c.rows[i];
      if (std::isnan(r.reference) || r.stderr_ == 0.0) continue;
      const double allowed = 4.0 * r.stderr_ + c.allowance[i];
      if (!(std::abs(r.value - r.reference) <= allowed))
        c.failures.push_back(fmt::format("{}[mode {}, t = {}]: {:.6g} vs reference {:.6g} (allowed {:.3g})",
                                         r.quantity, r.mode, r.node_time, r.value, r.reference, allowed));
    }
  }

  const std::filesystem::path dir =
      options.out_dir.empty() ? std::filesystem::path(resolved["output"]["directory"].get<std::string>())
                              : options.out_dir;
  write_outputs(c, dir);
  return {dir, c.failures};
}

}  // namespace spde::harness
