#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "spde/harness.hpp"

namespace spde::harness {

using nlohmann::json;

json load_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError(fmt::format("{}: cannot open file", file.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: not valid JSON ({})", file.string(), e.what()));
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ConfigError(fmt::format("{}: '{}' is not a number", where, s));
  return v;
}

}  // namespace

std::vector<SummaryRow> read_summary(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw ConfigError(fmt::format("{}: cannot open summary table", csv.string()));
  std::string line;
  std::getline(in, line);
  if (line != "quantity,mode,time,node_time,value,stderr,reference,unit,provenance")
    throw ConfigError(fmt::format("{}: unexpected header '{}'", csv.string(), line));
  std::vector<SummaryRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    const std::string where = fmt::format("{}:{}", csv.string(), lineno);
    if (c.size() != 9) throw ConfigError(fmt::format("{}: expected 9 cells, got {}", where, c.size()));
    SummaryRow r;
    r.quantity = c[0];
    r.mode = static_cast<int>(parse_double(c[1], where));
    r.time = parse_double(c[2], where);
    r.node_time = parse_double(c[3], where);
    r.value = parse_double(c[4], where);
    r.stderr_ = parse_double(c[5], where);
    r.reference = parse_double(c[6], where);
    r.unit = c[7];
    r.provenance = c[8];
    rows.push_back(std::move(r));
  }
  return rows;
}

json CompareReport::to_json() const {
  return json{{"pass", pass}, {"cells", cells}, {"failures", failures}};
}

CompareReport compare_runs(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b,
                           const json& tolerances) {
  const json ma = load_json(dir_a / "manifest.json");
  const json mb = load_json(dir_b / "manifest.json");
  if (ma.at("model").at("id") != mb.at("model").at("id"))
    throw ConfigError(fmt::format("incompatible manifests: model {} vs {}", ma["model"]["id"].dump(),
                                  mb["model"]["id"].dump()));

  auto number = [&](const char* key, double def) {
    if (!tolerances.contains(key)) return def;
    const auto& v = tolerances.at(key);
    if (!v.is_number() || v.get<double>() < 0.0)
      throw ConfigError(fmt::format("tolerances.{}: must be a non-negative number", key));
    return v.get<double>();
  };
  const double abs_tol = number("abs", 0.0);
  const double rel_tol = number("rel", 0.0);
  const double k_se = number("stderr_multiplier", 0.0);

  const auto rows_a = read_summary(dir_a / "summary.csv");
  const auto rows_b = read_summary(dir_b / "summary.csv");
  using Key = std::tuple<std::string, int, double>;
  std::map<Key, const SummaryRow*> index_b;
  std::set<std::string> names_a, names_b;
  for (const auto& r : rows_b) {
    index_b[{r.quantity, r.mode, r.time}] = &r;
    names_b.insert(r.quantity);
  }
  for (const auto& r : rows_a) names_a.insert(r.quantity);

  std::set<std::string> selected;
  if (tolerances.contains("quantities")) {
    const auto& q = tolerances.at("quantities");
    if (!q.is_array()) throw ConfigError("tolerances.quantities: must be an array of names");
    for (const auto& name : q) {
      if (!name.is_string()) throw ConfigError("tolerances.quantities: must be an array of names");
      const auto s = name.get<std::string>();
      if (!names_a.contains(s) || !names_b.contains(s))
        throw ConfigError(fmt::format("incompatible manifests: quantity '{}' missing from one run", s));
      selected.insert(s);
    }
  } else {
    for (const auto& s : names_a)
      if (names_b.contains(s)) selected.insert(s);
  }
  if (selected.empty()) throw ConfigError("incompatible manifests: no common observables");

  CompareReport report;
  std::size_t matched_b = 0;
  for (const auto& a : rows_a) {
    if (!selected.contains(a.quantity)) continue;
    const auto it = index_b.find({a.quantity, a.mode, a.time});
    if (it == index_b.end())
      throw ConfigError(fmt::format("incompatible manifests: cell {}[mode {}, t = {}] missing from {}", a.quantity,
                                    a.mode, a.time, dir_b.string()));
    ++matched_b;
    const SummaryRow& b = *it->second;
    ++report.cells;
    const double diff = std::abs(a.value - b.value);
    const double allowed = abs_tol + rel_tol * std::max(std::abs(a.value), std::abs(b.value)) +
                           k_se * std::hypot(a.stderr_, b.stderr_);
    const bool same = a.value == b.value || (std::isnan(a.value) && std::isnan(b.value));
    if (!same && !(diff <= allowed)) {
      report.pass = false;
      report.failures.push_back(fmt::format("{}[mode {}, t = {:.17g}]: {:.17g} vs {:.17g}, |diff| {:.3g} > {:.3g}",
                                            a.quantity, a.mode, a.time, a.value, b.value, diff, allowed));
    }
  }
  std::size_t selected_b = 0;
  for (const auto& b : rows_b)
    if (selected.contains(b.quantity)) ++selected_b;
  if (selected_b != matched_b)
    throw ConfigError(fmt::format("incompatible manifests: {} has cells absent from {}", dir_b.string(),
                                  dir_a.string()));
  return report;
}

namespace {

// Explicit little-endian encoding so dumps are portable between hosts.
template <class U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out |= ((v >> (8 * i)) & 0xff) << (8 * (sizeof(U) - 1 - i));
    return out;
  }
}

void put_u32(std::ostream& out, std::uint32_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_f64(std::ostream& out, double d) {
  const auto v = to_little(std::bit_cast<std::uint64_t>(d));
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ConfigError("path dump: truncated file");
  return to_little(v);
}

double get_f64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ConfigError("path dump: truncated file");
  return std::bit_cast<double>(to_little(v));
}

std::uint32_t checked_u32(std::size_t n, const char* what) {
  if (n > 0xffffffffu) throw std::length_error(fmt::format("path dump: too many {}", what));
  return static_cast<std::uint32_t>(n);
}

}  // namespace

void write_path_dump(const std::filesystem::path& file, const std::vector<Path>& paths) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", file.string()));
  const std::size_t J = paths.empty() ? 0 : paths.front().states.front().size();
  const std::size_t n = paths.empty() ? 0 : paths.front().grid.size();
  for (const auto& p : paths)
    if (p.grid.nodes() != paths.front().grid.nodes() || p.states.size() != n || p.increments.size() + 1 != n)
      throw std::invalid_argument("path dump: paths must share one grid");
  out.write("SPDB", 4);
  put_u32(out, kDumpVersion);
  put_u32(out, checked_u32(J, "modes"));
  put_u32(out, checked_u32(n, "nodes"));
  put_u32(out, checked_u32(paths.size(), "paths"));
  if (!paths.empty())
    for (double t : paths.front().grid.nodes()) put_f64(out, t);
  for (const auto& p : paths)
    for (const auto& x : p.states)
      for (double v : x.coeffs) put_f64(out, v);
  for (const auto& p : paths)
    for (const auto& z : p.increments)
      for (double v : z) put_f64(out, v);
  if (!out) throw std::runtime_error(fmt::format("error while writing {}", file.string()));
}

PathDump read_path_dump(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("{}: cannot open path dump", file.string()));
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "SPDB", 4) != 0)
    throw ConfigError(fmt::format("{}: not a path dump", file.string()));
  const std::uint32_t version = get_u32(in);
  if (version != kDumpVersion)
    throw ConfigError(fmt::format("{}: dump version {} (expected {})", file.string(), version, kDumpVersion));
  PathDump d;
  d.J = get_u32(in);
  const std::uint32_t n = get_u32(in);
  const std::uint32_t m = get_u32(in);
  d.nodes.resize(m > 0 ? n : 0);
  for (auto& t : d.nodes) t = get_f64(in);
  d.states.assign(m, std::vector<Field>(n, Field(d.J)));
  for (auto& path : d.states)
    for (auto& x : path)
      for (auto& v : x.coeffs) v = get_f64(in);
  d.increments.assign(m, std::vector<std::vector<double>>(n > 0 ? n - 1 : 0, std::vector<double>(d.J)));
  for (auto& path : d.increments)
    for (auto& z : path)
      for (auto& v : z) v = get_f64(in);
  if (in.peek() != std::char_traits<char>::eof()) throw ConfigError(fmt::format("{}: trailing bytes", file.string()));
  return d;
}

}  // namespace spde::harness
