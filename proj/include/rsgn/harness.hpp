#pragma once

// Experiment driver: seeded sweeps over sketch kinds and block-size fractions,
// per-iteration trace rows and per-cell summaries.
//
// Trace CSV columns, in order:
//   experiment_id,sketch,fraction,run,iter,f,delta,rho,accepted,wall_ms,grad_norm
// Row iter = 0 is the starting point (rho empty, accepted 0, wall_ms 0); row
// iter = k >= 1 is the state after outer iteration k. `delta` holds the radius
// (tr) or regularisation weight (qr) used to compute that row's step, or the
// initial value on row 0. `wall_ms` is cumulative solver time for the run.
// `grad_norm` is empty unless the gradient diagnostic ran for that iterate.
// Floating-point fields use the shortest round-trip representation.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "rsgn/core.hpp"
#include "rsgn/dataset.hpp"
#include "rsgn/problems.hpp"
#include "rsgn/sketch.hpp"
#include "rsgn/solver.hpp"

namespace rsgn {

using Json = nlohmann::json;

/// Malformed or inconsistent experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ExperimentSpec {
  std::string experiment_id = "experiment";
  /// Problem description: {"builder": ...} or {"dataset": path, ...}.
  Json problem;
  std::string solver = "tr";
  std::vector<SketchKind> sketches{SketchKind::sampling()};
  std::vector<double> fractions{1.0};
  int runs = 5;
  std::uint64_t base_seed = 0;
  int max_iters = 100;
  std::optional<double> f_target = 1e-5;
  std::string output = "out";

  double eta = 0.1;
  double gamma1 = 0.5;
  int c = 1;
  double delta0 = 1.0;
  double sigma0 = 1.0;
  double c1 = 0.5;
  int grad_diag_every = 0;
  double cg_rel_tol = 1e-8;
  /// Start from the problem's conventional point instead of zero.
  bool standard_start = false;
};

/// l = max(1, round(fraction * d)).
inline Index block_size(double fraction, Index d) {
  return std::max<Index>(1, static_cast<Index>(std::llround(fraction * static_cast<double>(d))));
}

/// Child seed of a (sketch, fraction, run) cell; independent of sweep order.
inline std::uint64_t cell_seed(std::uint64_t base, std::size_t kind_index,
                               std::size_t fraction_index, int run) {
  return derive_seed(base, kind_index, fraction_index, run);
}

namespace detail {

/// Parses a scalar of a key/value document: quoted string, bool, number.
inline Json parse_kv_scalar(std::string_view text, std::size_t lineno) {
  text = trim(text);
  if (text.empty()) throw ParseError("missing value", lineno);
  if (text.front() == '"' || text.front() == '\'') {
    if (text.size() < 2 || text.back() != text.front()) throw ParseError("unterminated string", lineno);
    return std::string(text.substr(1, text.size() - 2));
  }
  if (text == "true") return true;
  if (text == "false") return false;
  long long integer = 0;
  if (parse_index(text, integer)) return integer;
  double number = 0.0;
  if (parse_double(text, number)) return number;
  throw ParseError("cannot parse value '" + std::string(text) + "'", lineno);
}

/// Splits "a, b, [c, d]" at top-level commas.
inline std::vector<std::string_view> split_top_level(std::string_view text) {
  std::vector<std::string_view> parts;
  int depth = 0;
  char quote = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quote) {
      if (ch == quote) quote = 0;
    } else if (ch == '"' || ch == '\'') {
      quote = ch;
    } else if (ch == '[') {
      ++depth;
    } else if (ch == ']') {
      --depth;
    } else if (ch == ',' && depth == 0) {
      parts.push_back(text.substr(start, i - start));
      start = i + 1;
    }
  }
  parts.push_back(text.substr(start));
  return parts;
}

inline Json parse_kv_value(std::string_view text, std::size_t lineno) {
  text = trim(text);
  if (!text.empty() && text.front() == '[') {
    if (text.back() != ']') throw ParseError("unterminated array", lineno);
    Json arr = Json::array();
    const auto inner = trim(text.substr(1, text.size() - 2));
    if (inner.empty()) return arr;
    for (auto part : split_top_level(inner)) {
      if (trim(part).empty()) continue;  // trailing comma
      arr.push_back(parse_kv_value(part, lineno));
    }
    return arr;
  }
  return parse_kv_scalar(text, lineno);
}

inline std::string_view strip_comment(std::string_view line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quote) {
      if (ch == quote) quote = 0;
    } else if (ch == '"' || ch == '\'') {
      quote = ch;
    } else if (ch == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

}  // namespace detail

/// TOML-style subset: `key = value` lines, `[section]` headers for nested
/// tables, `#` comments, strings, numbers, booleans and (nested) arrays.
inline Json parse_key_value_document(std::istream& in) {
  Json root = Json::object();
  Json* table = &root;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(detail::strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ParseError("bad section header", lineno);
      const std::string name(detail::trim(body.substr(1, body.size() - 2)));
      if (name.empty()) throw ParseError("empty section name", lineno);
      table = &root[name];
      if (table->is_null()) *table = Json::object();
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", lineno);
    const std::string key(detail::trim(body.substr(0, eq)));
    if (key.empty()) throw ParseError("empty key", lineno);
    (*table)[key] = detail::parse_kv_value(body.substr(eq + 1), lineno);
  }
  return root;
}

inline ExperimentSpec parse_experiment_spec(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("experiment config must be an object");
  ExperimentSpec spec;
  static const std::vector<std::string> known = {
      "experiment_id", "problem", "solver", "sketches", "fractions", "runs", "base_seed",
      "max_iters", "f_target", "output", "eta", "gamma1", "c", "delta0", "sigma0", "c1",
      "grad_diag_every", "cg_rel_tol", "standard_start"};
  for (const auto& [key, value] : doc.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  try {
    spec.experiment_id = doc.value("experiment_id", spec.experiment_id);
    if (!doc.contains("problem") || !doc["problem"].is_object()) {
      throw ConfigError("config needs a 'problem' table");
    }
    spec.problem = doc["problem"];
    spec.solver = doc.value("solver", spec.solver);
    if (doc.contains("sketches")) {
      spec.sketches.clear();
      for (const auto& s : doc["sketches"]) spec.sketches.push_back(SketchKind::parse(s.get<std::string>()));
    }
    if (doc.contains("fractions")) spec.fractions = doc["fractions"].get<std::vector<double>>();
    spec.runs = doc.value("runs", spec.runs);
    spec.base_seed = doc.value("base_seed", spec.base_seed);
    spec.max_iters = doc.value("max_iters", spec.max_iters);
    if (doc.contains("f_target")) {
      if (doc["f_target"].is_null()) {
        spec.f_target.reset();
      } else {
        spec.f_target = doc["f_target"].get<double>();
      }
    }
    spec.output = doc.value("output", spec.output);
    spec.eta = doc.value("eta", spec.eta);
    spec.gamma1 = doc.value("gamma1", spec.gamma1);
    spec.c = doc.value("c", spec.c);
    spec.delta0 = doc.value("delta0", spec.delta0);
    spec.sigma0 = doc.value("sigma0", spec.sigma0);
    spec.c1 = doc.value("c1", spec.c1);
    spec.grad_diag_every = doc.value("grad_diag_every", spec.grad_diag_every);
    spec.cg_rel_tol = doc.value("cg_rel_tol", spec.cg_rel_tol);
    spec.standard_start = doc.value("standard_start", spec.standard_start);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }

  if (spec.experiment_id.empty() ||
      spec.experiment_id.find_first_of(",\r\n") != std::string::npos) {
    throw ConfigError("experiment_id must be nonempty and free of commas and newlines");
  }
  if (spec.solver != "tr" && spec.solver != "qr") throw ConfigError("solver must be 'tr' or 'qr'");
  if (spec.sketches.empty()) throw ConfigError("no sketch kinds given");
  if (spec.fractions.empty()) throw ConfigError("no fractions given");
  for (double fr : spec.fractions) {
    if (!(fr > 0.0 && fr <= 1.0)) throw ConfigError("fractions must lie in (0, 1]");
  }
  if (spec.runs < 1) throw ConfigError("runs must be >= 1");
  if (spec.max_iters < 0) throw ConfigError("max_iters must be >= 0");
  return spec;
}

/// Reads a JSON document (first non-blank character '{') or a key/value document.
inline ExperimentSpec load_experiment_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  Json doc;
  try {
    if (first != std::string::npos && text[first] == '{') {
      doc = Json::parse(text);
    } else {
      std::istringstream kv(text);
      doc = parse_key_value_document(kv);
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse_experiment_spec(doc);
}

/// Builds the problem a spec describes. Dataset failures surface as
/// ParseError/ValidationError; bad descriptions as ConfigError.
inline NlsProblem build_problem(const Json& desc) {
  try {
    if (desc.contains("dataset")) {
      const auto format = parse_dataset_format(desc.value("format", std::string("libsvm")));
      CsvOptions csv;
      csv.label_column = desc.value("label_column", -1);
      const Dataset data = load_dataset(desc["dataset"].get<std::string>(), format, csv);
      LogisticOptions opts;
      opts.lambda = desc.value("lambda", 0.0);
      opts.intercept = desc.value("intercept", false);
      return build_logistic(data, opts);
    }
    const std::string builder = desc.value("builder", std::string());
    if (builder == "synthetic_logistic") {
      const auto data = make_separable_data(desc.value("n", 500), desc.value("d", 200),
                                            desc.value("margin", 0.5),
                                            desc.value("seed", std::uint64_t{1}));
      LogisticOptions opts;
      opts.lambda = desc.value("lambda", 0.0);
      opts.intercept = desc.value("intercept", false);
      return build_logistic(data.observations, data.labels, opts);
    }
    if (builder == "linear") {
      const auto rows = desc.at("A").get<std::vector<std::vector<double>>>();
      const auto b = desc.at("b").get<std::vector<double>>();
      if (rows.empty() || rows.front().empty()) throw ConfigError("linear problem: empty A");
      Matrix a(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) throw ConfigError("linear problem: ragged A");
        for (std::size_t j = 0; j < rows[i].size(); ++j)
          a(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
      }
      return build_linear(std::move(a), Eigen::Map<const Vector>(b.data(), static_cast<Index>(b.size())));
    }
    if (builder == "random_linear") {
      const Index n = desc.value("n", 50);
      const Index d = desc.value("d", 20);
      Rng rng(desc.value("seed", std::uint64_t{1}));
      std::normal_distribution<double> normal;
      Matrix a(n, d);
      for (Index j = 0; j < d; ++j)
        for (Index i = 0; i < n; ++i) a(i, j) = normal(rng);
      Vector b(n);
      for (Index i = 0; i < n; ++i) b[i] = normal(rng);
      return build_linear(std::move(a), std::move(b));
    }
    if (builder.empty()) throw ConfigError("problem needs 'builder' or 'dataset'");
    return build_test_problem(builder, desc.value("d", 20));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad problem description: ") + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  } catch (const DimensionError& e) {
    throw ConfigError(e.what());
  }
}

struct TraceRow {
  std::string experiment_id;
  std::string sketch;
  double fraction = 1.0;
  int run = 0;
  int iter = 0;
  double f = 0.0;
  double delta = 0.0;
  std::optional<double> rho;
  bool accepted = false;
  double wall_ms = 0.0;
  std::optional<double> grad_norm;
};

inline const char* trace_header() {
  return "experiment_id,sketch,fraction,run,iter,f,delta,rho,accepted,wall_ms,grad_norm";
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// One CSV line (without newline).
inline std::string format_trace_row(const TraceRow& row) {
  std::string out;
  out += row.experiment_id;
  out += ',' + row.sketch;
  out += ',' + detail::format_double(row.fraction);
  out += ',' + std::to_string(row.run);
  out += ',' + std::to_string(row.iter);
  out += ',' + detail::format_double(row.f);
  out += ',' + detail::format_double(row.delta);
  out += ',' + (row.rho ? detail::format_double(*row.rho) : std::string());
  out += row.accepted ? ",1" : ",0";
  out += ',' + detail::format_double(row.wall_ms);
  out += ',' + (row.grad_norm ? detail::format_double(*row.grad_norm) : std::string());
  return out;
}

inline void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  out << trace_header() << '\n';
  for (const auto& row : rows) out << format_trace_row(row) << '\n';
}

/// Parses a trace CSV; ParseError carries the 1-based line number.
inline std::vector<TraceRow> read_trace_csv(std::istream& in) {
  std::vector<TraceRow> rows;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty trace", 1);
  ++lineno;
  if (detail::trim(line) != trace_header()) throw ParseError("unexpected trace header", lineno);
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = body.find(',', start);
      fields.push_back(body.substr(start, comma == std::string_view::npos ? body.npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (fields.size() != 11) throw ParseError("expected 11 fields", lineno);
    TraceRow row;
    row.experiment_id = std::string(fields[0]);
    row.sketch = std::string(fields[1]);
    long long run = 0;
    long long iter = 0;
    double value = 0.0;
    auto need_double = [&](std::string_view text, const char* name) {
      if (!detail::parse_double(text, value)) throw ParseError(std::string("bad ") + name, lineno);
      return value;
    };
    row.fraction = need_double(fields[2], "fraction");
    if (!detail::parse_index(fields[3], run)) throw ParseError("bad run", lineno);
    if (!detail::parse_index(fields[4], iter)) throw ParseError("bad iter", lineno);
    row.run = static_cast<int>(run);
    row.iter = static_cast<int>(iter);
    row.f = need_double(fields[5], "f");
    if (!std::isfinite(row.f)) throw ParseError("non-finite f", lineno);
    row.delta = need_double(fields[6], "delta");
    if (!fields[7].empty()) row.rho = need_double(fields[7], "rho");
    if (fields[8] != "0" && fields[8] != "1") throw ParseError("bad accepted flag", lineno);
    row.accepted = fields[8] == "1";
    row.wall_ms = need_double(fields[9], "wall_ms");
    if (!fields[10].empty()) row.grad_norm = need_double(fields[10], "grad_norm");
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Trace rows of one solver run. Row 0 is the starting point. A run whose
/// starting objective is not finite produces no rows.
inline std::vector<TraceRow> trace_rows(const RunTrace& trace, const std::string& experiment_id,
                                        const std::string& sketch, double fraction, int run) {
  std::vector<TraceRow> rows;
  if (!std::isfinite(trace.initial_value)) return rows;
  rows.reserve(trace.records.size() + 1);
  TraceRow first{experiment_id, sketch, fraction, run, 0, trace.initial_value, trace.initial_radius,
                 std::nullopt, false, 0.0, trace.initial_gradient_norm};
  rows.push_back(first);
  double wall = 0.0;
  for (const auto& rec : trace.records) {
    wall += rec.wall_clock_ms;
    rows.push_back({experiment_id, sketch, fraction, run, rec.k + 1, rec.f_value, rec.delta_or_sigma,
                    rec.rho, rec.accepted, wall, rec.full_gradient_norm});
  }
  return rows;
}

struct Spread {
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline Spread spread_of(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan(""), std::nan("")};
  return {median_of(v), *std::min_element(v.begin(), v.end()), *std::max_element(v.begin(), v.end())};
}

struct CellSummary {
  std::string experiment_id;
  std::string sketch;
  double fraction = 1.0;
  int runs = 0;
  Spread final_f;
  /// Median over the runs that reached the target; nullopt when none did.
  std::optional<double> iters_to_target;
  int reached = 0;
  int not_reached = 0;
  Spread wall_ms;
  /// Median over runs of (total wall time / iterations).
  double per_iter_ms = 0.0;
};

struct Summary {
  std::optional<double> f_target;
  std::vector<CellSummary> cells;
};

/// Aggregates trace rows per (experiment, sketch, fraction) cell in first-seen order.
inline Summary summarize(const std::vector<TraceRow>& rows, std::optional<double> f_target) {
  struct RunAgg {
    double final_f = 0.0;
    int last_iter = 0;
    double wall = 0.0;
    std::optional<int> hit;
  };
  struct CellAgg {
    CellSummary head;
    std::map<int, RunAgg> runs;
  };
  std::vector<CellAgg> cells;
  std::map<std::tuple<std::string, std::string, double>, std::size_t> lookup;
  std::map<std::tuple<std::size_t, int>, int> last_seen_iter;
  for (std::size_t idx = 0; idx < rows.size(); ++idx) {
    const auto& row = rows[idx];
    const auto key = std::make_tuple(row.experiment_id, row.sketch, row.fraction);
    auto it = lookup.find(key);
    if (it == lookup.end()) {
      it = lookup.emplace(key, cells.size()).first;
      CellAgg agg;
      agg.head.experiment_id = row.experiment_id;
      agg.head.sketch = row.sketch;
      agg.head.fraction = row.fraction;
      cells.push_back(std::move(agg));
    }
    auto& cell = cells[it->second];
    auto seen = last_seen_iter.find({it->second, row.run});
    if (seen != last_seen_iter.end() && row.iter <= seen->second) {
      throw ParseError("rows of a run must be iteration-ordered", idx + 2);
    }
    last_seen_iter[{it->second, row.run}] = row.iter;
    auto& run = cell.runs[row.run];
    run.final_f = row.f;
    run.last_iter = row.iter;
    run.wall = row.wall_ms;
    if (f_target && !run.hit && row.f <= *f_target) run.hit = row.iter;
  }

  Summary summary;
  summary.f_target = f_target;
  for (auto& cell : cells) {
    std::vector<double> finals;
    std::vector<double> walls;
    std::vector<double> hits;
    std::vector<double> per_iter;
    for (const auto& [_, run] : cell.runs) {
      finals.push_back(run.final_f);
      walls.push_back(run.wall);
      if (run.last_iter > 0) per_iter.push_back(run.wall / run.last_iter);
      if (run.hit) hits.push_back(*run.hit);
    }
    CellSummary out = cell.head;
    out.runs = static_cast<int>(cell.runs.size());
    out.final_f = spread_of(finals);
    out.wall_ms = spread_of(walls);
    out.per_iter_ms = per_iter.empty() ? 0.0 : median_of(per_iter);
    out.reached = static_cast<int>(hits.size());
    out.not_reached = out.runs - out.reached;
    if (!hits.empty()) out.iters_to_target = median_of(hits);
    summary.cells.push_back(std::move(out));
  }
  return summary;
}

inline Json spread_json(const Spread& s) {
  return Json{{"median", s.median}, {"min", s.min}, {"max", s.max}};
}

inline Json to_json(const Summary& s) {
  Json cells = Json::array();
  for (const auto& c : s.cells) {
    Json iters = Json{{"reached", c.reached}, {"not_reached", c.not_reached}};
    iters["median"] = c.iters_to_target ? Json(*c.iters_to_target) : Json("not reached");
    cells.push_back(Json{{"experiment_id", c.experiment_id},
                         {"sketch", c.sketch},
                         {"fraction", c.fraction},
                         {"runs", c.runs},
                         {"final_f", spread_json(c.final_f)},
                         {"iters_to_target", iters},
                         {"wall_ms", spread_json(c.wall_ms)},
                         {"per_iter_ms", c.per_iter_ms}});
  }
  Json doc{{"cells", cells}};
  doc["f_target"] = s.f_target ? Json(*s.f_target) : Json(nullptr);
  return doc;
}

struct CellRun {
  std::size_t kind_index = 0;
  std::size_t fraction_index = 0;
  int run = 0;
  Index l = 0;
  std::uint64_t seed = 0;
  RunTrace trace;
};

struct ExperimentResult {
  std::vector<CellRun> runs;  ///< sketch-major, then fraction, then run
  std::vector<TraceRow> rows;
  Summary summary;
};

/// Solver configuration of one cell.
inline TrConfig tr_config_for(const ExperimentSpec& spec, const SketchKind& kind, Index l,
                              std::uint64_t seed) {
  TrConfig cfg;
  cfg.eta = spec.eta;
  cfg.gamma1 = spec.gamma1;
  cfg.c = spec.c;
  cfg.l = l;
  cfg.sketch = kind;
  cfg.c1 = spec.c1;
  cfg.max_iters = spec.max_iters;
  cfg.f_target = spec.f_target;
  cfg.grad_diag_every = spec.grad_diag_every;
  cfg.seed = seed;
  cfg.cg_rel_tol = spec.cg_rel_tol;
  cfg.delta0 = spec.delta0;
  return cfg;
}

inline QrConfig qr_config_for(const ExperimentSpec& spec, const SketchKind& kind, Index l,
                              std::uint64_t seed) {
  QrConfig cfg;
  static_cast<OuterConfig&>(cfg) = tr_config_for(spec, kind, l, seed);
  cfg.sigma0 = spec.sigma0;
  return cfg;
}

/// Runs every (sketch, fraction, run) cell on `problem`, optionally on
/// several threads. Results are ordered and seeded independently of scheduling.
inline ExperimentResult run_cells(const ExperimentSpec& spec, const NlsProblem& problem,
                                  int workers = 1) {
  const Index d = problem.dimension();
  std::vector<CellRun> jobs;
  for (std::size_t ki = 0; ki < spec.sketches.size(); ++ki) {
    for (std::size_t fi = 0; fi < spec.fractions.size(); ++fi) {
      const Index l = block_size(spec.fractions[fi], d);
      const SketchKind& kind = spec.sketches[ki];
      if (kind.family == SketchKind::Family::Identity && l != d) {
        throw ConfigError("identity sketch is only valid at fraction 1.0");
      }
      if (kind.family == SketchKind::Family::Hashing && kind.nnz_per_column > l) {
        throw ConfigError("hashing sketch needs s <= l at fraction " +
                          detail::format_double(spec.fractions[fi]));
      }
      for (int run = 0; run < spec.runs; ++run) {
        CellRun job;
        job.kind_index = ki;
        job.fraction_index = fi;
        job.run = run;
        job.l = l;
        job.seed = cell_seed(spec.base_seed, ki, fi, run);
        jobs.push_back(std::move(job));
      }
    }
  }
  // Structural validation up front so a bad config fails before any solve.
  if (!jobs.empty()) {
    try {
      const auto& j = jobs.front();
      validate_config(tr_config_for(spec, spec.sketches[j.kind_index], j.l, j.seed), d);
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
  }

  std::optional<Vector> x0;
  if (spec.standard_start && problem.standard_start().size() == d) x0 = problem.standard_start();

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      auto& job = jobs[i];
      const SketchKind& kind = spec.sketches[job.kind_index];
      if (spec.solver == "qr") {
        QrConfig cfg = qr_config_for(spec, kind, job.l, job.seed);
        cfg.x0 = x0;
        job.trace = rsgn_qr(problem, cfg);
      } else {
        TrConfig cfg = tr_config_for(spec, kind, job.l, job.seed);
        cfg.x0 = x0;
        job.trace = rsgn_tr(problem, cfg);
      }
    }
  };
  workers = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  ExperimentResult result;
  for (auto& job : jobs) {
    auto rows = trace_rows(job.trace, spec.experiment_id, spec.sketches[job.kind_index].name(),
                           spec.fractions[job.fraction_index], job.run);
    result.rows.insert(result.rows.end(), rows.begin(), rows.end());
  }
  result.runs = std::move(jobs);
  result.summary = summarize(result.rows, spec.f_target);
  return result;
}

struct RunOptions {
  /// Overrides spec.output when set.
  std::optional<std::string> out_dir;
  int workers = 1;
};

/// Builds the problem, runs all cells and writes <out>/trace.csv and
/// <out>/summary.json.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, const RunOptions& opts = {}) {
  const NlsProblem problem = build_problem(spec.problem);
  ExperimentResult result = run_cells(spec, problem, opts.workers);

  const std::filesystem::path out = opts.out_dir.value_or(spec.output);
  std::filesystem::create_directories(out);
  {
    std::ofstream trace(out / "trace.csv");
    write_trace_csv(trace, result.rows);
    if (!trace) throw Error("failed to write " + (out / "trace.csv").string());
  }
  Json summary = to_json(result.summary);
  summary["experiment_id"] = spec.experiment_id;
  summary["solver"] = spec.solver;
  summary["problem"] = spec.problem;
  Json terminations = Json::array();
  for (const auto& job : result.runs) {
    terminations.push_back(Json{{"sketch", spec.sketches[job.kind_index].name()},
                                {"fraction", spec.fractions[job.fraction_index]},
                                {"run", job.run},
                                {"l", job.l},
                                {"seed", job.seed},
                                {"iterations", job.trace.records.size()},
                                {"termination", to_string(job.trace.termination)}});
  }
  summary["runs"] = terminations;
  std::ofstream sum(out / "summary.json");
  sum << summary.dump(2) << '\n';
  if (!sum) throw Error("failed to write " + (out / "summary.json").string());
  return result;
}

}  // namespace rsgn
