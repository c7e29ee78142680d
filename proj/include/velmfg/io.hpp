// Copyright 2026 The velmfg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Scenario documents (JSON) and flat tables (CSV). Every table starts with
// a "# scenario_hash=<16 hex digits>" line; the hash is FNV-1a 64 of the
// canonical scenario document. Numbers are written with 17 significant
// digits so that tables re-read to the same doubles.

#pragma once

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "velmfg/core.hpp"
#include "velmfg/ensemble.hpp"
#include "velmfg/scenario.hpp"
#include "velmfg/solver.hpp"

namespace velmfg {

using Json = nlohmann::ordered_json;

class ParseError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline const Json* Find(const Json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline std::string Join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline void RequireObject(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError("field '" + path + "': expected an object");
}

inline double GetNumber(const Json& obj, const char* key, const std::string& path, double fallback) {
  const Json* v = Find(obj, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ParseError("field '" + Join(path, key) + "': expected a number");
  return v->get<double>();
}

inline int GetInt(const Json& obj, const char* key, const std::string& path, int fallback) {
  const Json* v = Find(obj, key);
  if (!v) return fallback;
  if (!v->is_number_integer()) throw ParseError("field '" + Join(path, key) + "': expected an integer");
  return v->get<int>();
}

inline bool GetBool(const Json& obj, const char* key, const std::string& path, bool fallback) {
  const Json* v = Find(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ParseError("field '" + Join(path, key) + "': expected true or false");
  return v->get<bool>();
}

inline std::string GetString(const Json& obj, const char* key, const std::string& path, std::string fallback) {
  const Json* v = Find(obj, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ParseError("field '" + Join(path, key) + "': expected a string");
  return v->get<std::string>();
}

inline Point ToPoint(const Json& v, const std::string& path) {
  if (!v.is_array()) throw ParseError("field '" + path + "': expected an array of numbers");
  Point p;
  for (const auto& x : v) {
    if (!x.is_number()) throw ParseError("field '" + path + "': expected an array of numbers");
    p.push_back(x.get<double>());
  }
  return p;
}

inline Point GetPoint(const Json& obj, const char* key, const std::string& path, Point fallback) {
  const Json* v = Find(obj, key);
  return v ? ToPoint(*v, Join(path, key)) : fallback;
}

inline void RejectUnknown(const Json& obj, const std::string& path, std::initializer_list<const char*> known) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ParseError("field '" + Join(path, it.key()) + "': unknown field");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scenario -> JSON

inline Json ToJson(const TerminalCost& t) {
  Json j = Json::object();
  Json lin = Json::array();
  for (const auto& l : t.linear()) lin.push_back(l.gradient);
  Json wells = Json::array();
  for (const auto& w : t.wells()) {
    Json wj = {{"center", w.center}, {"stiffness", w.stiffness}};
    if (!w.axes.empty()) wj["axes"] = w.axes;
    wells.push_back(wj);
  }
  j["linear"] = lin;
  j["wells"] = wells;
  return j;
}

inline Json ToJson(const SamplerSpec& s) {
  Json j = {{"kind", SamplerKindName(s.kind)}};
  switch (s.kind) {
    case SamplerKind::kUniformBox:
      j["lo"] = s.lo;
      j["hi"] = s.hi;
      break;
    case SamplerKind::kGaussian:
      j["mean"] = s.mean;
      j["stddev"] = s.stddev;
      break;
    case SamplerKind::kPoints:
      j["points"] = s.points;
      break;
    case SamplerKind::kMirror:
      j["source"] = s.source;
      break;
  }
  j["stratified"] = s.stratified;
  return j;
}

inline Json ToJson(const SolveConfig& c) {
  return {{"max_iterations", c.max_iterations}, {"gradient_tolerance", c.gradient_tolerance},
          {"armijo_c1", c.armijo_c1},           {"backtrack", c.backtrack},
          {"initial_step", c.initial_step},     {"max_backtracks", c.max_backtracks},
          {"memory", c.memory},                 {"precondition", c.precondition},
          {"starts", c.starts},                 {"perturbation", c.perturbation},
          {"speed_cap", c.speed_cap},           {"still_start", c.still_start}};
}

inline Json ToJson(const Scenario& sc) {
  Json j;
  j["name"] = sc.name;
  j["seed"] = sc.seed;
  if (sc.domain.is_torus()) {
    j["domain"] = {{"kind", "torus"}, {"periods", sc.domain.periods()}};
  } else {
    j["domain"] = {{"kind", "euclidean"}, {"dim", sc.domain.dim()}};
  }
  j["kernel"] = {{"family", KernelFamilyName(sc.kernel.family)},
                 {"amplitude", sc.kernel.amplitude},
                 {"length", sc.kernel.length},
                 {"smoothing", sc.kernel.smoothing}};
  j["lambda"] = sc.lambda;
  j["horizon"] = sc.horizon;
  j["steps"] = sc.steps;
  Json pops = Json::array();
  for (const auto& p : sc.populations) {
    pops.push_back({{"name", p.name},
                    {"mass", p.mass},
                    {"delta", p.delta},
                    {"count", p.count},
                    {"terminal", ToJson(p.terminal)},
                    {"sampler", ToJson(p.sampler)}});
  }
  j["populations"] = pops;
  j["solver"] = ToJson(sc.solver);
  const DiagnosticsConfig& dg = sc.diagnostics;
  j["diagnostics"] = {{"audit_samples", dg.audit_samples},
                      {"best_response_starts", dg.best_response_starts},
                      {"best_response_perturbation", dg.best_response_perturbation},
                      {"exploitability_subset", dg.exploitability_subset},
                      {"uniqueness_starts", dg.uniqueness_starts},
                      {"monokinetic_radius", dg.monokinetic_radius},
                      {"segregation_radius", dg.segregation_radius}};
  const EulerianConfig& eu = sc.eulerian;
  j["eulerian"] = {{"cells", eu.cells},
                   {"damping", eu.damping},
                   {"tolerance", eu.tolerance},
                   {"max_iterations", eu.max_iterations},
                   {"bandwidth_cells", eu.bandwidth_cells}};
  return j;
}

inline std::string WriteScenario(const Scenario& sc) { return ToJson(sc).dump(2) + "\n"; }

inline std::uint64_t Fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string ScenarioHash(const Scenario& sc) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, Fnv1a64(ToJson(sc).dump()));
  return buf;
}

// ---------------------------------------------------------------------------
// JSON -> Scenario

inline KernelFamily ParseKernelFamily(const std::string& s, const std::string& path) {
  if (s == "smoothed-exponential") return KernelFamily::kSmoothedExponential;
  if (s == "gaussian") return KernelFamily::kGaussian;
  if (s == "constant") return KernelFamily::kConstant;
  throw ParseError("field '" + path + "': unknown kernel family '" + s + "'");
}

inline SamplerKind ParseSamplerKind(const std::string& s, const std::string& path) {
  if (s == "uniform-box") return SamplerKind::kUniformBox;
  if (s == "gaussian") return SamplerKind::kGaussian;
  if (s == "points") return SamplerKind::kPoints;
  if (s == "mirror") return SamplerKind::kMirror;
  throw ParseError("field '" + path + "': unknown sampler kind '" + s + "'");
}

inline TerminalCost TerminalFromJson(const Json& j, const std::string& path) {
  using namespace detail;
  RequireObject(j, path);
  RejectUnknown(j, path, {"linear", "wells"});
  TerminalCost t;
  if (const Json* lin = Find(j, "linear")) {
    if (!lin->is_array()) throw ParseError("field '" + Join(path, "linear") + "': expected an array");
    for (std::size_t i = 0; i < lin->size(); ++i)
      t.Add(LinearTerm{ToPoint((*lin)[i], Join(path, "linear[" + std::to_string(i) + "]"))});
  }
  if (const Json* wells = Find(j, "wells")) {
    if (!wells->is_array()) throw ParseError("field '" + Join(path, "wells") + "': expected an array");
    for (std::size_t i = 0; i < wells->size(); ++i) {
      const std::string wp = Join(path, "wells[" + std::to_string(i) + "]");
      const Json& w = (*wells)[i];
      RequireObject(w, wp);
      RejectUnknown(w, wp, {"center", "stiffness", "axes"});
      if (!Find(w, "center")) throw ParseError("field '" + Join(wp, "center") + "': required");
      t.Add(QuadraticWell{GetPoint(w, "center", wp, {}), GetNumber(w, "stiffness", wp, 1.0),
                          GetPoint(w, "axes", wp, {})});
    }
  }
  return t;
}

inline Scenario ScenarioFromJson(const Json& j) {
  using namespace detail;
  RequireObject(j, "");
  RejectUnknown(j, "", {"name", "seed", "domain", "kernel", "lambda", "horizon", "steps", "populations", "solver",
                        "diagnostics", "eulerian"});
  Scenario sc;
  sc.name = GetString(j, "name", "", sc.name);
  if (const Json* s = Find(j, "seed")) {
    if (!s->is_number_unsigned() && !(s->is_number_integer() && s->get<long long>() >= 0))
      throw ParseError("field 'seed': expected a non-negative integer");
    sc.seed = s->get<std::uint64_t>();
  }
  if (const Json* d = Find(j, "domain")) {
    RequireObject(*d, "domain");
    RejectUnknown(*d, "domain", {"kind", "dim", "periods"});
    const std::string kind = GetString(*d, "kind", "domain", "euclidean");
    if (kind == "euclidean") {
      const int dim = GetInt(*d, "dim", "domain", 1);
      if (Find(*d, "periods")) throw ValidationError("domain: euclidean domain has no periods");
      sc.domain = Domain::Euclidean(dim);
    } else if (kind == "torus") {
      if (!Find(*d, "periods")) throw ParseError("field 'domain.periods': required for a torus");
      sc.domain = Domain::Torus(GetPoint(*d, "periods", "domain", {}));
    } else {
      throw ParseError("field 'domain.kind': unknown domain kind '" + kind + "'");
    }
  }
  if (const Json* k = Find(j, "kernel")) {
    RequireObject(*k, "kernel");
    RejectUnknown(*k, "kernel", {"family", "amplitude", "length", "smoothing"});
    Kernel kern;
    kern.family = ParseKernelFamily(GetString(*k, "family", "kernel", "smoothed-exponential"), "kernel.family");
    kern.amplitude = GetNumber(*k, "amplitude", "kernel", 1.0);
    kern.length = GetNumber(*k, "length", "kernel", 1.0);
    const double default_s = kern.family == KernelFamily::kSmoothedExponential ? 0.1 * kern.length : 0.0;
    kern.smoothing = GetNumber(*k, "smoothing", "kernel", default_s);
    kern.Validate();
    sc.kernel = kern;
  }
  sc.lambda = GetNumber(j, "lambda", "", sc.lambda);
  sc.horizon = GetNumber(j, "horizon", "", sc.horizon);
  sc.steps = GetInt(j, "steps", "", sc.steps);
  const int d = sc.domain.dim();
  if (const Json* pops = Find(j, "populations")) {
    if (!pops->is_array()) throw ParseError("field 'populations': expected an array");
    for (std::size_t q = 0; q < pops->size(); ++q) {
      const std::string pp = "populations[" + std::to_string(q) + "]";
      const Json& pj = (*pops)[q];
      RequireObject(pj, pp);
      RejectUnknown(pj, pp, {"name", "mass", "delta", "count", "terminal", "sampler"});
      PopulationSpec p;
      p.name = GetString(pj, "name", pp, "pop" + std::to_string(q));
      p.mass = GetNumber(pj, "mass", pp, 1.0);
      p.delta = GetNumber(pj, "delta", pp, 1.0);
      p.count = GetInt(pj, "count", pp, 1);
      if (const Json* t = Find(pj, "terminal")) p.terminal = TerminalFromJson(*t, Join(pp, "terminal"));
      SamplerSpec s;
      s.lo.assign(d, 0.0);
      s.hi.assign(d, 1.0);
      if (const Json* sj = Find(pj, "sampler")) {
        const std::string sp = Join(pp, "sampler");
        RequireObject(*sj, sp);
        RejectUnknown(*sj, sp, {"kind", "lo", "hi", "mean", "stddev", "points", "source", "stratified"});
        s.kind = ParseSamplerKind(GetString(*sj, "kind", sp, "uniform-box"), Join(sp, "kind"));
        s.stratified = GetBool(*sj, "stratified", sp, false);
        switch (s.kind) {
          case SamplerKind::kUniformBox:
            s.lo = GetPoint(*sj, "lo", sp, s.lo);
            s.hi = GetPoint(*sj, "hi", sp, s.hi);
            break;
          case SamplerKind::kGaussian:
            s.lo.clear();
            s.hi.clear();
            s.mean = GetPoint(*sj, "mean", sp, Point(d, 0.0));
            s.stddev = GetPoint(*sj, "stddev", sp, Point(d, 1.0));
            break;
          case SamplerKind::kPoints: {
            s.lo.clear();
            s.hi.clear();
            const Json* pts = Find(*sj, "points");
            if (!pts || !pts->is_array()) throw ParseError("field '" + Join(sp, "points") + "': expected an array");
            for (std::size_t r = 0; r < pts->size(); ++r)
              s.points.push_back(ToPoint((*pts)[r], Join(sp, "points[" + std::to_string(r) + "]")));
            break;
          }
          case SamplerKind::kMirror:
            s.lo.clear();
            s.hi.clear();
            s.source = GetInt(*sj, "source", sp, -1);
            break;
        }
      }
      p.sampler = std::move(s);
      sc.populations.push_back(std::move(p));
    }
  }
  if (const Json* sj = Find(j, "solver")) {
    RequireObject(*sj, "solver");
    RejectUnknown(*sj, "solver", {"max_iterations", "gradient_tolerance", "armijo_c1", "backtrack", "initial_step",
                                  "max_backtracks", "memory", "precondition", "starts", "perturbation", "speed_cap",
                                  "still_start"});
    SolveConfig& c = sc.solver;
    c.max_iterations = GetInt(*sj, "max_iterations", "solver", c.max_iterations);
    c.gradient_tolerance = GetNumber(*sj, "gradient_tolerance", "solver", c.gradient_tolerance);
    c.armijo_c1 = GetNumber(*sj, "armijo_c1", "solver", c.armijo_c1);
    c.backtrack = GetNumber(*sj, "backtrack", "solver", c.backtrack);
    c.initial_step = GetNumber(*sj, "initial_step", "solver", c.initial_step);
    c.max_backtracks = GetInt(*sj, "max_backtracks", "solver", c.max_backtracks);
    c.memory = GetInt(*sj, "memory", "solver", c.memory);
    c.precondition = GetBool(*sj, "precondition", "solver", c.precondition);
    c.starts = GetInt(*sj, "starts", "solver", c.starts);
    c.perturbation = GetNumber(*sj, "perturbation", "solver", c.perturbation);
    c.speed_cap = GetNumber(*sj, "speed_cap", "solver", c.speed_cap);
    c.still_start = GetBool(*sj, "still_start", "solver", c.still_start);
  }
  sc.solver.seed = sc.seed;
  if (const Json* dj = Find(j, "diagnostics")) {
    RequireObject(*dj, "diagnostics");
    RejectUnknown(*dj, "diagnostics", {"audit_samples", "best_response_starts", "best_response_perturbation",
                                       "exploitability_subset", "uniqueness_starts", "monokinetic_radius",
                                       "segregation_radius"});
    DiagnosticsConfig& c = sc.diagnostics;
    c.audit_samples = GetInt(*dj, "audit_samples", "diagnostics", c.audit_samples);
    c.best_response_starts = GetInt(*dj, "best_response_starts", "diagnostics", c.best_response_starts);
    c.best_response_perturbation =
        GetNumber(*dj, "best_response_perturbation", "diagnostics", c.best_response_perturbation);
    c.exploitability_subset = GetInt(*dj, "exploitability_subset", "diagnostics", c.exploitability_subset);
    c.uniqueness_starts = GetInt(*dj, "uniqueness_starts", "diagnostics", c.uniqueness_starts);
    c.monokinetic_radius = GetNumber(*dj, "monokinetic_radius", "diagnostics", c.monokinetic_radius);
    c.segregation_radius = GetNumber(*dj, "segregation_radius", "diagnostics", c.segregation_radius);
  }
  if (const Json* ej = Find(j, "eulerian")) {
    RequireObject(*ej, "eulerian");
    RejectUnknown(*ej, "eulerian", {"cells", "damping", "tolerance", "max_iterations", "bandwidth_cells"});
    EulerianConfig& c = sc.eulerian;
    c.cells = GetInt(*ej, "cells", "eulerian", c.cells);
    c.damping = GetNumber(*ej, "damping", "eulerian", c.damping);
    c.tolerance = GetNumber(*ej, "tolerance", "eulerian", c.tolerance);
    c.max_iterations = GetInt(*ej, "max_iterations", "eulerian", c.max_iterations);
    c.bandwidth_cells = GetNumber(*ej, "bandwidth_cells", "eulerian", c.bandwidth_cells);
  }
  sc.Validate();
  return sc;
}

inline Scenario ParseScenario(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t b = 0; b + 1 < e.byte && b < text.size(); ++b) {
      if (text[b] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError("parse error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                     e.what());
  }
  return ScenarioFromJson(j);
}

inline std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Scenario LoadScenario(const std::string& path) { return ParseScenario(ReadFile(path)); }

// ---------------------------------------------------------------------------
// Tables

inline std::string FormatDouble(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

class Table {
 public:
  Table(const std::string& hash, std::vector<std::string> columns) : columns_(columns.size()) {
    out_ << "# scenario_hash=" << hash << "\n";
    for (std::size_t c = 0; c < columns.size(); ++c) out_ << (c ? "," : "") << columns[c];
    out_ << "\n";
  }
  void Row(const std::vector<double>& values) {
    if (values.size() != columns_) throw Error("table row width mismatch");
    for (std::size_t c = 0; c < values.size(); ++c) out_ << (c ? "," : "") << FormatDouble(values[c]);
    out_ << "\n";
  }
  std::string str() const { return out_.str(); }

 private:
  std::size_t columns_;
  std::ostringstream out_;
};

inline std::string TrajectoryTable(const Ensemble& e, const std::string& hash) {
  std::vector<std::string> cols = {"time", "particle", "population"};
  for (int c = 0; c < e.dim(); ++c) cols.push_back("x" + std::to_string(c));
  Table t(hash, cols);
  for (int i = 0; i < e.size(); ++i)
    for (int k = 0; k <= e.steps(); ++k) {
      std::vector<double> row = {k * e.dt(), static_cast<double>(i), static_cast<double>(e.population(i))};
      for (int c = 0; c < e.dim(); ++c) row.push_back(e.node(i, k)[c]);
      t.Row(row);
    }
  return t.str();
}

struct ParsedTable {
  std::string hash;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

inline ParsedTable ParseTable(const std::string& text) {
  ParsedTable out;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# scenario_hash=", 0) != 0)
    throw ParseError("table: missing scenario_hash line");
  out.hash = line.substr(16);
  if (!std::getline(in, line)) throw ParseError("table: missing header row");
  {
    std::istringstream hs(line);
    std::string c;
    while (std::getline(hs, c, ',')) out.columns.push_back(c);
  }
  int lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError("table: bad number at line " + std::to_string(lineno));
      }
    }
    if (row.size() != out.columns.size()) throw ParseError("table: wrong width at line " + std::to_string(lineno));
    out.rows.push_back(std::move(row));
  }
  return out;
}

// Rebuilds the ensemble of `sc` from a trajectory table; the table must
// carry the scenario's hash.
inline Ensemble LoadTrajectories(const Scenario& sc, const std::string& text) {
  const ParsedTable t = ParseTable(text);
  if (t.hash != ScenarioHash(sc))
    throw ValidationError("trajectory table belongs to a different scenario (hash " + t.hash + ", expected " +
                          ScenarioHash(sc) + ")");
  const int d = sc.domain.dim(), m = sc.steps, n = sc.particle_count();
  if (static_cast<int>(t.columns.size()) != 3 + d) throw ValidationError("trajectory table: dimension mismatch");
  if (static_cast<int>(t.rows.size()) != n * (m + 1)) throw ValidationError("trajectory table: wrong row count");
  Ensemble proto = InitializeEnsemble(sc, sc.seed);
  std::vector<double> nodes(proto.nodes().begin(), proto.nodes().end());
  for (const auto& row : t.rows) {
    const int i = static_cast<int>(row[1]);
    const int k = static_cast<int>(std::lround(row[0] / proto.dt()));
    if (i < 0 || i >= n || k < 0 || k > m) throw ValidationError("trajectory table: index out of range");
    if (static_cast<int>(row[2]) != proto.population(i))
      throw ValidationError("trajectory table: population label mismatch");
    for (int c = 0; c < d; ++c) nodes[i * proto.stride() + static_cast<std::size_t>(k) * d + c] = row[3 + c];
  }
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c)
      if (nodes[i * proto.stride() + c] != proto.node(i, 0)[c])
        throw ValidationError("trajectory table: initial nodes differ from the scenario's sampled starts");
  return Ensemble(proto.model(), proto.populations(), proto.weights(), std::move(nodes));
}

}  // namespace velmfg
