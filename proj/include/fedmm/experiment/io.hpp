// SPDX-License-Identifier: Apache-2.0
#pragma once

// File formats: trace.csv, gain.csv, and the JSON echo of a config.

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "fedmm/error.hpp"
#include "fedmm/experiment/config.hpp"
#include "fedmm/metrics.hpp"
#include "fedmm/trace.hpp"

namespace fedmm::experiment {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kTraceHeader = "algo,M,E,seed,round,model,lr,sample_size,delta,gap";
inline constexpr std::string_view kGainHeader = "algo,M,E,epsilon,T1,TP,gain";

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc()) throw Error("cannot format double");
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error("malformed number '" + std::string(s) + "'");
  return v;
}

inline int parse_int(std::string_view s) {
  int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error("malformed integer '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// trace.csv

/// Rows for one (algo, M, E) group, seeds in index order, then rounds, then
/// models. Model is printed 1-based.
inline void write_trace_rows(std::ostream& out, const std::vector<TrainingTrace>& traces, int E) {
  std::string line;
  for (const auto& tr : traces) {
    const std::string prefix = std::string(to_string(tr.algorithm)) + "," + std::to_string(tr.models) + "," +
                               std::to_string(E) + "," + std::to_string(tr.seed_index) + ",";
    for (const auto& r : tr.records) {
      line = prefix;
      line += std::to_string(r.round);
      line += ',';
      line += std::to_string(r.model + 1);
      line += ',';
      line += format_double(r.lr);
      line += ',';
      line += std::to_string(r.sample_size);
      line += ',';
      line += format_double(r.delta);
      line += ',';
      line += format_double(r.gap);
      line += '\n';
      out << line;
    }
  }
}

struct TraceRow {
  std::string algo;
  int M = 0;
  int E = 0;
  int seed = 0;
  int round = 0;
  int model = 0;  // 1-based as written
  double lr = 0.0;
  int sample_size = 0;
  double delta = 0.0;
  double gap = 0.0;
};

inline std::vector<TraceRow> read_trace_csv(std::istream& in, const std::string& source = "trace.csv") {
  std::string line;
  if (!std::getline(in, line)) throw Error(source + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader) throw Error(source + ": unexpected header '" + line + "'");
  std::vector<TraceRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 10) throw Error(source + ":" + std::to_string(lineno) + ": expected 10 fields");
    try {
      TraceRow r;
      r.algo = std::string(f[0]);
      r.M = parse_int(f[1]);
      r.E = parse_int(f[2]);
      r.seed = parse_int(f[3]);
      r.round = parse_int(f[4]);
      r.model = parse_int(f[5]);
      r.lr = parse_double(f[6]);
      r.sample_size = parse_int(f[7]);
      r.delta = parse_double(f[8]);
      r.gap = parse_double(f[9]);
      rows.push_back(std::move(r));
    } catch (const Error& e) {
      throw Error(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

inline std::vector<TraceRow> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_trace_csv(in, path);
}

// ---------------------------------------------------------------------------
// gain.csv

struct GainRow {
  std::string algo;
  int M = 0;
  int E = 0;
  double epsilon = 0.0;  // absolute
  std::optional<int> T1;
  std::optional<int> TP;
  std::optional<double> gain;
};

/// Unreached entries are written as empty fields.
inline void write_gain_csv(std::ostream& out, const std::vector<GainRow>& rows) {
  out << kGainHeader << '\n';
  for (const auto& r : rows) {
    out << r.algo << ',' << r.M << ',' << r.E << ',' << format_double(r.epsilon) << ','
        << (r.T1 ? std::to_string(*r.T1) : "") << ',' << (r.TP ? std::to_string(*r.TP) : "") << ','
        << (r.gain ? format_double(*r.gain) : "") << '\n';
  }
}

inline std::vector<GainRow> read_gain_csv(std::istream& in, const std::string& source = "gain.csv") {
  std::string line;
  if (!std::getline(in, line) || line != kGainHeader) throw Error(source + ": unexpected header");
  std::vector<GainRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw Error(source + ": expected 7 fields");
    GainRow r;
    r.algo = std::string(f[0]);
    r.M = parse_int(f[1]);
    r.E = parse_int(f[2]);
    r.epsilon = parse_double(f[3]);
    if (!f[4].empty()) r.T1 = parse_int(f[4]);
    if (!f[5].empty()) r.TP = parse_int(f[5]);
    if (!f[6].empty()) r.gain = parse_double(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// JSON echo of a config

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["name"] = c.name;
  j["problem"] = {{"clients", c.problem.clients},
                  {"block", c.problem.block},
                  {"mu", c.problem.mu},
                  {"datapoints", c.problem.datapoints},
                  {"sigma_z", c.problem.sigma_z}};
  j["algorithms"] = Json::array();
  for (auto a : c.algorithms) j["algorithms"].push_back(std::string(to_string(a)));
  j["models"] = c.models;
  j["local_steps"] = c.local_steps;
  j["rounds"] = c.rounds;
  if (c.lr.kind == LrKind::kConstant) {
    j["lr"] = {{"kind", "constant"}, {"eta", c.lr.eta}};
  } else {
    j["lr"] = {{"kind", "inverse"},
               {"beta", c.lr.beta},
               {"gamma", c.lr.gamma},
               {"granularity", c.lr.granularity == LrGranularity::kRound ? "round" : "frame"}};
  }
  switch (c.sampling.kind) {
    case SampleKind::kFull: j["sampling"] = {{"kind", "full"}}; break;
    case SampleKind::kTheorem2: j["sampling"] = {{"kind", "theorem2"}, {"V", c.sampling.V}}; break;
    case SampleKind::kFixed: j["sampling"] = {{"kind", "fixed"}, {"size", c.sampling.size}}; break;
  }
  j["aggregation"] = std::string(to_string(c.aggregation));
  j["seeds"] = {{"count", c.seeds}, {"master", c.master_seed}};
  j["diagnostics"] = c.diagnostics;
  j["bounds"] = c.bounds;
  j["trace"] = c.trace;
  j["epsilon"] = c.epsilon;
  return j;
}

inline void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

}  // namespace fedmm::experiment
