#pragma once
// Post-hoc evaluation against the source image. Only the harness calls into
// this header; nothing on the attack path includes it.

#include "wiretap/image.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wiretap {

/// Surrogate eavesdropping success: toy-embedding cosine at or above this.
inline constexpr double kSuccessCosine = 0.7;
inline constexpr double kWilsonZ = 1.959963984540054;

struct Evaluation {
  double psnr = 0.0;
  double ms_ssim = 0.0;
  double cosine = 0.0;
  bool success = false;
};

struct EvalConfig {
  MsSsimConfig ms_ssim;
  ToyEmbedding embedding;
};

inline Evaluation evaluate(const Image& source, const Image& estimate, const EvalConfig& cfg) {
  require_same_shape(source, estimate, "evaluate");
  Evaluation e;
  e.psnr = psnr(source, estimate);
  e.ms_ssim = ms_ssim(source, estimate, cfg.ms_ssim);
  e.cosine = cosine_sim(cfg.embedding.embed(source), cfg.embedding.embed(estimate));
  e.success = e.cosine >= kSuccessCosine;
  return e;
}

struct TrialReport {
  std::string method;
  double snr_db = 0.0;
  int trial = 0;
  std::uint64_t seed = 0;
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double ms_ssim = std::numeric_limits<double>::quiet_NaN();
  double cosine = std::numeric_limits<double>::quiet_NaN();
  bool success = false;
  std::uint64_t steps = 0;
  std::optional<double> wall_ms;
  std::string status = "ok";  // ok | failed
  std::string reason;

  void set(const Evaluation& e) {
    psnr = e.psnr;
    ms_ssim = e.ms_ssim;
    cosine = e.cosine;
    success = e.success;
  }
};

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

/// Wilson score interval for k successes out of n.
inline Interval wilson_interval(std::size_t k, std::size_t n, double z = kWilsonZ) {
  require(n > 0 && k <= n, "wilson_interval: need 0 <= k <= n, n > 0");
  const double nn = static_cast<double>(n), p = static_cast<double>(k) / nn, z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct CellSummary {
  std::string method;
  double snr_db = 0.0;
  std::size_t count = 0;
  std::size_t successes = 0;
  std::size_t failed = 0;
  double success_rate = 0.0;
  Interval ci;
  // Means over trials with finite metrics.
  double mean_psnr = std::numeric_limits<double>::quiet_NaN();
  double mean_ms_ssim = std::numeric_limits<double>::quiet_NaN();
  double mean_cosine = std::numeric_limits<double>::quiet_NaN();
  double mean_steps = 0.0;
};

/// One row per (method, snr) cell, ordered by method name then SNR.
inline std::vector<CellSummary> aggregate(const std::vector<TrialReport>& reports, std::vector<std::string>* warnings = nullptr) {
  std::map<std::pair<std::string, double>, std::vector<const TrialReport*>> cells;
  for (const auto& r : reports) cells[{r.method, r.snr_db}].push_back(&r);
  std::vector<CellSummary> out;
  for (auto& [key, rows] : cells) {
    if (rows.empty()) {
      if (warnings) warnings->push_back("empty cell " + key.first);
      continue;
    }
    // Sort within the cell so floating-point sums do not depend on input order.
    std::sort(rows.begin(), rows.end(), [](const TrialReport* a, const TrialReport* b) { return a->trial < b->trial; });
    CellSummary c;
    c.method = key.first;
    c.snr_db = key.second;
    c.count = rows.size();
    double sp = 0, ss = 0, sc = 0, st = 0;
    std::size_t np = 0, ns = 0, nc = 0;
    for (const TrialReport* r : rows) {
      if (r->success) ++c.successes;
      if (r->status != "ok") ++c.failed;
      if (std::isfinite(r->psnr)) sp += r->psnr, ++np;
      if (std::isfinite(r->ms_ssim)) ss += r->ms_ssim, ++ns;
      if (std::isfinite(r->cosine)) sc += r->cosine, ++nc;
      st += static_cast<double>(r->steps);
    }
    c.success_rate = static_cast<double>(c.successes) / static_cast<double>(c.count);
    c.ci = wilson_interval(c.successes, c.count);
    if (np) c.mean_psnr = sp / np;
    if (ns) c.mean_ms_ssim = ss / ns;
    if (nc) c.mean_cosine = sc / nc;
    c.mean_steps = st / static_cast<double>(c.count);
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest decimal that round-trips; "nan"/"inf" for non-finite values.
inline std::string format_double(double d) {
  if (std::isnan(d)) return "nan";
  if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double d = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), d);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InvalidArgument("not a number: '" + s + "'");
  return d;
}

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{"method", "snr_db", "trial", "seed",  "psnr",   "ms_ssim",
                                             "cosine", "success", "steps", "wall_ms", "status", "reason"};
  return cols;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

inline std::string csv_header() {
  std::string h;
  for (const auto& c : csv_columns()) h += (h.empty() ? "" : ",") + c;
  return h;
}

inline std::string to_csv_row(const TrialReport& r) {
  std::string s;
  s += csv_field(r.method) + ",";
  s += format_double(r.snr_db) + ",";
  s += std::to_string(r.trial) + ",";
  s += std::to_string(r.seed) + ",";
  s += format_double(r.psnr) + ",";
  s += format_double(r.ms_ssim) + ",";
  s += format_double(r.cosine) + ",";
  s += std::string(r.success ? "1" : "0") + ",";
  s += std::to_string(r.steps) + ",";
  s += (r.wall_ms ? format_double(*r.wall_ms) : std::string()) + ",";
  s += csv_field(r.status) + ",";
  s += csv_field(r.reason);
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline TrialReport from_csv_row(const std::string& line) {
  const auto f = split_csv_line(line);
  if (f.size() != csv_columns().size())
    throw InvalidArgument("CSV row has " + std::to_string(f.size()) + " fields, expected " + std::to_string(csv_columns().size()));
  TrialReport r;
  r.method = f[0];
  r.snr_db = parse_double(f[1]);
  r.trial = std::stoi(f[2]);
  r.seed = std::stoull(f[3]);
  r.psnr = parse_double(f[4]);
  r.ms_ssim = parse_double(f[5]);
  r.cosine = parse_double(f[6]);
  if (f[7] != "0" && f[7] != "1") throw InvalidArgument("CSV success column must be 0 or 1");
  r.success = f[7] == "1";
  r.steps = std::stoull(f[8]);
  if (!f[9].empty()) r.wall_ms = parse_double(f[9]);
  r.status = f[10];
  r.reason = f[11];
  return r;
}

inline std::string aggregate_header() {
  return "method,snr_db,count,successes,failed,success_rate,ci_lo,ci_hi,mean_psnr,mean_ms_ssim,mean_cosine,mean_steps";
}

inline std::string to_aggregate_row(const CellSummary& c) {
  return csv_field(c.method) + "," + format_double(c.snr_db) + "," + std::to_string(c.count) + "," + std::to_string(c.successes) +
         "," + std::to_string(c.failed) + "," + format_double(c.success_rate) + "," + format_double(c.ci.lo) + "," +
         format_double(c.ci.hi) + "," + format_double(c.mean_psnr) + "," + format_double(c.mean_ms_ssim) + "," +
         format_double(c.mean_cosine) + "," + format_double(c.mean_steps);
}

}  // namespace wiretap
