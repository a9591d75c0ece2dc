#pragma once

// Diagnostic report: named scalar rows with the exact seeds needed to
// reproduce them, written as CSV with a JSON sidecar for timing metadata.

#include <fstream>
#include <sstream>

#include "opwalk/common.hpp"

namespace opwalk {

struct ReportRow {
  std::string statistic;
  std::int64_t n = 0;
  double p = 0.0;
  int d = 1;
  std::uint64_t seed = 0;
  double value = 0.0;
  double stderr_ = 0.0;
};

struct DiagnosticReport {
  std::string run_id;
  std::vector<ReportRow> rows;
  double wall_seconds = 0.0;

  void add(std::string statistic, std::int64_t n, double p, int d,
           std::uint64_t seed, double value, double stderr_ = 0.0) {
    rows.push_back({std::move(statistic), n, p, d, seed, value, stderr_});
  }

  const ReportRow* find(const std::string& statistic) const {
    for (const auto& r : rows)
      if (r.statistic == statistic) return &r;
    return nullptr;
  }

  std::vector<double> values_of(const std::string& statistic) const {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.statistic == statistic) v.push_back(r.value);
    return v;
  }

  // deterministic body: no timestamps, fixed formatting
  void write_csv(std::ostream& os) const {
    os << "run_id,statistic,n,p,d,seed,value,stderr\n";
    for (const auto& r : rows)
      os << run_id << ',' << r.statistic << ',' << r.n << ','
         << format_g(r.p, 17) << ',' << r.d << ',' << r.seed << ','
         << format_g(r.value, 17) << ',' << format_g(r.stderr_, 17) << '\n';
  }

  std::string csv_body() const {
    std::ostringstream ss;
    write_csv(ss);
    return ss.str();
  }
};

// Tidy long-format series for plotting: x, y, group, stderr. Optionally with
// the y values log10-transformed and a least-squares fit row appended.
struct PlotSpec {
  std::string statistic;
  std::string x_axis = "n";      // n | p | d | seed
  std::string group_by;          // empty | n | p | d | seed
  bool log_y = false;
  bool fit = false;
};

inline double plot_axis_value(const ReportRow& r, const std::string& axis) {
  if (axis == "n") return static_cast<double>(r.n);
  if (axis == "p") return r.p;
  if (axis == "d") return static_cast<double>(r.d);
  if (axis == "seed") return static_cast<double>(r.seed);
  throw ConfigError("unknown plot axis: " + axis);
}

inline std::string emit_plotdata(const DiagnosticReport& report,
                                 const PlotSpec& spec) {
  std::ostringstream os;
  os << "x,y,group,stderr\n";
  std::vector<double> xs, ys;
  for (const auto& r : report.rows) {
    if (r.statistic != spec.statistic) continue;
    const double x = plot_axis_value(r, spec.x_axis);
    double y = r.value;
    if (spec.log_y) {
      if (y <= 0.0) continue;  // dropped; zero frequencies carry no log
      y = std::log10(y);
    }
    std::string group;
    if (!spec.group_by.empty())
      group = format_g(plot_axis_value(r, spec.group_by), 17);
    os << format_g(x, 17) << ',' << format_g(y, 17) << ',' << group << ','
       << format_g(r.stderr_, 17) << '\n';
    xs.push_back(x);
    ys.push_back(y);
  }
  if (spec.fit && xs.size() >= 2) {
    const LinearFit f = linear_fit(xs, ys);
    os << "fit_slope," << format_g(f.slope, 17) << ",fit,"
       << format_g(f.r2, 17) << '\n';
  }
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path);
  os << body;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace opwalk
