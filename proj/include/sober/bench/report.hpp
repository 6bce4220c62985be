#pragma once

// Aggregation of run CSVs into median +/- standard error tables and static
// SVG convergence charts.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "runner.hpp"

namespace sober::bench {

struct RecordRow {
  std::string function;
  std::string policy;
  std::uint64_t seed = 0;
  int iteration = 0;
  double simple_regret = std::numeric_limits<double>::quiet_NaN();
};

struct AggregateRow {
  std::string function;
  std::string policy;
  int iteration = 0;
  Index count = 0;
  double median = 0.0;
  double standard_error = 0.0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Sample standard deviation over sqrt(count); zero for a single value.
inline double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

inline std::vector<RecordRow> records_from_results(const std::vector<RunResult>& results) {
  std::vector<RecordRow> rows;
  for (const auto& r : results)
    for (const auto& rec : r.history.records)
      rows.push_back(RecordRow{r.spec.function, r.spec.policy, r.spec.seed, rec.iteration, rec.simple_regret});
  return rows;
}

inline std::vector<double> parse_csv_line(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
  return out;
}

/// Reads the records of a run directory written by run_benchmark.
inline std::vector<RecordRow> load_records(const std::filesystem::path& dir) {
  std::ifstream in(dir / "summary.json");
  if (!in) throw std::runtime_error("no summary.json in " + dir.string());
  const json summary = json::parse(in);
  std::vector<RecordRow> rows;
  for (const auto& run : summary.at("runs")) {
    std::ifstream csv(dir / "runs" / run.at("file").get<std::string>());
    if (!csv) continue;
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      if (line.empty()) continue;
      const auto v = parse_csv_line(line);
      if (v.size() < 8) throw std::runtime_error("malformed run CSV row: " + line);
      rows.push_back(RecordRow{run.at("function").get<std::string>(), run.at("policy").get<std::string>(),
                               run.at("seed").get<std::uint64_t>(), static_cast<int>(v[0]), v[7]});
    }
  }
  return rows;
}

inline std::vector<AggregateRow> aggregate(const std::vector<RecordRow>& records) {
  std::map<std::tuple<std::string, std::string, int>, std::vector<double>> groups;
  for (const auto& r : records)
    if (std::isfinite(r.simple_regret)) groups[{r.function, r.policy, r.iteration}].push_back(r.simple_regret);
  std::vector<AggregateRow> out;
  for (const auto& [key, values] : groups)
    out.push_back(AggregateRow{std::get<0>(key), std::get<1>(key), std::get<2>(key), static_cast<Index>(values.size()),
                               median(values), standard_error(values)});
  return out;
}

inline std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::ostringstream out;
  out << "function,policy,iteration,count,median_simple_regret,standard_error\n";
  for (const auto& r : rows)
    out << r.function << ',' << r.policy << ',' << r.iteration << ',' << r.count << ',' << format_number(r.median) << ','
        << format_number(r.standard_error) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// SVG chart

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

/// Iteration against median simple regret, one polyline per policy.
inline std::string regret_chart_svg(const std::string& function, const std::vector<AggregateRow>& rows) {
  static const char* colours[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};
  std::map<std::string, std::vector<const AggregateRow*>> series;
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo, y_lo = x_lo, y_hi = -x_lo;
  for (const auto& r : rows) {
    if (r.function != function) continue;
    series[r.policy].push_back(&r);
    x_lo = std::min(x_lo, static_cast<double>(r.iteration));
    x_hi = std::max(x_hi, static_cast<double>(r.iteration));
    y_lo = std::min(y_lo, r.median);
    y_hi = std::max(y_hi, r.median);
  }
  if (series.empty()) throw std::invalid_argument("no records for function " + function);
  if (x_hi <= x_lo) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  if (y_hi <= y_lo) {
    const double pad = std::max(std::abs(y_lo) * 0.1, 1e-9);
    y_lo -= pad;
    y_hi += pad;
  }
  const double W = 640, H = 420, left = 70, right = 170, top = 40, bottom = 50;
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * (W - left - right); };
  auto py = [&](double y) { return H - bottom - (y - y_lo) / (y_hi - y_lo) * (H - top - bottom); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' '
    << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
    << svg_escape(function) << ": median simple regret</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
    << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y_lo + (y_hi - y_lo) * k / 4.0;
    s << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << format_number(std::round(yv * 1e4) / 1e4)
      << "</text>\n";
  }
  for (int it = static_cast<int>(x_lo); it <= static_cast<int>(x_hi); ++it)
    if (it >= x_lo)
      s << "<text x=\"" << px(it) << "\" y=\"" << H - bottom + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << it << "</text>\n";
  s << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">iteration</text>\n";

  std::size_t c = 0;
  for (auto& [policy, pts] : series) {
    std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->iteration < b->iteration; });
    const char* colour = colours[c % 6];
    s << "<g class=\"series\" data-policy=\"" << svg_escape(policy) << "\">\n";
    if (pts.size() > 1) {
      s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
      for (const auto* p : pts) s << px(p->iteration) << ',' << py(p->median) << ' ';
      s << "\"/>\n";
    }
    for (const auto* p : pts)
      s << "<circle cx=\"" << px(p->iteration) << "\" cy=\"" << py(p->median) << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
    s << "</g>\n";
    const double ly = top + 20.0 * static_cast<double>(c);
    s << "<g class=\"legend\"><line x1=\"" << W - right + 15 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 35
      << "\" y2=\"" << ly << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/><text x=\"" << W - right + 40
      << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">" << svg_escape(policy)
      << "</text></g>\n";
    ++c;
  }
  s << "</svg>\n";
  return s.str();
}

/// Writes aggregate.csv and one <function>_regret.svg per function.
inline std::vector<std::filesystem::path> emit_report(const std::vector<RecordRow>& records,
                                                      const std::filesystem::path& dir) {
  if (records.empty()) throw std::invalid_argument("no records to report");
  std::filesystem::create_directories(dir);
  const auto rows = aggregate(records);
  std::vector<std::filesystem::path> written;
  const auto agg = dir / "aggregate.csv";
  std::ofstream(agg) << aggregate_csv(rows);
  written.push_back(agg);
  std::vector<std::string> functions;
  for (const auto& r : rows)
    if (std::find(functions.begin(), functions.end(), r.function) == functions.end()) functions.push_back(r.function);
  for (const auto& f : functions) {
    const auto path = dir / (f + "_regret.svg");
    std::ofstream(path) << regret_chart_svg(f, rows);
    written.push_back(path);
  }
  return written;
}

}  // namespace sober::bench
