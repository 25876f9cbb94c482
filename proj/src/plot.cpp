#include "transzero/plot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace tz {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    char* end = nullptr;
    out = static_cast<T>(std::strtod(s.c_str(), &end));
    return end == s.c_str() + s.size() && std::isfinite(out);
  } else {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
  }
}

}  // namespace

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read metrics file " + path.string());
  std::vector<MetricsRow> rows;
  std::string line;
  int number = 0;
  auto fail = [&](const std::string& why) {
    throw ConfigError(path.string() + ":" + std::to_string(number) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (number == 1) {
      if (line != kMetricsHeader) fail("expected header '" + std::string(kMetricsHeader) + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 9) fail("expected 9 fields, found " + std::to_string(f.size()));
    MetricsRow r;
    if (!parse_number(f[0], r.step) || !parse_number(f[1], r.episodes) || !parse_number(f[2], r.env_steps) ||
        !parse_number(f[3], r.mean_reward) || !parse_number(f[4], r.value_loss) ||
        !parse_number(f[5], r.reward_loss) || !parse_number(f[6], r.policy_loss) ||
        !parse_number(f[7], r.nodes_per_sim) || !parse_number(f[8], r.plan_ms)) {
      fail("malformed number in '" + line + "'");
    }
    rows.push_back(r);
  }
  if (number == 0) fail("empty file");
  if (rows.empty()) {
    number = 1;
    fail("no data rows");
  }
  return rows;
}

Curve aggregate_runs(const std::string& label, const std::vector<std::vector<MetricsRow>>& runs) {
  if (runs.empty()) throw UsageError("aggregate_runs needs at least one run");
  Curve c;
  c.label = label;
  c.runs = static_cast<int>(runs.size());
  std::size_t length = std::numeric_limits<std::size_t>::max();
  for (const auto& r : runs) length = std::min(length, r.size());
  const auto k = static_cast<double>(runs.size());
  std::vector<double> wall(runs.size(), 0.0);
  std::vector<std::int64_t> prev_steps(runs.size(), 0);
  for (std::size_t i = 0; i < length; ++i) {
    CurvePoint p;
    for (std::size_t s = 0; s < runs.size(); ++s) {
      const auto& row = runs[s][i];
      wall[s] += row.plan_ms * static_cast<double>(row.env_steps - prev_steps[s]) / 1000.0;
      prev_steps[s] = row.env_steps;
      p.env_steps += static_cast<double>(row.env_steps) / k;
      p.wall_seconds += wall[s] / k;
      p.mean += row.mean_reward / k;
    }
    if (runs.size() > 1) {
      double ss = 0.0;
      for (const auto& r : runs) ss += (r[i].mean_reward - p.mean) * (r[i].mean_reward - p.mean);
      p.stderr_ = std::sqrt(ss / (k - 1.0)) / std::sqrt(k);
    }
    c.points.push_back(p);
  }
  return c;
}

namespace {

constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", std::abs(v) < 0.005 ? 0.0 : v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '<') out += "&lt;";
    else if (ch == '>') out += "&gt;";
    else if (ch == '&') out += "&amp;";
    else out += ch;
  }
  return out;
}

void panel(std::string& svg, const std::vector<Curve>& curves, bool wall_clock, double left) {
  const double top = 40, width = 380, height = 260;
  double xmax = 0, ymin = 0, ymax = 1;
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      xmax = std::max(xmax, wall_clock ? p.wall_seconds : p.env_steps);
      ymin = std::min(ymin, p.mean - p.stderr_);
      ymax = std::max(ymax, p.mean + p.stderr_);
    }
  }
  if (xmax <= 0) xmax = 1;
  auto X = [&](double x) { return left + width * x / xmax; };
  auto Y = [&](double y) { return top + height * (1.0 - (y - ymin) / (ymax - ymin)); };
  svg += "<rect x='" + fmt(left) + "' y='" + fmt(top) + "' width='" + fmt(width) + "' height='" + fmt(height) +
         "' fill='none' stroke='#444'/>\n";
  const std::string title = wall_clock ? "reward vs planning time (s)" : "reward vs environment steps";
  svg += "<text x='" + fmt(left + width / 2) + "' y='" + fmt(top - 12) + "' text-anchor='middle'>" + title +
         "</text>\n";
  svg += "<text x='" + fmt(left) + "' y='" + fmt(top + height + 16) + "'>0</text>";
  svg += "<text x='" + fmt(left + width) + "' y='" + fmt(top + height + 16) + "' text-anchor='end'>" + fmt(xmax) +
         "</text>\n";
  svg += "<text x='" + fmt(left - 4) + "' y='" + fmt(top + 4) + "' text-anchor='end'>" + fmt(ymax) + "</text>";
  svg += "<text x='" + fmt(left - 4) + "' y='" + fmt(top + height) + "' text-anchor='end'>" + fmt(ymin) +
         "</text>\n";
  if (wall_clock && xmax == 1 &&
      std::all_of(curves.begin(), curves.end(), [](const Curve& c) {
        return std::all_of(c.points.begin(), c.points.end(), [](const CurvePoint& p) { return p.wall_seconds == 0; });
      })) {
    svg += "<text x='" + fmt(left + width / 2) + "' y='" + fmt(top + height / 2) +
           "' text-anchor='middle' fill='#888'>timing not logged (train.log_timing)</text>\n";
    return;
  }
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    const std::string color = kColors[i % std::size(kColors)];
    auto xv = [&](const CurvePoint& p) { return X(wall_clock ? p.wall_seconds : p.env_steps); };
    if (c.runs > 1) {
      std::string band;
      for (const auto& p : c.points) band += fmt(xv(p)) + "," + fmt(Y(p.mean + p.stderr_)) + " ";
      for (auto it = c.points.rbegin(); it != c.points.rend(); ++it) {
        band += fmt(xv(*it)) + "," + fmt(Y(it->mean - it->stderr_)) + " ";
      }
      svg += "<polygon class='band' points='" + band + "' fill='" + color + "' fill-opacity='0.2' stroke='none'/>\n";
    }
    std::string line;
    for (const auto& p : c.points) line += fmt(xv(p)) + "," + fmt(Y(p.mean)) + " ";
    svg += "<polyline points='" + line + "' fill='none' stroke='" + color + "' stroke-width='1.5'/>\n";
  }
}

}  // namespace

std::string render_svg(const std::vector<Curve>& curves) {
  std::string svg =
      "<svg xmlns='http://www.w3.org/2000/svg' width='900' height='360' font-family='sans-serif' "
      "font-size='11'>\n<rect width='900' height='360' fill='white'/>\n";
  panel(svg, curves, false, 50);
  panel(svg, curves, true, 490);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const std::string color = kColors[i % std::size(kColors)];
    const double y = 325 + 12.0 * static_cast<double>(i);
    svg += "<text x='50' y='" + fmt(y) + "' fill='" + color + "'>" + escape(curves[i].label) + " (" +
           std::to_string(curves[i].runs) + (curves[i].runs == 1 ? " run" : " runs") + ")</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace tz
