#pragma once

// Static loss-curve SVGs and a metrics summary for a run directory.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/error.hpp"
#include "emconsist/core/framed_file.hpp"

namespace emc {

struct LossSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (step, value); absent cells skipped
};

/// Parses a loss CSV (header "step,<term>,...") into one series per term column.
inline std::vector<LossSeries> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::format, path.string() + ": empty loss log");
  const auto header = split(line);
  require(header.size() >= 2 && header[0] == "step", ErrorKind::format, path.string() + ": unexpected header");
  std::vector<LossSeries> series;
  for (std::size_t i = 1; i < header.size(); ++i) series.push_back({header[i], {}});
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split(line);
    require(cells.size() == header.size(), ErrorKind::format,
            path.string() + ":" + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields");
    try {
      const double step = std::stod(cells[0]);
      for (std::size_t i = 1; i < cells.size(); ++i)
        if (!cells[i].empty()) series[i - 1].points.emplace_back(step, std::stod(cells[i]));
    } catch (const std::exception&) {
      fail(ErrorKind::format, path.string() + ":" + std::to_string(row) + ": non-numeric field");
    }
  }
  return series;
}

namespace detail {

inline std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.6g", v);
  return b;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  return colors[i % 6];
}

}  // namespace detail

/// Line chart with one <polyline> per non-empty series.
inline std::string render_loss_svg(const std::vector<LossSeries>& series, const std::string& title) {
  constexpr double W = 640, H = 360, L = 64, R = 150, T = 36, B = 44;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!any) {
        x0 = x1 = x;
        y0 = y1 = y;
        any = true;
      }
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  using detail::num;
  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) + "\" viewBox=\"0 0 " +
         num(W) + " " + num(H) + "\">\n";
  svg += "<rect x=\"0\" y=\"0\" width=\"" + num(W) + "\" height=\"" + num(H) + "\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         title + "</text>\n";
  svg += "<g stroke=\"#444\" stroke-width=\"1\">\n";
  svg += "<line x1=\"" + num(L) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(W - R) + "\" y2=\"" + num(H - B) + "\"/>\n";
  svg += "<line x1=\"" + num(L) + "\" y1=\"" + num(T) + "\" x2=\"" + num(L) + "\" y2=\"" + num(H - B) + "\"/>\n";
  svg += "</g>\n<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double fy = y0 + (y1 - y0) * i / 4.0;
    const double fx = x0 + (x1 - x0) * i / 4.0;
    svg += "<text x=\"" + num(L - 6) + "\" y=\"" + num(py(fy) + 4) + "\" text-anchor=\"end\">" + num(fy) + "</text>\n";
    svg += "<text x=\"" + num(px(fx)) + "\" y=\"" + num(H - B + 16) + "\" text-anchor=\"middle\">" + num(fx) + "</text>\n";
  }
  svg += "<text x=\"" + num((L + W - R) / 2) + "\" y=\"" + num(H - 8) + "\" text-anchor=\"middle\">step</text>\n";
  svg += "</g>\n";
  std::size_t k = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    if (s.points.empty()) continue;
    std::string pts;
    for (const auto& [x, y] : s.points) pts += (pts.empty() ? "" : " ") + num(px(x)) + "," + num(py(y));
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(detail::palette(i)) +
           "\" stroke-width=\"1.5\" data-series=\"" + s.name + "\" points=\"" + pts + "\"/>\n";
    if (s.points.size() == 1)
      svg += "<circle cx=\"" + num(px(s.points[0].first)) + "\" cy=\"" + num(py(s.points[0].second)) +
             "\" r=\"3\" fill=\"" + detail::palette(i) + "\"/>\n";
    const double ly = T + 14.0 + 18.0 * static_cast<double>(k++);
    svg += "<line x1=\"" + num(W - R + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(W - R + 32) + "\" y2=\"" + num(ly) +
           "\" stroke=\"" + detail::palette(i) + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(W - R + 38) + "\" y=\"" + num(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + s.name + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

/// Aligned table of the numeric fields of every results-ledger line.
inline std::string render_results_table(const std::filesystem::path& ledger) {
  std::ifstream in(ledger);
  if (!in) fail(ErrorKind::io, "cannot open '" + ledger.string() + "' for reading");
  std::string out, line;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-24s %14s\n", "command", "key", "value");
  out += buf;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::format, ledger.string() + ":" + std::to_string(row) + ": invalid JSON");
    }
    const std::string cmd = j.value("command", "?");
    const nlohmann::json flat = j.contains("summary") ? j.at("summary").flatten() : nlohmann::json::object();
    for (const auto& [k, v] : flat.items()) {
      if (!v.is_number()) continue;
      std::snprintf(buf, sizeof buf, "%-10s %-24s %14s\n", cmd.c_str(), k.c_str(), detail::num(v.get<double>()).c_str());
      out += buf;
    }
  }
  return out;
}

struct ReportOutputs {
  std::vector<std::filesystem::path> files;
};

/// Writes losses.svg, one loss_<term>.svg per term with data, and summary.txt when a results
/// ledger exists. Missing inputs are reported together.
inline ReportOutputs write_report(const std::filesystem::path& run_dir) {
  const auto csv = run_dir / "losses.csv";
  const auto ledger = run_dir / "results.jsonl";
  const bool has_csv = std::filesystem::exists(csv), has_ledger = std::filesystem::exists(ledger);
  require(has_csv || has_ledger, ErrorKind::io,
          "report inputs missing in '" + run_dir.string() + "': losses.csv, results.jsonl");
  ReportOutputs out;
  if (has_csv) {
    const auto series = read_loss_csv(csv);
    out.files.push_back(run_dir / "losses.svg");
    write_text_file(out.files.back(), render_loss_svg(series, "training losses"));
    for (const auto& s : series) {
      if (s.points.empty()) continue;
      out.files.push_back(run_dir / ("loss_" + s.name + ".svg"));
      write_text_file(out.files.back(), render_loss_svg({s}, s.name));
    }
  }
  if (has_ledger) {
    out.files.push_back(run_dir / "summary.txt");
    write_text_file(out.files.back(), render_results_table(ledger));
  }
  return out;
}

}  // namespace emc
