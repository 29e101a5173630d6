#include "sabm/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "sabm/error.hpp"

namespace sabm {

namespace fs = std::filesystem;

std::string csv_field(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string csv_number(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", value);
  return buf;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  auto out = open_out(path);
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << csv_field(fields[i]);
    out << "\r\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  if (!out) throw IoError("write failed on " + path.string());
}

void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& records) {
  auto out = open_out(path);
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw IoError("write failed on " + path.string());
}

std::string render_svg(const LinePlot& plot) {
  const double left = 70, right = 150, top = 40, bottom = 50;
  const double w = plot.width, h = plot.height;
  const double pw = w - left - right, ph = h - top - bottom;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : plot.series) {
    for (double x : s.x) xmin = std::min(xmin, x), xmax = std::max(xmax, x);
    for (double y : s.y) ymin = std::min(ymin, y), ymax = std::max(ymax, y);
  }
  for (const auto& r : plot.references) ymin = std::min(ymin, r.y), ymax = std::max(ymax, r.y);
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1;
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + std::to_string(plot.width) +
       "\" height=\"" + std::to_string(plot.height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(w / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + xml_escape(plot.title) +
       "</text>\n";
  // axes
  s += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(top + ph) + "\" x2=\"" + fmt(left + pw) + "\" y2=\"" +
       fmt(top + ph) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(left) + "\" y2=\"" + fmt(top + ph) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    s += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(py(yv) + 4) + "\" text-anchor=\"end\" font-size=\"11\">" +
         fmt(yv) + "</text>\n";
    s += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(top + ph + 16) + "\" text-anchor=\"middle\" font-size=\"11\">" +
         fmt(xv) + "</text>\n";
  }
  s += "<text class=\"x-label\" x=\"" + fmt(left + pw / 2) + "\" y=\"" + fmt(h - 10) +
       "\" text-anchor=\"middle\" font-size=\"13\">" + xml_escape(plot.x_label) + "</text>\n";
  s += "<text class=\"y-label\" x=\"16\" y=\"" + fmt(top + ph / 2) + "\" text-anchor=\"middle\" font-size=\"13\" "
       "transform=\"rotate(-90 16 " + fmt(top + ph / 2) + ")\">" + xml_escape(plot.y_label) + "</text>\n";

  for (const auto& r : plot.references) {
    s += "<line class=\"reference\" data-y=\"" + csv_number(r.y) + "\" x1=\"" + fmt(left) + "\" y1=\"" + fmt(py(r.y)) +
         "\" x2=\"" + fmt(left + pw) + "\" y2=\"" + fmt(py(r.y)) +
         "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
    s += "<text x=\"" + fmt(left + pw + 4) + "\" y=\"" + fmt(py(r.y) + 4) + "\" font-size=\"11\">" +
         xml_escape(r.label) + "</text>\n";
  }
  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const auto& ser = plot.series[k];
    const char* color = kPalette[k % (sizeof kPalette / sizeof *kPalette)];
    std::string pts;
    const std::size_t n = std::min(ser.x.size(), ser.y.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (i) pts += ' ';
      pts += fmt(px(ser.x[i])) + "," + fmt(py(ser.y[i]));
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.2\" points=\"" + pts +
         "\"><title>" + xml_escape(ser.label) + "</title></polyline>\n";
    const double ly = top + 16 + 18.0 * static_cast<double>(k);
    s += "<line x1=\"" + fmt(left + pw + 60) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(left + pw + 80) + "\" y2=\"" +
         fmt(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fmt(left + pw + 84) + "\" y=\"" + fmt(ly + 4) + "\" font-size=\"11\">" +
         xml_escape(ser.label) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

void write_svg(const fs::path& path, const LinePlot& plot) {
  auto out = open_out(path);
  out << render_svg(plot);
  if (!out) throw IoError("write failed on " + path.string());
}

}  // namespace sabm
