#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace sabm {

/// RFC 4180 field quoting: quoted only when it contains a comma, quote, CR or LF.
std::string csv_field(std::string_view field);
std::string csv_number(double value);

/// Writes a header row plus data rows. Throws IoError.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct ReferenceLine {
  std::string label;
  double y = 0.0;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  std::vector<ReferenceLine> references;
  int width = 800;
  int height = 480;
};

/// Standalone SVG 1.1 document.
std::string render_svg(const LinePlot& plot);
void write_svg(const std::filesystem::path& path, const LinePlot& plot);

}  // namespace sabm
