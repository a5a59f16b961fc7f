#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace jogs::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal standalone SVG line chart. Non-finite samples are skipped.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series,
                           bool log_y = false);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace jogs::plot
