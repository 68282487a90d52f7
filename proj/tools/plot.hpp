#pragma once

#include <string>
#include <vector>

namespace twochan::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool steps = false;  // draw as a staircase
};

/// Static SVG line plot. Non-finite points are skipped.
std::string line_svg(const std::string &title, const std::string &xlabel,
                     const std::string &ylabel, const std::vector<Series> &series,
                     bool log_y = false);

/// Static SVG heat map; values[i][j] is drawn at row i (ylabels) and
/// column j (xlabels). Non-finite cells are hatched grey.
std::string heat_svg(const std::string &title, const std::vector<std::string> &xlabels,
                     const std::vector<std::string> &ylabels,
                     const std::vector<std::vector<double>> &values, bool log_scale = true);

}  // namespace twochan::plot
