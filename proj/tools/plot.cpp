#include "plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace twochan::plot {

namespace {

constexpr double kW = 640, kH = 400, kL = 70, kR = 150, kT = 40, kB = 50;
const char *kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string &s) {
  std::string r;
  for (char c : s) {
    if (c == '<') r += "&lt;";
    else if (c == '>') r += "&gt;";
    else if (c == '&') r += "&amp;";
    else r += c;
  }
  return r;
}

void header(std::ostringstream &o, double w, double h, const std::string &title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << escape(title) << "</text>\n";
}

}  // namespace

std::string line_svg(const std::string &title, const std::string &xlabel,
                     const std::string &ylabel, const std::vector<Series> &series, bool log_y) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!log_y || y > 0.0);
  };
  for (const auto &s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      const double y = log_y ? std::log10(s.y[i]) : s.y[i];
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pw = kW - kL - kR, ph = kH - kT - kB;
  auto px = [&](double x) { return kL + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kT + ph - ((log_y ? std::log10(y) : y) - y0) / (y1 - y0) * ph; };

  std::ostringstream o;
  header(o, kW, kH, title);
  o << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4, fy = y0 + (y1 - y0) * t / 4;
    const double X = kL + pw * t / 4, Y = kT + ph - ph * t / 4;
    o << "<text x=\"" << X << "\" y=\"" << kT + ph + 15 << "\" text-anchor=\"middle\">" << fmt(fx)
      << "</text>\n";
    o << "<text x=\"" << kL - 5 << "\" y=\"" << Y + 4 << "\" text-anchor=\"end\">"
      << fmt(log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  o << "<text x=\"" << kL + pw / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">"
    << escape(xlabel) << "</text>\n";
  o << "<text transform=\"translate(15," << kT + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto &s = series[si];
    const char *color = kColors[si % 6];
    std::ostringstream d;
    bool pen = false;
    double last_y = 0.0;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) {
        pen = false;
        continue;
      }
      if (pen && s.steps) d << " L" << px(s.x[i]) << ',' << last_y;
      last_y = py(s.y[i]);
      d << (pen ? " L" : " M") << px(s.x[i]) << ',' << last_y;
      pen = true;
    }
    o << "<path d=\"" << d.str() << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"1.5\"/>\n";
    const double ly = kT + 15 + 18 * static_cast<double>(si);
    o << "<line x1=\"" << kW - kR + 10 << "\" y1=\"" << ly << "\" x2=\"" << kW - kR + 30
      << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << kW - kR + 35 << "\" y=\"" << ly + 4 << "\">" << escape(s.name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string heat_svg(const std::string &title, const std::vector<std::string> &xlabels,
                     const std::vector<std::string> &ylabels,
                     const std::vector<std::vector<double>> &values, bool log_scale) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  auto scaled = [&](double v) { return log_scale ? std::log10(v) : v; };
  for (const auto &row : values)
    for (double v : row)
      if (std::isfinite(v) && (!log_scale || v > 0.0)) {
        lo = std::min(lo, scaled(v));
        hi = std::max(hi, scaled(v));
      }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi == lo) hi = lo + 1;

  const double cols = static_cast<double>(std::max<std::size_t>(xlabels.size(), 1));
  const double rows = static_cast<double>(std::max<std::size_t>(ylabels.size(), 1));
  const double pw = kW - kL - kR, ph = kH - kT - kB;
  const double cw = pw / cols, ch = ph / rows;
  std::ostringstream o;
  header(o, kW, kH, title);
  for (std::size_t i = 0; i < values.size(); ++i)
    for (std::size_t j = 0; j < values[i].size(); ++j) {
      const double v = values[i][j];
      std::string fill = "#bbbbbb";
      if (std::isfinite(v) && (!log_scale || v > 0.0)) {
        const double t = (scaled(v) - lo) / (hi - lo);
        char buf[16];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(255 * t),
                      static_cast<int>(80 + 100 * (1 - t)), static_cast<int>(255 * (1 - t)));
        fill = buf;
      }
      // row 0 at the bottom
      const double y = kT + ph - ch * static_cast<double>(i + 1);
      o << "<rect x=\"" << kL + cw * static_cast<double>(j) << "\" y=\"" << y << "\" width=\""
        << cw << "\" height=\"" << ch << "\" fill=\"" << fill << "\"><title>" << fmt(v)
        << "</title></rect>\n";
    }
  for (std::size_t j = 0; j < xlabels.size(); ++j)
    o << "<text x=\"" << kL + cw * (static_cast<double>(j) + 0.5) << "\" y=\"" << kT + ph + 15
      << "\" text-anchor=\"middle\">" << escape(xlabels[j]) << "</text>\n";
  for (std::size_t i = 0; i < ylabels.size(); ++i)
    o << "<text x=\"" << kL - 5 << "\" y=\"" << kT + ph - ch * (static_cast<double>(i) + 0.5) + 4
      << "\" text-anchor=\"end\">" << escape(ylabels[i]) << "</text>\n";
  o << "<text x=\"" << kL + pw / 2 << "\" y=\"" << kH - 12
    << "\" text-anchor=\"middle\">lambda2</text>\n";
  o << "<text transform=\"translate(15," << kT + ph / 2
    << ") rotate(-90)\" text-anchor=\"middle\">lambda1</text>\n";
  o << "<text x=\"" << kW - kR + 10 << "\" y=\"" << kT + 15 << "\">low " << fmt(log_scale ? std::pow(10, lo) : lo)
    << "</text>\n<text x=\"" << kW - kR + 10 << "\" y=\"" << kT + 33 << "\">high "
    << fmt(log_scale ? std::pow(10, hi) : hi) << "</text>\n";
  o << "<text x=\"" << kW - kR + 10 << "\" y=\"" << kT + 51 << "\">grey: unbounded</text>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace twochan::plot
