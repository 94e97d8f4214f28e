#include "revlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "revlab/util.hpp"

namespace revlab {

namespace {

constexpr double kWidth = 720, kHeight = 480;
constexpr double kLeft = 70, kRight = 160, kTop = 50, kBottom = 60;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
constexpr size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

struct Canvas {
  std::ostringstream body;

  void text(double x, double y, const std::string& s, const std::string& anchor = "start",
            double size = 13, const std::string& extra = "") {
    body << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size)
         << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\"" << extra << ">"
         << esc(s) << "</text>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "#333",
            double width = 1) {
    body << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
         << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width)
         << "\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill) {
    body << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
         << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\"/>\n";
  }

  std::string finish() const {
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
                      "\" height=\"" + num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) + " " +
                      num(kHeight) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += body.str();
    out += "</svg>\n";
    return out;
  }
};

struct Range {
  double lo, hi;
  double span() const { return hi - lo; }
};

Range pad_range(double lo, double hi) {
  if (lo > hi) std::swap(lo, hi);
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  double pad = (hi - lo) * 0.08;
  return {lo - pad, hi + pad};
}

void draw_frame(Canvas& c, const std::string& title, const std::string& x_label,
                const std::string& y_label, const Range& yr,
                const std::vector<std::pair<double, std::string>>& x_ticks) {
  double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  c.text(kLeft + plot_w / 2, kTop - 20, title, "middle", 16);
  c.line(kLeft, kTop, kLeft, kTop + plot_h);
  c.line(kLeft, kTop + plot_h, kLeft + plot_w, kTop + plot_h);
  for (int i = 0; i <= 5; ++i) {
    double v = yr.lo + yr.span() * i / 5.0;
    double y = kTop + plot_h - plot_h * i / 5.0;
    c.line(kLeft - 4, y, kLeft, y);
    std::ostringstream os;
    os.precision(3);
    os << v;
    c.text(kLeft - 8, y + 4, os.str(), "end", 11);
  }
  for (const auto& [x, label] : x_ticks) {
    c.line(x, kTop + plot_h, x, kTop + plot_h + 4);
    c.text(x, kTop + plot_h + 18, label, "middle", 11);
  }
  c.text(kLeft + plot_w / 2, kHeight - 14, x_label, "middle", 13);
  c.text(16, kTop + plot_h / 2, y_label, "middle", 13,
         " transform=\"rotate(-90 16 " + num(kTop + plot_h / 2) + ")\"");
}

void draw_legend(Canvas& c, const std::vector<std::string>& labels) {
  double x = kWidth - kRight + 16, y = kTop + 10;
  for (size_t i = 0; i < labels.size(); ++i) {
    c.rect(x, y - 9, 12, 12, kPalette[i % kPaletteSize]);
    c.text(x + 18, y + 2, labels[i], "start", 12);
    y += 20;
  }
}

}  // namespace

void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series) {
  if (series.empty()) throw std::invalid_argument("line chart: no series");
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const auto& s : series) {
    if (s.x.empty() || s.x.size() != s.y.size())
      throw std::invalid_argument("line chart: empty or ragged series " + s.label);
    for (double v : s.x) {
      xlo = std::min(xlo, v);
      xhi = std::max(xhi, v);
    }
    for (double v : s.y) {
      ylo = std::min(ylo, v);
      yhi = std::max(yhi, v);
    }
  }
  Range xr = pad_range(xlo, xhi), yr = pad_range(ylo, yhi);
  double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - xr.lo) / xr.span() * plot_w; };
  auto py = [&](double v) { return kTop + plot_h - (v - yr.lo) / yr.span() * plot_h; };

  Canvas c;
  std::vector<std::pair<double, std::string>> x_ticks;
  for (int i = 0; i <= 5; ++i) {
    double v = xr.lo + xr.span() * i / 5.0;
    std::ostringstream os;
    os.precision(3);
    os << v;
    x_ticks.emplace_back(px(v), os.str());
  }
  draw_frame(c, title, x_label, y_label, yr, x_ticks);
  std::vector<std::string> labels;
  for (size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    labels.push_back(s.label);
    std::ostringstream pts;
    for (size_t k = 0; k < s.x.size(); ++k) pts << num(px(s.x[k])) << "," << num(py(s.y[k])) << " ";
    c.body << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\""
           << kPalette[i % kPaletteSize] << "\" stroke-width=\"2\"/>\n";
    for (size_t k = 0; k < s.x.size(); ++k)
      c.body << "<circle cx=\"" << num(px(s.x[k])) << "\" cy=\"" << num(py(s.y[k]))
             << "\" r=\"3\" fill=\"" << kPalette[i % kPaletteSize] << "\"/>\n";
  }
  draw_legend(c, labels);
  write_file(path, c.finish());
}

void write_grouped_bar_chart(const std::string& path, const std::string& title,
                             const std::string& y_label,
                             const std::vector<std::string>& group_labels,
                             const std::vector<std::string>& series_labels,
                             const std::vector<std::vector<double>>& values) {
  if (group_labels.empty() || series_labels.empty())
    throw std::invalid_argument("bar chart: no data");
  if (values.size() != group_labels.size())
    throw std::invalid_argument("bar chart: values/groups mismatch");
  double ylo = 0, yhi = 0;
  for (const auto& row : values) {
    if (row.size() != series_labels.size())
      throw std::invalid_argument("bar chart: ragged value rows");
    for (double v : row) {
      ylo = std::min(ylo, v);
      yhi = std::max(yhi, v);
    }
  }
  Range yr = pad_range(ylo, yhi);
  double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  auto py = [&](double v) { return kTop + plot_h - (v - yr.lo) / yr.span() * plot_h; };

  Canvas c;
  size_t ng = group_labels.size(), ns = series_labels.size();
  double group_w = plot_w / ng;
  double bar_w = group_w * 0.8 / ns;
  std::vector<std::pair<double, std::string>> x_ticks;
  for (size_t gi = 0; gi < ng; ++gi)
    x_ticks.emplace_back(kLeft + group_w * (gi + 0.5), group_labels[gi]);
  draw_frame(c, title, "", y_label, yr, x_ticks);
  for (size_t gi = 0; gi < ng; ++gi)
    for (size_t si = 0; si < ns; ++si) {
      double x = kLeft + group_w * gi + group_w * 0.1 + bar_w * si;
      double y0 = py(std::max(0.0, yr.lo)), y1 = py(values[gi][si]);
      c.rect(x, std::min(y0, y1), bar_w, std::abs(y0 - y1), kPalette[si % kPaletteSize]);
    }
  draw_legend(c, series_labels);
  write_file(path, c.finish());
}

}  // namespace revlab
