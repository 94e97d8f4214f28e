#pragma once

#include <string>
#include <vector>

namespace revlab {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

// Self-contained vector plots, no external tooling. Throws on empty input or
// ragged data.
void write_line_chart(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series);

// values[group][series]
void write_grouped_bar_chart(const std::string& path, const std::string& title,
                             const std::string& y_label,
                             const std::vector<std::string>& group_labels,
                             const std::vector<std::string>& series_labels,
                             const std::vector<std::vector<double>>& values);

}  // namespace revlab
