#pragma once

// Minimal SVG charts: line plots for accuracy curves and a PCA scatter of
// dumped features.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "disco/dataset.hpp"
#include "disco/error.hpp"
#include "disco/harness.hpp"

namespace disco {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

namespace detail {

struct Frame {
  double width = 640, height = 420, left = 60, right = 160, top = 40, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

inline void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
}

inline std::string header(const Frame& f, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << f.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << svg_escape(title) << "</text>\n";
  const double xa = f.height - f.bottom, xr = f.width - f.right;
  s << "<line x1=\"" << f.left << "\" y1=\"" << xa << "\" x2=\"" << xr << "\" y2=\"" << xa << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << f.left << "\" y1=\"" << f.top << "\" x2=\"" << f.left << "\" y2=\"" << xa << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<text x=\"" << f.px(xv) << "\" y=\"" << xa + 16 << "\" text-anchor=\"middle\">" << format_double(xv, "%.3g") << "</text>\n";
    s << "<text x=\"" << f.left - 6 << "\" y=\"" << f.py(yv) + 4 << "\" text-anchor=\"end\">" << format_double(yv, "%.3g") << "</text>\n";
    s << "<line x1=\"" << f.left << "\" y1=\"" << f.py(yv) << "\" x2=\"" << xr << "\" y2=\"" << f.py(yv)
      << "\" stroke=\"#ddd\"/>\n";
  }
  s << "<text x=\"" << (f.left + xr) / 2 << "\" y=\"" << f.height - 12 << "\" text-anchor=\"middle\">" << svg_escape(xlabel) << "</text>\n";
  s << "<text transform=\"translate(16," << (f.top + xa) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << svg_escape(ylabel)
    << "</text>\n";
  return s.str();
}

inline std::string legend(const Frame& f, const std::vector<std::string>& names) {
  std::ostringstream s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = f.top + 10 + 18.0 * static_cast<double>(i);
    const double x = f.width - f.right + 12;
    s << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\"" << palette(i) << "\"/>\n";
    s << "<text x=\"" << x + 16 << "\" y=\"" << y << "\">" << svg_escape(names[i]) << "</text>\n";
  }
  return s.str();
}

}  // namespace detail

inline std::string line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                                 const std::string& ylabel, std::optional<std::pair<double, double>> y_range = std::nullopt) {
  if (series.empty()) throw DataError("line plot: no series");
  detail::Frame f;
  f.x0 = f.y0 = INFINITY;
  f.x1 = f.y1 = -INFINITY;
  for (const auto& s : series) {
    for (double v : s.x) f.x0 = std::min(f.x0, v), f.x1 = std::max(f.x1, v);
    for (double v : s.y) f.y0 = std::min(f.y0, v), f.y1 = std::max(f.y1, v);
  }
  if (y_range) std::tie(f.y0, f.y1) = *y_range;
  detail::pad_range(f.x0, f.x1);
  detail::pad_range(f.y0, f.y1);
  std::string out = detail::header(f, title, xlabel, ylabel);
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    names.push_back(s.name);
    std::ostringstream pts;
    for (std::size_t k = 0; k < s.x.size(); ++k) pts << (k ? " " : "") << f.px(s.x[k]) << "," << f.py(s.y[k]);
    out += "<polyline fill=\"none\" stroke=\"" + std::string(palette(i)) + "\" stroke-width=\"2\" points=\"" + pts.str() + "\"/>\n";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      out += "<circle cx=\"" + format_double(f.px(s.x[k]), "%g") + "\" cy=\"" + format_double(f.py(s.y[k]), "%g") +
             "\" r=\"3\" fill=\"" + palette(i) + "\"/>\n";
    }
  }
  return out + detail::legend(f, names) + "</svg>\n";
}

struct FeatureTable {
  std::vector<int> task_ids, labels;
  Matrix features;
};

inline FeatureTable read_feature_csv(const std::filesystem::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  if (!std::getline(in, line)) throw DataError(p.string() + ": empty feature file");
  const std::size_t width = split(line, ',').size();
  if (width < 3) throw DataError(p.string() + ": no feature columns");
  FeatureTable t;
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != width) throw DataError(p.string() + ": ragged row");
    t.task_ids.push_back(std::stoi(f[0]));
    t.labels.push_back(std::stoi(f[1]));
    for (std::size_t i = 2; i < f.size(); ++i) values.push_back(std::stod(f[i]));
  }
  t.features = Matrix(static_cast<Eigen::Index>(t.task_ids.size()), static_cast<Eigen::Index>(width - 2));
  for (Eigen::Index r = 0; r < t.features.rows(); ++r)
    for (Eigen::Index c = 0; c < t.features.cols(); ++c) t.features(r, c) = values[static_cast<std::size_t>(r * t.features.cols() + c)];
  return t;
}

// Projection of the centred rows onto the top two principal axes; each axis
// sign is fixed so its largest-magnitude loading is positive.
inline Matrix pca_2d(const Matrix& x) {
  if (x.rows() < 2) throw DataError("pca: need at least 2 rows");
  const Matrix centred = x.rowwise() - x.colwise().mean();
  const Matrix cov = centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Eigen::Index d = cov.rows();
  Matrix axes(d, 2);
  for (int k = 0; k < 2; ++k) {
    Vector v = d - 1 - k >= 0 ? Vector(es.eigenvectors().col(d - 1 - k)) : Vector(Vector::Zero(d));
    Eigen::Index arg = 0;
    if (d > 0) v.cwiseAbs().maxCoeff(&arg);
    if (d > 0 && v(arg) < 0) v = -v;
    axes.col(k) = v;
  }
  return centred * axes;
}

inline std::string scatter_svg(const Matrix& xy, const std::vector<int>& groups, const std::string& title,
                               const std::string& group_prefix) {
  detail::Frame f;
  f.x0 = xy.col(0).minCoeff();
  f.x1 = xy.col(0).maxCoeff();
  f.y0 = xy.col(1).minCoeff();
  f.y1 = xy.col(1).maxCoeff();
  detail::pad_range(f.x0, f.x1);
  detail::pad_range(f.y0, f.y1);
  std::string out = detail::header(f, title, "PC1", "PC2");
  std::vector<int> distinct = groups;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  for (Eigen::Index r = 0; r < xy.rows(); ++r) {
    const auto g = static_cast<std::size_t>(std::lower_bound(distinct.begin(), distinct.end(), groups[static_cast<std::size_t>(r)]) -
                                            distinct.begin());
    out += "<circle cx=\"" + format_double(f.px(xy(r, 0)), "%g") + "\" cy=\"" + format_double(f.py(xy(r, 1)), "%g") +
           "\" r=\"2.5\" fill-opacity=\"0.7\" fill=\"" + palette(g) + "\"/>\n";
  }
  std::vector<std::string> names;
  for (int g : distinct) names.push_back(group_prefix + std::to_string(g));
  return out + detail::legend(f, names) + "</svg>\n";
}

// Writes aa_curve.svg and first_task.svg (one line per run directory), and
// features_pca.svg for the first run when feature dumps exist. Returns the
// files written.
inline std::vector<std::filesystem::path> plot_runs(const std::vector<std::filesystem::path>& runs,
                                                    const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (runs.empty()) throw ConfigError("plot: no run directories given");
  fs::create_directories(out_dir);
  std::vector<Series> aa, first;
  for (const auto& r : runs) {
    const RunMetrics m = compute_run_metrics(r);
    std::string name = r.filename().string();
    if (name.empty()) name = r.parent_path().filename().string();
    Series a{name, {}, m.aa_curve}, b{name, {}, m.first_task_curve};
    for (std::size_t k = 1; k <= m.aa_curve.size(); ++k) a.x.push_back(static_cast<double>(k));
    b.x = a.x;
    aa.push_back(std::move(a));
    first.push_back(std::move(b));
  }
  std::vector<fs::path> written{out_dir / "aa_curve.svg", out_dir / "first_task.svg"};
  write_text(written[0], line_plot_svg(aa, "Average accuracy after each task", "task", "AA_k (%)", std::pair{0.0, 100.0}));
  write_text(written[1], line_plot_svg(first, "Accuracy on the first task", "task", "accuracy (%)", std::pair{0.0, 100.0}));

  const fs::path features = runs.front() / "features";
  if (fs::exists(features)) {
    int last = 0;
    for (const auto& e : fs::directory_iterator(features)) {
      const std::string n = e.path().filename().string();
      if (n.rfind("after_task_", 0) == 0) last = std::max(last, std::stoi(n.substr(11)));
    }
    if (last > 0) {
      const FeatureTable t = read_feature_csv(features / ("after_task_" + std::to_string(last) + ".csv"));
      written.push_back(out_dir / "features_pca.svg");
      write_text(written.back(), scatter_svg(pca_2d(t.features), t.task_ids,
                                             "Features after task " + std::to_string(last) + " (PCA)", "task "));
    }
  }
  return written;
}

}  // namespace disco
