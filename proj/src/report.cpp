#include "vrcv/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "vrcv/csv.hpp"
#include "vrcv/experiment.hpp"
#include "vrcv/transport.hpp"

namespace vrcv::report {

namespace {

const char* kPalette[] = {"#4363d8", "#e6194b", "#3cb44b", "#f58231", "#911eb4",
                          "#46f0f0", "#f032e6", "#808000", "#008080", "#9a6324"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

constexpr double kPanelW = 360, kPanelH = 220, kPanelPad = 44, kGap = 18;

struct SeriesKey {
  std::string splitter, split;
  int fold;
  bool operator<(const SeriesKey& o) const {
    return std::tie(splitter, split, fold) < std::tie(o.splitter, o.split, o.fold);
  }
};

std::string panel_svg(const std::string& splitter, const std::string& split,
                      const std::map<SeriesKey, std::map<int, double>>& series, int max_epoch,
                      double x0, double y0) {
  std::ostringstream out;
  out << "<g class=\"panel\" id=\"panel-" << splitter << "-" << split << "\" transform=\""
      << "translate(" << x0 << "," << y0 << ")\">\n";
  const double px0 = kPanelPad, py0 = 18, pw = kPanelW - kPanelPad - 10, ph = kPanelH - 52;
  out << "  <rect x=\"" << px0 << "\" y=\"" << py0 << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#888\"/>\n";
  out << "  <text x=\"" << kPanelW / 2 << "\" y=\"12\" text-anchor=\"middle\" font-size=\"12\">"
      << splitter << " / " << split << "</text>\n";
  for (double tick : {0.0, 0.5, 1.0}) {
    const double y = py0 + ph * (1.0 - tick);
    out << "  <line x1=\"" << px0 - 3 << "\" y1=\"" << y << "\" x2=\"" << px0 << "\" y2=\"" << y
        << "\" stroke=\"#888\"/>\n";
    out << "  <text x=\"" << px0 - 6 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-size=\"10\">" << csv::fmt(tick) << "</text>\n";
  }
  out << "  <text x=\"" << px0 + pw / 2 << "\" y=\"" << kPanelH - 6
      << "\" text-anchor=\"middle\" font-size=\"10\">epoch</text>\n";
  const double denom = std::max(1, max_epoch);
  for (const auto& [key, points] : series) {
    if (key.splitter != splitter || key.split != split) continue;
    std::ostringstream poly;
    for (const auto& [epoch, acc] : points) {
      const double x = px0 + pw * static_cast<double>(epoch) / denom;
      const double y = py0 + ph * (1.0 - std::clamp(acc, 0.0, 1.0));
      poly << x << "," << y << " ";
    }
    out << "  <polyline class=\"fold-" << key.fold << "\" fill=\"none\" stroke=\""
        << kPalette[static_cast<std::size_t>(key.fold) % kPaletteSize]
        << "\" stroke-width=\"1.5\" points=\"" << poly.str() << "\"/>\n";
  }
  out << "</g>\n";
  return out.str();
}

std::string matrix_table_svg(const std::string& title, const Tensor& m, double x0, double y0) {
  std::ostringstream out;
  const double cell_w = 86, cell_h = 18;
  out << "<g class=\"wasserstein\" transform=\"translate(" << x0 << "," << y0 << ")\">\n";
  out << "  <text x=\"0\" y=\"0\" font-size=\"12\" font-weight=\"bold\">" << title
      << "</text>\n";
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", m(i, j));
      out << "  <text x=\"" << static_cast<double>(j) * cell_w << "\" y=\""
          << 16 + static_cast<double>(i) * cell_h << "\" font-size=\"11\">" << buf
          << "</text>\n";
    }
  out << "</g>\n";
  return out.str();
}

}  // namespace

std::string render_report(const ReportInputs& inputs, const ReportOutputs& outputs) {
  const auto records = exp::read_metrics_csv(inputs.metrics_csv);
  if (records.empty())
    throw std::runtime_error("render_report: no metric records in " + inputs.metrics_csv);

  std::set<std::string> splitters, models;
  std::map<SeriesKey, std::map<int, double>> series;  // (splitter,split,fold) -> epoch -> acc
  int max_epoch = 0;
  for (const auto& r : records) {
    splitters.insert(r.splitter);
    models.insert(r.model);
    series[{r.splitter, r.split, r.fold}][r.epoch] = r.accuracy;
    max_epoch = std::max(max_epoch, r.epoch);
  }
  const std::vector<std::string> split_order{"train", "val", "test"};

  // final-epoch summary per (splitter, model, split): mean and sample std
  // of the accuracy at each series' own last epoch
  std::ostringstream summary;
  summary << "final-epoch accuracy across folds (mean, sample std)\n";
  for (const auto& splitter : splitters)
    for (const auto& model : models)
      for (const auto& split : split_order) {
        std::map<int, double> final_by_fold;
        std::map<int, int> last_epoch;
        for (const auto& r : records) {
          if (r.splitter != splitter || r.model != model || r.split != split) continue;
          if (!last_epoch.count(r.fold) || r.epoch >= last_epoch[r.fold]) {
            last_epoch[r.fold] = r.epoch;
            final_by_fold[r.fold] = r.accuracy;
          }
        }
        if (final_by_fold.empty()) continue;
        double mean = 0.0;
        for (auto& [f, a] : final_by_fold) mean += a;
        mean /= static_cast<double>(final_by_fold.size());
        double var = 0.0;
        for (auto& [f, a] : final_by_fold) var += (a - mean) * (a - mean);
        const double sd = final_by_fold.size() > 1
                              ? std::sqrt(var / static_cast<double>(final_by_fold.size() - 1))
                              : 0.0;
        summary << "splitter=" << splitter << " model=" << model << " split=" << split
                << " folds=" << final_by_fold.size() << " mean=" << csv::fmt(mean)
                << " std=" << csv::fmt(sd) << "\n";
      }

  // assemble the svg
  std::ostringstream svg;
  const std::size_t n_rows = splitters.size();
  const double panels_h = 30 + static_cast<double>(n_rows) * (kPanelH + kGap);
  double cursor_y = panels_h;

  std::ostringstream body;
  body << "<text x=\"12\" y=\"18\" font-size=\"15\" font-weight=\"bold\">"
       << "cross-validation accuracy by epoch</text>\n";
  std::size_t row = 0;
  for (const auto& splitter : splitters) {
    for (std::size_t col = 0; col < split_order.size(); ++col)
      body << panel_svg(splitter, split_order[col], series, max_epoch,
                        12 + static_cast<double>(col) * (kPanelW + kGap),
                        30 + static_cast<double>(row) * (kPanelH + kGap));
    ++row;
  }

  if (!inputs.tsne_csv.empty()) {
    const csv::Table t = csv::read_table(inputs.tsne_csv);
    const std::size_t cx = t.column("x"), cy = t.column("y"), cf = t.column("fold_id");
    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    std::vector<std::array<double, 2>> pts;
    std::vector<int> folds;
    for (const auto& r : t.rows) {
      const double x = std::stod(r[cx]), y = std::stod(r[cy]);
      pts.push_back({x, y});
      folds.push_back(std::stoi(r[cf]));
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
    const double size = 420;
    const double span_x = std::max(max_x - min_x, 1e-12);
    const double span_y = std::max(max_y - min_y, 1e-12);
    body << "<g class=\"tsne\" transform=\"translate(12," << cursor_y << ")\">\n";
    body << "  <text x=\"0\" y=\"0\" font-size=\"13\" font-weight=\"bold\">"
         << "latent t-SNE colored by fold</text>\n";
    body << "  <rect x=\"0\" y=\"8\" width=\"" << size << "\" height=\"" << size
         << "\" fill=\"none\" stroke=\"#888\"/>\n";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double x = (pts[i][0] - min_x) / span_x * (size - 12) + 6;
      const double y = 8 + (pts[i][1] - min_y) / span_y * (size - 12) + 6;
      body << "  <circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"2\" fill=\""
           << kPalette[static_cast<std::size_t>(folds[i]) % kPaletteSize] << "\"/>\n";
    }
    body << "</g>\n";
    cursor_y += size + 40;
  }

  for (const auto& [path, title] :
       {std::pair{inputs.dist_vgmm_csv, "pairwise Wasserstein, vgmm splits"},
        std::pair{inputs.dist_random_csv, "pairwise Wasserstein, random splits"}}) {
    if (path.empty()) continue;
    const Tensor m = ot::read_distance_csv(path);
    body << matrix_table_svg(title, m, 12, cursor_y + 16);
    cursor_y += 40 + 18 * static_cast<double>(m.dim(0));
  }

  // summary block at the bottom of the svg as well
  body << "<g class=\"summary\" transform=\"translate(12," << cursor_y + 24 << ")\">\n";
  std::istringstream lines(summary.str());
  std::string line;
  int li = 0;
  while (std::getline(lines, line))
    body << "  <text x=\"0\" y=\"" << 14 * li++ << "\" font-size=\"11\">" << line
         << "</text>\n";
  body << "</g>\n";
  cursor_y += 40 + 14.0 * li;

  const double width = 12 + 3 * (kPanelW + kGap);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << cursor_y + 20 << "\" font-family=\"sans-serif\">\n"
      << body.str() << "</svg>\n";

  std::ofstream svg_out(outputs.svg_path);
  if (!svg_out) throw std::runtime_error("render_report: cannot open " + outputs.svg_path);
  svg_out << svg.str();
  if (!svg_out.good()) throw std::runtime_error("render_report: write failed");

  if (!outputs.summary_path.empty()) {
    std::ofstream sum_out(outputs.summary_path);
    if (!sum_out) throw std::runtime_error("render_report: cannot open " + outputs.summary_path);
    sum_out << summary.str();
  }
  return summary.str();
}

}  // namespace vrcv::report
