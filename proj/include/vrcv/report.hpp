#pragma once

#include <string>

namespace vrcv::report {

struct ReportInputs {
  std::string metrics_csv;
  std::string tsne_csv;         // optional: empty skips the scatter
  std::string dist_vgmm_csv;    // optional
  std::string dist_random_csv;  // optional
};

struct ReportOutputs {
  std::string svg_path;
  std::string summary_path;
};

/// One SVG: accuracy-by-epoch line panels (rows = splitter, columns =
/// train/val/test, one polyline per fold), the t-SNE scatter colored by
/// fold, and the Wasserstein matrices rendered as tables. The summary file
/// lists final-epoch accuracy mean and sample standard deviation across
/// folds per (splitter, model, split). Returns the summary text. Empty
/// metrics are an error.
std::string render_report(const ReportInputs& inputs, const ReportOutputs& outputs);

}  // namespace vrcv::report
