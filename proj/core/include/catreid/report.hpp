// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

namespace catreid {

// One evaluated run. Accuracies are percents in [0,100]; absent values
// render as "X" in the grid.
struct ReportRow {
  std::string model_name;  // display name, e.g. "DenseNet"
  std::string mode;        // "siamese" | "fine-tune" | "transfer"
  std::optional<double> val_acc;
  std::optional<double> test_acc;
};

struct EvalReport {
  std::vector<ReportRow> rows;

  // throws UserError on duplicate (model, mode) pairs or empty input
  void validate() const;
};

// Markdown grid: one row per model, sub-columns
// {siamese, fine-tune, transfer} under Validation and Testing, one decimal
// place, "X" where no run exists.
std::string render_markdown(const EvalReport& report);

// Flat CSV: model,mode,val_acc,test_acc with empty cells for absent
// values. parse_csv(render_csv(r)) reproduces r.
std::string render_csv(const EvalReport& report);
EvalReport parse_csv(const std::string& csv_text);

// Cell grid used by both renderers: row-major, columns = model name then
// {val,test} x {siamese,fine-tune,transfer}; "X" marks absent cells.
std::vector<std::vector<std::string>> report_grid(const EvalReport& report);

}  // namespace catreid
