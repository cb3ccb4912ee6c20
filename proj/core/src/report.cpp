// SPDX-License-Identifier: Apache-2.0
#include "catreid/report.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "catreid/errors.hpp"

namespace catreid {

namespace {

const char* kModes[3] = {"siamese", "fine-tune", "transfer"};

std::string format_acc(const std::optional<double>& v) {
  if (!v) return "X";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", *v);
  return buf;
}

int mode_column(const std::string& mode) {
  for (int i = 0; i < 3; ++i)
    if (mode == kModes[i]) return i;
  throw UserError("report: unknown mode '" + mode + "' (expected siamese, fine-tune or transfer)");
}

}  // namespace

void EvalReport::validate() const {
  if (rows.empty()) throw UserError("report: no evaluated runs");
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : rows) {
    mode_column(r.mode);
    if (!seen.insert({r.model_name, r.mode}).second)
      throw UserError("report: duplicate entry for (" + r.model_name + ", " + r.mode + ")");
    for (const auto& acc : {r.val_acc, r.test_acc})
      if (acc && (*acc < 0 || *acc > 100))
        throw UserError("report: accuracy out of [0,100] for " + r.model_name);
  }
}

std::vector<std::vector<std::string>> report_grid(const EvalReport& report) {
  report.validate();

  // keep first-appearance model order
  std::vector<std::string> models;
  for (const auto& r : report.rows)
    if (std::find(models.begin(), models.end(), r.model_name) == models.end())
      models.push_back(r.model_name);

  std::map<std::pair<std::string, int>, const ReportRow*> cells;
  for (const auto& r : report.rows) cells[{r.model_name, mode_column(r.mode)}] = &r;

  std::vector<std::vector<std::string>> grid;
  for (const auto& model : models) {
    std::vector<std::string> row{model};
    for (int half = 0; half < 2; ++half)
      for (int m = 0; m < 3; ++m) {
        auto it = cells.find({model, m});
        if (it == cells.end()) {
          row.push_back("X");
        } else {
          row.push_back(format_acc(half == 0 ? it->second->val_acc : it->second->test_acc));
        }
      }
    grid.push_back(std::move(row));
  }
  return grid;
}

std::string render_markdown(const EvalReport& report) {
  const auto grid = report_grid(report);
  std::ostringstream out;
  out << "| Neural networks | Validation |  |  | Testing |  |  |\n";
  out << "| --- | --- | --- | --- | --- | --- | --- |\n";
  out << "|  | siamese | fine-tune | transfer | siamese | fine-tune | transfer |\n";
  for (const auto& row : grid) {
    out << "|";
    for (const auto& cell : row) out << " " << cell << " |";
    out << "\n";
  }
  out << "\nX, data does not exist.\n";
  return out.str();
}

std::string render_csv(const EvalReport& report) {
  report.validate();
  std::ostringstream out;
  out << "model,mode,val_acc,test_acc\n";
  for (const auto& r : report.rows) {
    out << r.model_name << "," << r.mode << ",";
    if (r.val_acc) out << format_acc(r.val_acc);
    out << ",";
    if (r.test_acc) out << format_acc(r.test_acc);
    out << "\n";
  }
  return out.str();
}

EvalReport parse_csv(const std::string& csv_text) {
  std::istringstream in(csv_text);
  std::string line;
  if (!std::getline(in, line) || line != "model,mode,val_acc,test_acc")
    throw UserError("report CSV: missing or unexpected header");

  EvalReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    while (fields.size() < 4) fields.emplace_back();
    ReportRow r;
    r.model_name = fields[0];
    r.mode = fields[1];
    if (!fields[2].empty()) r.val_acc = std::stod(fields[2]);
    if (!fields[3].empty()) r.test_acc = std::stod(fields[3]);
    report.rows.push_back(std::move(r));
  }
  report.validate();
  return report;
}

}  // namespace catreid
