#pragma once

#include <string>
#include <vector>

namespace vocap {

struct ConfusionCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  long total() const { return tp + fp + fn + tn; }
  void add(int predicted, int actual, int positive_class = 1) {
    bool p = predicted == positive_class, a = actual == positive_class;
    if (p && a) ++tp;
    else if (p && !a) ++fp;
    else if (!p && a) ++fn;
    else ++tn;
  }
};

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // tp+fp == 0 or tp+fn == 0
};

F1Result f1_score(const ConfusionCounts& counts);

/// 100 * succeeded / attempted. Throws on attempted == 0.
double attack_success_rate(long attempted, long succeeded);

/// Levenshtein distance with unit substitution/insertion/deletion costs.
std::size_t edit_distance(const std::vector<std::string>& a,
                          const std::vector<std::string>& b);

/// Word error rate: whitespace tokens; 100 * distance / |reference tokens|.
double word_error_rate(const std::string& reference,
                       const std::string& hypothesis);

/// Character error rate over non-whitespace characters.
double char_error_rate(const std::string& reference,
                       const std::string& hypothesis);

// ---- Tabular reports ------------------------------------------------------

enum class ReportFormat { csv, json, markdown };

/// A rectangular table with a fixed column order; all cells are strings so
/// emission is deterministic and format-independent.
struct ReportTable {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
};

std::string render_report(const ReportTable& table, ReportFormat format);
void emit_report(const ReportTable& table, ReportFormat format,
                 const std::string& path);

/// Fixed-precision numeric formatting used in every report cell.
std::string format_cell(double value, int decimals = 2);

}  // namespace vocap
