#include "vocap/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vocap {

F1Result f1_score(const ConfusionCounts& c) {
  F1Result r;
  if (c.tp + c.fp == 0 || c.tp + c.fn == 0) {
    r.degenerate = true;
    return r;  // all zeros by convention, flagged
  }
  r.precision = static_cast<double>(c.tp) / (c.tp + c.fp);
  r.recall = static_cast<double>(c.tp) / (c.tp + c.fn);
  r.f1 = (r.precision + r.recall) > 0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

double attack_success_rate(long attempted, long succeeded) {
  if (attempted <= 0)
    throw std::invalid_argument("attack_success_rate: attempted must be > 0");
  return 100.0 * static_cast<double>(succeeded) / attempted;
}

std::size_t edit_distance(const std::vector<std::string>& a,
                          const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

namespace {

std::vector<std::string> whitespace_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> char_tokens(const std::string& s) {
  std::vector<std::string> out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c)))
      out.push_back(std::string(1, c));
  return out;
}

}  // namespace

double word_error_rate(const std::string& reference,
                       const std::string& hypothesis) {
  auto ref = whitespace_tokens(reference);
  if (ref.empty())
    throw std::invalid_argument("word_error_rate: empty reference");
  auto hyp = whitespace_tokens(hypothesis);
  return 100.0 * static_cast<double>(edit_distance(ref, hyp)) / ref.size();
}

double char_error_rate(const std::string& reference,
                       const std::string& hypothesis) {
  auto ref = char_tokens(reference);
  if (ref.empty())
    throw std::invalid_argument("char_error_rate: empty reference");
  auto hyp = char_tokens(hypothesis);
  return 100.0 * static_cast<double>(edit_distance(ref, hyp)) / ref.size();
}

// ---- Tabular reports ------------------------------------------------------

void ReportTable::add_row(std::vector<std::string> row) {
  if (row.size() != columns.size())
    throw std::invalid_argument("report row width does not match columns");
  rows.push_back(std::move(row));
}

std::string format_cell(double value, int decimals) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(decimals);
  os << value;
  return os.str();
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string render_report(const ReportTable& table, ReportFormat format) {
  std::ostringstream os;
  switch (format) {
    case ReportFormat::csv: {
      for (std::size_t j = 0; j < table.columns.size(); ++j)
        os << (j ? "," : "") << csv_escape(table.columns[j]);
      os << "\n";
      for (const auto& row : table.rows) {
        for (std::size_t j = 0; j < row.size(); ++j)
          os << (j ? "," : "") << csv_escape(row[j]);
        os << "\n";
      }
      break;
    }
    case ReportFormat::json: {
      os << "[";
      for (std::size_t i = 0; i < table.rows.size(); ++i) {
        os << (i ? ",\n " : "\n ") << "{";
        for (std::size_t j = 0; j < table.columns.size(); ++j) {
          os << (j ? ", " : "") << "\"" << json_escape(table.columns[j])
             << "\": \"" << json_escape(table.rows[i][j]) << "\"";
        }
        os << "}";
      }
      os << "\n]\n";
      break;
    }
    case ReportFormat::markdown: {
      if (!table.title.empty()) os << "### " << table.title << "\n\n";
      os << "|";
      for (const auto& c : table.columns) os << " " << c << " |";
      os << "\n|";
      for (std::size_t j = 0; j < table.columns.size(); ++j) os << " --- |";
      os << "\n";
      for (const auto& row : table.rows) {
        os << "|";
        for (const auto& cell : row) os << " " << cell << " |";
        os << "\n";
      }
      break;
    }
  }
  return os.str();
}

void emit_report(const ReportTable& table, ReportFormat format,
                 const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open report file: " + path);
  f << render_report(table, format);
}

}  // namespace vocap
