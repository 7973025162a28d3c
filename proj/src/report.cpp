#include <algorithm>
#include <cmath>
#include <sstream>

#include "cspeech/common.hpp"
#include "cspeech/harness.hpp"
#include "cspeech/textio.hpp"

namespace cspeech {

namespace fs = std::filesystem;

namespace {

std::string line(const std::vector<std::string>& fields) { return textio::csv_line(fields) + "\n"; }
std::string num(double v) { return format_double(v); }
std::string num(std::size_t v) { return std::to_string(v); }
std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string summary_csv(const RunReport& report) {
  std::vector<std::string> header{"method", "status", "samples", "valid", "valid_response_rate", "desired_effective",
                                  "desired_reentry"};
  for (const auto& n : sample_metric_names()) {
    header.push_back(n + "_mean");
    header.push_back(n + "_std");
  }
  for (const char* n : {"ttr", "distinct_1", "distinct_2", "new_unigrams", "new_bigrams", "error"}) header.emplace_back(n);
  std::string out = line(header);
  for (const auto& m : report.methods) {
    std::vector<std::string> row{m.method, m.failed ? "failed" : "ok", num(m.samples), num(m.valid),
                                 num(m.valid_response_rate), num(m.desired_effective), num(m.desired_reentry)};
    for (const auto& s : m.metrics) {
      row.push_back(s ? num(s->mean) : "");
      row.push_back(s ? num(s->std) : "");
    }
    row.push_back(m.diversity ? num(m.diversity->ttr) : "");
    row.push_back(m.diversity ? num(m.diversity->distinct_1) : "");
    row.push_back(m.diversity ? opt(m.diversity->distinct_2) : "");
    row.push_back(m.novelty ? num(m.novelty->new_unigrams) : "");
    row.push_back(m.novelty ? num(m.novelty->new_bigrams) : "");
    row.push_back(m.error);
    out += line(row);
  }
  return out;
}

std::string desired_counts_csv(const RunReport& report) {
  std::string out = line({"method", "desired_effective", "desired_reentry"});
  for (const auto& m : report.methods)
    if (!m.failed) out += line({m.method, num(m.desired_effective), num(m.desired_reentry)});
  return out;
}

std::string correlation_csv(const metrics::CorrelationMatrix& m) {
  std::vector<std::string> header{""};
  header.insert(header.end(), m.names.begin(), m.names.end());
  std::string out = line(header);
  for (std::size_t i = 0; i < m.names.size(); ++i) {
    std::vector<std::string> row{m.names[i]};
    for (const auto& v : m.values[i]) row.push_back(opt(v));
    out += line(row);
  }
  return out;
}

std::string method_metrics_csv(std::span<const SampleEvaluation> samples) {
  const auto& names = sample_metric_names();
  std::vector<std::string> header{"hate_id"};
  header.insert(header.end(), names.begin(), names.end());
  std::string out = line(header);
  std::vector<std::vector<double>> cols(names.size());
  for (const auto& s : samples) {
    if (!s.valid) continue;
    std::vector<std::string> row{s.hate_id};
    for (std::size_t k = 0; k < names.size(); ++k) {
      row.push_back(opt(s.metrics[k]));
      if (s.metrics[k]) cols[k].push_back(*s.metrics[k]);
    }
    out += line(row);
  }
  std::vector<std::string> mean{"mean"}, sd{"std"};
  for (auto& c : cols) {
    if (c.empty()) {
      mean.emplace_back();
      sd.emplace_back();
      continue;
    }
    const auto agg = metrics::aggregate(std::move(c));
    mean.push_back(num(agg.mean));
    sd.push_back(num(agg.std));
  }
  out += line(mean);
  out += line(sd);
  return out;
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<BarSeries>& series) {
  static const char* kColors[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};
  const int label_w = 260, plot_w = 420, bar_h = 14, gap = 10, top = 50;
  const int group_h = static_cast<int>(series.size()) * bar_h + gap;
  const int height = top + static_cast<int>(labels.size()) * group_h + 30;
  double max_v = 0.0;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) max_v = std::max(max_v, v);
  if (max_v <= 0.0) max_v = 1.0;

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << label_w + plot_w + 80 << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<text x=\"10\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const int x = label_w + static_cast<int>(s) * 140;
    o << "<rect x=\"" << x << "\" y=\"28\" width=\"10\" height=\"10\" fill=\"" << kColors[s % 6] << "\"/>";
    o << "<text x=\"" << x + 14 << "\" y=\"37\">" << xml_escape(series[s].name) << "</text>\n";
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y0 = top + static_cast<int>(i) * group_h;
    o << "<text x=\"" << label_w - 6 << "\" y=\"" << y0 + group_h / 2 << "\" text-anchor=\"end\">"
      << xml_escape(labels[i]) << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = i < series[s].values.size() ? series[s].values[i] : 0.0;
      const double w = std::isfinite(v) ? std::max(0.0, v) / max_v * plot_w : 0.0;
      const int y = y0 + static_cast<int>(s) * bar_h;
      o << "<rect x=\"" << label_w << "\" y=\"" << y << "\" width=\"" << format_double(std::round(w * 10) / 10)
        << "\" height=\"" << bar_h - 2 << "\" fill=\"" << kColors[s % 6] << "\"/>";
      o << "<text x=\"" << label_w + static_cast<int>(w) + 4 << "\" y=\"" << y + bar_h - 4 << "\">"
        << (std::isfinite(v) ? format_double(v) : "") << "</text>\n";
    }
  }
  o << "</svg>\n";
  return o.str();
}

void emit_report(const RunReport& report, std::span<const SampleEvaluation> samples, const fs::path& out_dir) {
  try {
    fs::create_directories(out_dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create report directory " + out_dir.string() + ": " + e.what());
  }
  textio::write_file(out_dir / "report.json", to_json(report).dump(2) + "\n");
  textio::write_file(out_dir / "summary.csv", summary_csv(report));
  textio::write_file(out_dir / "desired_counts.csv", desired_counts_csv(report));
  textio::write_file(out_dir / "correlation.csv", correlation_csv(report.sample_correlation));
  textio::write_file(out_dir / "diversity_correlation.csv", correlation_csv(report.diversity_correlation));

  if (!samples.empty()) {
    std::string lines;
    for (const auto& s : samples) lines += to_json(s).dump() + "\n";
    textio::write_file(out_dir / "samples.jsonl", lines);
    for (const auto& m : report.methods) {
      std::vector<SampleEvaluation> mine;
      for (const auto& s : samples)
        if (s.method == m.method) mine.push_back(s);
      if (!mine.empty()) textio::write_file(out_dir / "metrics" / (m.method + ".csv"), method_metrics_csv(mine));
    }
  }

  std::vector<std::string> labels;
  BarSeries effective{"low incivility", {}}, reentry{"non-hate reentry", {}};
  for (const auto& m : report.methods) {
    if (m.failed) continue;
    labels.push_back(m.method);
    effective.values.push_back(static_cast<double>(m.desired_effective));
    reentry.values.push_back(static_cast<double>(m.desired_reentry));
  }
  textio::write_file(out_dir / "desired_counts.svg",
                     bar_chart_svg("Replies with desired labels", labels, {effective, reentry}));

  std::vector<BarSeries> means;
  for (const char* name : {"bleu", "meteor", "bertscore", "gruen"}) {
    const auto& names = sample_metric_names();
    const std::size_t k = static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
    BarSeries s{name, {}};
    for (const auto& m : report.methods)
      if (!m.failed) s.values.push_back(m.metrics[k] ? m.metrics[k]->mean : 0.0);
    means.push_back(std::move(s));
  }
  textio::write_file(out_dir / "metric_means.svg", bar_chart_svg("Metric means", labels, means));
}

}  // namespace cspeech
