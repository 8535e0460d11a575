#include "nlens/reporting.hpp"

#include "nlens/error.hpp"
#include "nlens/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace nlens {

using json = nlohmann::json;

namespace {

std::string html_escape(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  std::string s = buf;
  if (s == "-0.00" || s == "-0.000") s.erase(0, 1);
  return s;
}

std::string exact(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

const std::vector<std::string>& method_order() {
  static const std::vector<std::string> order{"Oracle", "LCA", "Probeless", "CC", "Layerwise", "LS+CC+LCA"};
  return order;
}

std::size_t method_rank(const std::string& method) {
  const auto& order = method_order();
  auto it = std::find(order.begin(), order.end(), method);
  return static_cast<std::size_t>(it - order.begin());
}

std::string layers_cell(const AnalysisReport& r) {
  if (!r.layers) return "";
  return std::to_string(r.layers->first) + "-" + std::to_string(r.layers->second);
}

std::string threshold_cell(const AnalysisReport& r) {
  if (r.threshold) return fixed(*r.threshold, 1);
  return r.threshold_na ? "NA" : "";
}

std::string score_cell(double value, ScoreMetric metric) {
  return metric == ScoreMetric::accuracy ? format_percent(value) : fixed(value, 3);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.push_back(cell);
  return cells;
}

std::string csv_quote(const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<TokenActivation> top_words(const ActivationDataset& ds, NeuronId neuron, std::size_t n,
                                       TopWordsMode mode) {
  if (ds.kind() != ItemKind::token) throw InvalidArgument("top_words needs a token dataset");
  if (n < 1) throw InvalidArgument("top_words: n must be at least 1");
  const auto& ids = ds.neuron_ids();
  auto it = std::find(ids.begin(), ids.end(), neuron);
  if (it == ids.end()) throw InvalidArgument("neuron " + std::to_string(neuron) + " not present in dataset");
  const auto column = static_cast<Eigen::Index>(it - ids.begin());

  std::map<std::string, TokenActivation> by_text;
  for (std::size_t i = 0; i < ds.num_items(); ++i) {
    const double v = ds.activations()(static_cast<Eigen::Index>(i), column);
    auto& entry = by_text[ds.items()[i].text];
    if (entry.count == 0) {
      entry.text = ds.items()[i].text;
      entry.value = mode == TopWordsMode::mean ? 0.0 : v;
    }
    if (mode == TopWordsMode::mean) entry.value += v;
    else if (std::abs(v) > std::abs(entry.value)) entry.value = v;
    ++entry.count;
  }
  std::vector<TokenActivation> out;
  out.reserve(by_text.size());
  for (auto& [text, entry] : by_text) {
    if (mode == TopWordsMode::mean) entry.value /= static_cast<double>(entry.count);
    out.push_back(entry);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (std::abs(a.value) != std::abs(b.value)) return std::abs(a.value) > std::abs(b.value);
    return a.text < b.text;
  });
  if (out.size() > n) out.resize(n);
  return out;
}

double highlight_intensity(double activation, double max_abs) {
  if (!(max_abs > 0.0)) return 0.0;
  return std::min(1.0, std::abs(activation) / max_abs);
}

std::string highlight_html(const ActivationDataset& ds, const std::vector<NeuronId>& neurons,
                           const HighlightOptions& options) {
  if (ds.kind() != ItemKind::token) throw InvalidArgument("highlight report needs a token dataset");
  const std::size_t items = std::min(options.max_items, ds.num_items());
  std::ostringstream html;
  html << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Neuron activations</title>\n"
       << "<style>body{font-family:monospace;line-height:1.9}h2{font-family:sans-serif}"
       << "span.tok{padding:1px 2px;margin:0 1px;border-radius:2px}</style>\n</head>\n<body>\n";
  for (NeuronId neuron : neurons) {
    const auto& ids = ds.neuron_ids();
    auto it = std::find(ids.begin(), ids.end(), neuron);
    if (it == ids.end()) throw InvalidArgument("neuron " + std::to_string(neuron) + " not present in dataset");
    const auto column = static_cast<Eigen::Index>(it - ids.begin());
    const auto addr = neuron_address(neuron, ds.hidden_size());
    double max_abs = 0.0;
    for (Eigen::Index i = 0; i < ds.activations().rows(); ++i)
      max_abs = std::max(max_abs, std::abs(static_cast<double>(ds.activations()(i, column))));

    html << "<section>\n<h2>Layer " << addr.layer << ": " << addr.offset << "</h2>\n<p>\n";
    for (std::size_t i = 0; i < items; ++i) {
      const double a = ds.activations()(static_cast<Eigen::Index>(i), column);
      const double alpha = highlight_intensity(a, max_abs);
      const char* rgb = a < 0.0 ? "255,0,0" : "0,0,255";
      html << "<span class=\"tok\" title=\"" << fixed(a, 4) << "\" style=\"background-color:rgba(" << rgb << ","
           << fixed(alpha, 3) << ")\">" << html_escape(ds.items()[i].text) << "</span>";
      if (options.tokens_per_line && (i + 1) % options.tokens_per_line == 0) html << "<br>";
      html << '\n';
    }
    html << "</p>\n</section>\n";
  }
  html << "</body>\n</html>\n";
  return html.str();
}

void highlight_report(const ActivationDataset& ds, const std::vector<NeuronId>& neurons,
                      const std::filesystem::path& path, const HighlightOptions& options) {
  const std::string html = highlight_html(ds, neurons, options);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << html;
  if (!out) throw DataError("short write to " + path.string());
}

TableFormat table_format_from_string(const std::string& text) {
  if (text == "md") return TableFormat::md;
  if (text == "json") return TableFormat::json;
  if (text == "csv") return TableFormat::csv;
  throw InvalidArgument("unknown table format '" + text + "'");
}

std::string format_percent(double fraction) { return fixed(100.0 * fraction, 2) + "%"; }

std::string results_table(const std::vector<AnalysisReport>& reports, TableFormat format) {
  if (reports.empty()) throw InvalidArgument("results table needs at least one report");
  for (const auto& r : reports)
    if (r.oracle_score != reports.front().oracle_score)
      throw InvalidArgument("reports do not share one oracle score");

  std::vector<AnalysisReport> rows = reports;
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return method_rank(a.method) < method_rank(b.method); });

  if (format == TableFormat::json) return reports_to_json(rows).dump(2) + "\n";

  if (format == TableFormat::csv) {
    std::ostringstream out;
    out << "method,variant,layer_lo,layer_hi,threshold,threshold_na,neuron_count,total_neurons,score,oracle_score,"
           "metric,diff,reduction,selected\n";
    for (const auto& r : rows) {
      out << csv_quote(r.method) << ',' << csv_quote(r.variant) << ','
          << (r.layers ? std::to_string(r.layers->first) : "") << ','
          << (r.layers ? std::to_string(r.layers->second) : "") << ',' << (r.threshold ? exact(*r.threshold) : "")
          << ',' << (r.threshold_na ? 1 : 0) << ',' << r.neuron_count << ',' << r.total_neurons << ','
          << exact(r.score) << ',' << exact(r.oracle_score) << ',' << to_string(r.metric) << ',' << exact(r.diff())
          << ',' << exact(r.reduction()) << ',' << (r.selected ? 1 : 0) << '\n';
    }
    return out.str();
  }

  const ScoreMetric metric = rows.front().metric;
  std::ostringstream out;
  out << "| Selection | Variant | Layer Selection | Clustering threshold | # of neurons | "
      << (metric == ScoreMetric::accuracy ? "Accuracy" : "Score") << " | Diff. | Neuron reduction |\n";
  out << "|---|---|---|---|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    std::string diff = r.metric == ScoreMetric::accuracy ? format_percent(r.diff()) : fixed(r.diff(), 3);
    out << "| " << r.method << (r.selected && r.method != "Oracle" ? " *" : "") << " | " << r.variant << " | "
        << layers_cell(r) << " | " << threshold_cell(r) << " | " << r.neuron_count << " | "
        << score_cell(r.score, r.metric) << " | " << diff << " | " << format_percent(r.reduction()) << " |\n";
  }
  out << "\nOracle: " << score_cell(rows.front().oracle_score, metric) << " on " << rows.front().total_neurons
      << " neurons. Rows marked * are the selected configuration of their method.\n";
  return out.str();
}

std::vector<AnalysisReport> reports_from_json_text(const std::string& text) {
  try {
    return reports_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report json: ") + e.what());
  }
}

std::vector<AnalysisReport> reports_from_csv_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty csv");
  const auto header = split_csv_line(line);
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("csv missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_method = col("method"), c_variant = col("variant"), c_lo = col("layer_lo"),
                    c_hi = col("layer_hi"), c_thr = col("threshold"), c_na = col("threshold_na"),
                    c_count = col("neuron_count"), c_total = col("total_neurons"), c_score = col("score"),
                    c_oracle = col("oracle_score"), c_metric = col("metric"), c_sel = col("selected");
  std::vector<AnalysisReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw DataError("csv row has the wrong number of cells");
    AnalysisReport r;
    r.method = cells[c_method];
    r.variant = cells[c_variant];
    if (!cells[c_lo].empty()) r.layers = std::make_pair(std::stoi(cells[c_lo]), std::stoi(cells[c_hi]));
    if (!cells[c_thr].empty()) r.threshold = std::stod(cells[c_thr]);
    r.threshold_na = cells[c_na] == "1";
    r.neuron_count = std::stoull(cells[c_count]);
    r.total_neurons = std::stoll(cells[c_total]);
    r.score = std::stod(cells[c_score]);
    r.oracle_score = std::stod(cells[c_oracle]);
    r.metric = score_metric_from_string(cells[c_metric]);
    r.selected = cells[c_sel] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace nlens
