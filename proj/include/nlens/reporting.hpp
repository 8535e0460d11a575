#pragma once

#include "nlens/analysis.hpp"
#include "nlens/dataset.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace nlens {

enum class TopWordsMode { mean, max };

struct TokenActivation {
  std::string text;
  double value = 0.0;  // signed mean (or the signed extreme in max mode)
  std::size_t count = 0;
};

// Distinct token texts ranked by |value| descending, ties by text.
std::vector<TokenActivation> top_words(const ActivationDataset& ds, NeuronId neuron, std::size_t n,
                                       TopWordsMode mode = TopWordsMode::mean);

struct HighlightOptions {
  std::size_t max_items = 2000;  // tokens rendered per neuron section
  std::size_t tokens_per_line = 40;
};

// Per-token background: blue for positive, red for negative, alpha = |a| / max|a|.
double highlight_intensity(double activation, double max_abs);
std::string highlight_html(const ActivationDataset& ds, const std::vector<NeuronId>& neurons,
                           const HighlightOptions& options = {});
void highlight_report(const ActivationDataset& ds, const std::vector<NeuronId>& neurons,
                      const std::filesystem::path& path, const HighlightOptions& options = {});

enum class TableFormat { md, json, csv };

TableFormat table_format_from_string(const std::string& text);

// "97.01%" style.
std::string format_percent(double fraction);

// Rows grouped by method (Oracle, LCA, Probeless, CC, Layerwise, LS+CC+LCA).
// Throws when the reports do not share one oracle score.
std::string results_table(const std::vector<AnalysisReport>& reports, TableFormat format);

std::vector<AnalysisReport> reports_from_json_text(const std::string& text);
std::vector<AnalysisReport> reports_from_csv_text(const std::string& text);

}  // namespace nlens
