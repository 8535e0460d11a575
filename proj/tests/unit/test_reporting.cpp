#include "fixtures.hpp"

#include "nlens/error.hpp"
#include "nlens/reporting.hpp"
#include "nlens/synth.hpp"

#include <doctest.h>

#include <regex>

using namespace nlens;

namespace {

AnalysisReport row(std::string method, std::size_t count, double score, double oracle = 0.9) {
  AnalysisReport r;
  r.method = std::move(method);
  r.neuron_count = count;
  r.total_neurons = 9984;
  r.score = score;
  r.oracle_score = oracle;
  return r;
}

// Tag balance for the subset of HTML we emit; void elements need no closing tag.
bool balanced_html(const std::string& html) {
  static const std::set<std::string> void_tags{"meta", "br", "hr", "img", "link", "input"};
  std::vector<std::string> stack;
  std::regex tag("<(/?)([a-zA-Z0-9]+)[^>]*>");
  for (auto it = std::sregex_iterator(html.begin(), html.end(), tag); it != std::sregex_iterator(); ++it) {
    const std::string name = (*it)[2];
    if (void_tags.count(name)) continue;
    if ((*it)[1] == "/") {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else {
      stack.push_back(name);
    }
  }
  return stack.empty();
}

}  // namespace

TEST_SUITE("reporting") {
  TEST_CASE("reduction formula against published counts") {
    CHECK(format_percent(row("LCA", 9, 0.9).reduction()) == "99.91%");
    CHECK(format_percent(row("LS+CC+LCA", 299, 0.9).reduction()) == "97.01%");
    CHECK(format_percent(row("Layerwise", 768, 0.9).reduction()) == "92.31%");
    CHECK(format_percent(0.0) == "0.00%");
    CHECK(format_percent(-0.00001) == "0.00%");
  }

  TEST_CASE("oracle-only table") {
    auto oracle = row("Oracle", 9984, 0.9);
    const auto md = results_table({oracle}, TableFormat::md);
    CHECK(md.find("| Oracle |") != std::string::npos);
    CHECK(md.find("| 0.00% | 0.00% |") != std::string::npos);
  }

  TEST_CASE("rows grouped in method order") {
    auto md = results_table({row("CC", 100, 0.9), row("LCA", 9, 0.89), row("Oracle", 9984, 0.9),
                             row("LS+CC+LCA", 299, 0.9), row("Layerwise", 768, 0.88)},
                            TableFormat::md);
    const auto o = md.find("| Oracle");
    const auto l = md.find("| LCA");
    const auto c = md.find("| CC");
    const auto w = md.find("| Layerwise");
    const auto m = md.find("| LS+CC+LCA");
    CHECK(o < l);
    CHECK(l < c);
    CHECK(c < w);
    CHECK(w < m);
    CHECK(md.find("97.01%") != std::string::npos);
    CHECK(md.find("-1.00%") != std::string::npos);
  }

  TEST_CASE("mixed oracle scores are rejected") {
    CHECK_THROWS_AS(results_table({row("Oracle", 9984, 0.9), row("LCA", 9, 0.8, 0.85)}, TableFormat::md),
                    InvalidArgument);
  }

  TEST_CASE("csv and json round trip to equal values") {
    auto a = row("LCA", 29, 0.912345678901234);
    a.selected = true;
    auto b = row("CC", 150, 0.8999);
    b.threshold = 0.3;
    auto c = row("CC", 9984, 0.9);
    c.threshold_na = true;
    auto d = row("Layerwise", 1536, 0.7);
    d.layers = std::make_pair(0, 1);
    d.variant = "incremental";
    const std::vector<AnalysisReport> reports{row("Oracle", 9984, 0.9), a, b, c, d};
    for (auto format : {TableFormat::csv, TableFormat::json}) {
      const auto text = results_table(reports, format);
      const auto back = format == TableFormat::csv ? reports_from_csv_text(text) : reports_from_json_text(text);
      REQUIRE(back.size() == reports.size());
      for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].method == reports[i].method);
        CHECK(back[i].score == reports[i].score);
        CHECK(back[i].oracle_score == reports[i].oracle_score);
        CHECK(back[i].neuron_count == reports[i].neuron_count);
        CHECK(back[i].threshold == reports[i].threshold);
        CHECK(back[i].threshold_na == reports[i].threshold_na);
        CHECK(back[i].layers == reports[i].layers);
        CHECK(back[i].selected == reports[i].selected);
        CHECK(back[i].reduction() == reports[i].reduction());
      }
      CHECK(results_table(back, format) == text);
    }
  }

  TEST_CASE("top_words: planted token") {
    auto g = synth::generate({});
    const auto& ds = g.dataset;
    ActivationMatrix x = ds.activations();
    const NeuronId neuron = 200;
    Rng rng(1);
    for (std::size_t i = 0; i < ds.num_items(); ++i)
      x(static_cast<Eigen::Index>(i), neuron) =
          ds.items()[i].text == "tok_3" ? static_cast<float>(5.0 + 0.01 * rng.normal()) : static_cast<float>(rng.normal());
    ActivationDataset planted(ds.items(), ds.labels(), ItemKind::token, 4, 64, x);
    auto words = top_words(planted, neuron, 5);
    REQUIRE(words.size() == 5);
    CHECK(words[0].text == "tok_3");
    CHECK(words[0].value == doctest::Approx(5.0).epsilon(0.01));
    for (std::size_t i = 1; i < words.size(); ++i) CHECK(std::abs(words[i - 1].value) >= std::abs(words[i].value));
  }

  TEST_CASE("top_words: length, ties, modes, errors") {
    ActivationMatrix x(5, 1);
    x << 1, -3, 1, 2, -1;
    ActivationDataset ds({{"b", 0}, {"c", 0}, {"a", 0}, {"c", 0}, {"d", 0}}, {"X"}, ItemKind::token, 1, 1, x);
    auto all = top_words(ds, 0, 10);
    CHECK(all.size() == 4);
    // c: mean -0.5; a, b, d: |1| tie broken by text
    CHECK(all[0].text == "a");
    CHECK(all[1].text == "b");
    CHECK(all[2].text == "d");
    CHECK(all[3].text == "c");
    CHECK(all[3].value == doctest::Approx(-0.5));
    auto max_mode = top_words(ds, 0, 1, TopWordsMode::max);
    CHECK(max_mode[0].text == "c");
    CHECK(max_mode[0].value == -3.0);
    CHECK_THROWS_AS(top_words(ds, 0, 0), InvalidArgument);
    CHECK_THROWS_AS(top_words(ds, 3, 1), InvalidArgument);
    ActivationDataset sentences({{"s", 0}}, {"X"}, ItemKind::sentence, 1, 1, ActivationMatrix::Zero(1, 1));
    CHECK_THROWS_AS(top_words(sentences, 0, 1), InvalidArgument);
  }

  TEST_CASE("highlight: intensities, colours, structure") {
    ActivationMatrix x(4, 2);
    x << 0, 2, 0, -1, 0, 0.5, 0, 1;
    ActivationDataset ds({{"a<b", 0}, {"x", 0}, {"y", 0}, {"z", 0}}, {"X"}, ItemKind::token, 1, 2, x);
    CHECK(highlight_intensity(0.0, 0.0) == 0.0);
    CHECK(highlight_intensity(2.0, 2.0) == 1.0);
    CHECK(highlight_intensity(-1.0, 2.0) == 0.5);

    const auto html = highlight_html(ds, {0, 1});
    CHECK(html.find("<h2>Layer 0: 0</h2>") != std::string::npos);
    CHECK(html.find("<h2>Layer 0: 1</h2>") != std::string::npos);
    CHECK(html.find("rgba(0,0,255,0.000)") != std::string::npos);  // all-zero neuron
    CHECK(html.find("rgba(0,0,255,1.000)\">a&lt;b<") != std::string::npos);
    CHECK(html.find("rgba(255,0,0,0.500)\">x<") != std::string::npos);
    CHECK(balanced_html(html));
    CHECK(html.find("<script") == std::string::npos);
    CHECK(html.find("<link") == std::string::npos);
    CHECK(html.find("src=") == std::string::npos);
    CHECK(html.find("http") == std::string::npos);

    ActivationDataset sentences({{"s", 0}}, {"X"}, ItemKind::sentence, 1, 1, ActivationMatrix::Zero(1, 1));
    CHECK_THROWS_AS(highlight_html(sentences, {0}), InvalidArgument);
    CHECK_THROWS_AS(highlight_report(ds, {0}, "/nonexistent-dir/x.html"), DataError);
  }
}
