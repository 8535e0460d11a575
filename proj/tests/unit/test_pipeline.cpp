#include "fixtures.hpp"

#include "nlens/pipeline.hpp"
#include "nlens/serialize.hpp"
#include "nlens/synth.hpp"

#include <doctest.h>

using namespace nlens;

TEST_SUITE("pipeline") {
  TEST_CASE("prepare_splits sizes and determinism") {
    auto ds = nlens::testing::random_dataset(1000, 1, 4, 2, 1);
    auto a = prepare_splits(ds, std::nullopt, 3);
    CHECK(a.test.num_items() == 200);
    CHECK(a.train.num_items() == 720);
    CHECK(a.dev.num_items() == 80);
    auto b = prepare_splits(ds, std::nullopt, 3);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);

    auto test = nlens::testing::random_dataset(50, 1, 4, 2, 2);
    auto c = prepare_splits(ds, test, 3);
    CHECK(c.test == test);
    CHECK(c.train.num_items() == 900);
  }

  TEST_CASE("clip_k_grid") {
    CHECK(clip_k_grid({9, 19, 299}, 256) == std::vector<std::size_t>{9, 19});
    CHECK(clip_k_grid({9, 19}, 5) == std::vector<std::size_t>{5});
  }

  TEST_CASE("table4 on the planted dataset") {
    auto g = synth::generate({});
    auto splits = prepare_splits(g.dataset, std::nullopt, 1);
    AnalysisConfig cfg;
    const auto result = run_table4(splits, cfg);
    const auto summary = result.summary();
    std::vector<std::string> methods;
    for (const auto& r : summary) methods.push_back(r.method);
    CHECK(methods == std::vector<std::string>{"Oracle", "LCA", "CC", "Layerwise", "LS+CC+LCA"});
    for (const auto& r : result.all_rows()) CHECK(r.oracle_score == result.oracle.score);

    const auto md = table4_to_markdown(result);
    for (const auto& m : methods) CHECK(md.find("| " + m) != std::string::npos);
    // same inputs, same bytes
    CHECK(table4_to_json(run_table4(splits, cfg)).dump() == table4_to_json(result).dump());
  }
}
