#include "fixtures.hpp"

#include "nlens/error.hpp"
#include "nlens/pipeline.hpp"
#include "nlens/ranking.hpp"
#include "nlens/synth.hpp"

#include <doctest.h>

#include <set>

using namespace nlens;
using nlens::testing::random_dataset;

namespace {

Probe probe_with(const Eigen::MatrixXf& w) {
  Probe p;
  p.weights = w;
  p.bias = Eigen::VectorXf::Zero(w.cols());
  p.feature_ids.resize(static_cast<std::size_t>(w.rows()));
  std::iota(p.feature_ids.begin(), p.feature_ids.end(), 0);
  p.labels = nlens::testing::class_names(static_cast<int>(w.cols()));
  p.num_layers = 1;
  p.hidden_size = static_cast<int>(w.rows());
  p.input_stats = StandardizationStats{};
  return p;
}

void check_permutation(const std::vector<NeuronId>& order, std::vector<NeuronId> ids) {
  std::vector<NeuronId> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  std::sort(ids.begin(), ids.end());
  CHECK(sorted == ids);
}

void check_ranking_invariants(const NeuronRanking& r) {
  check_permutation(r.global_order, r.feature_ids);
  auto check_order = [&](const std::vector<NeuronId>& order, auto score_of) {
    for (std::size_t i = 1; i < order.size(); ++i) {
      const double a = score_of(order[i - 1]);
      const double b = score_of(order[i]);
      CHECK(a >= b);
      if (a == b) CHECK(order[i - 1] < order[i]);
    }
  };
  auto index_of = [&](NeuronId id) {
    return static_cast<std::size_t>(std::find(r.feature_ids.begin(), r.feature_ids.end(), id) - r.feature_ids.begin());
  };
  for (double s : r.global_scores) CHECK(s >= 0.0);
  check_order(r.global_order, [&](NeuronId id) { return r.global_scores[index_of(id)]; });
  for (std::size_t t = 0; t < r.class_orders.size(); ++t) {
    check_permutation(r.class_orders[t], r.feature_ids);
    check_order(r.class_orders[t], [&](NeuronId id) { return r.class_scores[t][index_of(id)]; });
  }
}

}  // namespace

TEST_SUITE("ranking") {
  TEST_CASE("lca: single nonzero weight") {
    Eigen::MatrixXf w = Eigen::MatrixXf::Zero(10, 4);
    w(7, 2) = -0.3f;
    auto r = lca_rank(probe_with(w));
    CHECK(r.global_order.front() == 7);
    CHECK(r.class_orders[2].front() == 7);
    CHECK(top_k(r, 1) == std::vector<NeuronId>{7});
    check_ranking_invariants(r);
  }

  TEST_CASE("lca: zero weights give the identity order") {
    auto r = lca_rank(probe_with(Eigen::MatrixXf::Zero(6, 3)));
    CHECK(r.global_order == std::vector<NeuronId>{0, 1, 2, 3, 4, 5});
  }

  TEST_CASE("lca: per-class normalization surfaces small-scale classes") {
    Eigen::MatrixXf w = Eigen::MatrixXf::Zero(4, 2);
    w(0, 0) = 10.0f;
    w(1, 0) = 5.0f;
    w(2, 1) = 0.01f;  // the only weight of class 1
    auto r = lca_rank(probe_with(w));
    CHECK(r.global_order[0] == 0);
    CHECK(r.global_order[1] == 2);
    CHECK(r.global_order[2] == 1);
  }

  TEST_CASE("lca: zeroing a row sends the neuron to the tie tail") {
    Rng rng(3);
    Eigen::MatrixXf w(12, 3);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(rng.normal());
    w.row(4).setZero();
    auto r = lca_rank(probe_with(w));
    CHECK(r.global_order.back() == 4);
    check_ranking_invariants(r);
  }

  TEST_CASE("lca: empty probe is an error") {
    CHECK_THROWS_AS(lca_rank(probe_with(Eigen::MatrixXf::Zero(0, 2))), InvalidArgument);
  }

  TEST_CASE("probeless: constant neuron scores zero") {
    auto ds = random_dataset(40, 1, 3, 2, 1);
    ActivationMatrix x = ds.activations();
    x.col(1).setConstant(2.5f);
    ActivationDataset c(ds.items(), ds.labels(), ItemKind::token, 1, 3, x);
    auto r = probeless_rank(c);
    for (const auto& scores : r.class_scores) CHECK(scores[1] == doctest::Approx(0.0).epsilon(1e-6));
    check_ranking_invariants(r);
  }

  TEST_CASE("probeless: planted mean difference ranks first") {
    std::vector<Item> items;
    ActivationMatrix x = ActivationMatrix::Zero(20, 5);
    for (int i = 0; i < 20; ++i) {
      items.push_back({"t", i % 2});
      x(i, 3) = i % 2 ? -1.0f : 1.0f;
    }
    auto r = probeless_rank(ActivationDataset(items, {"A", "B"}, ItemKind::token, 1, 5, x));
    CHECK(r.global_order.front() == 3);
    CHECK(r.global_scores[3] == doctest::Approx(2.0));
  }

  TEST_CASE("probeless: order invariant to uniform positive scaling") {
    auto ds = random_dataset(60, 2, 5, 3, 4);
    ActivationMatrix x = ds.activations() * 3.5f;
    auto a = probeless_rank(ds);
    auto b = probeless_rank(ActivationDataset(ds.items(), ds.labels(), ItemKind::token, 2, 5, x));
    CHECK(a.global_order == b.global_order);
  }

  TEST_CASE("probeless: errors") {
    CHECK_THROWS_AS(probeless_rank(random_dataset(10, 1, 2, 1, 0)), InvalidArgument);
    ActivationDataset empty_class({{"a", 0}, {"b", 0}}, {"A", "B"}, ItemKind::token, 1, 1, ActivationMatrix::Zero(2, 1));
    CHECK_THROWS_AS(probeless_rank(empty_class), InvalidArgument);
  }

  TEST_CASE("top_k") {
    auto r = probeless_rank(random_dataset(30, 1, 6, 2, 2));
    CHECK(top_k(r, 6) == r.global_order);
    CHECK(top_k(r, 2, 1) == std::vector<NeuronId>(r.class_orders[1].begin(), r.class_orders[1].begin() + 2));
    CHECK_THROWS_AS(top_k(r, 0), InvalidArgument);
    CHECK_THROWS_AS(top_k(r, 7), InvalidArgument);
  }

  TEST_CASE("k_sweep: full grid reproduces the oracle exactly") {
    auto g = synth::generate({});
    auto splits = prepare_splits(g.dataset, std::nullopt, 0);
    AnalysisConfig cfg;
    auto probe = fit_oracle(splits.train, splits.dev, splits.test, cfg);
    auto r = lca_rank(probe.probe);
    auto sweep = k_sweep(splits.train, splits.dev, splits.test, r, {256}, cfg);
    REQUIRE(sweep.best_k.has_value());
    CHECK(*sweep.best_k == 256);
    CHECK(sweep.reports[0].score == sweep.oracle_score);
    CHECK(sweep.reports[0].diff() == 0.0);
    CHECK_THROWS_AS(k_sweep(splits.train, splits.dev, splits.test, r, {}, cfg), InvalidArgument);
  }

  TEST_CASE("k_sweep: planted dataset selects k <= 19") {
    auto g = synth::generate({});
    auto splits = prepare_splits(g.dataset, std::nullopt, 0);
    AnalysisConfig cfg;
    auto oracle = fit_oracle(splits.train, splits.dev, splits.test, cfg);
    auto sweep = k_sweep(splits.train, splits.dev, splits.test, lca_rank(oracle.probe),
                         clip_k_grid(cfg.k_grid, 256), cfg);
    REQUIRE(sweep.best_k.has_value());
    CHECK(*sweep.best_k <= 19);
    CHECK(sweep.reports.size() == 7);  // 9..199
  }

  TEST_CASE("default grid") {
    CHECK(default_k_grid() ==
          std::vector<std::size_t>{9, 19, 29, 49, 79, 99, 199, 299, 399, 499, 599, 999, 1999, 4999});
  }

  TEST_CASE("planted informative neurons are recovered") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      synth::SynthSpec spec;
      spec.seed = seed;
      auto g = synth::generate(spec);
      auto sp = split(g.dataset, 0.9, seed);
      ProbeConfig c;
      c.seed = seed;
      auto probe = train_probe(sp.train, sp.dev, c);
      CHECK(synth::score_ranking(lca_rank(probe), g.truth, 15).hits == 10);
      CHECK(synth::score_ranking(probeless_rank(sp.train), g.truth, 15).hits >= 9);
      check_ranking_invariants(lca_rank(probe));
    }
  }
}
