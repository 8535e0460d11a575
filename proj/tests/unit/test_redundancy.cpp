#include "fixtures.hpp"

#include "nlens/error.hpp"
#include "nlens/pipeline.hpp"
#include "nlens/redundancy.hpp"
#include "nlens/synth.hpp"

#include <Eigen/QR>
#include <doctest.h>

#include <set>

using namespace nlens;
using nlens::testing::random_dataset;

namespace {

ActivationDataset from_columns(const std::vector<std::vector<float>>& cols, int classes = 2) {
  const auto n = static_cast<Eigen::Index>(cols.front().size());
  ActivationMatrix x(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (Eigen::Index i = 0; i < n; ++i) x(i, static_cast<Eigen::Index>(j)) = cols[j][static_cast<std::size_t>(i)];
  std::vector<Item> items;
  for (Eigen::Index i = 0; i < n; ++i) items.push_back({"t", static_cast<int>(i % classes)});
  return ActivationDataset(items, nlens::testing::class_names(classes), ItemKind::token, 1,
                           static_cast<int>(cols.size()), x);
}

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Eigen::MatrixXd orthogonal(Eigen::Index n, Rng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(n, n, rng));
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
}

void check_partition(const ClusterModel& m, std::size_t n) {
  std::set<NeuronId> seen;
  std::size_t total = 0;
  for (std::size_t c = 0; c < m.clusters.size(); ++c) {
    total += m.clusters[c].size();
    seen.insert(m.clusters[c].begin(), m.clusters[c].end());
    CHECK(std::find(m.clusters[c].begin(), m.clusters[c].end(), m.representatives[c]) != m.clusters[c].end());
  }
  CHECK(total == n);
  CHECK(seen.size() == n);
}

}  // namespace

TEST_SUITE("correlation") {
  TEST_CASE("affine and sign") {
    Rng rng(1);
    std::vector<float> x(200), y(200), z(200);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = static_cast<float>(rng.normal());
      y[i] = 2 * x[i] + 1;
      z[i] = -x[i];
    }
    auto c = correlation_matrix(from_columns({x, y, z}));
    CHECK(c.values(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(c.values(0, 2) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(correlation_distance(c.values(0, 2)) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(correlation_distance(1.0) == 0.0);
    CHECK(correlation_distance(0.0) == 1.0);
  }

  TEST_CASE("independent columns, 10k items") {
    Rng rng(2);
    std::vector<float> a(10000), b(10000);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<float>(rng.normal());
      b[i] = static_cast<float>(rng.normal());
    }
    CHECK(std::abs(correlation_matrix(from_columns({a, b})).values(0, 1)) < 0.05);
  }

  TEST_CASE("symmetric, unit diagonal, zero-variance isolated") {
    auto ds = random_dataset(100, 2, 6, 2, 3);
    ActivationMatrix x = ds.activations();
    x.col(4).setConstant(1.0f);
    auto c = correlation_matrix(ActivationDataset(ds.items(), ds.labels(), ItemKind::token, 2, 6, x));
    CHECK(c.values == c.values.transpose());
    for (Eigen::Index i = 0; i < 12; ++i) {
      CHECK(c.values(i, i) == 1.0);
      if (i != 4) CHECK(c.values(4, i) == 0.0);
    }
    CHECK(c.values.allFinite());
    CHECK((c.values.array().abs() <= 1.0).all());
  }

  TEST_CASE("needs two items") {
    CHECK_THROWS_AS(correlation_matrix(random_dataset(1, 1, 3, 1, 0)), InvalidArgument);
  }
}

TEST_SUITE("clustering") {
  TEST_CASE("all distances above c give singletons") {
    auto c = correlation_matrix(random_dataset(2000, 1, 8, 2, 4));
    auto m = cluster_neurons(c, 0.5, 0);
    CHECK(m.clusters.size() == 8);
    auto reps = m.representatives;
    std::sort(reps.begin(), reps.end());
    CHECK(reps == std::vector<NeuronId>{0, 1, 2, 3, 4, 5, 6, 7});
  }

  TEST_CASE("exact duplicates share a cluster at any c") {
    auto ds = random_dataset(300, 1, 5, 2, 5);
    ActivationMatrix x = ds.activations();
    x.col(3) = x.col(1);
    auto c = correlation_matrix(ActivationDataset(ds.items(), ds.labels(), ItemKind::token, 1, 5, x));
    for (double t : {1e-6, 0.1, 0.5}) {
      auto m = cluster_neurons(c, t, 0);
      bool together = false;
      for (const auto& cl : m.clusters)
        together |= std::count(cl.begin(), cl.end(), 1) && std::count(cl.begin(), cl.end(), 3);
      CHECK(together);
    }
  }

  TEST_CASE("average linkage on a hand-computed matrix") {
    // distances: d(0,1)=0.1, d(2,{0,1}) = 0.3 and 0.5 -> average 0.4
    CorrelationMatrix c;
    c.ids = {0, 1, 2};
    c.values.resize(3, 3);
    c.values << 1.0, 0.9, 0.7, 0.9, 1.0, 0.5, 0.7, 0.5, 1.0;
    auto d = build_dendrogram(c);
    REQUIRE(d.merges.size() == 2);
    CHECK(d.merges[0].height == doctest::Approx(0.1));
    CHECK(d.merges[1].height == doctest::Approx(0.4));
    CHECK(cluster_neurons(c, 0.39, 0).clusters.size() == 2);
    CHECK(cluster_neurons(c, 0.4, 0).clusters.size() == 1);
  }

  TEST_CASE("non-symmetric matrix is rejected") {
    CorrelationMatrix c;
    c.ids = {0, 1};
    c.values.resize(2, 2);
    c.values << 1.0, 0.2, 0.3, 1.0;
    CHECK_THROWS_AS(cluster_neurons(c, 0.5, 0), InvalidArgument);
    c.values(1, 0) = 0.2;
    CHECK_THROWS_AS(cluster_neurons(c, 0.0, 0), InvalidArgument);
    CHECK_THROWS_AS(cluster_neurons(c, 1.5, 0), InvalidArgument);
  }

  TEST_CASE("partition, monotone count, seeded representatives") {
    auto g = synth::generate({});
    auto c = correlation_matrix(g.dataset);
    std::size_t previous = std::numeric_limits<std::size_t>::max();
    for (double t : default_c_grid()) {
      auto m = cluster_neurons(c, t, 3);
      check_partition(m, 256);
      CHECK(m.clusters.size() <= previous);
      previous = m.clusters.size();
    }
    CHECK(cluster_neurons(c, 0.3, 3).representatives == cluster_neurons(c, 0.3, 3).representatives);
  }

  TEST_CASE("planted duplicate groups collapse at c = 0.1") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      synth::SynthSpec spec;
      spec.seed = seed;
      auto g = synth::generate(spec);
      auto m = cluster_neurons(correlation_matrix(g.dataset), 0.1, seed);
      CHECK(m.clusters.size() == 256 - 12);
      std::set<std::vector<NeuronId>> clusters(m.clusters.begin(), m.clusters.end());
      for (const auto& group : g.truth.duplicate_groups) CHECK(clusters.count(group) == 1);
    }
  }

  TEST_CASE("cc_reduce on independent informative neurons finds no reduction") {
    // every neuron carries its own bit of the label, all mutually uncorrelated
    Rng rng(9);
    const int n = 2000, h = 6;
    ActivationMatrix x(n, h);
    std::vector<Item> items;
    for (int i = 0; i < n; ++i) {
      int label = 0;
      for (int j = 0; j < h; ++j) {
        const int bit = static_cast<int>(rng.below(2));
        if (j < 3) label |= bit << j;
        x(i, j) = static_cast<float>((bit ? 1.5 : -1.5) + 0.3 * rng.normal());
      }
      items.push_back({"t", label});
    }
    ActivationDataset ds(items, nlens::testing::class_names(8), ItemKind::token, 1, h, x);
    auto splits = prepare_splits(ds, std::nullopt, 0);
    AnalysisConfig cfg;
    auto r = cc_reduce(splits.train, splits.dev, splits.test, default_c_grid(), cfg);
    if (r.chosen_threshold) {
      CHECK(r.chosen_model->clusters.size() >= 3);
    } else {
      CHECK(std::all_of(r.reports.begin(), r.reports.end(), [](const auto& rep) { return !rep.selected; }));
    }
    CHECK(r.reports.size() == 9);
  }

  TEST_CASE("cc_reduce on planted duplicates reduces at least the duplicate share") {
    auto g = synth::generate({});
    auto splits = prepare_splits(g.dataset, std::nullopt, 0);
    AnalysisConfig cfg;
    auto r = cc_reduce(splits.train, splits.dev, splits.test, default_c_grid(), cfg);
    REQUIRE(r.chosen_threshold.has_value());
    const auto chosen = std::find_if(r.reports.begin(), r.reports.end(), [](const auto& rep) { return rep.selected; });
    REQUIRE(chosen != r.reports.end());
    CHECK(chosen->reduction() >= 12.0 / 256.0 - 1e-12);
    CHECK(within_tolerance(chosen->score, r.oracle_score, cfg.delta));
    CHECK_THROWS_AS(cc_reduce(splits.train, splits.dev, splits.test, {}, cfg), InvalidArgument);
  }
}

TEST_SUITE("cka") {
  TEST_CASE("identity, invariances, symmetry") {
    Rng rng(10);
    for (int trial = 0; trial < 5; ++trial) {
      auto x = gaussian(100, 12, rng);
      auto y = gaussian(100, 7, rng);
      CHECK(cka(x, x) == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(std::abs(cka(x, x * orthogonal(12, rng)) - 1.0) < 1e-6);
      CHECK(std::abs(cka(x, 3.7 * x) - 1.0) < 1e-6);
      CHECK(std::abs(cka(x, y) - cka(y, x)) < 1e-9);
      const double v = cka(x, y);
      CHECK((v >= 0.0 && v <= 1.0 + 1e-12));
    }
  }

  TEST_CASE("degenerate representations") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, 3);
    Eigen::MatrixXd constant = Eigen::MatrixXd::Ones(10, 3);
    CHECK_THROWS_AS(cka(x, constant), InvalidArgument);
    CHECK_THROWS_AS(cka(x, Eigen::MatrixXd::Random(9, 3)), InvalidArgument);
  }

  TEST_CASE("map: diagonal one, duplicated layer scores one") {
    auto ds = random_dataset(500, 3, 8, 2, 11);
    ActivationMatrix x = ds.activations();
    x.middleCols(16, 8) = x.middleCols(0, 8);
    auto map = layer_cka_map(ActivationDataset(ds.items(), ds.labels(), ItemKind::token, 3, 8, x), 25000, 0);
    CHECK(map.sample_size == 500);
    for (int l = 0; l < 3; ++l) CHECK(map.values(l, l) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(map.values(0, 2) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK((map.values - map.values.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("map: rotation and noise layers") {
    synth::SynthSpec spec;
    spec.layers = {{synth::LayerKind::fresh, -1},
                   {synth::LayerKind::rotation, 0},
                   {synth::LayerKind::noise, -1},
                   {synth::LayerKind::noise, -1}};
    auto g = synth::generate(spec);
    auto map = layer_cka_map(g.dataset, 25000, 0, 2);
    CHECK(map.values(0, 1) >= 0.999);
    CHECK(map.values(0, 2) < 0.1);
  }

  TEST_CASE("map subsample is seeded") {
    auto ds = random_dataset(300, 2, 4, 2, 12);
    CHECK(layer_cka_map(ds, 100, 5).values == layer_cka_map(ds, 100, 5).values);
    CHECK(layer_cka_map(ds, 100, 5).sample_size == 100);
  }
}

TEST_SUITE("layerwise") {
  TEST_CASE("incremental prefix over all layers equals the oracle bit for bit") {
    auto g = synth::generate({});
    auto splits = prepare_splits(g.dataset, std::nullopt, 0);
    AnalysisConfig cfg;
    const double oracle = fit_oracle(splits.train, splits.dev, splits.test, cfg).score;
    auto reports = layerwise(splits.train, splits.dev, splits.test, LayerwiseMode::incremental, cfg);
    REQUIRE(reports.size() == 4);
    CHECK(reports.back().score == oracle);
    CHECK(reports.back().neuron_count == 256);
    CHECK(reports[1].neuron_count == 128);
  }

  TEST_CASE("independent: signal only in layer 0") {
    auto g = synth::generate({});
    auto splits = prepare_splits(g.dataset, std::nullopt, 0);
    AnalysisConfig cfg;
    auto reports = layerwise(splits.train, splits.dev, splits.test, LayerwiseMode::independent, cfg);
    REQUIRE(reports.size() == 4);
    const double oracle = reports[0].oracle_score;
    CHECK(reports[0].score >= oracle - 0.02);
    for (std::size_t l = 1; l < 4; ++l) {
      CHECK(reports[l].score < 0.3);
      CHECK(reports[l].layers->first == static_cast<int>(l));
      CHECK(reports[l].layers->second == static_cast<int>(l));
    }
  }
}

TEST_SUITE("minimal set") {
  TEST_CASE("planted defaults") {
    auto g = synth::generate({});
    auto splits = prepare_splits(g.dataset, std::nullopt, 0);
    AnalysisConfig cfg;
    auto r = minimal_neuron_set(splits.train, splits.dev, splits.test, cfg);
    CHECK_FALSE(r.failed);
    CHECK(r.neuron_ids.size() <= 20);
    CHECK(r.final_report.reduction() >= 0.92);
    CHECK(within_tolerance(r.final_report.score, r.oracle_score, 0.01));
    CHECK(r.final_report.method == "LS+CC+LCA");
  }

  TEST_CASE("every neuron a copy of the label collapses to one") {
    std::vector<Item> items;
    const int n = 1000;
    ActivationMatrix x(n, 8);
    for (int i = 0; i < n; ++i) {
      items.push_back({"t", i % 2});
      x.row(i).setConstant(static_cast<float>(i % 2));
    }
    ActivationDataset ds(items, {"A", "B"}, ItemKind::token, 2, 4, x);
    auto splits = prepare_splits(ds, std::nullopt, 0);
    auto r = minimal_neuron_set(splits.train, splits.dev, splits.test, AnalysisConfig{});
    CHECK_FALSE(r.failed);
    CHECK(r.neuron_ids.size() == 1);
    CHECK(r.final_report.score == 1.0);
  }
}
