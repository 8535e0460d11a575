#include "fixtures.hpp"

#include "nlens/error.hpp"
#include "nlens/probe.hpp"
#include "nlens/serialize.hpp"
#include "nlens/synth.hpp"

#include <doctest.h>

#include <set>

using namespace nlens;
using namespace nlens::synth;

TEST_SUITE("synth") {
  TEST_CASE("defaults") {
    SynthSpec spec;
    CHECK(spec.num_layers * spec.hidden_size == 256);
    CHECK(spec.num_classes == 6);
    CHECK(spec.informative == 10);
    CHECK(spec.effect_size == 3.0);
    CHECK(spec.duplicate_groups == 3);
    CHECK(spec.duplicate_size == 5);
    CHECK(spec.num_items == 6000);
    CHECK(spec.duplicate_noise == 0.01);
  }

  TEST_CASE("same seed gives byte-identical data") {
    auto a = generate({});
    auto b = generate({});
    CHECK(a.dataset == b.dataset);
    CHECK(a.dataset.fingerprint() == b.dataset.fingerprint());
    SynthSpec other;
    other.seed = 1;
    CHECK_FALSE(generate(other).dataset == a.dataset);
  }

  TEST_CASE("self-check on defaults") {
    auto g = generate({});
    CHECK(g.truth.self_check.min_duplicate_abs_corr >= 0.99);
    CHECK(g.truth.self_check.min_informative_mutual_information > 0.0);
    CHECK(g.truth.self_check.max_noise_eta2 < 0.01);
    CHECK(g.truth.informative.size() == 10);
    CHECK(g.truth.duplicate_groups.size() == 3);
    for (const auto& group : g.truth.duplicate_groups) CHECK(group.size() == 5);
    std::set<NeuronId> used(g.truth.informative.begin(), g.truth.informative.end());
    for (const auto& group : g.truth.duplicate_groups)
      for (NeuronId id : group) CHECK(used.insert(id).second);
    const auto counts = g.dataset.class_counts();
    for (auto c : counts) CHECK(c == 1000);
  }

  TEST_CASE("Bayes bracket matches the nearest-mean rule") {
    auto g = generate({});
    const double empirical = nlens::testing::nearest_mean_accuracy(g.dataset, g.truth);
    CHECK(g.truth.bayes_accuracy_lower <= g.truth.bayes_accuracy_upper);
    // 6000 draws: binomial sd ~ 0.001
    CHECK(empirical >= g.truth.bayes_accuracy_lower - 0.005);
    CHECK(empirical <= g.truth.bayes_accuracy_upper + 0.005);
  }

  TEST_CASE("invalid specs") {
    SynthSpec spec;
    spec.informative = 300;
    CHECK_THROWS_AS(generate(spec), InvalidArgument);
    spec = {};
    spec.effect_size = 0.0;
    CHECK_THROWS_AS(generate(spec), InvalidArgument);
    spec = {};
    spec.layers = {{LayerKind::fresh, -1}, {LayerKind::rotation, 3}, {LayerKind::noise, -1}, {LayerKind::noise, -1}};
    CHECK_THROWS_AS(generate(spec), InvalidArgument);
    spec = {};
    spec.duplicate_groups = 60;
    CHECK_THROWS_AS(generate(spec), InvalidArgument);
    CHECK_THROWS_AS(make_leaky_pair({}, 1.5), InvalidArgument);
  }

  TEST_CASE("exact duplicates") {
    SynthSpec spec;
    spec.exact_duplicates = true;
    auto g = generate(spec);
    CHECK(g.truth.self_check.min_duplicate_abs_corr == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("leaky pair vocabulary") {
    const auto spec = leakage_spec();
    auto full = make_leaky_pair(spec, 1.0);
    auto none = make_leaky_pair(spec, 0.0);
    auto types = [](const ActivationDataset& ds) {
      std::set<std::string> out;
      for (const auto& it : ds.items()) out.insert(it.text);
      return out;
    };
    const auto train = types(full.train);
    for (const auto& t : types(full.test)) CHECK(train.count(t) == 1);
    const auto train0 = types(none.train);
    for (const auto& t : types(none.test)) CHECK(train0.count(t) == 0);
    CHECK(full.train == none.train);
    CHECK(full.test.num_items() == spec.num_test_items);
    // the type -> label map is deterministic
    for (const auto& it : full.test.items()) CHECK(full.truth.type_labels.at(it.text) == it.label);
  }

  TEST_CASE("type offsets carry no label information") {
    auto pair = make_leaky_pair(leakage_spec(), 0.0);
    auto probe = train_probe(select_layers(pair.train, 1, 3), select_layers(pair.train, 1, 3), {});
    // layers 1-3 hold only type offsets (and duplicates); on fresh types they predict near chance
    const double acc = evaluate(probe, select_layers(pair.test, 1, 3)).accuracy;
    CHECK(acc < 0.3);
  }

  TEST_CASE("score_ranking") {
    GroundTruth truth;
    truth.informative = {1, 2, 3};
    CHECK(score_ids({1, 2, 3}, truth.informative).precision == 1.0);
    CHECK(score_ids({1, 2, 3}, truth.informative).recall == 1.0);
    CHECK(score_ids({4, 5}, truth.informative).recall == 0.0);
    CHECK(score_ids({4, 5}, truth.informative).precision == 0.0);
    const auto half = score_ids({1, 9}, truth.informative);
    CHECK(half.precision == 0.5);
    CHECK(half.recall == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("spec and truth survive json") {
    SynthSpec spec;
    spec.layers = {{LayerKind::fresh, -1}, {LayerKind::rotation, 0}, {LayerKind::noise, -1}, {LayerKind::fresh, -1}};
    spec.seed = 12;
    auto back = synth_spec_from_json(to_json(spec));
    CHECK(to_json(back) == to_json(spec));
    CHECK(generate(back).dataset == generate(spec).dataset);
    auto g = generate(spec);
    auto truth = ground_truth_from_json(to_json(g.truth));
    CHECK(truth.informative == g.truth.informative);
    CHECK(truth.duplicate_groups == g.truth.duplicate_groups);
    CHECK(truth.layer_provenance == std::vector<std::string>{"fresh", "rotation-of(0)", "noise", "fresh"});
  }
}
