#pragma once

#include "nlens/dataset.hpp"
#include "nlens/ranking.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nlens::synth {

enum class LayerKind { fresh, rotation, noise };

// fresh: i.i.d. N(0,1) neurons plus whatever structure is planted there.
// rotation: a random orthogonal rotation of an earlier layer.
// noise: i.i.d. N(0,1), nothing planted.
struct LayerPlan {
  LayerKind kind = LayerKind::fresh;
  int source = -1;  // rotation only
};

struct SynthSpec {
  int num_layers = 4;
  int hidden_size = 64;
  std::size_t num_items = 6000;
  int num_classes = 6;

  int informative = 10;
  double effect_size = 3.0;  // class-mean separation per informative neuron, in noise sigmas
  std::vector<int> informative_layers = {0};

  int duplicate_groups = 3;
  int duplicate_size = 5;
  double duplicate_noise = 0.01;
  bool exact_duplicates = false;

  // Empty means every layer is fresh.
  std::vector<LayerPlan> layers;

  // Token vocabulary: each class owns types_per_class token types "tok_<id>".
  int types_per_class = 20;
  // Scale of a per-type random offset added to every non-informative neuron of
  // fresh layers; makes token identity linearly recoverable (memorizable).
  double type_effect = 0.0;

  // Test split size for make_leaky_pair.
  std::size_t num_test_items = 3000;

  std::uint64_t seed = 0;

  void validate() const;
  LayerPlan layer_plan(int layer) const;
};

struct SelfCheck {
  double min_duplicate_abs_corr = 1.0;
  double min_informative_eta2 = 1.0;   // share of variance explained by the label
  double max_noise_eta2 = 0.0;
  double min_informative_mutual_information = 0.0;  // Gaussian approximation, nats
};

struct GroundTruth {
  std::vector<NeuronId> informative;
  std::vector<std::vector<NeuronId>> duplicate_groups;
  std::vector<std::string> layer_provenance;
  std::map<std::string, int> type_labels;
  // Class means on the informative neurons, [class][informative index].
  std::vector<std::vector<double>> class_means;
  // Bracket on the Bayes-optimal accuracy of the planted classes (equal
  // priors, unit isotropic noise): union bound below, nearest-rival bound above.
  double bayes_accuracy_lower = 0.0;
  double bayes_accuracy_upper = 1.0;
  SelfCheck self_check;
};

struct Generated {
  ActivationDataset dataset;
  GroundTruth truth;
};

// Deterministic for a fixed spec. Throws DataError when the planted structure
// fails its self-check.
Generated generate(const SynthSpec& spec);

struct LeakyPair {
  ActivationDataset train;
  ActivationDataset test;
  GroundTruth truth;
};

// Train uses spec.num_items items, test spec.num_test_items. A `leak`
// fraction of the test token types are train types; the rest are unseen.
LeakyPair make_leaky_pair(const SynthSpec& spec, double leak);

// Defaults plus a token-type offset strong enough for a linear probe to
// memorize type identity within the standard training budget.
SynthSpec leakage_spec(std::uint64_t seed = 0);

struct RecoveryScore {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t hits = 0;
  std::size_t k = 0;
};

RecoveryScore score_ranking(const NeuronRanking& ranking, const GroundTruth& truth, std::size_t k);
RecoveryScore score_ids(const std::vector<NeuronId>& top, const std::vector<NeuronId>& truth);

}  // namespace nlens::synth
