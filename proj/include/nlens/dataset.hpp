#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace nlens {

using NeuronId = std::int64_t;

// Row-major float32 activation matrix, one row per item.
using ActivationMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ItemKind { token, sentence };

const char* to_string(ItemKind kind);
ItemKind item_kind_from_string(const std::string& text);

struct Item {
  std::string text;
  int label = 0;

  bool operator==(const Item&) const = default;
};

struct DatasetMeta {
  std::string model;
  std::string task;
  std::optional<std::int64_t> seed;

  bool operator==(const DatasetMeta&) const = default;
};

// Layer / offset pair of a neuron id under the id = layer * H + offset scheme.
struct NeuronAddress {
  int layer = 0;
  int offset = 0;
};

NeuronAddress neuron_address(NeuronId id, int hidden_size);
std::string neuron_label(NeuronId id, int hidden_size);  // "layer:offset"

// Items, labels and their activations. num_layers / hidden_size describe the
// layout of the model the activations came from; column j holds the neuron
// whose original id is neuron_ids()[j]. A freshly extracted dataset has the
// identity map, so N = L * H.
//
// Instances are immutable; every transformation returns a new dataset.
class ActivationDataset {
 public:
  ActivationDataset(std::vector<Item> items, std::vector<std::string> labels, ItemKind kind, int num_layers,
                    int hidden_size, ActivationMatrix activations, DatasetMeta meta = {},
                    std::vector<NeuronId> neuron_ids = {});

  const std::vector<Item>& items() const { return items_; }
  const std::vector<std::string>& labels() const { return labels_; }
  ItemKind kind() const { return kind_; }
  int num_layers() const { return num_layers_; }
  int hidden_size() const { return hidden_size_; }
  const ActivationMatrix& activations() const { return activations_; }
  const DatasetMeta& meta() const { return meta_; }
  const std::vector<NeuronId>& neuron_ids() const { return neuron_ids_; }

  std::size_t num_items() const { return items_.size(); }
  std::size_t num_classes() const { return labels_.size(); }
  std::size_t num_features() const { return static_cast<std::size_t>(activations_.cols()); }
  std::int64_t full_neuron_count() const { return static_cast<std::int64_t>(num_layers_) * hidden_size_; }

  // True when the columns are exactly ids 0..L*H-1 in order.
  bool has_full_layout() const;

  std::vector<int> label_indices() const;
  std::vector<std::size_t> class_counts() const;

  // FNV-1a over labels, item labels and activation bytes.
  std::uint64_t fingerprint() const;

  bool operator==(const ActivationDataset& other) const;

 private:
  std::vector<Item> items_;
  std::vector<std::string> labels_;
  ItemKind kind_;
  int num_layers_;
  int hidden_size_;
  ActivationMatrix activations_;
  DatasetMeta meta_;
  std::vector<NeuronId> neuron_ids_;
};

struct SplitPair {
  ActivationDataset train;
  ActivationDataset dev;
  std::uint64_t seed;
  double ratio;
};

struct StandardizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<bool> zero_variance;
  std::vector<NeuronId> neuron_ids;
  std::uint64_t source_fingerprint = 0;

  std::size_t size() const { return mean.size(); }
};

// Subset of rows, in the order given.
ActivationDataset take_items(const ActivationDataset& ds, const std::vector<std::size_t>& rows);

// Seeded uniform shuffle followed by a prefix split; |train| = round(ratio * n).
SplitPair split(const ActivationDataset& ds, double ratio = 0.9, std::uint64_t seed = 0);

ActivationDataset filter_classes(const ActivationDataset& ds, const std::set<std::string>& keep);

// Columns for the given original neuron ids, in the given order.
ActivationDataset select_neurons(const ActivationDataset& ds, const std::vector<NeuronId>& ids);

// Inclusive [lo, hi] layer range.
ActivationDataset select_layers(const ActivationDataset& ds, int lo, int hi);
std::vector<NeuronId> layer_neuron_ids(const ActivationDataset& ds, int lo, int hi);

ActivationDataset sample_items(const ActivationDataset& ds, std::size_t n, std::uint64_t seed);

ActivationDataset relabel(const ActivationDataset& ds, std::vector<int> labels);

StandardizationStats compute_standardization(const ActivationDataset& train);
ActivationDataset apply_standardization(const StandardizationStats& stats, const ActivationDataset& ds);

struct Standardized {
  StandardizationStats stats;
  std::vector<ActivationDataset> datasets;
};

// Stats from train only; each dataset in apply_to is z-scored with them.
Standardized standardize(const ActivationDataset& train, const std::vector<ActivationDataset>& apply_to);

}  // namespace nlens
