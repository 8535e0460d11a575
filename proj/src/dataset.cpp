#include "nlens/dataset.hpp"

#include "nlens/error.hpp"
#include "nlens/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace nlens {

const char* to_string(ItemKind kind) { return kind == ItemKind::token ? "token" : "sentence"; }

ItemKind item_kind_from_string(const std::string& text) {
  if (text == "token") return ItemKind::token;
  if (text == "sentence") return ItemKind::sentence;
  throw DataError("unknown item kind '" + text + "'");
}

NeuronAddress neuron_address(NeuronId id, int hidden_size) {
  return {static_cast<int>(id / hidden_size), static_cast<int>(id % hidden_size)};
}

std::string neuron_label(NeuronId id, int hidden_size) {
  const auto addr = neuron_address(id, hidden_size);
  return std::to_string(addr.layer) + ":" + std::to_string(addr.offset);
}

ActivationDataset::ActivationDataset(std::vector<Item> items, std::vector<std::string> labels, ItemKind kind,
                                     int num_layers, int hidden_size, ActivationMatrix activations,
                                     DatasetMeta meta, std::vector<NeuronId> neuron_ids)
    : items_(std::move(items)),
      labels_(std::move(labels)),
      kind_(kind),
      num_layers_(num_layers),
      hidden_size_(hidden_size),
      activations_(std::move(activations)),
      meta_(std::move(meta)),
      neuron_ids_(std::move(neuron_ids)) {
  if (num_layers_ < 1 || hidden_size_ < 1) throw DataError("num_layers and hidden_size must be positive");
  if (static_cast<std::size_t>(activations_.rows()) != items_.size())
    throw DataError("activation row count " + std::to_string(activations_.rows()) + " does not match item count " +
                    std::to_string(items_.size()));
  const std::int64_t full = full_neuron_count();
  if (neuron_ids_.empty() && activations_.cols() == full) {
    neuron_ids_.resize(static_cast<std::size_t>(full));
    std::iota(neuron_ids_.begin(), neuron_ids_.end(), NeuronId{0});
  }
  if (static_cast<std::size_t>(activations_.cols()) != neuron_ids_.size())
    throw DataError("activation column count " + std::to_string(activations_.cols()) +
                    " does not match neuron id map of size " + std::to_string(neuron_ids_.size()));
  std::unordered_set<NeuronId> seen;
  for (NeuronId id : neuron_ids_) {
    if (id < 0 || id >= full) throw DataError("neuron id " + std::to_string(id) + " outside [0, L*H)");
    if (!seen.insert(id).second) throw DataError("duplicate neuron id " + std::to_string(id));
  }
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const int label = items_[i].label;
    if (label < 0 || static_cast<std::size_t>(label) >= labels_.size())
      throw DataError("item " + std::to_string(i) + " has label index " + std::to_string(label) +
                      " outside [0, " + std::to_string(labels_.size()) + ")");
  }
  if (!activations_.allFinite()) throw DataError("activations contain non-finite values");
}

bool ActivationDataset::has_full_layout() const {
  if (static_cast<std::int64_t>(neuron_ids_.size()) != full_neuron_count()) return false;
  for (std::size_t j = 0; j < neuron_ids_.size(); ++j)
    if (neuron_ids_[j] != static_cast<NeuronId>(j)) return false;
  return true;
}

std::vector<int> ActivationDataset::label_indices() const {
  std::vector<int> out(items_.size());
  std::transform(items_.begin(), items_.end(), out.begin(), [](const Item& it) { return it.label; });
  return out;
}

std::vector<std::size_t> ActivationDataset::class_counts() const {
  std::vector<std::size_t> counts(labels_.size(), 0);
  for (const auto& it : items_) ++counts[static_cast<std::size_t>(it.label)];
  return counts;
}

std::uint64_t ActivationDataset::fingerprint() const {
  std::uint64_t h = fnv1a(std::string_view("nlens-dataset"));
  for (const auto& label : labels_) h = fnv1a(label + '\n', h);
  for (const auto& it : items_) {
    h = fnv1a(it.text + '\t', h);
    h = fnv1a(&it.label, sizeof it.label, h);
  }
  h = fnv1a(neuron_ids_.data(), neuron_ids_.size() * sizeof(NeuronId), h);
  return fnv1a(activations_.data(), static_cast<std::size_t>(activations_.size()) * sizeof(float), h);
}

bool ActivationDataset::operator==(const ActivationDataset& other) const {
  if (items_ != other.items_ || labels_ != other.labels_ || kind_ != other.kind_ ||
      num_layers_ != other.num_layers_ || hidden_size_ != other.hidden_size_ || meta_ != other.meta_ ||
      neuron_ids_ != other.neuron_ids_)
    return false;
  if (activations_.rows() != other.activations_.rows() || activations_.cols() != other.activations_.cols())
    return false;
  return std::equal(activations_.data(), activations_.data() + activations_.size(), other.activations_.data(),
                    [](float a, float b) { return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b); });
}

ActivationDataset take_items(const ActivationDataset& ds, const std::vector<std::size_t>& rows) {
  std::vector<Item> items;
  items.reserve(rows.size());
  ActivationMatrix acts(static_cast<Eigen::Index>(rows.size()), ds.activations().cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= ds.num_items()) throw InvalidArgument("row index out of range");
    items.push_back(ds.items()[rows[r]]);
    acts.row(static_cast<Eigen::Index>(r)) = ds.activations().row(static_cast<Eigen::Index>(rows[r]));
  }
  return ActivationDataset(std::move(items), ds.labels(), ds.kind(), ds.num_layers(), ds.hidden_size(),
                           std::move(acts), ds.meta(), ds.neuron_ids());
}

SplitPair split(const ActivationDataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("split ratio must lie in (0, 1)");
  if (ds.num_items() < 2) throw InvalidArgument("split needs at least 2 items");
  std::vector<std::size_t> order(ds.num_items());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(ds.num_items())));
  n_train = std::clamp<std::size_t>(n_train, 1, ds.num_items() - 1);
  std::vector<std::size_t> train_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> dev_rows(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return SplitPair{take_items(ds, train_rows), take_items(ds, dev_rows), seed, ratio};
}

ActivationDataset filter_classes(const ActivationDataset& ds, const std::set<std::string>& keep) {
  for (const auto& name : keep)
    if (std::find(ds.labels().begin(), ds.labels().end(), name) == ds.labels().end())
      throw InvalidArgument("unknown class '" + name + "'");
  std::vector<int> remap(ds.num_classes(), -1);
  std::vector<std::string> labels;
  for (std::size_t t = 0; t < ds.num_classes(); ++t) {
    if (keep.count(ds.labels()[t])) {
      remap[t] = static_cast<int>(labels.size());
      labels.push_back(ds.labels()[t]);
    }
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.num_items(); ++i)
    if (remap[static_cast<std::size_t>(ds.items()[i].label)] >= 0) rows.push_back(i);
  if (rows.empty()) throw InvalidArgument("filter_classes would produce an empty dataset");

  std::vector<Item> items;
  items.reserve(rows.size());
  ActivationMatrix acts(static_cast<Eigen::Index>(rows.size()), ds.activations().cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Item it = ds.items()[rows[r]];
    it.label = remap[static_cast<std::size_t>(it.label)];
    items.push_back(std::move(it));
    acts.row(static_cast<Eigen::Index>(r)) = ds.activations().row(static_cast<Eigen::Index>(rows[r]));
  }
  return ActivationDataset(std::move(items), std::move(labels), ds.kind(), ds.num_layers(), ds.hidden_size(),
                           std::move(acts), ds.meta(), ds.neuron_ids());
}

ActivationDataset select_neurons(const ActivationDataset& ds, const std::vector<NeuronId>& ids) {
  std::unordered_map<NeuronId, Eigen::Index> column_of;
  column_of.reserve(ds.neuron_ids().size());
  for (std::size_t j = 0; j < ds.neuron_ids().size(); ++j)
    column_of.emplace(ds.neuron_ids()[j], static_cast<Eigen::Index>(j));

  std::unordered_set<NeuronId> seen;
  std::vector<Eigen::Index> columns;
  columns.reserve(ids.size());
  for (NeuronId id : ids) {
    if (id < 0 || id >= ds.full_neuron_count())
      throw InvalidArgument("neuron id " + std::to_string(id) + " out of range");
    if (!seen.insert(id).second) throw InvalidArgument("duplicate neuron id " + std::to_string(id));
    auto it = column_of.find(id);
    if (it == column_of.end()) throw InvalidArgument("neuron id " + std::to_string(id) + " not present in dataset");
    columns.push_back(it->second);
  }
  if (columns.empty()) throw InvalidArgument("select_neurons needs at least one id");
  ActivationMatrix acts(ds.activations().rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) acts.col(static_cast<Eigen::Index>(j)) = ds.activations().col(columns[j]);
  return ActivationDataset(ds.items(), ds.labels(), ds.kind(), ds.num_layers(), ds.hidden_size(), std::move(acts),
                           ds.meta(), ids);
}

std::vector<NeuronId> layer_neuron_ids(const ActivationDataset& ds, int lo, int hi) {
  if (lo < 0 || hi < lo || hi >= ds.num_layers())
    throw InvalidArgument("layer range [" + std::to_string(lo) + ", " + std::to_string(hi) + "] out of bounds for " +
                          std::to_string(ds.num_layers()) + " layers");
  std::vector<NeuronId> ids;
  for (NeuronId id : ds.neuron_ids()) {
    const int layer = neuron_address(id, ds.hidden_size()).layer;
    if (layer >= lo && layer <= hi) ids.push_back(id);
  }
  return ids;
}

ActivationDataset select_layers(const ActivationDataset& ds, int lo, int hi) {
  auto ids = layer_neuron_ids(ds, lo, hi);
  if (ids.empty()) throw InvalidArgument("no neurons in the requested layer range");
  return select_neurons(ds, ids);
}

ActivationDataset sample_items(const ActivationDataset& ds, std::size_t n, std::uint64_t seed) {
  if (n < 1 || n > ds.num_items())
    throw InvalidArgument("sample size " + std::to_string(n) + " outside [1, " + std::to_string(ds.num_items()) + "]");
  std::vector<std::size_t> order(ds.num_items());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n positions form a uniform sample.
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  order.resize(n);
  return take_items(ds, order);
}

ActivationDataset relabel(const ActivationDataset& ds, std::vector<int> labels) {
  if (labels.size() != ds.num_items()) throw InvalidArgument("relabel: label count does not match item count");
  std::vector<Item> items = ds.items();
  for (std::size_t i = 0; i < items.size(); ++i) items[i].label = labels[i];
  return ActivationDataset(std::move(items), ds.labels(), ds.kind(), ds.num_layers(), ds.hidden_size(),
                           ds.activations(), ds.meta(), ds.neuron_ids());
}

StandardizationStats compute_standardization(const ActivationDataset& train) {
  if (train.num_items() == 0) throw InvalidArgument("standardize: training split is empty");
  const auto& x = train.activations();
  const auto cols = static_cast<std::size_t>(x.cols());
  const auto n = static_cast<double>(x.rows());
  StandardizationStats stats;
  stats.mean.assign(cols, 0.0);
  stats.stddev.assign(cols, 0.0);
  stats.zero_variance.assign(cols, false);
  stats.neuron_ids = train.neuron_ids();
  stats.source_fingerprint = train.fingerprint();
  for (std::size_t j = 0; j < cols; ++j) {
    const auto col = x.col(static_cast<Eigen::Index>(j));
    const float first = col(0);
    bool constant = true;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      sum += col(i);
      constant = constant && col(i) == first;
    }
    const double mean = sum / n;
    double sq = 0.0;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      const double d = col(i) - mean;
      sq += d * d;
    }
    stats.mean[j] = constant ? static_cast<double>(first) : mean;
    stats.stddev[j] = constant ? 0.0 : std::sqrt(sq / n);
    stats.zero_variance[j] = constant || stats.stddev[j] == 0.0;
  }
  return stats;
}

ActivationDataset apply_standardization(const StandardizationStats& stats, const ActivationDataset& ds) {
  if (stats.neuron_ids != ds.neuron_ids())
    throw InvalidArgument("standardization stats were computed for a different neuron set");
  ActivationMatrix out(ds.activations().rows(), ds.activations().cols());
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const auto sj = static_cast<std::size_t>(j);
    if (stats.zero_variance[sj]) {
      out.col(j).setZero();
      continue;
    }
    const double mean = stats.mean[sj];
    const double inv = 1.0 / stats.stddev[sj];
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      out(i, j) = static_cast<float>((static_cast<double>(ds.activations()(i, j)) - mean) * inv);
  }
  return ActivationDataset(ds.items(), ds.labels(), ds.kind(), ds.num_layers(), ds.hidden_size(), std::move(out),
                           ds.meta(), ds.neuron_ids());
}

Standardized standardize(const ActivationDataset& train, const std::vector<ActivationDataset>& apply_to) {
  Standardized result{compute_standardization(train), {}};
  result.datasets.reserve(apply_to.size());
  for (const auto& ds : apply_to) result.datasets.push_back(apply_standardization(result.stats, ds));
  return result;
}

}  // namespace nlens
