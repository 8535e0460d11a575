#include "nlens/error.hpp"
#include "nlens/probe.hpp"
#include "nlens/rng.hpp"

namespace nlens {

int ControlTask::class_for(const std::string& text) const {
  if (auto it = mapping.find(text); it != mapping.end()) return it->second;
  Rng rng(derive_seed(seed, fnv1a(text)));
  if (sampling == ControlSampling::uniform) return static_cast<int>(rng.below(distribution.size()));
  return static_cast<int>(rng.categorical(distribution));
}

ControlResult make_control_labels(const ActivationDataset& ds, std::uint64_t seed, ControlSampling sampling) {
  if (ds.kind() != ItemKind::token) throw InvalidArgument("control tasks are defined for token datasets only");
  if (ds.num_items() == 0) throw InvalidArgument("control task needs a non-empty dataset");
  ControlTask task;
  task.seed = seed;
  task.sampling = sampling;
  const auto counts = ds.class_counts();
  task.distribution.resize(counts.size());
  for (std::size_t t = 0; t < counts.size(); ++t)
    task.distribution[t] = static_cast<double>(counts[t]) / static_cast<double>(ds.num_items());

  std::vector<int> labels(ds.num_items());
  for (std::size_t i = 0; i < ds.num_items(); ++i) {
    const auto& text = ds.items()[i].text;
    auto it = task.mapping.find(text);
    if (it == task.mapping.end()) it = task.mapping.emplace(text, task.class_for(text)).first;
    labels[i] = it->second;
  }
  auto relabeled = relabel(ds, std::move(labels));
  return ControlResult{std::move(task), std::move(relabeled)};
}

ActivationDataset apply_control(const ControlTask& task, const ActivationDataset& ds) {
  if (ds.kind() != ItemKind::token) throw InvalidArgument("control tasks are defined for token datasets only");
  if (task.distribution.size() != ds.num_classes())
    throw InvalidArgument("control task class count does not match the dataset");
  std::vector<int> labels(ds.num_items());
  for (std::size_t i = 0; i < ds.num_items(); ++i) labels[i] = task.class_for(ds.items()[i].text);
  return relabel(ds, std::move(labels));
}

}  // namespace nlens
