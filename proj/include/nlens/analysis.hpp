#pragma once

#include "nlens/dataset.hpp"
#include "nlens/probe.hpp"

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nlens {

// One row block of a redundancy results table.
struct AnalysisReport {
  std::string method;   // Oracle | LCA | CC | Layerwise | LS+CC+LCA
  std::string variant;  // e.g. "independent" / "incremental" for Layerwise
  std::optional<std::pair<int, int>> layers;
  std::optional<double> threshold;
  bool threshold_na = false;  // a clustering stage ran but no threshold qualified
  std::size_t neuron_count = 0;
  std::int64_t total_neurons = 0;
  double score = 0.0;
  double oracle_score = 0.0;
  ScoreMetric metric = ScoreMetric::accuracy;
  bool selected = false;  // the grid point a selection procedure settled on
  std::vector<NeuronId> neuron_ids;

  double diff() const { return score - oracle_score; }
  double reduction() const {
    return total_neurons > 0 ? 1.0 - static_cast<double>(neuron_count) / static_cast<double>(total_neurons) : 0.0;
  }
};

std::vector<std::size_t> default_k_grid();
std::vector<double> default_c_grid();

struct AnalysisConfig {
  ProbeConfig probe;
  ScoreMetric metric = ScoreMetric::accuracy;
  // Allowed drop below the oracle score, in score units (0.01 == 1 pp accuracy).
  double delta = 0.01;
  std::vector<std::size_t> k_grid = default_k_grid();
  std::vector<double> c_grid = default_c_grid();
  std::uint64_t cluster_seed = 0;
  unsigned jobs = 1;
  // Oracle score override; computed from all features when absent.
  std::optional<double> oracle_score;
};

// True when score is within delta of the oracle (a 1e-12 slack absorbs rounding in oracle - delta).
bool within_tolerance(double score, double oracle_score, double delta);

struct FitResult {
  Probe probe;
  Metrics test_metrics;
  double score = 0.0;
};

// Trains on the given neuron ids (sorted ascending first, so that the same
// set always yields the same column order) and scores on test.
FitResult fit_on(const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
                 std::vector<NeuronId> ids, const AnalysisConfig& config);

// Probe on every feature of train; the reference for all reduction methods.
FitResult fit_oracle(const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
                     const AnalysisConfig& config);

double resolve_oracle(const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
                      const AnalysisConfig& config);

AnalysisReport make_report(std::string method, const std::vector<NeuronId>& ids, std::int64_t total_neurons,
                           double score, double oracle_score, ScoreMetric metric);

// Runs fn(0..n-1) on up to `jobs` threads. Each index is independent and
// results are written by index, so output does not depend on scheduling.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn);

}  // namespace nlens
