#pragma once

#include "nlens/dataset.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nlens {

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) on mean cross-entropy
// + l1 * |W|_1 + l2 * |W|_2^2. The bias is not regularized.
struct ProbeConfig {
  int epochs = 10;
  double learning_rate = 1e-3;
  int batch_size = 128;
  double l1_lambda = 1e-5;
  double l2_lambda = 1e-5;
  std::uint64_t seed = 0;
  // z-score features with train-split stats before fitting; the stats travel
  // with the probe and are reapplied by evaluate().
  bool standardize = true;
  // Keep the epoch with the best dev accuracy instead of the final one.
  bool select_best_dev = false;

  void validate() const;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
};

struct Metrics {
  double accuracy = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  double macro_f1 = 0.0;
  // confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t count = 0;
};

enum class ScoreMetric { accuracy, macro_f1 };

const char* to_string(ScoreMetric metric);
ScoreMetric score_metric_from_string(const std::string& text);
double score_of(const Metrics& metrics, ScoreMetric metric);

struct Probe {
  // feature x class
  Eigen::MatrixXf weights;
  Eigen::VectorXf bias;
  ProbeConfig config;
  std::vector<NeuronId> feature_ids;
  std::vector<std::string> labels;
  int num_layers = 0;
  int hidden_size = 0;
  std::optional<StandardizationStats> input_stats;
  std::vector<EpochRecord> history;
  std::optional<Metrics> dev_metrics;

  std::size_t num_features() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(weights.cols()); }
};

Probe train_probe(const ActivationDataset& train, const ActivationDataset& dev, const ProbeConfig& config = {});

// Argmax over class scores, ties to the lower class index.
std::vector<int> predict(const Probe& probe, const ActivationDataset& ds);
Metrics evaluate(const Probe& probe, const ActivationDataset& ds);
Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t num_classes);

double selectivity(double task_accuracy, double control_accuracy);
double selectivity(const Metrics& task, const Metrics& control);

// probe.json + weights.f32 (weights row-major, then bias; little-endian f32).
void save_probe(const Probe& probe, const std::filesystem::path& dir);
Probe load_probe(const std::filesystem::path& dir);

// Control tasks: each token type maps to one class, sampled from the
// empirical label distribution (or uniformly).
enum class ControlSampling { frequency, uniform };

struct ControlTask {
  std::map<std::string, int> mapping;
  std::uint64_t seed = 0;
  std::vector<double> distribution;
  ControlSampling sampling = ControlSampling::frequency;

  // Class for a token type; types missing from the mapping get a class drawn
  // from a stream keyed by (seed, text), so the result is order independent.
  int class_for(const std::string& text) const;
};

struct ControlResult {
  ControlTask task;
  ActivationDataset dataset;
};

ControlResult make_control_labels(const ActivationDataset& ds, std::uint64_t seed,
                                  ControlSampling sampling = ControlSampling::frequency);
ActivationDataset apply_control(const ControlTask& task, const ActivationDataset& ds);

}  // namespace nlens
