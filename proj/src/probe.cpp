#include "nlens/probe.hpp"

#include "nlens/error.hpp"
#include "nlens/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nlens {

namespace {

using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr Eigen::Index kEvalChunk = 1024;

struct AdamState {
  Eigen::MatrixXd m_w, v_w;
  Eigen::VectorXd m_b, v_b;
  long step = 0;
};

// Row-wise softmax in place; returns nothing, rows sum to 1.
void softmax_rows(MatrixXdR& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double top = row.maxCoeff();
    row = (row.array() - top).exp();
    row /= row.sum();
  }
}

int argmax_lowest(const auto& row) {
  int best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c)
    if (row(c) > row(best)) best = static_cast<int>(c);
  return best;
}

std::vector<int> predict_matrix(const ActivationMatrix& x, const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index start = 0; start < x.rows(); start += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, x.rows() - start);
    MatrixXdR chunk = x.middleRows(start, len).cast<double>();
    MatrixXdR logits = chunk * w;
    logits.rowwise() += b.transpose();
    for (Eigen::Index i = 0; i < len; ++i) out[static_cast<std::size_t>(start + i)] = argmax_lowest(logits.row(i));
  }
  return out;
}

double accuracy_of(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

}  // namespace

void ProbeConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (l1_lambda < 0.0 || l2_lambda < 0.0) throw InvalidArgument("regularization strengths must be non-negative");
}

const char* to_string(ScoreMetric metric) { return metric == ScoreMetric::accuracy ? "accuracy" : "macro_f1"; }

ScoreMetric score_metric_from_string(const std::string& text) {
  if (text == "accuracy") return ScoreMetric::accuracy;
  if (text == "macro_f1" || text == "f1") return ScoreMetric::macro_f1;
  throw InvalidArgument("unknown score metric '" + text + "'");
}

double score_of(const Metrics& metrics, ScoreMetric metric) {
  return metric == ScoreMetric::accuracy ? metrics.accuracy : metrics.macro_f1;
}

Probe train_probe(const ActivationDataset& train, const ActivationDataset& dev, const ProbeConfig& config) {
  config.validate();
  if (train.labels() != dev.labels()) throw InvalidArgument("train and dev label vocabularies differ");
  if (train.neuron_ids() != dev.neuron_ids()) throw InvalidArgument("train and dev feature maps differ");
  if (train.num_features() == 0) throw InvalidArgument("cannot train a probe on zero features");
  if (train.num_items() == 0) throw InvalidArgument("cannot train a probe on an empty training set");
  if (train.num_classes() == 0) throw InvalidArgument("label vocabulary is empty");

  Probe probe;
  probe.config = config;
  probe.feature_ids = train.neuron_ids();
  probe.labels = train.labels();
  probe.num_layers = train.num_layers();
  probe.hidden_size = train.hidden_size();

  ActivationMatrix x_train;
  ActivationMatrix x_dev;
  if (config.standardize) {
    auto stats = compute_standardization(train);
    x_train = apply_standardization(stats, train).activations();
    x_dev = apply_standardization(stats, dev).activations();
    probe.input_stats = std::move(stats);
  } else {
    x_train = train.activations();
    x_dev = dev.activations();
  }

  const auto features = static_cast<Eigen::Index>(train.num_features());
  const auto classes = static_cast<Eigen::Index>(train.num_classes());
  const std::vector<int> y = train.label_indices();
  const std::vector<int> y_dev = dev.label_indices();

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(features, classes);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(classes);
  AdamState adam{Eigen::MatrixXd::Zero(features, classes), Eigen::MatrixXd::Zero(features, classes),
                 Eigen::VectorXd::Zero(classes), Eigen::VectorXd::Zero(classes), 0};

  Eigen::MatrixXd best_w;
  Eigen::VectorXd best_b;
  double best_dev = -1.0;

  std::vector<std::size_t> order(train.num_items());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(config.seed);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t len = std::min(batch, order.size() - start);
      MatrixXdR xb(static_cast<Eigen::Index>(len), features);
      for (std::size_t r = 0; r < len; ++r)
        xb.row(static_cast<Eigen::Index>(r)) = x_train.row(static_cast<Eigen::Index>(order[start + r])).cast<double>();

      MatrixXdR probs = xb * w;
      probs.rowwise() += b.transpose();
      softmax_rows(probs);
      for (std::size_t r = 0; r < len; ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        const int label = y[order[start + r]];
        loss_sum -= std::log(std::max(probs(ri, label), 1e-300));
        probs(ri, label) -= 1.0;
      }
      probs /= static_cast<double>(len);

      Eigen::MatrixXd grad_w = xb.transpose() * probs;
      grad_w.array() += config.l1_lambda * w.array().sign() + 2.0 * config.l2_lambda * w.array();
      Eigen::VectorXd grad_b = probs.colwise().sum().transpose();

      ++adam.step;
      const double correction1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.step));
      const double correction2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.step));
      const double step_size = config.learning_rate / correction1;
      const double sqrt_c2 = std::sqrt(correction2);

      adam.m_w = kAdamBeta1 * adam.m_w + (1.0 - kAdamBeta1) * grad_w;
      adam.v_w = kAdamBeta2 * adam.v_w + (1.0 - kAdamBeta2) * grad_w.cwiseProduct(grad_w);
      w.array() -= step_size * adam.m_w.array() / (adam.v_w.array().sqrt() / sqrt_c2 + kAdamEpsilon);

      adam.m_b = kAdamBeta1 * adam.m_b + (1.0 - kAdamBeta1) * grad_b;
      adam.v_b = kAdamBeta2 * adam.v_b + (1.0 - kAdamBeta2) * grad_b.cwiseProduct(grad_b);
      b.array() -= step_size * adam.m_b.array() / (adam.v_b.array().sqrt() / sqrt_c2 + kAdamEpsilon);
    }

    const double reg = config.l1_lambda * w.cwiseAbs().sum() + config.l2_lambda * w.squaredNorm();
    EpochRecord record;
    record.epoch = epoch + 1;
    record.train_loss = loss_sum / static_cast<double>(order.size()) + reg;
    record.dev_accuracy = dev.num_items() ? accuracy_of(y_dev, predict_matrix(x_dev, w, b)) : 0.0;
    probe.history.push_back(record);
    if (config.select_best_dev && record.dev_accuracy > best_dev) {
      best_dev = record.dev_accuracy;
      best_w = w;
      best_b = b;
    }
  }

  if (config.select_best_dev) {
    w = std::move(best_w);
    b = std::move(best_b);
  }
  probe.weights = w.cast<float>();
  probe.bias = b.cast<float>();
  if (dev.num_items()) probe.dev_metrics = evaluate(probe, dev);
  return probe;
}

std::vector<int> predict(const Probe& probe, const ActivationDataset& ds) {
  if (ds.neuron_ids() != probe.feature_ids) throw InvalidArgument("dataset features do not match the probe feature map");
  const Eigen::MatrixXd w = probe.weights.cast<double>();
  const Eigen::VectorXd b = probe.bias.cast<double>();
  if (probe.input_stats) return predict_matrix(apply_standardization(*probe.input_stats, ds).activations(), w, b);
  return predict_matrix(ds.activations(), w, b);
}

Metrics compute_metrics(const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t num_classes) {
  if (truth.size() != predicted.size()) throw InvalidArgument("truth and prediction lengths differ");
  Metrics m;
  m.count = truth.size();
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i)
    ++m.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  std::size_t diag = 0;
  for (std::size_t t = 0; t < num_classes; ++t) diag += m.confusion[t][t];
  m.accuracy = m.count ? static_cast<double>(diag) / static_cast<double>(m.count) : 0.0;
  m.precision.assign(num_classes, 0.0);
  m.recall.assign(num_classes, 0.0);
  m.f1.assign(num_classes, 0.0);
  std::size_t active = 0;
  double f1_sum = 0.0;
  for (std::size_t t = 0; t < num_classes; ++t) {
    std::size_t predicted_t = 0;
    std::size_t actual_t = 0;
    for (std::size_t s = 0; s < num_classes; ++s) {
      predicted_t += m.confusion[s][t];
      actual_t += m.confusion[t][s];
    }
    const auto tp = static_cast<double>(m.confusion[t][t]);
    if (predicted_t) m.precision[t] = tp / static_cast<double>(predicted_t);
    if (actual_t) m.recall[t] = tp / static_cast<double>(actual_t);
    if (m.precision[t] + m.recall[t] > 0.0)
      m.f1[t] = 2.0 * m.precision[t] * m.recall[t] / (m.precision[t] + m.recall[t]);
    // Classes absent from both truth and predictions do not enter the macro average.
    if (predicted_t + actual_t) {
      ++active;
      f1_sum += m.f1[t];
    }
  }
  if (active) m.macro_f1 = f1_sum / static_cast<double>(active);
  return m;
}

Metrics evaluate(const Probe& probe, const ActivationDataset& ds) {
  if (ds.labels() != probe.labels) throw InvalidArgument("dataset labels do not match the probe labels");
  return compute_metrics(ds.label_indices(), predict(probe, ds), probe.num_classes());
}

double selectivity(double task_accuracy, double control_accuracy) { return task_accuracy - control_accuracy; }

double selectivity(const Metrics& task, const Metrics& control) {
  if (task.count != control.count) throw InvalidArgument("selectivity needs metrics computed on the same items");
  return selectivity(task.accuracy, control.accuracy);
}

}  // namespace nlens
