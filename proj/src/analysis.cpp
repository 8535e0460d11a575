#include "nlens/analysis.hpp"

#include "nlens/error.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace nlens {

std::vector<std::size_t> default_k_grid() {
  return {9, 19, 29, 49, 79, 99, 199, 299, 399, 499, 599, 999, 1999, 4999};
}

std::vector<double> default_c_grid() { return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}; }

bool within_tolerance(double score, double oracle_score, double delta) {
  return score >= oracle_score - delta - 1e-12;
}

FitResult fit_on(const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
                 std::vector<NeuronId> ids, const AnalysisConfig& config) {
  std::sort(ids.begin(), ids.end());
  FitResult result;
  if (ids == train.neuron_ids()) {
    result.probe = train_probe(train, dev, config.probe);
    result.test_metrics = evaluate(result.probe, test);
  } else {
    const auto tr = select_neurons(train, ids);
    const auto dv = select_neurons(dev, ids);
    result.probe = train_probe(tr, dv, config.probe);
    result.test_metrics = evaluate(result.probe, select_neurons(test, ids));
  }
  result.score = score_of(result.test_metrics, config.metric);
  return result;
}

FitResult fit_oracle(const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
                     const AnalysisConfig& config) {
  return fit_on(train, dev, test, train.neuron_ids(), config);
}

double resolve_oracle(const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
                      const AnalysisConfig& config) {
  if (config.oracle_score) return *config.oracle_score;
  return fit_oracle(train, dev, test, config).score;
}

AnalysisReport make_report(std::string method, const std::vector<NeuronId>& ids, std::int64_t total_neurons,
                           double score, double oracle_score, ScoreMetric metric) {
  AnalysisReport r;
  r.method = std::move(method);
  r.neuron_ids = ids;
  std::sort(r.neuron_ids.begin(), r.neuron_ids.end());
  r.neuron_count = ids.size();
  r.total_neurons = total_neurons;
  r.score = score;
  r.oracle_score = oracle_score;
  r.metric = metric;
  return r;
}

void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, jobs), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace nlens
