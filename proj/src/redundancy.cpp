#include "nlens/redundancy.hpp"

#include "nlens/error.hpp"
#include "nlens/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace nlens {

namespace {

using MatrixXdR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr Eigen::Index kRowChunk = 2048;

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

double correlation_distance(double corr) { return 1.0 - std::abs(corr); }

CorrelationMatrix correlation_matrix(const ActivationDataset& ds) {
  if (ds.num_items() < 2) throw InvalidArgument("correlation needs at least 2 items");
  const auto& x = ds.activations();
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();

  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(p);
  for (Eigen::Index start = 0; start < n; start += kRowChunk) {
    const Eigen::Index len = std::min(kRowChunk, n - start);
    mean += x.middleRows(start, len).cast<double>().colwise().sum();
  }
  mean /= static_cast<double>(n);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index start = 0; start < n; start += kRowChunk) {
    const Eigen::Index len = std::min(kRowChunk, n - start);
    MatrixXdR block = x.middleRows(start, len).cast<double>();
    block.rowwise() -= mean;
    cov.selfadjointView<Eigen::Lower>().rankUpdate(block.transpose());
  }
  cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();

  std::vector<bool> constant(static_cast<std::size_t>(p), false);
  for (Eigen::Index j = 0; j < p; ++j) {
    const float first = x(0, j);
    bool same = true;
    for (Eigen::Index i = 1; i < n && same; ++i) same = x(i, j) == first;
    constant[static_cast<std::size_t>(j)] = same || !(cov(j, j) > 0.0);
  }

  CorrelationMatrix out{Eigen::MatrixXd::Zero(p, p), ds.neuron_ids()};
  Eigen::VectorXd inv_sd(p);
  for (Eigen::Index j = 0; j < p; ++j) inv_sd(j) = constant[static_cast<std::size_t>(j)] ? 0.0 : 1.0 / std::sqrt(cov(j, j));
  for (Eigen::Index a = 0; a < p; ++a) {
    for (Eigen::Index b = 0; b < a; ++b) {
      const double r = std::clamp(cov(a, b) * inv_sd(a) * inv_sd(b), -1.0, 1.0);
      out.values(a, b) = r;
      out.values(b, a) = r;
    }
    out.values(a, a) = 1.0;
  }
  return out;
}

Dendrogram build_dendrogram(const CorrelationMatrix& corr) {
  const Eigen::Index p = corr.values.rows();
  if (corr.values.cols() != p || static_cast<std::size_t>(p) != corr.ids.size())
    throw InvalidArgument("correlation matrix must be square and match its id list");
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < a; ++b)
      if (!std::isfinite(corr.values(a, b)) || std::abs(corr.values(a, b) - corr.values(b, a)) > 1e-9)
        throw InvalidArgument("correlation matrix is not symmetric");

  const auto n = static_cast<std::size_t>(p);
  Eigen::MatrixXd dist(p, p);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b) dist(a, b) = a == b ? 0.0 : correlation_distance(corr.values(a, b));

  Dendrogram dendro;
  dendro.ids = corr.ids;
  if (n < 2) return dendro;

  std::vector<double> size(n, 1.0);
  std::vector<bool> active(n, true);
  std::vector<std::size_t> chain;
  std::size_t remaining = n;
  while (remaining > 1) {
    if (chain.empty()) {
      for (std::size_t i = 0; i < n; ++i)
        if (active[i]) {
          chain.push_back(i);
          break;
        }
    }
    const std::size_t a = chain.back();
    const std::size_t prev = chain.size() >= 2 ? chain[chain.size() - 2] : n;
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    if (prev != n) {
      best = prev;
      best_d = dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(prev));
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a) continue;
      const double d = dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k));
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best != prev) {
      chain.push_back(best);
      continue;
    }
    chain.pop_back();
    chain.pop_back();
    const std::size_t keep = std::min(a, best);
    const std::size_t drop = std::max(a, best);
    dendro.merges.push_back({keep, drop, best_d});
    const double sk = size[keep];
    const double sd = size[drop];
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == keep || k == drop) continue;
      const auto ki = static_cast<Eigen::Index>(k);
      const double d = (sk * dist(static_cast<Eigen::Index>(keep), ki) + sd * dist(static_cast<Eigen::Index>(drop), ki)) /
                       (sk + sd);
      dist(static_cast<Eigen::Index>(keep), ki) = d;
      dist(ki, static_cast<Eigen::Index>(keep)) = d;
    }
    size[keep] = sk + sd;
    active[drop] = false;
    --remaining;
  }
  return dendro;
}

ClusterModel cut_dendrogram(const Dendrogram& dendrogram, double c, std::uint64_t seed) {
  if (!(c > 0.0 && c <= 1.0)) throw InvalidArgument("clustering threshold must lie in (0, 1]");
  const std::size_t n = dendrogram.ids.size();
  DisjointSet sets(n);
  // Average linkage has no inversions, so the merges below the cut form
  // complete subtrees and can be applied in any order.
  for (const auto& m : dendrogram.merges)
    if (m.height <= c) sets.unite(m.left, m.right);

  std::vector<std::vector<NeuronId>> groups(n);
  for (std::size_t i = 0; i < n; ++i) groups[sets.find(i)].push_back(dendrogram.ids[i]);

  ClusterModel model;
  model.threshold = c;
  model.seed = seed;
  for (auto& g : groups) {
    if (g.empty()) continue;
    std::sort(g.begin(), g.end());
    model.clusters.push_back(std::move(g));
  }
  std::sort(model.clusters.begin(), model.clusters.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  Rng rng(seed);
  for (const auto& cluster : model.clusters) model.representatives.push_back(cluster[rng.below(cluster.size())]);
  return model;
}

ClusterModel cluster_neurons(const CorrelationMatrix& corr, double c, std::uint64_t seed) {
  if (!(c > 0.0 && c <= 1.0)) throw InvalidArgument("clustering threshold must lie in (0, 1]");
  return cut_dendrogram(build_dendrogram(corr), c, seed);
}

CcResult cc_reduce(const ActivationDataset& train, const ActivationDataset& dev, const ActivationDataset& test,
                   const std::vector<double>& grid, const AnalysisConfig& config) {
  if (grid.empty()) throw InvalidArgument("clustering threshold grid is empty");
  for (double c : grid)
    if (!(c > 0.0 && c <= 1.0)) throw InvalidArgument("clustering thresholds must lie in (0, 1]");

  CcResult result;
  result.oracle_score = resolve_oracle(train, dev, test, config);
  const Dendrogram dendro = build_dendrogram(correlation_matrix(train));

  std::vector<ClusterModel> models(grid.size());
  result.reports.resize(grid.size());
  parallel_for(grid.size(), config.jobs, [&](std::size_t g) {
    models[g] = cut_dendrogram(dendro, grid[g], config.cluster_seed);
    const auto fit = fit_on(train, dev, test, models[g].representatives, config);
    auto report = make_report("CC", models[g].representatives, train.full_neuron_count(), fit.score,
                              result.oracle_score, config.metric);
    report.threshold = grid[g];
    result.reports[g] = std::move(report);
  });

  std::optional<std::size_t> chosen;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto& r = result.reports[g];
    if (!within_tolerance(r.score, result.oracle_score, config.delta)) continue;
    if (!chosen || r.neuron_count < result.reports[*chosen].neuron_count ||
        (r.neuron_count == result.reports[*chosen].neuron_count && grid[g] < grid[*chosen]))
      chosen = g;
  }
  if (chosen) {
    result.reports[*chosen].selected = true;
    result.chosen_threshold = grid[*chosen];
    result.chosen_model = models[*chosen];
  }
  return result;
}

const char* to_string(LayerwiseMode mode) { return mode == LayerwiseMode::independent ? "independent" : "incremental"; }

std::vector<AnalysisReport> layerwise(const ActivationDataset& train, const ActivationDataset& dev,
                                      const ActivationDataset& test, LayerwiseMode mode, const AnalysisConfig& config) {
  const double oracle = resolve_oracle(train, dev, test, config);
  std::vector<int> layers;
  for (int l = 0; l < train.num_layers(); ++l)
    if (!layer_neuron_ids(train, l, l).empty()) layers.push_back(l);

  std::vector<AnalysisReport> reports(layers.size());
  parallel_for(layers.size(), config.jobs, [&](std::size_t i) {
    const int l = layers[i];
    const int lo = mode == LayerwiseMode::independent ? l : 0;
    const auto ids = layer_neuron_ids(train, lo, l);
    const auto fit = fit_on(train, dev, test, ids, config);
    auto report = make_report("Layerwise", ids, train.full_neuron_count(), fit.score, oracle, config.metric);
    report.variant = to_string(mode);
    report.layers = std::make_pair(lo, l);
    reports[i] = std::move(report);
  });
  return reports;
}

MinimalSetResult minimal_neuron_set(const ActivationDataset& train, const ActivationDataset& dev,
                                    const ActivationDataset& test, const AnalysisConfig& config) {
  MinimalSetResult result;
  AnalysisConfig cfg = config;
  cfg.oracle_score = resolve_oracle(train, dev, test, config);
  result.oracle_score = *cfg.oracle_score;
  const double oracle = result.oracle_score;

  // Stage 1: lowest incremental prefix within delta.
  result.layer_reports = layerwise(train, dev, test, LayerwiseMode::incremental, cfg);
  int last_layer = train.num_layers() - 1;
  for (auto& r : result.layer_reports) {
    if (within_tolerance(r.score, oracle, cfg.delta)) {
      r.selected = true;
      result.selected_layer = r.layers->second;
      break;
    }
  }
  const int prefix_hi = result.selected_layer.value_or(last_layer);
  std::vector<NeuronId> surviving = layer_neuron_ids(train, 0, prefix_hi);
  const auto train_l = select_neurons(train, surviving);
  const auto dev_l = select_neurons(dev, surviving);
  const auto test_l = select_neurons(test, surviving);

  // Stage 2: correlation clustering on the prefix.
  auto cc = cc_reduce(train_l, dev_l, test_l, cfg.c_grid, cfg);
  for (auto& r : cc.reports) r.layers = std::make_pair(0, prefix_hi);
  result.cc_reports = cc.reports;
  if (cc.chosen_model) {
    result.selected_threshold = cc.chosen_threshold;
    surviving = cc.chosen_model->representatives;
    std::sort(surviving.begin(), surviving.end());
  }

  // Stage 3: LCA ranking of the survivors and a k sweep.
  const auto base = fit_on(train, dev, test, surviving, cfg);
  const auto ranking = lca_rank(base.probe);
  std::vector<std::size_t> grid;
  for (std::size_t k : cfg.k_grid)
    if (k >= 1 && k < surviving.size()) grid.push_back(k);
  grid.push_back(surviving.size());
  const auto tr = select_neurons(train, surviving);
  const auto dv = select_neurons(dev, surviving);
  const auto te = select_neurons(test, surviving);
  auto sweep = k_sweep(tr, dv, te, ranking, grid, cfg);
  for (auto& r : sweep.reports) {
    r.layers = std::make_pair(0, prefix_hi);
    r.total_neurons = train.full_neuron_count();
  }
  result.lca_reports = sweep.reports;

  AnalysisReport final_report;
  if (sweep.best_k) {
    result.selected_k = sweep.best_k;
    const auto it = std::find_if(sweep.reports.begin(), sweep.reports.end(), [](const auto& r) { return r.selected; });
    final_report = *it;
  } else {
    final_report = make_report("LS+CC+LCA", surviving, train.full_neuron_count(), base.score, oracle, cfg.metric);
  }
  final_report.method = "LS+CC+LCA";
  final_report.variant.clear();
  final_report.layers = std::make_pair(0, prefix_hi);
  final_report.threshold = result.selected_threshold;
  final_report.threshold_na = !result.selected_threshold.has_value();
  final_report.selected = true;

  if (!within_tolerance(final_report.score, oracle, cfg.delta)) {
    result.failed = true;
    final_report = make_report("LS+CC+LCA", train.neuron_ids(), train.full_neuron_count(), oracle, oracle, cfg.metric);
    final_report.layers = std::make_pair(0, last_layer);
    final_report.threshold_na = true;
    final_report.selected = true;
    result.selected_layer.reset();
    result.selected_threshold.reset();
    result.selected_k.reset();
  }
  result.neuron_ids = final_report.neuron_ids;
  result.final_report = std::move(final_report);
  return result;
}

}  // namespace nlens
