#include "nlens/error.hpp"
#include "nlens/redundancy.hpp"

#include <cmath>

namespace nlens {

namespace {

Eigen::MatrixXd centered(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  out.rowwise() -= m.colwise().mean();
  return out;
}

struct CenteredLayer {
  Eigen::MatrixXd values;
  double gram_norm = 0.0;  // |X^T X|_F
};

CenteredLayer prepare(const Eigen::MatrixXd& m) {
  CenteredLayer layer{centered(m), 0.0};
  if (layer.values.squaredNorm() == 0.0) throw InvalidArgument("degenerate representation: all zero after centering");
  Eigen::MatrixXd gram = layer.values.transpose() * layer.values;
  layer.gram_norm = gram.norm();
  return layer;
}

double cka_prepared(const CenteredLayer& x, const CenteredLayer& y) {
  const Eigen::MatrixXd cross = y.values.transpose() * x.values;
  return cross.squaredNorm() / (x.gram_norm * y.gram_norm);
}

}  // namespace

double cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) throw InvalidArgument("cka: representations must share the row count");
  if (x.rows() < 2) throw InvalidArgument("cka: needs at least 2 rows");
  return cka_prepared(prepare(x), prepare(y));
}

CkaMap layer_cka_map(const ActivationDataset& ds, std::size_t sample_n, std::uint64_t seed, unsigned jobs) {
  if (sample_n < 1) throw InvalidArgument("cka sample size must be positive");
  const std::size_t n = std::min(sample_n, ds.num_items());
  const ActivationDataset sample = n == ds.num_items() ? ds : sample_items(ds, n, seed);

  CkaMap map;
  map.sample_size = n;
  map.seed = seed;
  for (int l = 0; l < ds.num_layers(); ++l)
    if (!layer_neuron_ids(ds, l, l).empty()) map.layers.push_back(l);

  std::vector<CenteredLayer> prepared(map.layers.size());
  parallel_for(map.layers.size(), jobs, [&](std::size_t i) {
    const int l = map.layers[i];
    prepared[i] = prepare(select_layers(sample, l, l).activations().cast<double>());
  });

  const auto count = static_cast<Eigen::Index>(map.layers.size());
  map.values = Eigen::MatrixXd::Zero(count, count);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  for (Eigen::Index a = 0; a < count; ++a)
    for (Eigen::Index b = a; b < count; ++b) pairs.emplace_back(a, b);
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    const auto [a, b] = pairs[i];
    const double v = cka_prepared(prepared[static_cast<std::size_t>(a)], prepared[static_cast<std::size_t>(b)]);
    map.values(a, b) = v;
    map.values(b, a) = v;
  });
  return map;
}

}  // namespace nlens
