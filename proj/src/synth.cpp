#include "nlens/synth.hpp"

#include "nlens/error.hpp"
#include "nlens/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace nlens::synth {

namespace {

enum Salt : std::uint64_t {
  kSaltStructure = 1,
  kSaltLabels = 2,
  kSaltNoise = 3,
  kSaltTypeVector = 4,
  kSaltLeak = 5,
  kSaltTestLabels = 6,
  kSaltTestNoise = 7,
};

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

struct DuplicateCopy {
  Eigen::Index column;
  double scale;
  double shift;
};

struct DuplicatePlan {
  Eigen::Index base;
  std::vector<DuplicateCopy> copies;
};

struct Structure {
  std::vector<Eigen::Index> informative;
  std::vector<std::vector<double>> class_means;  // [class][informative index]
  std::vector<DuplicatePlan> duplicates;
  std::vector<Eigen::MatrixXd> rotations;  // per layer, empty when unused
  std::vector<bool> is_informative;
};

std::vector<std::vector<int>> draw_codewords(int classes, int bits, Rng& rng) {
  const int want = std::max(1, bits / 3);
  std::vector<std::vector<int>> best;
  int best_score = -1;
  for (int attempt = 0; attempt < 2000; ++attempt) {
    std::vector<std::vector<int>> code(static_cast<std::size_t>(classes), std::vector<int>(static_cast<std::size_t>(bits)));
    for (auto& row : code)
      for (auto& bit : row) bit = rng.below(2) ? 1 : -1;
    // Every column must separate some classes, and no two columns may carry
    // the same split (they would be strongly correlated).
    bool columns_ok = true;
    std::set<std::vector<int>> seen;
    for (int i = 0; i < bits && columns_ok; ++i) {
      std::vector<int> col;
      for (int t = 0; t < classes; ++t) col.push_back(code[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]);
      if (col[0] < 0)
        for (auto& v : col) v = -v;
      const bool mixed = std::any_of(col.begin(), col.end(), [](int v) { return v < 0; });
      if (classes > 1 && !mixed) columns_ok = false;
      if (!seen.insert(col).second && bits <= (1 << std::min(classes - 1, 20))) columns_ok = false;
    }
    if (!columns_ok && classes > 1) continue;
    int min_hamming = bits;
    for (int a = 0; a < classes; ++a)
      for (int b = a + 1; b < classes; ++b) {
        int h = 0;
        for (int i = 0; i < bits; ++i) h += code[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] != code[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)];
        min_hamming = std::min(min_hamming, h);
      }
    if (min_hamming > best_score) {
      best_score = min_hamming;
      best = code;
    }
    if (min_hamming >= want) break;
  }
  if (best.empty()) throw DataError("could not draw class codewords for the informative neurons");
  return best;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index n, Rng& rng) {
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

Structure plan_structure(const SynthSpec& spec) {
  Rng rng(derive_seed(spec.seed, kSaltStructure));
  const Eigen::Index h = spec.hidden_size;
  const Eigen::Index n = static_cast<Eigen::Index>(spec.num_layers) * h;
  Structure s;
  s.is_informative.assign(static_cast<std::size_t>(n), false);

  std::vector<Eigen::Index> informative_pool;
  for (int l : spec.informative_layers)
    for (Eigen::Index o = 0; o < h; ++o) informative_pool.push_back(l * h + o);
  rng.shuffle(informative_pool);
  s.informative.assign(informative_pool.begin(), informative_pool.begin() + spec.informative);
  std::sort(s.informative.begin(), s.informative.end());
  for (auto j : s.informative) s.is_informative[static_cast<std::size_t>(j)] = true;

  const auto code = draw_codewords(spec.num_classes, spec.informative, rng);
  s.class_means.assign(static_cast<std::size_t>(spec.num_classes), std::vector<double>(static_cast<std::size_t>(spec.informative)));
  for (std::size_t t = 0; t < s.class_means.size(); ++t)
    for (std::size_t i = 0; i < s.class_means[t].size(); ++i) s.class_means[t][i] = 0.5 * spec.effect_size * code[t][i];

  std::vector<Eigen::Index> duplicate_pool;
  for (int l = 0; l < spec.num_layers; ++l) {
    if (spec.layer_plan(l).kind != LayerKind::fresh) continue;
    for (Eigen::Index o = 0; o < h; ++o)
      if (!s.is_informative[static_cast<std::size_t>(l * h + o)]) duplicate_pool.push_back(l * h + o);
  }
  const std::size_t needed = static_cast<std::size_t>(spec.duplicate_groups) * static_cast<std::size_t>(spec.duplicate_size);
  if (needed > duplicate_pool.size()) throw InvalidArgument("not enough fresh neurons for the duplicate groups");
  rng.shuffle(duplicate_pool);
  for (int g = 0; g < spec.duplicate_groups; ++g) {
    std::vector<Eigen::Index> members(duplicate_pool.begin() + g * spec.duplicate_size,
                                      duplicate_pool.begin() + (g + 1) * spec.duplicate_size);
    std::sort(members.begin(), members.end());
    DuplicatePlan plan{members.front(), {}};
    for (std::size_t m = 1; m < members.size(); ++m) {
      const double magnitude = 0.5 + 1.5 * rng.uniform();
      const double scale = rng.below(2) ? magnitude : -magnitude;
      const double shift = 2.0 * rng.uniform() - 1.0;
      plan.copies.push_back({members[m], scale, shift});
    }
    s.duplicates.push_back(std::move(plan));
  }

  s.rotations.resize(static_cast<std::size_t>(spec.num_layers));
  for (int l = 0; l < spec.num_layers; ++l)
    if (spec.layer_plan(l).kind == LayerKind::rotation) s.rotations[static_cast<std::size_t>(l)] = random_orthogonal(h, rng);
  return s;
}

Eigen::VectorXd type_vector(const SynthSpec& spec, int type_id) {
  const Eigen::Index n = static_cast<Eigen::Index>(spec.num_layers) * spec.hidden_size;
  Eigen::VectorXd v(n);
  Rng rng(derive_seed(spec.seed, kSaltTypeVector * 0x100000000ULL + static_cast<std::uint64_t>(type_id)));
  for (Eigen::Index j = 0; j < n; ++j) v(j) = rng.normal();
  return v;
}

using TypeOffsets = std::map<int, Eigen::VectorXd>;

// Each cohort is one class's share of the vocabulary. Offsets are centred
// within the cohort so that the type offsets average out per class and carry
// token identity only, never the label.
TypeOffsets type_offsets(const SynthSpec& spec, const std::vector<std::vector<int>>& cohorts) {
  TypeOffsets out;
  if (spec.type_effect <= 0.0) return out;
  for (const auto& cohort : cohorts) {
    if (cohort.empty()) continue;
    std::vector<Eigen::VectorXd> raw;
    for (int type : cohort) raw.push_back(type_vector(spec, type));
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(raw.front().size());
    for (const auto& v : raw) mean += v;
    mean /= static_cast<double>(raw.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) out[cohort[i]] = raw[i] - mean;
  }
  return out;
}

std::vector<std::vector<int>> class_cohorts(const SynthSpec& spec) {
  std::vector<std::vector<int>> cohorts(static_cast<std::size_t>(spec.num_classes));
  for (int t = 0; t < spec.num_classes; ++t)
    for (int k = 0; k < spec.types_per_class; ++k) cohorts[static_cast<std::size_t>(t)].push_back(t * spec.types_per_class + k);
  return cohorts;
}

ActivationDataset render(const SynthSpec& spec, const Structure& s, const std::vector<int>& classes,
                         const std::vector<int>& types, const TypeOffsets& offsets, std::uint64_t noise_seed) {
  const Eigen::Index h = spec.hidden_size;
  const Eigen::Index n = static_cast<Eigen::Index>(spec.num_layers) * h;
  const auto rows = static_cast<Eigen::Index>(classes.size());
  Eigen::MatrixXd x(rows, n);
  Rng rng(noise_seed);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < n; ++j) x(i, j) = rng.normal();

  if (spec.type_effect > 0.0) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      const auto it = offsets.find(types[static_cast<std::size_t>(i)]);
      if (it == offsets.end()) throw Error("synth: token type without an offset");
      for (int l = 0; l < spec.num_layers; ++l) {
        if (spec.layer_plan(l).kind != LayerKind::fresh) continue;
        for (Eigen::Index o = 0; o < h; ++o) {
          const Eigen::Index j = l * h + o;
          if (!s.is_informative[static_cast<std::size_t>(j)]) x(i, j) += spec.type_effect * it->second(j);
        }
      }
    }
  }

  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& means = s.class_means[static_cast<std::size_t>(classes[static_cast<std::size_t>(i)])];
    for (std::size_t k = 0; k < s.informative.size(); ++k) x(i, s.informative[k]) += means[k];
  }

  const double eps = spec.exact_duplicates ? 0.0 : spec.duplicate_noise;
  for (const auto& plan : s.duplicates)
    for (const auto& copy : plan.copies)
      for (Eigen::Index i = 0; i < rows; ++i)
        x(i, copy.column) = copy.scale * x(i, plan.base) + copy.shift + eps * x(i, copy.column);

  for (int l = 0; l < spec.num_layers; ++l) {
    const auto plan = spec.layer_plan(l);
    if (plan.kind != LayerKind::rotation) continue;
    x.middleCols(l * h, h) = x.middleCols(plan.source * h, h) * s.rotations[static_cast<std::size_t>(l)];
  }

  std::vector<std::string> labels;
  for (int t = 0; t < spec.num_classes; ++t) labels.push_back("C" + std::to_string(t));
  std::vector<Item> items(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) items[i] = {"tok_" + std::to_string(types[i]), classes[i]};
  DatasetMeta meta{"synthbench", "planted", static_cast<std::int64_t>(spec.seed)};
  return ActivationDataset(std::move(items), std::move(labels), ItemKind::token, spec.num_layers, spec.hidden_size,
                           x.cast<float>(), std::move(meta));
}

std::vector<int> balanced_classes(std::size_t count, int num_classes, Rng& rng) {
  std::vector<int> classes(count);
  for (std::size_t i = 0; i < count; ++i) classes[i] = static_cast<int>(i % static_cast<std::size_t>(num_classes));
  rng.shuffle(classes);
  return classes;
}

double eta_squared(const ActivationDataset& ds, Eigen::Index column) {
  const auto counts = ds.class_counts();
  std::vector<double> sums(counts.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < ds.num_items(); ++i) {
    const double v = ds.activations()(static_cast<Eigen::Index>(i), column);
    sums[static_cast<std::size_t>(ds.items()[i].label)] += v;
    total += v;
  }
  const double mean = total / static_cast<double>(ds.num_items());
  double ss_total = 0.0;
  for (std::size_t i = 0; i < ds.num_items(); ++i) {
    const double d = ds.activations()(static_cast<Eigen::Index>(i), column) - mean;
    ss_total += d * d;
  }
  double ss_between = 0.0;
  for (std::size_t t = 0; t < counts.size(); ++t) {
    if (!counts[t]) continue;
    const double d = sums[t] / static_cast<double>(counts[t]) - mean;
    ss_between += static_cast<double>(counts[t]) * d * d;
  }
  return ss_total > 0.0 ? ss_between / ss_total : 0.0;
}

double abs_corr(const ActivationDataset& ds, Eigen::Index a, Eigen::Index b) {
  const auto x = ds.activations().col(a).cast<double>();
  const auto y = ds.activations().col(b).cast<double>();
  const double mx = x.mean();
  const double my = y.mean();
  const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
  const double sxx = (x.array() - mx).square().sum();
  const double syy = (y.array() - my).square().sum();
  return sxx > 0 && syy > 0 ? std::abs(sxy / std::sqrt(sxx * syy)) : 0.0;
}

GroundTruth describe(const SynthSpec& spec, const Structure& s) {
  GroundTruth truth;
  truth.informative.assign(s.informative.begin(), s.informative.end());
  for (const auto& plan : s.duplicates) {
    std::vector<NeuronId> group{plan.base};
    for (const auto& c : plan.copies) group.push_back(c.column);
    std::sort(group.begin(), group.end());
    truth.duplicate_groups.push_back(std::move(group));
  }
  for (int l = 0; l < spec.num_layers; ++l) {
    const auto plan = spec.layer_plan(l);
    if (plan.kind == LayerKind::fresh) truth.layer_provenance.push_back("fresh");
    else if (plan.kind == LayerKind::noise) truth.layer_provenance.push_back("noise");
    else truth.layer_provenance.push_back("rotation-of(" + std::to_string(plan.source) + ")");
  }
  truth.class_means = s.class_means;

  const auto classes = static_cast<std::size_t>(spec.num_classes);
  double union_error = 0.0;
  double nearest_error = 0.0;
  for (std::size_t a = 0; a < classes; ++a) {
    double worst = 0.0;
    for (std::size_t b = 0; b < classes; ++b) {
      if (a == b) continue;
      double d2 = 0.0;
      for (std::size_t i = 0; i < s.class_means[a].size(); ++i) {
        const double d = s.class_means[a][i] - s.class_means[b][i];
        d2 += d * d;
      }
      const double pairwise = normal_cdf(-0.5 * std::sqrt(d2));
      union_error += pairwise;
      worst = std::max(worst, pairwise);
    }
    nearest_error += worst;
  }
  truth.bayes_accuracy_lower = std::max(0.0, 1.0 - union_error / static_cast<double>(classes));
  truth.bayes_accuracy_upper = 1.0 - nearest_error / static_cast<double>(classes);
  return truth;
}

void run_self_check(const SynthSpec& spec, const Structure& s, const ActivationDataset& ds, GroundTruth& truth) {
  SelfCheck check;
  for (const auto& plan : s.duplicates)
    for (const auto& copy : plan.copies)
      check.min_duplicate_abs_corr = std::min(check.min_duplicate_abs_corr, abs_corr(ds, plan.base, copy.column));

  double min_mi = std::numeric_limits<double>::infinity();
  for (auto j : s.informative) {
    const double e = eta_squared(ds, j);
    check.min_informative_eta2 = std::min(check.min_informative_eta2, e);
    min_mi = std::min(min_mi, -0.5 * std::log(std::max(1e-300, 1.0 - e)));
  }
  check.min_informative_mutual_information = s.informative.empty() ? 0.0 : min_mi;

  const Eigen::Index h = spec.hidden_size;
  for (int l = 0; l < spec.num_layers; ++l) {
    if (spec.layer_plan(l).kind == LayerKind::rotation) continue;
    for (Eigen::Index o = 0; o < h; ++o) {
      const Eigen::Index j = l * h + o;
      if (!s.is_informative[static_cast<std::size_t>(j)]) check.max_noise_eta2 = std::max(check.max_noise_eta2, eta_squared(ds, j));
    }
  }
  truth.self_check = check;

  if (!spec.exact_duplicates && spec.duplicate_noise <= 0.01 && check.min_duplicate_abs_corr < 0.99)
    throw DataError("synthbench self-check: duplicate group correlation below 0.99");
  if (!s.informative.empty() && !(check.min_informative_mutual_information > 0.0))
    throw DataError("synthbench self-check: an informative neuron carries no label information");
  const double noise_limit =
      std::max(0.01, 20.0 * static_cast<double>(spec.num_classes - 1) / static_cast<double>(ds.num_items()));
  if (spec.type_effect == 0.0 && check.max_noise_eta2 > noise_limit)
    throw DataError("synthbench self-check: a non-informative neuron correlates with the label");
}

}  // namespace

LayerPlan SynthSpec::layer_plan(int layer) const {
  if (layers.empty()) return {};
  return layers.at(static_cast<std::size_t>(layer));
}

void SynthSpec::validate() const {
  if (num_layers < 1 || hidden_size < 1) throw InvalidArgument("synth: num_layers and hidden_size must be positive");
  if (num_classes < 1) throw InvalidArgument("synth: need at least one class");
  if (num_items < static_cast<std::size_t>(num_classes)) throw InvalidArgument("synth: fewer items than classes");
  if (informative < 0 || duplicate_groups < 0 || duplicate_size < 0) throw InvalidArgument("synth: negative counts");
  if (!(effect_size > 0.0)) throw InvalidArgument("synth: effect size must be positive");
  if (types_per_class < 1) throw InvalidArgument("synth: types_per_class must be positive");
  if (duplicate_groups > 0 && duplicate_size < 2) throw InvalidArgument("synth: duplicate groups need at least 2 members");
  const std::int64_t n = static_cast<std::int64_t>(num_layers) * hidden_size;
  if (static_cast<std::int64_t>(informative) + static_cast<std::int64_t>(duplicate_groups) * duplicate_size > n)
    throw InvalidArgument("synth: informative + duplicate neurons exceed the neuron count");
  if (!layers.empty() && static_cast<int>(layers.size()) != num_layers)
    throw InvalidArgument("synth: layer plan length does not match num_layers");
  for (int l = 0; l < num_layers; ++l) {
    const auto plan = layer_plan(l);
    if (plan.kind == LayerKind::rotation && (plan.source < 0 || plan.source >= l))
      throw InvalidArgument("synth: rotation layer must rotate an earlier layer");
  }
  std::set<int> info_layers(informative_layers.begin(), informative_layers.end());
  if (informative > 0) {
    if (info_layers.empty()) throw InvalidArgument("synth: no layers designated for informative neurons");
    for (int l : info_layers) {
      if (l < 0 || l >= num_layers) throw InvalidArgument("synth: informative layer out of range");
      if (layer_plan(l).kind != LayerKind::fresh) throw InvalidArgument("synth: informative neurons need a fresh layer");
    }
    if (static_cast<std::int64_t>(info_layers.size()) * hidden_size < informative)
      throw InvalidArgument("synth: informative count exceeds the designated layers");
  }
}

Generated generate(const SynthSpec& spec) {
  spec.validate();
  const Structure s = plan_structure(spec);
  Rng label_rng(derive_seed(spec.seed, kSaltLabels));
  const auto classes = balanced_classes(spec.num_items, spec.num_classes, label_rng);
  std::vector<int> types(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i)
    types[i] = classes[i] * spec.types_per_class + static_cast<int>(label_rng.below(static_cast<std::uint64_t>(spec.types_per_class)));

  auto ds = render(spec, s, classes, types, type_offsets(spec, class_cohorts(spec)), derive_seed(spec.seed, kSaltNoise));
  GroundTruth truth = describe(spec, s);
  for (std::size_t i = 0; i < classes.size(); ++i) truth.type_labels["tok_" + std::to_string(types[i])] = classes[i];
  run_self_check(spec, s, ds, truth);
  return {std::move(ds), std::move(truth)};
}

LeakyPair make_leaky_pair(const SynthSpec& spec, double leak) {
  spec.validate();
  if (!(leak >= 0.0 && leak <= 1.0)) throw InvalidArgument("leak fraction must lie in [0, 1]");
  if (spec.num_test_items < static_cast<std::size_t>(spec.num_classes)) throw InvalidArgument("synth: test split too small");
  const Structure s = plan_structure(spec);
  const int tpc = spec.types_per_class;

  Rng label_rng(derive_seed(spec.seed, kSaltLabels));
  const auto train_classes = balanced_classes(spec.num_items, spec.num_classes, label_rng);
  std::vector<int> train_types(train_classes.size());
  for (std::size_t i = 0; i < train_classes.size(); ++i)
    train_types[i] = train_classes[i] * tpc + static_cast<int>(label_rng.below(static_cast<std::uint64_t>(tpc)));

  // Per class, round(leak * tpc) test types are reused train types.
  Rng leak_rng(derive_seed(spec.seed, kSaltLeak));
  const int reused = static_cast<int>(std::lround(leak * tpc));
  int next_fresh = spec.num_classes * tpc;
  std::vector<std::vector<int>> test_vocab(static_cast<std::size_t>(spec.num_classes));
  auto cohorts = class_cohorts(spec);
  for (int t = 0; t < spec.num_classes; ++t) {
    std::vector<int> pool(static_cast<std::size_t>(tpc));
    std::iota(pool.begin(), pool.end(), t * tpc);
    leak_rng.shuffle(pool);
    auto& vocab = test_vocab[static_cast<std::size_t>(t)];
    vocab.assign(pool.begin(), pool.begin() + reused);
    std::vector<int> fresh;
    for (int f = reused; f < tpc; ++f) fresh.push_back(next_fresh++);
    vocab.insert(vocab.end(), fresh.begin(), fresh.end());
    cohorts.push_back(std::move(fresh));
  }
  const TypeOffsets offsets = type_offsets(spec, cohorts);
  Rng test_label_rng(derive_seed(spec.seed, kSaltTestLabels));
  const auto test_classes = balanced_classes(spec.num_test_items, spec.num_classes, test_label_rng);
  std::vector<int> test_types(test_classes.size());
  for (std::size_t i = 0; i < test_classes.size(); ++i) {
    const auto& vocab = test_vocab[static_cast<std::size_t>(test_classes[i])];
    test_types[i] = vocab[test_label_rng.below(vocab.size())];
  }

  auto train = render(spec, s, train_classes, train_types, offsets, derive_seed(spec.seed, kSaltNoise));
  auto test = render(spec, s, test_classes, test_types, offsets, derive_seed(spec.seed, kSaltTestNoise));
  GroundTruth truth = describe(spec, s);
  for (std::size_t i = 0; i < train_classes.size(); ++i) truth.type_labels["tok_" + std::to_string(train_types[i])] = train_classes[i];
  for (std::size_t i = 0; i < test_classes.size(); ++i) truth.type_labels["tok_" + std::to_string(test_types[i])] = test_classes[i];
  run_self_check(spec, s, train, truth);
  return {std::move(train), std::move(test), std::move(truth)};
}

SynthSpec leakage_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.type_effect = 1.5;
  spec.seed = seed;
  return spec;
}

RecoveryScore score_ids(const std::vector<NeuronId>& top, const std::vector<NeuronId>& truth) {
  const std::set<NeuronId> wanted(truth.begin(), truth.end());
  RecoveryScore score;
  score.k = top.size();
  for (NeuronId id : top) score.hits += wanted.count(id);
  if (!top.empty()) score.precision = static_cast<double>(score.hits) / static_cast<double>(top.size());
  if (!wanted.empty()) score.recall = static_cast<double>(score.hits) / static_cast<double>(wanted.size());
  return score;
}

RecoveryScore score_ranking(const NeuronRanking& ranking, const GroundTruth& truth, std::size_t k) {
  if (k < 1) throw InvalidArgument("k must be at least 1");
  return score_ids(top_k(ranking, std::min(k, ranking.feature_ids.size())), truth.informative);
}

}  // namespace nlens::synth
