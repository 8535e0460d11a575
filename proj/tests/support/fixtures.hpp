#pragma once

#include "nlens/dataset.hpp"
#include "nlens/rng.hpp"
#include "nlens/synth.hpp"

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

namespace nlens::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("nlens-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::string> class_names(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("T" + std::to_string(i));
  return out;
}

// Gaussian activations, labels round-robin, texts "w<i % vocab>".
inline ActivationDataset random_dataset(std::size_t items, int layers, int hidden, int classes, std::uint64_t seed,
                                        std::size_t vocab = 0) {
  Rng rng(seed);
  ActivationMatrix x(static_cast<Eigen::Index>(items), static_cast<Eigen::Index>(layers) * hidden);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = static_cast<float>(rng.normal());
  std::vector<Item> rows(items);
  for (std::size_t i = 0; i < items; ++i)
    rows[i] = {"w" + std::to_string(vocab ? i % vocab : i), static_cast<int>(i % static_cast<std::size_t>(classes))};
  return ActivationDataset(std::move(rows), class_names(classes), ItemKind::token, layers, hidden, std::move(x));
}

// Bayes-optimal rule for the planted model: equal priors and unit isotropic
// noise on the informative coordinates, so the nearest class mean wins.
inline double nearest_mean_accuracy(const ActivationDataset& ds, const synth::GroundTruth& truth) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.num_items(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (std::size_t t = 0; t < truth.class_means.size(); ++t) {
      double d = 0.0;
      for (std::size_t k = 0; k < truth.informative.size(); ++k) {
        const double v = ds.activations()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(truth.informative[k]));
        d += (v - truth.class_means[t][k]) * (v - truth.class_means[t][k]);
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(t);
      }
    }
    correct += best == ds.items()[i].label;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.num_items());
}

}  // namespace nlens::testing
