#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcnet/dataset.hpp"
#include "tcnet/features.hpp"
#include "tcnet/train.hpp"

namespace tcnet {

struct ForestConfig {
  std::size_t n_trees = 300;
  std::size_t max_depth = 20;
  bool balanced = true;  // class weights n_total / (n_classes * n_c)
  std::uint64_t seed = 0;
  std::size_t features_per_split = 0;  // 0 -> floor(sqrt(n_features))
  bool bootstrap = true;
};

// Array-encoded tree: feature < 0 marks a leaf carrying a normalized class
// distribution; internal nodes route x[feature] <= threshold to `left`.
struct DecisionTree {
  struct Node {
    std::int32_t feature = -1;
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::vector<double> leaf_dist;
  };
  std::vector<Node> nodes;

  const std::vector<double>& leaf_for(const double* row) const;
};

struct RandomForest {
  ForestConfig cfg;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  std::vector<DecisionTree> trees;
  // accumulated Gini impurity decrease per feature, normalized to sum 1
  std::vector<double> importance;
  // per-tree bootstrap membership (fit-time only, not serialized)
  std::vector<std::vector<bool>> inbag;
};

// Out-of-bag accuracy from the fit-time bootstrap record.
double oob_accuracy(const RandomForest& forest, const FeatureMatrix& features,
                    const std::vector<int>& labels);

RandomForest fit_forest(const FeatureMatrix& features, const std::vector<int>& labels,
                        const ForestConfig& cfg);

struct ForestPrediction {
  int label = 0;
  std::vector<double> probs;
};
ForestPrediction predict_forest(const RandomForest& forest, const double* row,
                                std::size_t n_features);
std::vector<int> predict_forest_batch(const RandomForest& forest, const FeatureMatrix& features);

// Gini importance summed inside each feature family, normalized to 1.
// Columns are laid out scale-major then channel-major: (scale, channel, d).
std::vector<std::pair<std::string, double>> family_importance(const RandomForest& forest,
                                                              const FamilyLayout& layout);

void save_forest(const RandomForest& forest, const std::string& path);
RandomForest load_forest(const std::string& path);

// RF-TSF representation: hard features per block, averaged over
// blocks within each scale, scales concatenated -> 2*C*D columns.
FeatureMatrix extract_rf_features(const WindowedDataset& data,
                                  const std::vector<std::size_t>& scales,
                                  const ExtractorParams& params);
// Family layout of a single (channel, scale) slice, matching the columns.
FamilyLayout rf_feature_layout(const ExtractorParams& params, std::size_t block_size);

}  // namespace tcnet
