#include "tcnet/forest.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "tcnet/model.hpp"

namespace tcnet {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct TreeBuilder {
  const FeatureMatrix& x;
  const std::vector<int>& y;
  const std::vector<double>& class_weight;
  std::size_t n_classes;
  std::size_t mtry;
  std::size_t max_depth;
  std::mt19937_64 rng;
  DecisionTree tree;
  std::vector<double>& importance;

  std::vector<double> weighted_dist(const std::vector<std::size_t>& idx) const {
    std::vector<double> dist(n_classes, 0.0);
    for (std::size_t i : idx) dist[std::size_t(y[i])] += class_weight[std::size_t(y[i])];
    double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    if (total > 0)
      for (auto& d : dist) d /= total;
    return dist;
  }

  std::int32_t make_leaf(const std::vector<std::size_t>& idx) {
    DecisionTree::Node node;
    node.leaf_dist = weighted_dist(idx);
    tree.nodes.push_back(std::move(node));
    return std::int32_t(tree.nodes.size() - 1);
  }

  std::int32_t build(std::vector<std::size_t>& idx, std::size_t depth) {
    bool pure = true;
    for (std::size_t i = 1; i < idx.size(); ++i)
      if (y[idx[i]] != y[idx[0]]) {
        pure = false;
        break;
      }
    if (pure || depth >= max_depth || idx.size() < 2) return make_leaf(idx);

    // per-node random feature subset
    std::vector<std::size_t> feats(x.cols);
    std::iota(feats.begin(), feats.end(), 0);
    for (std::size_t i = 0; i < mtry; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, feats.size() - 1);
      std::swap(feats[i], feats[pick(rng)]);
    }

    std::vector<double> parent_counts(n_classes, 0.0);
    for (std::size_t i : idx) parent_counts[std::size_t(y[i])] += class_weight[std::size_t(y[i])];
    double w_total = std::accumulate(parent_counts.begin(), parent_counts.end(), 0.0);
    double sumsq_parent = 0.0;
    for (double c : parent_counts) sumsq_parent += c * c;
    double parent_score = sumsq_parent / w_total;

    double best_gain = 1e-12;
    std::size_t best_feat = 0;
    double best_thr = 0.0;

    std::vector<std::pair<double, int>> vals;
    vals.reserve(idx.size());
    std::vector<double> left_counts(n_classes);
    for (std::size_t fi = 0; fi < mtry; ++fi) {
      std::size_t f = feats[fi];
      vals.clear();
      for (std::size_t i : idx) vals.emplace_back(x.row(i)[f], y[i]);
      std::sort(vals.begin(), vals.end());
      if (vals.front().first == vals.back().first) continue;
      std::fill(left_counts.begin(), left_counts.end(), 0.0);
      double w_left = 0.0, sumsq_left = 0.0;
      double sumsq_right = sumsq_parent;
      std::vector<double> right_counts = parent_counts;
      for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
        auto [v, label] = vals[i];
        double w = class_weight[std::size_t(label)];
        sumsq_left += w * (2.0 * left_counts[std::size_t(label)] + w);
        left_counts[std::size_t(label)] += w;
        sumsq_right -= w * (2.0 * right_counts[std::size_t(label)] - w);
        right_counts[std::size_t(label)] -= w;
        w_left += w;
        if (v == vals[i + 1].first) continue;  // thresholds only between distinct values
        double gain = sumsq_left / w_left + sumsq_right / (w_total - w_left) - parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feat = f;
          best_thr = 0.5 * (v + vals[i + 1].first);
        }
      }
    }
    if (best_gain <= 1e-12) return make_leaf(idx);

    importance[best_feat] += best_gain;
    std::vector<std::size_t> left_idx, right_idx;
    for (std::size_t i : idx)
      (x.row(i)[best_feat] <= best_thr ? left_idx : right_idx).push_back(i);
    if (left_idx.empty() || right_idx.empty()) return make_leaf(idx);

    DecisionTree::Node node;
    node.feature = std::int32_t(best_feat);
    node.threshold = best_thr;
    tree.nodes.push_back(node);
    std::size_t at = tree.nodes.size() - 1;
    std::int32_t left = build(left_idx, depth + 1);
    std::int32_t right = build(right_idx, depth + 1);
    tree.nodes[at].left = left;
    tree.nodes[at].right = right;
    return std::int32_t(at);
  }
};

}  // namespace

const std::vector<double>& DecisionTree::leaf_for(const double* row) const {
  std::size_t at = 0;
  while (nodes[at].feature >= 0)
    at = std::size_t(row[nodes[at].feature] <= nodes[at].threshold ? nodes[at].left
                                                                   : nodes[at].right);
  return nodes[at].leaf_dist;
}

RandomForest fit_forest(const FeatureMatrix& features, const std::vector<int>& labels,
                        const ForestConfig& cfg) {
  if (features.rows != labels.size() || features.rows == 0)
    throw std::invalid_argument("fit_forest: feature rows must match labels");
  if (cfg.n_trees < 1 || cfg.max_depth < 1)
    throw std::invalid_argument("fit_forest: n_trees and max_depth must be >= 1");
  int max_label = *std::max_element(labels.begin(), labels.end());
  int min_label = *std::min_element(labels.begin(), labels.end());
  if (min_label < 0) throw std::invalid_argument("fit_forest: negative label");
  std::size_t n_classes = std::size_t(max_label) + 1;
  std::vector<double> counts(n_classes, 0.0);
  for (int l : labels) counts[std::size_t(l)] += 1.0;
  std::size_t present = 0;
  for (double c : counts) present += c > 0 ? 1 : 0;
  if (present < 2) throw std::invalid_argument("fit_forest: need at least two classes in labels");

  RandomForest forest;
  forest.cfg = cfg;
  forest.n_features = features.cols;
  forest.n_classes = n_classes;
  forest.importance.assign(features.cols, 0.0);

  std::vector<double> class_weight(n_classes, 1.0);
  if (cfg.balanced)
    for (std::size_t c = 0; c < n_classes; ++c)
      class_weight[c] = counts[c] > 0
                            ? double(labels.size()) / (double(n_classes) * counts[c])
                            : 0.0;
  std::size_t mtry = cfg.features_per_split
                         ? cfg.features_per_split
                         : std::max<std::size_t>(1, std::size_t(std::sqrt(double(features.cols))));
  mtry = std::min(mtry, features.cols);

  for (std::size_t t = 0; t < cfg.n_trees; ++t) {
    TreeBuilder builder{features,
                        labels,
                        class_weight,
                        n_classes,
                        mtry,
                        cfg.max_depth,
                        std::mt19937_64(splitmix64(cfg.seed ^ (t * 0x9E3779B97F4A7C15ULL))),
                        DecisionTree{},
                        forest.importance};
    std::vector<std::size_t> idx;
    idx.reserve(features.rows);
    std::vector<bool> inbag(features.rows, false);
    if (cfg.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, features.rows - 1);
      for (std::size_t i = 0; i < features.rows; ++i) {
        std::size_t j = pick(builder.rng);
        idx.push_back(j);
        inbag[j] = true;
      }
    } else {
      idx.resize(features.rows);
      std::iota(idx.begin(), idx.end(), 0);
      inbag.assign(features.rows, true);
    }
    builder.build(idx, 0);
    forest.trees.push_back(std::move(builder.tree));
    forest.inbag.push_back(std::move(inbag));
  }
  double total = std::accumulate(forest.importance.begin(), forest.importance.end(), 0.0);
  if (total > 0)
    for (auto& v : forest.importance) v /= total;
  return forest;
}

ForestPrediction predict_forest(const RandomForest& forest, const double* row,
                                std::size_t n_features) {
  if (n_features != forest.n_features)
    throw std::invalid_argument("predict_forest: expected " + std::to_string(forest.n_features) +
                                " features, got " + std::to_string(n_features));
  ForestPrediction pred;
  pred.probs.assign(forest.n_classes, 0.0);
  for (const auto& tree : forest.trees) {
    const auto& dist = tree.leaf_for(row);
    for (std::size_t c = 0; c < forest.n_classes; ++c) pred.probs[c] += dist[c];
  }
  for (auto& p : pred.probs) p /= double(forest.trees.size());
  pred.label = 0;
  for (std::size_t c = 1; c < forest.n_classes; ++c)
    if (pred.probs[c] > pred.probs[std::size_t(pred.label)]) pred.label = int(c);
  return pred;
}

double oob_accuracy(const RandomForest& forest, const FeatureMatrix& features,
                    const std::vector<int>& labels) {
  if (forest.inbag.size() != forest.trees.size())
    throw std::invalid_argument("oob_accuracy: forest lacks a fit-time bootstrap record");
  std::size_t scored = 0, correct = 0;
  std::vector<double> probs(forest.n_classes);
  for (std::size_t r = 0; r < features.rows; ++r) {
    std::fill(probs.begin(), probs.end(), 0.0);
    std::size_t voters = 0;
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
      if (forest.inbag[t][r]) continue;
      const auto& dist = forest.trees[t].leaf_for(features.row(r));
      for (std::size_t c = 0; c < forest.n_classes; ++c) probs[c] += dist[c];
      ++voters;
    }
    if (!voters) continue;
    std::size_t best = 0;
    for (std::size_t c = 1; c < forest.n_classes; ++c)
      if (probs[c] > probs[best]) best = c;
    ++scored;
    if (int(best) == labels[r]) ++correct;
  }
  return scored ? double(correct) / double(scored) : 0.0;
}

std::vector<int> predict_forest_batch(const RandomForest& forest, const FeatureMatrix& features) {
  std::vector<int> out;
  out.reserve(features.rows);
  for (std::size_t r = 0; r < features.rows; ++r)
    out.push_back(predict_forest(forest, features.row(r), features.cols).label);
  return out;
}

std::vector<std::pair<std::string, double>> family_importance(const RandomForest& forest,
                                                              const FamilyLayout& layout) {
  std::size_t d = layout.total();
  if (forest.n_features % d != 0)
    throw std::invalid_argument("family_importance: feature count " +
                                std::to_string(forest.n_features) +
                                " is not a multiple of the layout width " + std::to_string(d));
  std::vector<double> shares(layout.count(), 0.0);
  for (std::size_t j = 0; j < forest.n_features; ++j) {
    std::size_t within = j % d;
    for (std::size_t f = 0; f < layout.count(); ++f)
      if (within >= layout.families[f].begin && within < layout.families[f].end) {
        shares[f] += forest.importance[j];
        break;
      }
  }
  double total = std::accumulate(shares.begin(), shares.end(), 0.0);
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t f = 0; f < layout.count(); ++f)
    out.emplace_back(layout.families[f].name,
                     total > 0 ? shares[f] / total : 1.0 / double(layout.count()));
  return out;
}

// ---------------------------------------------------------------------------
// serialization ("TCRF")
// ---------------------------------------------------------------------------

namespace {
constexpr char kForestMagic[4] = {'T', 'C', 'R', 'F'};
}

void save_forest(const RandomForest& forest, const std::string& path) {
  record_io::RecordFile rf;
  json j;
  j["n_trees"] = forest.cfg.n_trees;
  j["max_depth"] = forest.cfg.max_depth;
  j["balanced"] = forest.cfg.balanced;
  j["seed"] = forest.cfg.seed;
  j["features_per_split"] = forest.cfg.features_per_split;
  j["bootstrap"] = forest.cfg.bootstrap;
  j["n_features"] = forest.n_features;
  j["n_classes"] = forest.n_classes;
  rf.json_blob = j.dump();
  rf.tensors.emplace_back("importance",
                          Tensor::from({forest.n_features}, forest.importance));
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    const auto& tree = forest.trees[t];
    std::size_t n = tree.nodes.size();
    std::vector<double> meta(n * 4), leaf(n * forest.n_classes, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      meta[i * 4] = double(tree.nodes[i].feature);
      meta[i * 4 + 1] = tree.nodes[i].threshold;
      meta[i * 4 + 2] = double(tree.nodes[i].left);
      meta[i * 4 + 3] = double(tree.nodes[i].right);
      for (std::size_t c = 0; c < tree.nodes[i].leaf_dist.size(); ++c)
        leaf[i * forest.n_classes + c] = tree.nodes[i].leaf_dist[c];
    }
    std::string prefix = "tree" + std::to_string(t);
    rf.tensors.emplace_back(prefix + ".nodes", Tensor::from({n, 4}, std::move(meta)));
    rf.tensors.emplace_back(prefix + ".leaf",
                            Tensor::from({n, forest.n_classes}, std::move(leaf)));
  }
  record_io::write(path, kForestMagic, rf);
}

RandomForest load_forest(const std::string& path) {
  record_io::RecordFile rf = record_io::read(path, kForestMagic);
  json j = json::parse(rf.json_blob);
  RandomForest forest;
  forest.cfg.n_trees = j.at("n_trees").get<std::size_t>();
  forest.cfg.max_depth = j.at("max_depth").get<std::size_t>();
  forest.cfg.balanced = j.at("balanced").get<bool>();
  forest.cfg.seed = j.at("seed").get<std::uint64_t>();
  forest.cfg.features_per_split = j.at("features_per_split").get<std::size_t>();
  forest.cfg.bootstrap = j.at("bootstrap").get<bool>();
  forest.n_features = j.at("n_features").get<std::size_t>();
  forest.n_classes = j.at("n_classes").get<std::size_t>();
  if (rf.tensors.empty() || rf.tensors[0].first != "importance")
    throw std::runtime_error("load_forest: missing importance record");
  forest.importance = rf.tensors[0].second.values();
  for (std::size_t at = 1; at + 1 < rf.tensors.size() + 1; at += 2) {
    if (at + 1 >= rf.tensors.size() + 0) break;
    const auto& [mname, meta] = rf.tensors[at];
    const auto& [lname, leaf] = rf.tensors[at + 1];
    if (mname.find(".nodes") == std::string::npos || lname.find(".leaf") == std::string::npos)
      throw std::runtime_error("load_forest: unexpected record layout");
    std::size_t n = meta.extent(0);
    DecisionTree tree;
    tree.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      tree.nodes[i].feature = std::int32_t(meta[i * 4]);
      tree.nodes[i].threshold = meta[i * 4 + 1];
      tree.nodes[i].left = std::int32_t(meta[i * 4 + 2]);
      tree.nodes[i].right = std::int32_t(meta[i * 4 + 3]);
      if (tree.nodes[i].feature < 0) {
        tree.nodes[i].leaf_dist.resize(forest.n_classes);
        for (std::size_t c = 0; c < forest.n_classes; ++c)
          tree.nodes[i].leaf_dist[c] = leaf[i * forest.n_classes + c];
      }
    }
    forest.trees.push_back(std::move(tree));
  }
  if (forest.trees.size() != forest.cfg.n_trees)
    throw std::runtime_error("load_forest: tree count mismatch");
  return forest;
}

// ---------------------------------------------------------------------------
// RF-TSF features
// ---------------------------------------------------------------------------

FamilyLayout rf_feature_layout(const ExtractorParams& params, std::size_t block_size) {
  return params.layout_for(block_size);
}

FeatureMatrix extract_rf_features(const WindowedDataset& data,
                                  const std::vector<std::size_t>& scales,
                                  const ExtractorParams& params) {
  if (scales.empty()) throw std::invalid_argument("extract_rf_features: no scales");
  data.validate();
  std::size_t d = params.layout_for(scales[0]).total();
  for (std::size_t m : scales)
    if (params.layout_for(m).total() != d)
      throw std::invalid_argument(
          "extract_rf_features: scales produce different anchor widths; family mapping "
          "requires equal widths");
  FeatureMatrix fm;
  fm.rows = data.n_windows;
  fm.cols = scales.size() * data.n_channels * d;
  fm.data.assign(fm.rows * fm.cols, 0.0);

  constexpr std::size_t kChunk = 128;
  for (std::size_t at = 0; at < data.n_windows; at += kChunk) {
    std::size_t end = std::min(data.n_windows, at + kChunk);
    std::vector<std::size_t> chunk;
    for (std::size_t i = at; i < end; ++i) chunk.push_back(i);
    Tensor x = data.batch(chunk);
    for (std::size_t s = 0; s < scales.size(); ++s) {
      Tensor blocks = unfold_blocks(x, scales[s], scales[s]);
      AnchorTensor anchors = extract_all(blocks, params, Mode::Hard);
      Tensor pooled = mean_axis(anchors.values, 1);  // B x C x D
      for (std::size_t b = 0; b < chunk.size(); ++b)
        for (std::size_t c = 0; c < data.n_channels; ++c)
          for (std::size_t k = 0; k < d; ++k)
            fm.data[chunk[b] * fm.cols + (s * data.n_channels + c) * d + k] =
                pooled[(b * data.n_channels + c) * d + k];
    }
  }
  return fm;
}

}  // namespace tcnet
