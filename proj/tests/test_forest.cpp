#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "tcnet/forest.hpp"
#include "tcnet/ridge.hpp"

using namespace tcnet;

namespace {

FeatureMatrix make_matrix(std::size_t rows, std::size_t cols) {
  FeatureMatrix fm;
  fm.rows = rows;
  fm.cols = cols;
  fm.data.assign(rows * cols, 0.0);
  return fm;
}

// two clouds linearly separable on column 0: x < 0 vs x > 1
std::pair<FeatureMatrix, std::vector<int>> separable_set(std::size_t per_class,
                                                         std::size_t cols, std::uint64_t seed) {
  FeatureMatrix fm = make_matrix(2 * per_class, cols);
  std::vector<int> labels(2 * per_class);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(-0.4, 0.4);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    int y = i < per_class ? 0 : 1;
    labels[i] = y;
    fm.data[i * cols] = y == 0 ? -0.5 + noise(rng) : 1.5 + noise(rng);
    for (std::size_t c = 1; c < cols; ++c) fm.data[i * cols + c] = noise(rng);
  }
  return {fm, labels};
}

}  // namespace

TEST_CASE("forest learns a one-threshold split perfectly") {
  auto [fm, labels] = separable_set(60, 5, 3);
  ForestConfig cfg;
  cfg.n_trees = 30;
  cfg.max_depth = 6;
  cfg.seed = 1;
  RandomForest forest = fit_forest(fm, labels, cfg);
  std::vector<int> preds = predict_forest_batch(forest, fm);
  for (std::size_t i = 0; i < labels.size(); ++i) CHECK(preds[i] == labels[i]);
  CHECK(oob_accuracy(forest, fm, labels) >= 0.95);
}

TEST_CASE("fixed seed gives bit-identical serialized forests") {
  auto [fm, labels] = separable_set(40, 6, 9);
  ForestConfig cfg;
  cfg.n_trees = 20;
  cfg.max_depth = 5;
  cfg.seed = 77;
  RandomForest a = fit_forest(fm, labels, cfg);
  RandomForest b = fit_forest(fm, labels, cfg);
  save_forest(a, "forest_a.bin");
  save_forest(b, "forest_b.bin");
  std::ifstream fa("forest_a.bin", std::ios::binary), fb("forest_b.bin", std::ios::binary);
  std::vector<char> ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::vector<char> bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);

  RandomForest loaded = load_forest("forest_a.bin");
  CHECK(loaded.trees.size() == a.trees.size());
  std::vector<int> p1 = predict_forest_batch(a, fm);
  std::vector<int> p2 = predict_forest_batch(loaded, fm);
  CHECK(p1 == p2);
  std::remove("forest_a.bin");
  std::remove("forest_b.bin");
}

TEST_CASE("single-class labels are rejected") {
  auto [fm, labels] = separable_set(10, 3, 5);
  std::fill(labels.begin(), labels.end(), 0);
  CHECK_THROWS_AS(fit_forest(fm, labels, ForestConfig{}), std::invalid_argument);
}

TEST_CASE("balanced class weights lift minority recall on an imbalanced overlap") {
  // overlapping gaussians, 90/10 imbalance; shallow trees so weighting matters
  std::mt19937_64 rng(11);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::size_t n_major = 450, n_minor = 50;
  auto draw = [&](double mu) { return mu + unit(rng); };
  FeatureMatrix train = make_matrix(n_major + n_minor, 2);
  std::vector<int> train_y(n_major + n_minor);
  for (std::size_t i = 0; i < n_major + n_minor; ++i) {
    int y = i < n_major ? 0 : 1;
    train_y[i] = y;
    train.data[i * 2] = draw(y == 0 ? 0.0 : 1.2);
    train.data[i * 2 + 1] = unit(rng);
  }
  FeatureMatrix test = make_matrix(500, 2);
  std::vector<int> test_y(500);
  for (std::size_t i = 0; i < 500; ++i) {
    int y = i < 450 ? 0 : 1;
    test_y[i] = y;
    test.data[i * 2] = draw(y == 0 ? 0.0 : 1.2);
    test.data[i * 2 + 1] = unit(rng);
  }
  ForestConfig balanced;
  balanced.n_trees = 60;
  balanced.max_depth = 3;
  balanced.seed = 5;
  balanced.balanced = true;
  ForestConfig plain = balanced;
  plain.balanced = false;

  auto recall_minority = [&](const RandomForest& f) {
    std::vector<int> preds = predict_forest_batch(f, test);
    std::size_t tp = 0, fn = 0;
    for (std::size_t i = 0; i < test_y.size(); ++i) {
      if (test_y[i] == 1 && preds[i] == 1) ++tp;
      if (test_y[i] == 1 && preds[i] != 1) ++fn;
    }
    return double(tp) / double(tp + fn);
  };
  double r_bal = recall_minority(fit_forest(train, train_y, balanced));
  double r_plain = recall_minority(fit_forest(train, train_y, plain));
  INFO("balanced recall " << r_bal << " vs unweighted " << r_plain);
  CHECK(r_bal > r_plain);
}

TEST_CASE("prediction: tie goes to the lowest class, single tree is its own argmax") {
  RandomForest forest;
  forest.cfg.n_trees = 2;
  forest.n_features = 1;
  forest.n_classes = 2;
  DecisionTree t1, t2;
  t1.nodes.push_back({-1, 0.0, -1, -1, {1.0, 0.0}});
  t2.nodes.push_back({-1, 0.0, -1, -1, {0.0, 1.0}});
  forest.trees = {t1, t2};
  double row = 0.3;
  ForestPrediction pred = predict_forest(forest, &row, 1);
  CHECK(pred.probs[0] == doctest::Approx(0.5));
  CHECK(pred.probs[1] == doctest::Approx(0.5));
  CHECK(pred.label == 0);

  forest.trees = {t2};
  forest.cfg.n_trees = 1;
  CHECK(predict_forest(forest, &row, 1).label == 1);

  CHECK_THROWS_AS(predict_forest(forest, &row, 3), std::invalid_argument);
}

TEST_CASE("probabilities sum to one") {
  auto [fm, labels] = separable_set(30, 4, 21);
  ForestConfig cfg;
  cfg.n_trees = 15;
  cfg.max_depth = 4;
  cfg.seed = 2;
  RandomForest forest = fit_forest(fm, labels, cfg);
  for (std::size_t r = 0; r < fm.rows; ++r) {
    auto pred = predict_forest(forest, fm.row(r), fm.cols);
    double s = 0;
    for (double p : pred.probs) s += p;
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("family importance concentrates on the planted family and sums to one") {
  ExtractorParams params = ExtractorParams::defaults();
  FamilyLayout layout = params.layout_for(32);  // D = 51
  std::size_t d = layout.total();
  std::size_t informative = layout.at("statistics").begin + 1;  // one statistics column

  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> noise(-1, 1);
  FeatureMatrix fm = make_matrix(300, 2 * d);  // two channel-scale slices
  std::vector<int> labels(300);
  for (std::size_t i = 0; i < 300; ++i) {
    for (std::size_t c = 0; c < 2 * d; ++c) fm.data[i * 2 * d + c] = noise(rng);
    labels[i] = fm.data[i * 2 * d + informative] > 0 ? 1 : 0;
  }
  ForestConfig cfg;
  cfg.n_trees = 40;
  cfg.max_depth = 6;
  cfg.seed = 3;
  cfg.features_per_split = 2 * d;  // full scan so every tree can find the planted column
  RandomForest forest = fit_forest(fm, labels, cfg);
  auto shares = family_importance(forest, layout);
  double total = 0, stats_share = 0;
  for (const auto& [name, share] : shares) {
    CHECK(share >= 0.0);
    total += share;
    if (name == "statistics") stats_share = share;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(stats_share > 0.9);
}

TEST_CASE("family importance stays diffuse when labels are independent of features") {
  ExtractorParams params = ExtractorParams::defaults();
  FamilyLayout layout = params.layout_for(32);
  std::size_t d = layout.total();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(100 + seed);
    std::uniform_real_distribution<double> noise(-1, 1);
    FeatureMatrix fm = make_matrix(120, d);
    std::vector<int> labels(120);
    for (std::size_t i = 0; i < 120; ++i) {
      for (std::size_t c = 0; c < d; ++c) fm.data[i * d + c] = noise(rng);
      labels[i] = int(rng() % 2);
    }
    ForestConfig cfg;
    cfg.n_trees = 20;
    cfg.max_depth = 4;
    cfg.seed = seed;
    auto shares = family_importance(fit_forest(fm, labels, cfg), layout);
    for (const auto& [name, share] : shares) CHECK(share < 0.5);
  }
}

TEST_CASE("rf features: column arithmetic and block averaging identities") {
  WindowedDataset data = synth_generate(2, 4, 9, 128, 50.0, 7);
  ExtractorParams params = ExtractorParams::defaults();
  FeatureMatrix fm = extract_rf_features(data, {32, 128}, params);
  CHECK(fm.rows == 8);
  CHECK(fm.cols == 2 * 9 * 51);  // 918, the documented two-scale width

  // one block per scale: the scale vector equals that block's features
  WindowedDataset one = synth_generate(2, 2, 3, 64, 50.0, 9);
  FeatureMatrix f1 = extract_rf_features(one, {64}, params);
  Tensor blocks = unfold_blocks(one.batch({0}), 64, 64);
  AnchorTensor anchors = extract_all(blocks, params, Mode::Hard);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < 51; ++k)
      CHECK(f1.row(0)[c * 51 + k] ==
            doctest::Approx(anchors.values[(c)*51 + k]).epsilon(1e-12));

  // duplicated blocks: window = two copies of the same block
  WindowedDataset dup;
  dup.n_windows = 1;
  dup.n_channels = 1;
  dup.window_len = 64;
  dup.n_classes = 2;
  dup.sampling_rate = 50.0;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<float> half(32);
  for (auto& v : half) v = float(dist(rng));
  for (int rep = 0; rep < 2; ++rep)
    for (float v : half) dup.windows.push_back(v);
  dup.labels = {0};
  dup.subjects = {0};
  FeatureMatrix fd = extract_rf_features(dup, {32}, params);
  Tensor one_block = Tensor::from({1, 1, 32, 1}, std::vector<double>(half.begin(), half.end()));
  AnchorTensor single = extract_all(one_block, params, Mode::Hard);
  for (std::size_t k = 0; k < 51; ++k)
    CHECK(fd.row(0)[k] == doctest::Approx(single.values[k]).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// ridge probe
// ---------------------------------------------------------------------------

TEST_CASE("ridge recovers an exactly linear map with R^2 = 1") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::size_t n = 80, d = 6, t = 3;
  FeatureMatrix x = make_matrix(n, d), y = make_matrix(n, t);
  std::vector<double> w(d * t);
  for (auto& v : w) v = dist(rng);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) x.data[i * d + c] = dist(rng);
    for (std::size_t j = 0; j < t; ++j) {
      double acc = 0.7;
      for (std::size_t c = 0; c < d; ++c) acc += x.data[i * d + c] * w[c * t + j];
      y.data[i * t + j] = acc;
    }
  }
  FamilyColumns fams{{"all", {0, 1, 2}}};
  auto rows = ridge_probe(x, y, x, y, fams, 1e-8);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].r2_train == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(rows[0].r2_test == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("independent noise targets give near-zero held-out R^2") {
  double mean_r2 = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(500 + seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::size_t n = 60, d = 8;
    FeatureMatrix xtr = make_matrix(n, d), ytr = make_matrix(n, 1);
    FeatureMatrix xte = make_matrix(n, d), yte = make_matrix(n, 1);
    for (auto& v : xtr.data) v = unit(rng);
    for (auto& v : ytr.data) v = unit(rng);
    for (auto& v : xte.data) v = unit(rng);
    for (auto& v : yte.data) v = unit(rng);
    auto rows = ridge_probe(xtr, ytr, xte, yte, {{"noise", {0}}}, 1.0);
    mean_r2 += rows[0].r2_test;
  }
  mean_r2 /= 20.0;
  INFO("mean held-out R2 on noise: " << mean_r2);
  CHECK(mean_r2 <= 0.05);
}

TEST_CASE("R^2 anchors: constant-mean prediction scores exactly zero") {
  FeatureMatrix y = make_matrix(4, 1);
  y.data = {1.0, 2.0, 3.0, 6.0};
  FeatureMatrix pred = make_matrix(4, 1);
  pred.data = {3.0, 3.0, 3.0, 3.0};  // the mean of y
  auto r2 = r2_per_column(y, pred);
  CHECK(r2[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("standardization makes the probe invariant to column rescaling") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::size_t n = 50, d = 4;
  FeatureMatrix x = make_matrix(n, d), y = make_matrix(n, 1);
  for (auto& v : x.data) v = dist(rng);
  for (std::size_t i = 0; i < n; ++i)
    y.data[i] = x.data[i * d] * 0.5 - x.data[i * d + 2] + 0.1 * dist(rng);
  FeatureMatrix x_scaled = x;
  for (std::size_t i = 0; i < n; ++i) x_scaled.data[i * d + 1] *= 1000.0;
  auto a = ridge_probe(x, y, x, y, {{"t", {0}}}, 1.0);
  auto b = ridge_probe(x_scaled, y, x_scaled, y, {{"t", {0}}}, 1.0);
  CHECK(a[0].r2_test == doctest::Approx(b[0].r2_test).epsilon(1e-9));
}

TEST_CASE("lambda = 0 with collinear columns is rejected; lambda > 0 solves") {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::size_t n = 30;
  FeatureMatrix x = make_matrix(n, 4), y = make_matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double v = dist(rng);
    x.data[i * 4] = v;
    x.data[i * 4 + 1] = v;  // exact duplicate column
    x.data[i * 4 + 2] = dist(rng);
    x.data[i * 4 + 3] = dist(rng);
    y.data[i] = v + 0.1 * dist(rng);
  }
  CHECK_THROWS_WITH_AS(fit_ridge(x, y, 0.0), doctest::Contains("singular"), std::runtime_error);
  CHECK_NOTHROW(fit_ridge(x, y, 1.0));
}

TEST_CASE("adversarial shuffled targets yield negative held-out R^2") {
  // test targets are a permutation of the structured values, so the fitted
  // model's variance only adds to the residual
  std::mt19937_64 rng(19);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::size_t n = 60, d = 5;
  FeatureMatrix xtr = make_matrix(n, d), xte = make_matrix(n, d);
  FeatureMatrix ytr = make_matrix(n, 1), yte = make_matrix(n, 1);
  for (auto& v : xtr.data) v = unit(rng);
  for (auto& v : xte.data) v = unit(rng);
  for (std::size_t i = 0; i < n; ++i) ytr.data[i] = 2.0 * xtr.data[i * d] + 0.05 * unit(rng);
  for (std::size_t i = 0; i < n; ++i) yte.data[i] = 2.0 * xte.data[i * d];
  std::shuffle(yte.data.begin(), yte.data.end(), rng);
  auto rows = ridge_probe(xtr, ytr, xte, yte, {{"adv", {0}}}, 1.0);
  CHECK(rows[0].r2_train > 0.9);
  CHECK(rows[0].r2_test < 0.0);
}

TEST_CASE("probe targets and six-family grouping cover every anchor column once") {
  WindowedDataset data = synth_generate(2, 5, 3, 64, 50.0, 23);
  ExtractorParams params = ExtractorParams::defaults();
  FeatureMatrix targets = probe_targets(data, params);
  CHECK(targets.rows == 10);
  CHECK(targets.cols == 51);
  FamilyColumns groups = six_family_groups(params.layout_for(64));
  REQUIRE(groups.size() == 6);
  std::vector<int> hit(51, 0);
  for (const auto& [name, cols] : groups)
    for (std::size_t c : cols) hit[c]++;
  for (int h : hit) CHECK(h == 1);
  // shape columns folded into statistics
  for (const auto& [name, cols] : groups)
    if (name == "statistics") CHECK(cols.size() == 7);
}
