#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tcnet/correction.hpp"

using namespace tcnet;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> vals(shape_numel(shape));
  for (auto& v : vals) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(vals));
}

FamilyLayout toy_layout() {
  FamilyLayout layout;
  layout.families = {{"a", 0, 3}, {"b", 3, 4}, {"c", 4, 8}};
  return layout;
}

AnchorTensor toy_anchors(std::mt19937_64& rng, std::size_t batch = 2, std::size_t blocks = 3,
                         std::size_t chans = 2) {
  AnchorTensor z;
  z.layout = toy_layout();
  z.values = random_tensor({batch, blocks, chans, z.layout.total()}, rng);
  z.block_size = 16;
  z.sampling_rate = 50.0;
  return z;
}

}  // namespace

TEST_CASE("block_context: deterministic per-block rows and affine degenerate") {
  std::mt19937_64 rng(3);
  Mlp2 f_blk = Mlp2::init(8, 6, 4, rng);
  AnchorTensor z = toy_anchors(rng);
  // duplicate block 0 into block 1
  std::vector<double> vals = z.values.values();
  std::size_t row = 2 * 8;  // chans * D
  for (std::size_t b = 0; b < 2; ++b)
    std::copy_n(&vals[(b * 3 + 0) * row], row, &vals[(b * 3 + 1) * row]);
  z.values = Tensor::from(z.values.shape(), vals);

  Tensor ctx = block_context(z, f_blk);
  CHECK(ctx.shape() == Shape{2, 3, 4});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t d = 0; d < 4; ++d)
      CHECK(ctx[(b * 3 + 0) * 4 + d] == doctest::Approx(ctx[(b * 3 + 1) * 4 + d]));

  // zero-weight MLP collapses to its bias
  Mlp2 zero = f_blk;
  zero.l1.w = Tensor::param({8, 6}, std::vector<double>(48, 0.0));
  zero.l1.b = Tensor::param({6}, std::vector<double>(6, 0.0));
  zero.l2.w = Tensor::param({6, 4}, std::vector<double>(24, 0.0));
  zero.l2.b = Tensor::param({4}, {1.0, 2.0, 3.0, 4.0});
  Tensor flat = block_context(z, zero);
  for (std::size_t i = 0; i < flat.size(); ++i)
    CHECK(flat[i] == doctest::Approx(double(i % 4 + 1)));
}

TEST_CASE("predict_correction: zero weights give bias outputs, context matters otherwise") {
  std::mt19937_64 rng(7);
  CorrectionHead head = CorrectionHead::init(6, 8, 2, 3, rng);
  Tensor h1 = random_tensor({1, 2, 6}, rng);
  auto pred = predict_correction(h1, head, 2, 3);
  CHECK(pred.scale.shape() == Shape{1, 2, 2, 3});

  // two context rows differing only in the block part produce different outputs
  std::vector<double> v = h1.values();
  v[6 + 0] += 0.5;
  auto pred2 = predict_correction(Tensor::from({1, 2, 6}, v), head, 2, 3);
  bool differs = false;
  for (std::size_t i = 6; i < 12; ++i)  // block 1 entries
    if (std::fabs(pred2.scale[i] - pred.scale[i]) > 1e-12) differs = true;
  CHECK(differs);

  CorrectionHead zero = head;
  zero.trunk.w = Tensor::param({6, 8}, std::vector<double>(48, 0.0));
  zero.trunk.b = Tensor::param({8}, std::vector<double>(8, 0.0));
  zero.scale_out.w = Tensor::param({8, 6}, std::vector<double>(48, 0.0));
  zero.scale_out.b = Tensor::param({6}, std::vector<double>(6, 0.25));
  auto pz = predict_correction(h1, zero, 2, 3);
  for (double x : pz.scale.values()) CHECK(x == doctest::Approx(0.25));
}

TEST_CASE("apply_correction: closed gate, identity correction, saturated formula") {
  std::mt19937_64 rng(11);
  FamilyLayout layout = toy_layout();
  Shape zshape{1, 2, 2, 8}, pshape{1, 2, 2, 3};
  Tensor z = random_tensor(zshape, rng);

  SUBCASE("alpha = -30 closes the gate") {
    auto corr = apply_correction(z, random_tensor(pshape, rng), random_tensor(pshape, rng),
                                 random_tensor(pshape, rng), Tensor::scalar(-30.0), 0.5, 0.5,
                                 layout);
    for (double l : corr.lambda.values()) CHECK(l < 1e-12);
    for (std::size_t i = 0; i < z.size(); ++i)
      CHECK(std::fabs(corr.z_k[i] - z[i]) < 1e-9);
  }
  SUBCASE("zero scale and bias keep the anchors for any gate") {
    auto corr = apply_correction(z, Tensor::zeros(pshape), Tensor::zeros(pshape),
                                 random_tensor(pshape, rng), Tensor::scalar(1.5), 0.5, 0.5,
                                 layout);
    for (std::size_t i = 0; i < z.size(); ++i)
      CHECK(corr.z_k[i] == doctest::Approx(z[i]).epsilon(1e-12));
  }
  SUBCASE("saturated tanh, open gate: Z_raw=2 maps to 3.5") {
    Tensor z2 = Tensor::full(zshape, 2.0);
    auto corr = apply_correction(z2, Tensor::full(pshape, 40.0), Tensor::full(pshape, 40.0),
                                 Tensor::full(pshape, 40.0), Tensor::scalar(40.0), 0.5, 0.5,
                                 layout);
    for (double l : corr.lambda.values()) CHECK(l == doctest::Approx(1.0).epsilon(1e-12));
    for (double v : corr.z_k.values()) CHECK(v == doctest::Approx(3.5).epsilon(1e-9));
  }
}

TEST_CASE("apply_correction: boundedness holds at random draws") {
  std::mt19937_64 rng(13);
  FamilyLayout layout = toy_layout();
  for (int trial = 0; trial < 1000; ++trial) {
    Shape zshape{1, 1, 2, 8}, pshape{1, 1, 2, 3};
    Tensor z = random_tensor(zshape, rng, -3, 3);
    double s_max = 0.5, b_max = 0.5;
    auto corr = apply_correction(z, random_tensor(pshape, rng, -4, 4),
                                 random_tensor(pshape, rng, -4, 4),
                                 random_tensor(pshape, rng, -4, 4),
                                 Tensor::scalar(-2.0 + 4.0 * (trial % 3)), s_max, b_max, layout);
    for (std::size_t i = 0; i < z.size(); ++i) {
      double lambda = corr.lambda[i];
      CHECK(lambda > 0.0);
      CHECK(lambda < 1.0);
      CHECK(std::fabs(corr.z_k[i] - z[i]) <=
            lambda * (s_max * std::fabs(z[i]) + b_max) + 1e-12);
    }
  }
}

TEST_CASE("gate monotonicity: larger alpha moves anchors farther") {
  std::mt19937_64 rng(17);
  FamilyLayout layout = toy_layout();
  Shape zshape{1, 2, 2, 8}, pshape{1, 2, 2, 3};
  Tensor z = random_tensor(zshape, rng);
  Tensor s = random_tensor(pshape, rng), b = random_tensor(pshape, rng),
         l = random_tensor(pshape, rng);
  double prev_l1 = -1.0;
  std::vector<double> prev_lambda;
  for (double alpha : {-3.0, -1.0, 0.5, 2.0}) {
    auto corr = apply_correction(z, s, b, l, Tensor::scalar(alpha), 0.5, 0.5, layout);
    if (!prev_lambda.empty())
      for (std::size_t i = 0; i < corr.lambda.size(); ++i)
        CHECK(corr.lambda[i] > prev_lambda[i]);
    prev_lambda = corr.lambda.values();
    double l1 = 0.0;
    for (double d : corr.delta.values()) l1 += std::fabs(d);
    CHECK(l1 >= prev_l1);
    prev_l1 = l1;
  }
}

TEST_CASE("assemble_views: identity view is bit-exact, axis arithmetic holds") {
  std::mt19937_64 rng(19);
  AnchorTensor z = toy_anchors(rng, 2, 3, 3);
  Tensor h_ctx = random_tensor({2, 3, 6}, rng);

  SUBCASE("K = 1 passes anchors through") {
    CorrectionHeadParams none = CorrectionHeadParams::init(1, 6, 8, 3, 3, rng);
    CorrectionBundle bundle = assemble_views(z, h_ctx, none);
    CHECK(bundle.z_multi.shape() == z.values.shape());
    for (std::size_t i = 0; i < z.values.size(); ++i)
      CHECK(bundle.z_multi[i] == z.values[i]);
    auto [ld, lt] = correction_regularizers(bundle);
    CHECK(ld.item() == 0.0);
    CHECK(lt.item() == 0.0);
  }
  SUBCASE("K = 4 with C = 3 gives view-channel extent 12 and exact view 0") {
    CorrectionHeadParams heads = CorrectionHeadParams::init(4, 6, 8, 3, 3, rng);
    CorrectionBundle bundle = assemble_views(z, h_ctx, heads);
    CHECK(bundle.z_multi.shape() == Shape{2, 3, 12, 8});
    // first C slots along axis 2 equal Z_raw bit-exactly
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t d = 0; d < 8; ++d)
            CHECK(bundle.z_multi[((b * 3 + n) * 12 + c) * 8 + d] ==
                  z.values[((b * 3 + n) * 3 + c) * 8 + d]);
    for (const Tensor& lam : bundle.lambdas)
      for (double v : lam.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
  }
  SUBCASE("closed gates keep every view at Z_raw") {
    CorrectionHeadParams heads = CorrectionHeadParams::init(2, 6, 8, 3, 3, rng);
    heads.heads[0].alpha = Tensor::param({}, {-30.0});
    CorrectionBundle bundle = assemble_views(z, h_ctx, heads);
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < 6; ++c)
        for (std::size_t d = 0; d < 8; ++d)
          CHECK(std::fabs(bundle.z_multi[(0 * 3 + n) * 48 + c * 8 + d] -
                          z.values[(0 * 3 + n) * 24 + (c % 3) * 8 + d]) < 1e-9);
  }
}

TEST_CASE("regularizers: hand-computed L1 sums and edge cases") {
  CorrectionBundle bundle;
  bundle.z_multi = Tensor::from({1, 2, 1, 1}, {1.0, 3.0});
  bundle.deltas = {Tensor::from({1, 2, 1, 1}, {1.0, 3.0})};
  bundle.lambdas = {Tensor::from({1, 2, 1, 1}, {0.5, 0.5})};
  auto [ld, lt] = correction_regularizers(bundle);
  CHECK(ld.item() == doctest::Approx(4.0));
  CHECK(lt.item() == doctest::Approx(2.0));

  CorrectionBundle single;
  single.z_multi = Tensor::from({1, 1, 1, 2}, {1.0, -2.0});
  single.deltas = {Tensor::from({1, 1, 1, 2}, {1.0, -2.0})};
  single.lambdas = {Tensor::from({1, 1, 1, 2}, {0.5, 0.5})};
  auto [ld1, lt1] = correction_regularizers(single);
  CHECK(ld1.item() == doctest::Approx(3.0));
  CHECK(lt1.item() == 0.0);  // N = 1 has no adjacent blocks
}

TEST_CASE("gradients flow through correction and regularizers") {
  std::mt19937_64 rng(23);
  FamilyLayout layout = toy_layout();
  Shape zshape{1, 2, 2, 8};
  Shape pshape{1, 2, 2, 3};
  Tensor z0 = random_tensor(zshape, rng);
  Tensor s = random_tensor(pshape, rng), b = random_tensor(pshape, rng),
         l = random_tensor(pshape, rng);
  auto f = [&](const Tensor& x) {
    auto corr = apply_correction(reshape(x, zshape), s, b, l, Tensor::scalar(0.3), 0.5, 0.5,
                                 layout);
    CorrectionBundle bundle;
    bundle.z_multi = corr.z_k;
    bundle.deltas = {corr.delta};
    bundle.lambdas = {corr.lambda};
    auto [ld, lt] = correction_regularizers(bundle);
    return add(add(sum_all(mul(corr.z_k, corr.z_k)), ld), lt);
  };
  CHECK(grad_check(f, reshape(z0, {shape_numel(zshape)}), 1e-5) < 1e-4);
}
