#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tcnet/features.hpp"

using namespace tcnet;

namespace {

constexpr double kPi = 3.14159265358979323846;

// one window, one block, one channel
Tensor single_block(const std::vector<double>& sig) {
  return Tensor::from({1, 1, sig.size(), 1}, sig);
}

Tensor random_blocks(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> vals(shape_numel(shape));
  for (auto& v : vals) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(vals));
}

std::vector<double> sine_signal(std::size_t m, double cycles, double phase = 0.0,
                                double amp = 1.0) {
  std::vector<double> sig(m);
  for (std::size_t t = 0; t < m; ++t)
    sig[t] = amp * std::sin(2.0 * kPi * cycles * double(t) / double(m) + phase);
  return sig;
}

}  // namespace

TEST_CASE("layout: default config gives D = 51 with the documented family widths") {
  ExtractorParams p = ExtractorParams::defaults();
  FamilyLayout layout = p.layout_for(32);
  layout.validate();
  REQUIRE(layout.count() == 7);
  CHECK(layout.at("filterbank").width() == 8);
  CHECK(layout.at("spectral").width() == 21);
  CHECK(layout.at("statistics").width() == 5);
  CHECK(layout.at("shape").width() == 2);
  CHECK(layout.at("crossing").width() == 5);
  CHECK(layout.at("quantiles").width() == 5);
  CHECK(layout.at("autocorr").width() == 5);
  CHECK(layout.total() == 51);
}

TEST_CASE("band edges stay inside (0, 0.5] and ordered") {
  ExtractorParams p = ExtractorParams::defaults();
  for (auto [lo, hi] : p.band_edges()) {
    CHECK(lo > 0.0);
    CHECK(lo < hi);
    CHECK(hi <= 0.5);
  }
}

TEST_CASE("filterbank: zero signal has zero band energies") {
  ExtractorParams p = ExtractorParams::defaults();
  Tensor feats = extract_filterbank(single_block(std::vector<double>(64, 0.0)), p, Mode::Hard);
  for (double v : feats.values()) CHECK(v == 0.0);
}

TEST_CASE("filterbank: band holding a pure sinusoid wins") {
  ExtractorParams p = ExtractorParams::defaults();
  auto edges = p.band_edges();
  // pick the center of band 5 and verify via the DFT oracle that the tone is there
  std::size_t target = 5;
  double f0 = 0.5 * (edges[target].first + edges[target].second);
  std::size_t m = 128;
  std::vector<double> sig(m);
  for (std::size_t t = 0; t < m; ++t) sig[t] = std::sin(2.0 * kPi * f0 * double(t));
  auto mags = oracle::dft_magnitude(sig);
  std::size_t peak = 1;
  for (std::size_t k = 2; k < mags.size(); ++k)
    if (mags[k] > mags[peak]) peak = k;
  double peak_freq = double(peak) / double(m);
  CHECK(peak_freq > edges[target].first);
  CHECK(peak_freq < edges[target].second);

  Tensor feats = extract_filterbank(single_block(sig), p, Mode::Hard);
  std::size_t best = 0;
  for (std::size_t f = 1; f < 8; ++f)
    if (feats[f] > feats[best]) best = f;
  CHECK(best == target);
}

TEST_CASE("filterbank: white noise lights every band") {
  ExtractorParams p = ExtractorParams::defaults();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> min_energy(8, 1e300);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> sig(128);
    for (auto& v : sig) v = unit(rng);
    Tensor feats = extract_filterbank(single_block(sig), p, Mode::Hard);
    for (std::size_t f = 0; f < 8; ++f) min_energy[f] = std::min(min_energy[f], feats[f]);
  }
  for (double e : min_energy) CHECK(e > 0.0);
}

TEST_CASE("filterbank rejects blocks shorter than the kernel") {
  ExtractorParams p = ExtractorParams::defaults();
  CHECK_THROWS_AS(extract_filterbank(single_block(std::vector<double>(16, 1.0)), p, Mode::Hard),
                  std::invalid_argument);
}

TEST_CASE("spectral: constant block is DC-only (entropy and centroid 0)") {
  ExtractorParams p = ExtractorParams::defaults();
  Tensor feats = extract_spectral(single_block(std::vector<double>(64, 2.5)), p, Mode::Hard);
  FamilyLayout layout = p.layout_for(64);
  std::size_t bins = 17;
  CHECK(std::fabs(feats[bins + 0]) < 1e-6);  // centroid
  CHECK(std::fabs(feats[bins + 2]) < 1e-6);  // entropy
  (void)layout;
}

TEST_CASE("spectral: white-noise entropy approaches log(#bins)") {
  ExtractorParams p = ExtractorParams::defaults();
  std::mt19937_64 rng(23);
  std::normal_distribution<double> unit(0.0, 1.0);
  double mean_entropy = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> sig(128);
    for (auto& v : sig) v = unit(rng);
    Tensor feats = extract_spectral(single_block(sig), p, Mode::Hard);
    mean_entropy += feats[17 + 2];
  }
  mean_entropy /= 100.0;
  double target = std::log(17.0);
  CHECK(std::fabs(mean_entropy - target) / target < 0.10);
}

TEST_CASE("spectral: sinusoid centroid lands within one bin width") {
  ExtractorParams p = ExtractorParams::defaults(50.0);
  std::size_t m = 32, k = 5;  // frame == block, bin k exactly
  std::vector<double> sig(m);
  for (std::size_t t = 0; t < m; ++t) sig[t] = std::cos(2.0 * kPi * double(k * t) / double(m));
  Tensor feats = extract_spectral(single_block(sig), p, Mode::Hard);
  double bin_width = 50.0 / 32.0;
  double expect = double(k) * bin_width;
  CHECK(std::fabs(feats[17 + 0] - expect) <= bin_width);
}

TEST_CASE("spectral log-magnitudes match a direct DFT oracle to 1e-9") {
  ExtractorParams p = ExtractorParams::defaults();
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::size_t m = 64, frame = 32, hop = 16, bins = 17;
  std::size_t nf = (m - frame) / hop + 1;
  std::vector<double> sig(m);
  for (auto& v : sig) v = dist(rng);
  Tensor feats = extract_spectral(single_block(sig), p, Mode::Hard);

  double sigma = std::exp(p.gauss_log_width.item());
  for (std::size_t k = 0; k < bins; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < nf; ++j) {
      std::vector<double> windowed(frame);
      for (std::size_t t = 0; t < frame; ++t) {
        double dt = double(t) - 0.5 * double(frame - 1);
        windowed[t] = sig[j * hop + t] * std::exp(-dt * dt / (2.0 * sigma * sigma));
      }
      double mag = oracle::dft_magnitude(windowed)[k];
      acc += std::log1p(mag * mag);
    }
    acc /= double(nf);
    CHECK(std::fabs(feats[k] - acc) / std::max(1.0, std::fabs(acc)) < 1e-9);
  }
}

TEST_CASE("statistics: constant block") {
  ExtractorParams p = ExtractorParams::defaults();
  double c = -1.7;
  Tensor feats = extract_statistics(single_block(std::vector<double>(16, c)), p, Mode::Hard);
  CHECK(feats[0] == doctest::Approx(c));                    // mean
  CHECK(feats[1] == doctest::Approx(c));                    // min
  CHECK(feats[2] == doctest::Approx(c));                    // max
  CHECK(feats[3] == doctest::Approx(std::fabs(c)).epsilon(1e-8));
  CHECK(feats[4] == doctest::Approx(std::sqrt(1e-8)));      // std under the eps convention
}

TEST_CASE("statistics: hand-computed two-point block") {
  ExtractorParams p = ExtractorParams::defaults();
  Tensor feats = extract_statistics(single_block({-1.0, 1.0}), p, Mode::Hard);
  CHECK(feats[0] == doctest::Approx(0.0));
  CHECK(feats[1] == doctest::Approx(-1.0));
  CHECK(feats[2] == doctest::Approx(1.0));
  CHECK(feats[3] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(feats[4] == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("statistics: soft min/max approach the exact values as tau shrinks") {
  std::mt19937_64 rng(5);
  Tensor blocks = random_blocks({2, 2, 16, 2}, rng, -0.125, 0.125);
  ExtractorParams p = ExtractorParams::defaults();
  Tensor hard = extract_statistics(blocks, p, Mode::Hard);
  double range = 0.25;
  double prev = 1e300;
  double final_dev = 0.0;
  for (double tau_scale : {1.0, 1e-1, 1e-2, 1e-3}) {
    p.tau_stat = tau_scale * range;
    Tensor soft = extract_statistics(blocks, p, Mode::Soft);
    double dev = 0.0;
    for (std::size_t i = 0; i < soft.size(); ++i)
      dev = std::max(dev, std::fabs(soft[i] - hard[i]));
    CHECK(dev <= prev + 1e-12);
    prev = dev;
    final_dev = dev;
  }
  CHECK(final_dev < 1e-3);
}

TEST_CASE("shape: odd symmetry of skewness and degenerate constant") {
  ExtractorParams p = ExtractorParams::defaults();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<double> sig(32), neg(32);
  for (std::size_t t = 0; t < 32; ++t) {
    sig[t] = dist(rng);
    neg[t] = -sig[t];
  }
  Tensor a = extract_shape(single_block(sig), p, Mode::Hard);
  Tensor b = extract_shape(single_block(neg), p, Mode::Hard);
  CHECK(a[0] == doctest::Approx(-b[0]).epsilon(1e-10));
  CHECK(a[1] == doctest::Approx(b[1]).epsilon(1e-10));

  Tensor c = extract_shape(single_block(std::vector<double>(16, 3.0)), p, Mode::Hard);
  CHECK(c[0] == doctest::Approx(0.0));
  CHECK(c[1] == doctest::Approx(-3.0));
}

TEST_CASE("shape: standard normal sample has small skew and excess kurtosis") {
  ExtractorParams p = ExtractorParams::defaults();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> sig(10000);
  for (auto& v : sig) v = unit(rng);
  Tensor feats = extract_shape(single_block(sig), p, Mode::Hard);
  CHECK(std::fabs(feats[0]) < 0.1);
  CHECK(std::fabs(feats[1]) < 0.2);
}

TEST_CASE("crossings: hard-mode counting") {
  ExtractorParams p = ExtractorParams::defaults();
  SUBCASE("strictly positive signal never crosses") {
    std::vector<double> sig(16, 0.5);
    for (std::size_t t = 0; t < 16; ++t) sig[t] += 0.1 * double(t % 3);
    Tensor feats = extract_crossings(single_block(sig), p, Mode::Hard);
    CHECK(feats[0] == 0.0);
  }
  SUBCASE("sinusoid rate matches the sign-change oracle") {
    for (std::size_t k : {1, 2, 3, 5}) {
      auto sig = sine_signal(64, double(k), 0.37);
      Tensor feats = extract_crossings(single_block(sig), p, Mode::Hard);
      double want = double(oracle::sign_changes(sig)) / 63.0;
      CHECK(feats[0] == doctest::Approx(want));
      CHECK(std::fabs(feats[0] - 2.0 * double(k) / 63.0) <= 1.0 / 63.0 + 1e-12);
    }
  }
  SUBCASE("alternating signal: full crossing rate and extrema everywhere") {
    std::vector<double> sig(16);
    for (std::size_t t = 0; t < 16; ++t) sig[t] = t % 2 ? -1.0 : 1.0;
    Tensor feats = extract_crossings(single_block(sig), p, Mode::Hard);
    CHECK(feats[0] == doctest::Approx(1.0));
    CHECK(feats[4] == doctest::Approx(1.0));  // (m-2) extrema normalized
  }
}

TEST_CASE("quantiles: degenerate, sorted and soft-vs-hard") {
  ExtractorParams p = ExtractorParams::defaults();
  SUBCASE("constant block puts every quantile at c") {
    Tensor feats = extract_quantiles(single_block(std::vector<double>(16, 4.2)), p, Mode::Hard);
    for (double v : feats.values()) CHECK(v == doctest::Approx(4.2));
  }
  SUBCASE("1..100 median is 50.5 against the sort oracle") {
    std::vector<double> sig(100);
    for (std::size_t t = 0; t < 100; ++t) sig[t] = double(t + 1);
    p.quantile_levels = {0.5};
    Tensor feats = extract_quantiles(single_block(sig), p, Mode::Hard);
    CHECK(feats[0] == doctest::Approx(50.5));
    CHECK(feats[0] == doctest::Approx(oracle::quantile_sorted(sig, 0.5)));
  }
  SUBCASE("soft quantile lands within 1e-2 IQR of the hard value") {
    // the tau->0 limit of the soft quantile is an order statistic, so the
    // attainable deviation floor is one inter-sample gap; m large enough
    // puts that gap well below the tolerance
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> dist(-1, 1);
    std::vector<double> sig(1024);
    for (auto& v : sig) v = dist(rng);
    double iqr = oracle::quantile_sorted(sig, 0.75) - oracle::quantile_sorted(sig, 0.25);
    p.tau_quant = 1e-3 * 2.0;  // 1e-3 * range
    Tensor soft = extract_quantiles(single_block(sig), p, Mode::Soft);
    Tensor hard = extract_quantiles(single_block(sig), p, Mode::Hard);
    for (std::size_t i = 0; i < soft.size(); ++i)
      CHECK(std::fabs(soft[i] - hard[i]) < 1e-2 * iqr);
  }
  SUBCASE("soft quantiles are monotone in the level") {
    std::mt19937_64 rng(19);
    Tensor blocks = random_blocks({1, 2, 24, 2}, rng, -1, 1);
    Tensor soft = extract_quantiles(blocks, p, Mode::Soft);
    std::size_t nl = p.quantile_levels.size();
    for (std::size_t r = 0; r < soft.size() / nl; ++r)
      for (std::size_t l = 0; l + 1 < nl; ++l)
        CHECK(soft[r * nl + l] <= soft[r * nl + l + 1] + 1e-6);
  }
}

TEST_CASE("autocorr: conventions and oracles") {
  ExtractorParams p = ExtractorParams::defaults();
  SUBCASE("constant signal gives zero by epsilon convention") {
    Tensor feats = extract_autocorr(single_block(std::vector<double>(32, 2.0)), p, Mode::Hard);
    for (double v : feats.values()) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("sinusoid at its own period correlates strongly") {
    // period 2 samples at lag 2: frozen from the direct-sum oracle
    auto sig = sine_signal(64, 32.0, 0.3);  // period 2
    p.autocorr_lags = {2};
    Tensor feats = extract_autocorr(single_block(sig), p, Mode::Hard);
    double want = oracle::autocorr_at(sig, 2);
    CHECK(feats[0] == doctest::Approx(want).epsilon(1e-9));
    CHECK(feats[0] > 0.95);
  }
  SUBCASE("white noise decorrelates") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    p.autocorr_lags = {1, 2, 3, 4, 5};
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> sig(256);
      for (auto& v : sig) v = unit(rng);
      Tensor feats = extract_autocorr(single_block(sig), p, Mode::Hard);
      for (double v : feats.values()) worst = std::max(worst, std::fabs(v));
    }
    CHECK(worst < 0.2);
  }
  SUBCASE("lag >= block size is rejected") {
    p.autocorr_lags = {40};
    CHECK_THROWS_AS(extract_autocorr(single_block(std::vector<double>(32, 1.0)), p, Mode::Hard),
                    std::invalid_argument);
  }
  SUBCASE("values stay within [-1-1e-6, 1+1e-6]") {
    std::mt19937_64 rng(37);
    Tensor blocks = random_blocks({2, 2, 40, 2}, rng, -2, 2);
    for (Mode mode : {Mode::Soft, Mode::Hard}) {
      Tensor feats = extract_autocorr(blocks, ExtractorParams::defaults(), mode);
      for (double v : feats.values()) {
        CHECK(v <= 1.0 + 1e-6);
        CHECK(v >= -1.0 - 1e-6);
      }
    }
  }
}

TEST_CASE("extract_all: width, zero signal, soft-hard agreement of smooth families") {
  ExtractorParams p = ExtractorParams::defaults();
  std::mt19937_64 rng(41);
  Tensor blocks = random_blocks({1, 2, 32, 3}, rng, -1, 1);
  AnchorTensor soft = extract_all(blocks, p, Mode::Soft);
  AnchorTensor hard = extract_all(blocks, p, Mode::Hard);
  CHECK(soft.values.shape() == Shape{1, 2, 3, 51});
  CHECK(soft.layout.total() == 51);

  // smooth families are computed by the same formulas in both modes
  for (const char* fam : {"filterbank", "spectral", "shape", "autocorr"}) {
    const FamilyRange& r = soft.layout.at(fam);
    for (std::size_t b = 0; b < 6; ++b)
      for (std::size_t k = r.begin; k < r.end; ++k) {
        double s = soft.values[b * 51 + k], h = hard.values[b * 51 + k];
        CHECK(std::fabs(s - h) / std::max(1.0, std::fabs(h)) < 1e-9);
      }
  }

  AnchorTensor zero = extract_all(Tensor::zeros({1, 1, 32, 1}), p, Mode::Hard);
  const FamilyRange& stats = zero.layout.at("statistics");
  for (std::size_t k = stats.begin; k < stats.end; ++k)
    CHECK(std::fabs(zero.values[k]) < 1e-3);  // eps conventions keep these near 0
  const FamilyRange& crossing = zero.layout.at("crossing");
  for (std::size_t k = crossing.begin; k < crossing.end; ++k)
    CHECK(zero.values[k] == doctest::Approx(0.0));
}

TEST_CASE("soft-to-hard convergence is monotone for crossing and quantile families") {
  std::mt19937_64 rng(43);
  for (const char* fam : {"crossing", "quantiles"}) {
    // quantiles converge to an order statistic, so the floor is an
    // inter-sample gap; a long block keeps that below the sweep tail
    Tensor blocks = fam[0] == 'c' ? random_blocks({2, 1, 16, 2}, rng, -0.5, 0.5)
                                  : random_blocks({1, 1, 1024, 2}, rng, -0.5, 0.5);
    double range = 1.0;
    ExtractorParams p = ExtractorParams::defaults();
    Tensor hard = fam[0] == 'c' ? extract_crossings(blocks, p, Mode::Hard)
                                : extract_quantiles(blocks, p, Mode::Hard);
    double prev = 1e300;
    for (double tau_scale : {1.0, 1e-1, 1e-2, 1e-3}) {
      if (fam[0] == 'c')
        p.tau_cross = tau_scale * range;
      else
        p.tau_quant = tau_scale * range;
      Tensor soft = fam[0] == 'c' ? extract_crossings(blocks, p, Mode::Soft)
                                  : extract_quantiles(blocks, p, Mode::Soft);
      double dev = 0.0;
      for (std::size_t i = 0; i < soft.size(); ++i)
        dev = std::max(dev, std::fabs(soft[i] - hard[i]));
      CHECK(dev <= prev + 1e-9);
      prev = dev;
    }
  }
}

TEST_CASE("statistics invariances under bias and scaling") {
  ExtractorParams p = ExtractorParams::defaults();
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> dist(-1, 1);
  std::vector<double> sig(32), shifted(32), scaled(32);
  double c = 2.31, a = 1.7;
  for (std::size_t t = 0; t < 32; ++t) {
    sig[t] = dist(rng);
    shifted[t] = sig[t] + c;
    scaled[t] = a * sig[t];
  }
  Tensor base = extract_all(single_block(sig), p, Mode::Hard).values;
  Tensor moved = extract_all(single_block(shifted), p, Mode::Hard).values;
  FamilyLayout layout = p.layout_for(32);

  const FamilyRange& stats = layout.at("statistics");
  CHECK(moved[stats.begin + 0] == doctest::Approx(base[stats.begin + 0] + c).epsilon(1e-12));
  CHECK(moved[stats.begin + 4] == doctest::Approx(base[stats.begin + 4]).epsilon(1e-9));  // std
  const FamilyRange& shape = layout.at("shape");
  for (std::size_t k = shape.begin; k < shape.end; ++k)
    CHECK(std::fabs(moved[k] - base[k]) < 1e-9);
  const FamilyRange& crossing = layout.at("crossing");
  CHECK(std::fabs(moved[crossing.begin + 1] - base[crossing.begin + 1]) < 1e-9);  // mean-crossing
  const FamilyRange& autoc = layout.at("autocorr");
  for (std::size_t k = autoc.begin; k < autoc.end; ++k)
    CHECK(std::fabs(moved[k] - base[k]) < 1e-9);

  // scale equivariance of quantiles and soft min/max when tau follows range
  ExtractorParams p_base = ExtractorParams::defaults();
  p_base.tau_quant = p_base.tau_stat = 0.01;
  ExtractorParams p_scaled = ExtractorParams::defaults();
  p_scaled.tau_quant = p_scaled.tau_stat = 0.01 * a;
  Tensor q1 = extract_quantiles(single_block(sig), p_base, Mode::Soft);
  Tensor q2 = extract_quantiles(single_block(scaled), p_scaled, Mode::Soft);
  for (std::size_t i = 0; i < q1.size(); ++i)
    CHECK(q2[i] == doctest::Approx(a * q1[i]).epsilon(1e-6));
  Tensor s1 = extract_statistics(single_block(sig), p_base, Mode::Soft);
  Tensor s2 = extract_statistics(single_block(scaled), p_scaled, Mode::Soft);
  for (std::size_t i : {1, 2})  // soft-min, soft-max
    CHECK(s2[i] == doctest::Approx(a * s1[i]).epsilon(1e-6));
}

TEST_CASE("the quantile divergence fallback stays untriggered on generic signals") {
  std::mt19937_64 rng(61);
  ExtractorParams p = ExtractorParams::defaults();
  p.newton_fallback_count = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor blocks = random_blocks({2, 2, 24, 2}, rng, -2, 2);
    extract_quantiles(blocks, p, Mode::Soft);
  }
  CHECK(p.newton_fallback_count == 0);
}

TEST_CASE("extract_all is differentiable end to end") {
  std::mt19937_64 rng(53);
  Shape shape{1, 1, 32, 2};
  Tensor blocks = random_blocks(shape, rng, -1, 1);
  ExtractorParams p = ExtractorParams::defaults();
  std::mt19937_64 wrng(99);
  Tensor weights = random_blocks({1, 1, 2, 51}, wrng, -1, 1);
  auto f = [&](const Tensor& x) {
    AnchorTensor anchors = extract_all(reshape(x, shape), p, Mode::Soft);
    return sum_all(mul(anchors.values, weights));
  };
  CHECK(grad_check(f, reshape(blocks, {shape_numel(shape)}), 1e-5) < 1e-4);
}
