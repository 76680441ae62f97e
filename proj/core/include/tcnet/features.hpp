#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tcnet/tensor.hpp"

namespace tcnet {

// Soft = smoothed, temperature-controlled, differentiable variants.
// Hard = exact formulas (sorts, sign counts, true min/max), no tape.
enum class Mode { Soft, Hard };

struct FamilyRange {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t width() const { return end - begin; }
};

// Fixed partition of the anchor dimension. Family order is identical in soft
// and hard modes: filterbank, spectral, statistics, shape, crossing,
// quantiles, autocorr.
struct FamilyLayout {
  std::vector<FamilyRange> families;

  std::size_t total() const { return families.empty() ? 0 : families.back().end; }
  std::size_t count() const { return families.size(); }
  const FamilyRange& at(const std::string& name) const;
  bool operator==(const FamilyLayout&) const = default;

  void validate() const;
};

struct ExtractorParams {
  // learnable: band-edge logits, f_high = 0.5*sigmoid(high), f_low = f_high*sigmoid(low)
  Tensor sinc_low_logits;   // [F]
  Tensor sinc_high_logits;  // [F]
  Tensor gauss_log_width;   // scalar; sigma_w = exp(.)

  std::size_t n_filters = 8;
  std::size_t kernel_len = 31;
  double tau_stat = 0.1;
  double tau_cross = 0.1;
  double tau_quant = 0.1;
  std::vector<double> quantile_levels{0.1, 0.25, 0.5, 0.75, 0.9};
  std::vector<std::size_t> autocorr_lags{1, 2, 3, 4, 5};
  double epsilon = 1e-8;
  double sampling_rate = 50.0;

  mutable std::size_t newton_fallback_count = 0;

  // Band edges initialized log-uniform over (0.01, 0.5).
  static ExtractorParams defaults(double sampling_rate = 50.0);

  void validate(std::size_t block_size) const;
  // Current (f_low, f_high) pairs in normalized frequency.
  std::vector<std::pair<double, double>> band_edges() const;
  std::vector<Tensor> learnable() const;

  FamilyLayout layout_for(std::size_t block_size) const;
  static std::size_t spectral_frame(std::size_t block_size) { return std::min<std::size_t>(32, block_size); }
};

// Per-block, per-channel handcrafted feature values with an explicit family
// layout; values has shape B x N x C x D.
struct AnchorTensor {
  Tensor values;
  FamilyLayout layout;
  std::size_t block_size = 0;
  double sampling_rate = 0.0;
};

// All extractors take blocks of shape B x N x m x C and return per-(block,
// channel) features of shape B x N x C x width.
Tensor extract_filterbank(const Tensor& blocks, const ExtractorParams& params, Mode mode);
Tensor extract_spectral(const Tensor& blocks, const ExtractorParams& params, Mode mode);
Tensor extract_statistics(const Tensor& blocks, const ExtractorParams& params, Mode mode);
Tensor extract_shape(const Tensor& blocks, const ExtractorParams& params, Mode mode);
Tensor extract_crossings(const Tensor& blocks, const ExtractorParams& params, Mode mode);
Tensor extract_quantiles(const Tensor& blocks, const ExtractorParams& params, Mode mode);
Tensor extract_autocorr(const Tensor& blocks, const ExtractorParams& params, Mode mode);

AnchorTensor extract_all(const Tensor& blocks, const ExtractorParams& params, Mode mode);

}  // namespace tcnet
