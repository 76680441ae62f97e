#include "tcnet/features.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tcnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

// clamped so a band edge touching the boundary stays a finite parameter
double logit(double u) {
  u = std::clamp(u, 1e-4, 1.0 - 1e-4);
  return std::log(u / (1.0 - u));
}
double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct BlockDims {
  std::size_t batch, blocks, len, chans, rows;
};

BlockDims block_dims(const Tensor& blocks, const char* who) {
  if (!blocks.defined() || blocks.rank() != 4)
    throw std::invalid_argument(std::string(who) + ": blocks must be B x N x m x C, got " +
                                (blocks.defined() ? shape_str(blocks.shape()) : "undefined"));
  BlockDims d{blocks.extent(0), blocks.extent(1), blocks.extent(2), blocks.extent(3), 0};
  d.rows = d.batch * d.blocks * d.chans;
  return d;
}

// B x N x m x C -> (B*N*C) x m, one row per signal
Tensor to_rows(const Tensor& blocks, const BlockDims& d) {
  Tensor t = transpose(blocks, {0, 1, 3, 2});
  return reshape(t, {d.rows, d.len});
}

Tensor from_rows(const Tensor& rows, const BlockDims& d, std::size_t width) {
  return reshape(rows, {d.batch, d.blocks, d.chans, width});
}

// Plain-value signal walk for hard mode; fn(row, signal).
template <typename Fn>
void for_each_signal(const Tensor& blocks, const BlockDims& d, Fn&& fn) {
  const auto& v = blocks.values();
  std::vector<double> sig(d.len);
  std::size_t row = 0;
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t n = 0; n < d.blocks; ++n)
      for (std::size_t c = 0; c < d.chans; ++c, ++row) {
        for (std::size_t t = 0; t < d.len; ++t)
          sig[t] = v[((b * d.blocks + n) * d.len + t) * d.chans + c];
        fn(row, sig);
      }
}

std::vector<double> hamming(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * double(i) / double(n - 1));
  return w;
}

// basis[t*bins + k] = cos / -sin (2 pi k t / n)
std::pair<std::vector<double>, std::vector<double>> dft_basis_vals(std::size_t n,
                                                                   std::size_t bins) {
  std::vector<double> c(n * bins), s(n * bins);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < bins; ++k) {
      double ang = 2.0 * kPi * double(k) * double(t) / double(n);
      c[t * bins + k] = std::cos(ang);
      s[t * bins + k] = -std::sin(ang);
    }
  return {std::move(c), std::move(s)};
}

double hard_quantile(std::vector<double> x, double p) {
  std::sort(x.begin(), x.end());
  double h = p * double(x.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= x.size()) return x.back();
  return x[lo] + (h - double(lo)) * (x[lo + 1] - x[lo]);
}

double autocorr_value(const std::vector<double>& s, std::size_t lag, double eps) {
  double mu = 0.0;
  for (double v : s) mu += v;
  mu /= double(s.size());
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t + lag < s.size(); ++t) num += (s[t] - mu) * (s[t + lag] - mu);
  for (double v : s) den += (v - mu) * (v - mu);
  return num / (den + eps);
}

}  // namespace

// ---------------------------------------------------------------------------
// layout / params
// ---------------------------------------------------------------------------

const FamilyRange& FamilyLayout::at(const std::string& name) const {
  for (const auto& f : families)
    if (f.name == name) return f;
  throw std::invalid_argument("FamilyLayout: no family named '" + name + "'");
}

void FamilyLayout::validate() const {
  std::size_t cursor = 0;
  for (const auto& f : families) {
    if (f.begin != cursor || f.end <= f.begin)
      throw std::invalid_argument("FamilyLayout: ranges must be contiguous and non-empty");
    cursor = f.end;
  }
}

ExtractorParams ExtractorParams::defaults(double sampling_rate) {
  ExtractorParams p;
  p.sampling_rate = sampling_rate;
  std::size_t F = p.n_filters;
  std::vector<double> low_logits(F), high_logits(F);
  // log-uniform band edge grid over (0.01, 0.5)
  auto edge = [&](std::size_t i) { return 0.01 * std::pow(50.0, double(i) / double(F)); };
  for (std::size_t f = 0; f < F; ++f) {
    double lo = edge(f), hi = edge(f + 1);
    high_logits[f] = logit(hi / 0.5);
    low_logits[f] = logit(lo / hi);
  }
  p.sinc_low_logits = Tensor::param({F}, std::move(low_logits));
  p.sinc_high_logits = Tensor::param({F}, std::move(high_logits));
  p.gauss_log_width = Tensor::param({}, {std::log(8.0)});
  return p;
}

void ExtractorParams::validate(std::size_t block_size) const {
  if (block_size < 4) throw std::invalid_argument("ExtractorParams: block_size must be >= 4");
  if (kernel_len > block_size)
    throw std::invalid_argument("ExtractorParams: sinc kernel (" + std::to_string(kernel_len) +
                                ") longer than block (" + std::to_string(block_size) + ")");
  if (tau_stat <= 0 || tau_cross <= 0 || tau_quant <= 0)
    throw std::invalid_argument("ExtractorParams: temperatures must be positive");
  for (double p : quantile_levels)
    if (p <= 0.0 || p >= 1.0)
      throw std::invalid_argument("ExtractorParams: quantile levels must lie in (0,1)");
  for (std::size_t lag : autocorr_lags)
    if (lag == 0 || lag >= block_size)
      throw std::invalid_argument("ExtractorParams: autocorr lag " + std::to_string(lag) +
                                  " must be positive and < block size");
  if (!sinc_low_logits.defined() || !sinc_high_logits.defined() || !gauss_log_width.defined())
    throw std::invalid_argument("ExtractorParams: learnable tensors not initialized");
}

std::vector<std::pair<double, double>> ExtractorParams::band_edges() const {
  std::vector<std::pair<double, double>> out(n_filters);
  for (std::size_t f = 0; f < n_filters; ++f) {
    double hi = 0.5 * sigmoid_d(sinc_high_logits[f]);
    double lo = hi * sigmoid_d(sinc_low_logits[f]);
    out[f] = {lo, hi};
  }
  return out;
}

std::vector<Tensor> ExtractorParams::learnable() const {
  return {sinc_low_logits, sinc_high_logits, gauss_log_width};
}

FamilyLayout ExtractorParams::layout_for(std::size_t block_size) const {
  std::size_t frame = spectral_frame(block_size);
  std::vector<std::size_t> widths = {
      n_filters, frame / 2 + 1 + 4, 5, 2, 5, quantile_levels.size(), autocorr_lags.size()};
  static const char* names[] = {"filterbank", "spectral", "statistics", "shape",
                                "crossing",   "quantiles", "autocorr"};
  FamilyLayout layout;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    layout.families.push_back({names[i], cursor, cursor + widths[i]});
    cursor += widths[i];
  }
  return layout;
}

// ---------------------------------------------------------------------------
// filterbank
// ---------------------------------------------------------------------------

namespace {

// Band-pass sinc kernels, one row per filter, Hamming-windowed.
Tensor sinc_kernels_soft(const ExtractorParams& p) {
  std::size_t F = p.n_filters, klen = p.kernel_len;
  std::size_t half = (klen - 1) / 2;
  std::vector<double> t_safe(klen), pi_t(klen);
  for (std::size_t i = 0; i < klen; ++i) {
    double t = double(i) - double(half);
    t_safe[i] = (i == half) ? 1.0 : t;  // center column handled separately
    pi_t[i] = kPi * t_safe[i];
  }
  Tensor f_high = mul_scalar(sigmoid(p.sinc_high_logits), 0.5);
  Tensor f_low = mul(f_high, sigmoid(p.sinc_low_logits));
  Tensor fh = reshape(f_high, {F, 1});
  Tensor fl = reshape(f_low, {F, 1});
  Tensor tv = Tensor::from({1, klen}, t_safe);
  Tensor arg_hi = mul_scalar(mul(fh, tv), 2.0 * kPi);
  Tensor arg_lo = mul_scalar(mul(fl, tv), 2.0 * kPi);
  Tensor raw = divide(sub(sin_op(arg_hi), sin_op(arg_lo)), Tensor::from({1, klen}, pi_t));
  Tensor center = mul_scalar(sub(fh, fl), 2.0);
  Tensor kernel = concat({slice(raw, 1, 0, half), center, slice(raw, 1, half + 1, klen)}, 1);
  return mul(kernel, Tensor::from({1, klen}, hamming(klen)));
}

std::vector<double> sinc_kernels_hard(const ExtractorParams& p) {
  std::size_t F = p.n_filters, klen = p.kernel_len;
  std::size_t half = (klen - 1) / 2;
  auto edges = p.band_edges();
  auto ham = hamming(klen);
  std::vector<double> k(F * klen);
  for (std::size_t f = 0; f < F; ++f) {
    auto [lo, hi] = edges[f];
    for (std::size_t i = 0; i < klen; ++i) {
      double t = double(i) - double(half);
      double v = (i == half) ? 2.0 * (hi - lo)
                             : (std::sin(2.0 * kPi * hi * t) - std::sin(2.0 * kPi * lo * t)) /
                                   (kPi * t);
      k[f * klen + i] = v * ham[i];
    }
  }
  return k;
}

}  // namespace

Tensor extract_filterbank(const Tensor& blocks, const ExtractorParams& params, Mode mode) {
  BlockDims d = block_dims(blocks, "extract_filterbank");
  if (params.kernel_len > d.len)
    throw std::invalid_argument("extract_filterbank: block of " + std::to_string(d.len) +
                                " samples is shorter than the kernel (" +
                                std::to_string(params.kernel_len) + ")");
  std::size_t F = params.n_filters, klen = params.kernel_len;
  if (mode == Mode::Soft) {
    Tensor rows = to_rows(blocks, d);
    Tensor kernels = sinc_kernels_soft(params);
    Tensor resp = conv1d(reshape(rows, {d.rows, 1, d.len}), reshape(kernels, {F, 1, klen}), 1);
    Tensor feat = mean_axis(mul(resp, resp), 2);
    return from_rows(feat, d, F);
  }
  auto kernels = sinc_kernels_hard(params);
  std::size_t lout = d.len - klen + 1;
  std::vector<double> out(d.rows * F);
  for_each_signal(blocks, d, [&](std::size_t row, const std::vector<double>& sig) {
    for (std::size_t f = 0; f < F; ++f) {
      double energy = 0.0;
      for (std::size_t j = 0; j < lout; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < klen; ++t) acc += sig[j + t] * kernels[f * klen + t];
        energy += acc * acc;
      }
      out[row * F + f] = energy / double(lout);
    }
  });
  return from_rows(Tensor::from({d.rows, F}, std::move(out)), d, F);
}

// ---------------------------------------------------------------------------
// spectral
// ---------------------------------------------------------------------------

Tensor extract_spectral(const Tensor& blocks, const ExtractorParams& params, Mode mode) {
  BlockDims d = block_dims(blocks, "extract_spectral");
  if (d.len < 4) throw std::invalid_argument("extract_spectral: block must have >= 4 samples");
  std::size_t frame = ExtractorParams::spectral_frame(d.len);
  std::size_t hop = frame / 2;
  std::size_t nf = (d.len - frame) / hop + 1;
  std::size_t bins = frame / 2 + 1;
  std::size_t width = bins + 4;
  double eps = params.epsilon;
  auto [cb, sb] = dft_basis_vals(frame, bins);
  std::vector<double> freqs(bins);
  for (std::size_t k = 0; k < bins; ++k)
    freqs[k] = double(k) * params.sampling_rate / double(frame);

  if (mode == Mode::Soft) {
    Tensor rows = to_rows(blocks, d);
    std::vector<Tensor> frame_slices;
    frame_slices.reserve(nf);
    for (std::size_t j = 0; j < nf; ++j)
      frame_slices.push_back(reshape(slice(rows, 1, j * hop, j * hop + frame), {d.rows, 1, frame}));
    Tensor frames = nf == 1 ? frame_slices[0] : concat(frame_slices, 1);  // {R, nf, frame}

    // learnable Gaussian window, applied to the per-bin log-magnitudes only;
    // summaries use the unwindowed spectrum so a constant block stays DC-only
    std::vector<double> dev2(frame);
    for (std::size_t t = 0; t < frame; ++t) {
      double dt = double(t) - 0.5 * double(frame - 1);
      dev2[t] = dt * dt;
    }
    Tensor sigma = exp_op(params.gauss_log_width);
    Tensor win =
        exp_op(divide(Tensor::from({1, 1, frame}, dev2), mul_scalar(mul(sigma, sigma), -2.0)));
    Tensor wflat = reshape(mul(frames, win), {d.rows * nf, frame});
    Tensor ct = Tensor::from({frame, bins}, cb);
    Tensor st = Tensor::from({frame, bins}, sb);
    Tensor wre = matmul(wflat, ct);
    Tensor wim = matmul(wflat, st);
    Tensor wpower = add(mul(wre, wre), mul(wim, wim));
    Tensor logmag = mean_axis(reshape(log_op(add_scalar(wpower, 1.0)), {d.rows, nf, bins}), 1);

    Tensor uflat = reshape(frames, {d.rows * nf, frame});
    Tensor ure = matmul(uflat, ct);
    Tensor uim = matmul(uflat, st);
    Tensor upower = reshape(add(mul(ure, ure), mul(uim, uim)), {d.rows, nf, bins});
    Tensor pbar = mean_axis(upower, 1);  // {R, bins}
    Tensor q = divide(pbar, add_scalar(sum_axis(pbar, 1, true), eps));
    Tensor fk = Tensor::from({1, bins}, freqs);
    Tensor centroid = sum_axis(mul(q, fk), 1, true);  // {R,1}
    Tensor devf = sub(fk, centroid);
    Tensor bandwidth = sqrt_op(add_scalar(sum_axis(mul(q, mul(devf, devf)), 1, true), eps));
    Tensor entropy = neg(sum_axis(mul(q, log_op(add_scalar(q, eps))), 1, true));
    Tensor phase;
    if (nf >= 2) {
      Tensor theta = reshape(atan2_op(uim, ure), {d.rows, nf, bins});
      Tensor dth = wrap_angle(sub(slice(theta, 1, 1, nf), slice(theta, 1, 0, nf - 1)));
      phase = reshape(mean_axis(mean_axis(abs_op(dth), 2), 1), {d.rows, 1});
    } else {
      phase = Tensor::zeros({d.rows, 1});
    }
    Tensor out = concat({logmag, centroid, bandwidth, entropy, phase}, 1);
    return from_rows(out, d, width);
  }

  double sigma = std::exp(params.gauss_log_width.item());
  std::vector<double> win(frame);
  for (std::size_t t = 0; t < frame; ++t) {
    double dt = double(t) - 0.5 * double(frame - 1);
    win[t] = std::exp(-dt * dt / (2.0 * sigma * sigma));
  }
  std::vector<double> out(d.rows * width);
  for_each_signal(blocks, d, [&](std::size_t row, const std::vector<double>& sig) {
    std::vector<double> logmag(bins, 0.0), pbar(bins, 0.0);
    std::vector<std::vector<double>> thetas(nf, std::vector<double>(bins));
    for (std::size_t j = 0; j < nf; ++j) {
      for (std::size_t k = 0; k < bins; ++k) {
        double wre = 0, wim = 0, ure = 0, uim = 0;
        for (std::size_t t = 0; t < frame; ++t) {
          double s = sig[j * hop + t];
          double c = cb[t * bins + k], sn = sb[t * bins + k];
          wre += s * win[t] * c;
          wim += s * win[t] * sn;
          ure += s * c;
          uim += s * sn;
        }
        logmag[k] += std::log1p(wre * wre + wim * wim);
        pbar[k] += ure * ure + uim * uim;
        thetas[j][k] = std::atan2(uim, ure);
      }
    }
    double psum = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      logmag[k] /= double(nf);
      pbar[k] /= double(nf);
      psum += pbar[k];
    }
    double centroid = 0, entropy = 0;
    std::vector<double> q(bins);
    for (std::size_t k = 0; k < bins; ++k) {
      q[k] = pbar[k] / (psum + eps);
      centroid += q[k] * freqs[k];
      entropy -= q[k] * std::log(q[k] + eps);
    }
    double bw = 0;
    for (std::size_t k = 0; k < bins; ++k) {
      double dv = freqs[k] - centroid;
      bw += q[k] * dv * dv;
    }
    bw = std::sqrt(bw + eps);
    double phase = 0.0;
    if (nf >= 2) {
      for (std::size_t j = 1; j < nf; ++j)
        for (std::size_t k = 0; k < bins; ++k)
          phase += std::fabs(std::remainder(thetas[j][k] - thetas[j - 1][k], 2.0 * kPi));
      phase /= double((nf - 1) * bins);
    }
    double* o = &out[row * width];
    std::copy(logmag.begin(), logmag.end(), o);
    o[bins] = centroid;
    o[bins + 1] = bw;
    o[bins + 2] = entropy;
    o[bins + 3] = phase;
  });
  return from_rows(Tensor::from({d.rows, width}, std::move(out)), d, width);
}

// ---------------------------------------------------------------------------
// statistics
// ---------------------------------------------------------------------------

Tensor extract_statistics(const Tensor& blocks, const ExtractorParams& params, Mode mode) {
  BlockDims d = block_dims(blocks, "extract_statistics");
  if (d.len < 2) throw std::invalid_argument("extract_statistics: block must have >= 2 samples");
  double eps = params.epsilon, tau = params.tau_stat;
  double logm = std::log(double(d.len));
  if (mode == Mode::Soft) {
    Tensor rows = to_rows(blocks, d);
    Tensor mu = mean_axis(rows, 1, true);  // {R,1}
    Tensor smin = add_scalar(
        mul_scalar(logsumexp_axis(mul_scalar(rows, -1.0 / tau), 1, true), -tau), tau * logm);
    Tensor smax = add_scalar(
        mul_scalar(logsumexp_axis(mul_scalar(rows, 1.0 / tau), 1, true), tau), -tau * logm);
    Tensor rms = sqrt_op(add_scalar(mean_axis(mul(rows, rows), 1, true), eps));
    Tensor ctr = sub(rows, mu);
    Tensor stddev = sqrt_op(add_scalar(mean_axis(mul(ctr, ctr), 1, true), eps));
    return from_rows(concat({mu, smin, smax, rms, stddev}, 1), d, 5);
  }
  std::vector<double> out(d.rows * 5);
  for_each_signal(blocks, d, [&](std::size_t row, const std::vector<double>& sig) {
    double mu = 0, lo = sig[0], hi = sig[0], sq = 0;
    for (double v : sig) {
      mu += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sq += v * v;
    }
    mu /= double(d.len);
    double var = 0;
    for (double v : sig) var += (v - mu) * (v - mu);
    var /= double(d.len);
    double* o = &out[row * 5];
    o[0] = mu;
    o[1] = lo;
    o[2] = hi;
    o[3] = std::sqrt(sq / double(d.len) + eps);
    o[4] = std::sqrt(var + eps);
  });
  return from_rows(Tensor::from({d.rows, 5}, std::move(out)), d, 5);
}

// ---------------------------------------------------------------------------
// shape (skewness / excess kurtosis)
// ---------------------------------------------------------------------------

Tensor extract_shape(const Tensor& blocks, const ExtractorParams& params, Mode mode) {
  BlockDims d = block_dims(blocks, "extract_shape");
  if (d.len < 4) throw std::invalid_argument("extract_shape: block must have >= 4 samples");
  double eps = params.epsilon;
  if (mode == Mode::Soft) {
    Tensor rows = to_rows(blocks, d);
    Tensor ctr = sub(rows, mean_axis(rows, 1, true));
    Tensor c2 = mul(ctr, ctr);
    Tensor m2 = mean_axis(c2, 1, true);
    Tensor m3 = mean_axis(mul(c2, ctr), 1, true);
    Tensor m4 = mean_axis(mul(c2, c2), 1, true);
    Tensor skew = divide(m3, pow_op(add_scalar(m2, eps), 1.5));
    Tensor kurt = add_scalar(divide(m4, pow_op(add_scalar(m2, eps), 2.0)), -3.0);
    return from_rows(concat({skew, kurt}, 1), d, 2);
  }
  std::vector<double> out(d.rows * 2);
  for_each_signal(blocks, d, [&](std::size_t row, const std::vector<double>& sig) {
    double mu = 0;
    for (double v : sig) mu += v;
    mu /= double(d.len);
    double m2 = 0, m3 = 0, m4 = 0;
    for (double v : sig) {
      double c = v - mu;
      m2 += c * c;
      m3 += c * c * c;
      m4 += c * c * c * c;
    }
    m2 /= double(d.len);
    m3 /= double(d.len);
    m4 /= double(d.len);
    out[row * 2] = m3 / std::pow(m2 + eps, 1.5);
    out[row * 2 + 1] = m4 / ((m2 + eps) * (m2 + eps)) - 3.0;
  });
  return from_rows(Tensor::from({d.rows, 2}, std::move(out)), d, 2);
}

// ---------------------------------------------------------------------------
// crossings
// ---------------------------------------------------------------------------

namespace {

// soft lag-1 autocorrelation of a {R,m} tensor
Tensor soft_lag1_corr(const Tensor& seq, std::size_t m, double eps) {
  Tensor ctr = sub(seq, mean_axis(seq, 1, true));
  Tensor num = sum_axis(mul(slice(ctr, 1, 0, m - 1), slice(ctr, 1, 1, m)), 1, true);
  Tensor den = add_scalar(sum_axis(mul(ctr, ctr), 1, true), eps);
  return divide(num, den);
}

double hard_lag1_corr(const std::vector<double>& s, double eps) {
  double mu = 0;
  for (double v : s) mu += v;
  mu /= double(s.size());
  double num = 0, den = 0;
  for (std::size_t t = 0; t + 1 < s.size(); ++t) num += (s[t] - mu) * (s[t + 1] - mu);
  for (double v : s) den += (v - mu) * (v - mu);
  return num / (den + eps);
}

}  // namespace

Tensor extract_crossings(const Tensor& blocks, const ExtractorParams& params, Mode mode) {
  BlockDims d = block_dims(blocks, "extract_crossings");
  std::size_t m = d.len;
  if (m < 3) throw std::invalid_argument("extract_crossings: block must have >= 3 samples");
  double tau = params.tau_cross, eps = params.epsilon;
  if (mode == Mode::Soft) {
    Tensor rows = to_rows(blocks, d);
    auto soft_rate = [&](const Tensor& seq, std::size_t len) {
      Tensor prod = mul(slice(seq, 1, 0, len - 1), slice(seq, 1, 1, len));
      return mean_axis(sigmoid(mul_scalar(prod, -1.0 / tau)), 1, true);
    };
    Tensor zcr = soft_rate(rows, m);
    Tensor centered = sub(rows, mean_axis(rows, 1, true));
    Tensor mcr = soft_rate(centered, m);
    Tensor diff = sub(slice(rows, 1, 1, m), slice(rows, 1, 0, m - 1));
    Tensor dzcr = soft_rate(diff, m - 1);
    Tensor regularity = soft_lag1_corr(tanh_op(mul_scalar(rows, 1.0 / tau)), m, eps);
    Tensor dd = mul(slice(diff, 1, 0, m - 2), slice(diff, 1, 1, m - 1));
    Tensor extrema = mean_axis(sigmoid(mul_scalar(dd, -1.0 / tau)), 1, true);
    return from_rows(concat({zcr, mcr, dzcr, regularity, extrema}, 1), d, 5);
  }
  std::vector<double> out(d.rows * 5);
  for_each_signal(blocks, d, [&](std::size_t row, const std::vector<double>& sig) {
    auto rate = [](const std::vector<double>& s) {
      int count = 0;
      for (std::size_t t = 0; t + 1 < s.size(); ++t)
        if (s[t] * s[t + 1] < 0.0) ++count;
      return double(count) / double(s.size() - 1);
    };
    double mu = 0;
    for (double v : sig) mu += v;
    mu /= double(sig.size());
    std::vector<double> centered(sig.size()), diff(sig.size() - 1), signs(sig.size());
    for (std::size_t t = 0; t < sig.size(); ++t) {
      centered[t] = sig[t] - mu;
      signs[t] = sig[t] > 0 ? 1.0 : (sig[t] < 0 ? -1.0 : 0.0);
    }
    for (std::size_t t = 0; t + 1 < sig.size(); ++t) diff[t] = sig[t + 1] - sig[t];
    int extrema = 0;
    for (std::size_t t = 0; t + 1 < diff.size(); ++t)
      if (diff[t] * diff[t + 1] < 0.0) ++extrema;
    double* o = &out[row * 5];
    o[0] = rate(sig);
    o[1] = rate(centered);
    o[2] = rate(diff);
    o[3] = hard_lag1_corr(signs, eps);
    o[4] = double(extrema) / double(sig.size() - 2);
  });
  return from_rows(Tensor::from({d.rows, 5}, std::move(out)), d, 5);
}

// ---------------------------------------------------------------------------
// quantiles
// ---------------------------------------------------------------------------

Tensor extract_quantiles(const Tensor& blocks, const ExtractorParams& params, Mode mode) {
  BlockDims d = block_dims(blocks, "extract_quantiles");
  std::size_t m = d.len, nl = params.quantile_levels.size();
  if (m < 2) throw std::invalid_argument("extract_quantiles: block must have >= 2 samples");
  double tau = params.tau_quant;

  if (mode == Mode::Hard) {
    std::vector<double> out(d.rows * nl);
    for_each_signal(blocks, d, [&](std::size_t row, const std::vector<double>& sig) {
      for (std::size_t l = 0; l < nl; ++l)
        out[row * nl + l] = hard_quantile(sig, params.quantile_levels[l]);
    });
    return from_rows(Tensor::from({d.rows, nl}, std::move(out)), d, nl);
  }

  // soft ranking: solve mean_i sigmoid((q - x_i)/tau) = p with 20 unrolled
  // Newton steps from q0 = mean, differentiable through the iterations.
  // The temperature anneals from ~range/4 down to tau over the first 12
  // steps: at wide temperatures the objective has no flat plateaus, so the
  // iterate walks into the sharp root's basin before the final polish.
  Tensor rows = to_rows(blocks, d);
  Tensor xs = reshape(rows, {d.rows, 1, m});
  Tensor levels = Tensor::from({1, nl}, params.quantile_levels);
  Tensor q = matmul(mean_axis(rows, 1, true), Tensor::full({1, nl}, 1.0));
  // smooth per-row range proxy, kept in the graph so damping stays differentiable
  Tensor lse_hi = logsumexp_axis(mul_scalar(rows, 1.0 / tau), 1, true);
  Tensor lse_lo = logsumexp_axis(mul_scalar(rows, -1.0 / tau), 1, true);
  Tensor cap = add_scalar(mul_scalar(add(lse_hi, lse_lo), 0.5 * tau), tau);  // {R,1}
  Tensor log_tau0 = log_op(mul_scalar(cap, 0.5));
  Tensor last_update;
  for (int step = 0; step < 20; ++step) {
    double anneal = std::min(1.0, double(step) / 12.0);
    Tensor tau_k = exp_op(add_scalar(mul_scalar(log_tau0, 1.0 - anneal),
                                     anneal * std::log(tau)));  // {R,1}
    Tensor inv_tau = divide(Tensor::scalar(1.0), tau_k);
    Tensor diff = sub(reshape(q, {d.rows, nl, 1}), xs);  // {R, nl, m}
    Tensor sig = sigmoid(mul(diff, reshape(inv_tau, {d.rows, 1, 1})));
    Tensor gval = sub(mean_axis(sig, 2), levels);  // {R, nl}
    Tensor sp = mul(sig, add_scalar(neg(sig), 1.0));
    Tensor gprime = add_scalar(mul(mean_axis(sp, 2), inv_tau), 1e-9);
    Tensor raw = divide(gval, gprime);
    Tensor ratio = divide(raw, cap);
    last_update = divide(raw, sqrt_op(add_scalar(mul(ratio, ratio), 1.0)));
    q = sub(q, last_update);
  }

  // divergence guard: fall back to the hard quantile with zero gradient
  std::vector<double> mask(d.rows * nl, 0.0), fallback(d.rows * nl, 0.0);
  bool any = false;
  const auto& upd = last_update.values();
  for_each_signal(blocks, d, [&](std::size_t r, const std::vector<double>& sig) {
    auto [lo_it, hi_it] = std::minmax_element(sig.begin(), sig.end());
    double range = *hi_it - *lo_it;
    for (std::size_t l = 0; l < nl; ++l) {
      std::size_t i = r * nl + l;
      if (!std::isfinite(q[i]) || std::fabs(upd[i]) > std::max(range, 1e-12)) {
        mask[i] = 1.0;
        fallback[i] = hard_quantile(sig, params.quantile_levels[l]);
        any = true;
        ++params.newton_fallback_count;
      }
    }
  });
  if (any) {
    Tensor keep = Tensor::from({d.rows, nl}, mask);
    Tensor inv = add_scalar(neg(keep), 1.0);
    q = add(mul(q, inv), mul(Tensor::from({d.rows, nl}, fallback), keep));
  }
  return from_rows(q, d, nl);
}

// ---------------------------------------------------------------------------
// autocorrelation
// ---------------------------------------------------------------------------

Tensor extract_autocorr(const Tensor& blocks, const ExtractorParams& params, Mode mode) {
  BlockDims d = block_dims(blocks, "extract_autocorr");
  std::size_t m = d.len, nlag = params.autocorr_lags.size();
  for (std::size_t lag : params.autocorr_lags)
    if (lag >= m)
      throw std::invalid_argument("extract_autocorr: lag " + std::to_string(lag) +
                                  " >= block size " + std::to_string(m));
  double eps = params.epsilon;
  if (mode == Mode::Soft) {
    Tensor rows = to_rows(blocks, d);
    Tensor ctr = sub(rows, mean_axis(rows, 1, true));
    Tensor den = add_scalar(sum_axis(mul(ctr, ctr), 1, true), eps);
    std::vector<Tensor> cols;
    cols.reserve(nlag);
    for (std::size_t lag : params.autocorr_lags) {
      Tensor num = sum_axis(mul(slice(ctr, 1, 0, m - lag), slice(ctr, 1, lag, m)), 1, true);
      cols.push_back(divide(num, den));
    }
    return from_rows(concat(cols, 1), d, nlag);
  }
  std::vector<double> out(d.rows * nlag);
  for_each_signal(blocks, d, [&](std::size_t row, const std::vector<double>& sig) {
    for (std::size_t l = 0; l < nlag; ++l)
      out[row * nlag + l] = autocorr_value(sig, params.autocorr_lags[l], eps);
  });
  return from_rows(Tensor::from({d.rows, nlag}, std::move(out)), d, nlag);
}

// ---------------------------------------------------------------------------
// assembly
// ---------------------------------------------------------------------------

AnchorTensor extract_all(const Tensor& blocks, const ExtractorParams& params, Mode mode) {
  BlockDims d = block_dims(blocks, "extract_all");
  params.validate(d.len);
  Tensor parts = concat(
      {
          extract_filterbank(blocks, params, mode),
          extract_spectral(blocks, params, mode),
          extract_statistics(blocks, params, mode),
          extract_shape(blocks, params, mode),
          extract_crossings(blocks, params, mode),
          extract_quantiles(blocks, params, mode),
          extract_autocorr(blocks, params, mode),
      },
      3);
  AnchorTensor anchors;
  anchors.values = parts;
  anchors.layout = params.layout_for(d.len);
  anchors.layout.validate();
  anchors.block_size = d.len;
  anchors.sampling_rate = params.sampling_rate;
  return anchors;
}

}  // namespace tcnet
