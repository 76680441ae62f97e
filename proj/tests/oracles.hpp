// Independent reference computations used by the tests. Everything here is
// deliberately naive (O(n^2) DFT, direct sliding products, sort-based
// quantiles) and shares no code with the library paths it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <vector>

namespace oracle {

inline std::vector<std::complex<double>> dft(const std::vector<double>& x) {
  const double pi = 3.14159265358979323846;
  std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      double ang = -2.0 * pi * double(k) * double(t) / double(n);
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

inline std::vector<double> dft_magnitude(const std::vector<double>& x) {
  auto full = dft(x);
  std::vector<double> mags(x.size() / 2 + 1);
  for (std::size_t k = 0; k < mags.size(); ++k) mags[k] = std::abs(full[k]);
  return mags;
}

inline std::vector<double> sliding_dot(const std::vector<double>& sig,
                                       const std::vector<double>& ker, std::size_t stride = 1) {
  std::vector<double> out;
  for (std::size_t j = 0; j + ker.size() <= sig.size(); j += stride) {
    double acc = 0.0;
    for (std::size_t t = 0; t < ker.size(); ++t) acc += sig[j + t] * ker[t];
    out.push_back(acc);
  }
  return out;
}

inline double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
}

// Linear-interpolated empirical quantile (midpoint convention via h=p*(m-1)).
inline double quantile_sorted(std::vector<double> x, double p) {
  std::sort(x.begin(), x.end());
  double h = p * double(x.size() - 1);
  std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= x.size()) return x.back();
  double frac = h - double(lo);
  return x[lo] + frac * (x[lo + 1] - x[lo]);
}

inline int sign_changes(const std::vector<double>& x) {
  int count = 0;
  for (std::size_t t = 0; t + 1 < x.size(); ++t)
    if (x[t] * x[t + 1] < 0.0) ++count;
  return count;
}

inline double autocorr_at(const std::vector<double>& x, std::size_t lag, double eps = 1e-8) {
  double mu = mean(x);
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t + lag < x.size(); ++t) num += (x[t] - mu) * (x[t + lag] - mu);
  for (double v : x) den += (v - mu) * (v - mu);
  return num / (den + eps);
}

inline std::size_t block_count_enum(std::size_t len, std::size_t m, std::size_t stride) {
  std::size_t count = 0;
  for (std::size_t start = 0; start + m <= len; start += stride) ++count;
  return count;
}

}  // namespace oracle
