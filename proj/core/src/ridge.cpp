#include "tcnet/ridge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "tcnet/model.hpp"

namespace tcnet {

namespace {

// in-place Cholesky solve of A W = B; A is n x n SPD, B is n x m
void cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n,
                    std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        if (sum <= 0.0)
          throw std::runtime_error(
              "ridge: singular system (collinear features with lambda = 0)");
        a[i * n + i] = std::sqrt(sum);
      } else {
        a[i * n + j] = sum / a[j * n + j];
      }
    }
  }
  // forward then backward substitution, column by column
  for (std::size_t col = 0; col < m; ++col) {
    for (std::size_t i = 0; i < n; ++i) {
      double sum = b[i * m + col];
      for (std::size_t k = 0; k < i; ++k) sum -= a[i * n + k] * b[k * m + col];
      b[i * m + col] = sum / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
      double sum = b[i * m + col];
      for (std::size_t k = i + 1; k < n; ++k) sum -= a[k * n + i] * b[k * m + col];
      b[i * m + col] = sum / a[i * n + i];
    }
  }
}

void column_stats(const FeatureMatrix& x, std::vector<double>& mean, std::vector<double>& std) {
  mean.assign(x.cols, 0.0);
  std.assign(x.cols, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) mean[c] += x.row(r)[c];
  for (auto& v : mean) v /= double(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) {
      double d = x.row(r)[c] - mean[c];
      std[c] += d * d;
    }
  for (auto& v : std) {
    v = std::sqrt(v / double(x.rows));
    if (v < 1e-12) v = 1.0;  // constant columns carry no signal post-centering
  }
}

}  // namespace

RidgeModel fit_ridge(const FeatureMatrix& x, const FeatureMatrix& y, double lambda) {
  if (x.rows != y.rows || x.rows < 2)
    throw std::invalid_argument("fit_ridge: need >= 2 aligned rows");
  if (lambda < 0) throw std::invalid_argument("fit_ridge: lambda must be >= 0");
  RidgeModel model;
  model.in = x.cols;
  model.out = y.cols;
  model.lambda = lambda;
  column_stats(x, model.x_mean, model.x_std);
  column_stats(y, model.y_mean, model.y_std);

  std::size_t n = x.cols, m = y.cols;
  std::vector<double> gram(n * n, 0.0), xty(n * m, 0.0), xrow(n);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* raw = x.row(r);
    for (std::size_t c = 0; c < n; ++c) xrow[c] = (raw[c] - model.x_mean[c]) / model.x_std[c];
    for (std::size_t i = 0; i < n; ++i) {
      if (xrow[i] == 0.0) continue;
      for (std::size_t j = 0; j <= i; ++j) gram[i * n + j] += xrow[i] * xrow[j];
      const double* yraw = y.row(r);
      for (std::size_t j = 0; j < m; ++j)
        xty[i * m + j] += xrow[i] * (yraw[j] - model.y_mean[j]) / model.y_std[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) gram[i * n + j] = gram[j * n + i];
    gram[i * n + i] += lambda;
  }
  cholesky_solve(gram, xty, n, m);
  model.w = std::move(xty);
  return model;
}

FeatureMatrix ridge_predict(const RidgeModel& model, const FeatureMatrix& x) {
  if (x.cols != model.in)
    throw std::invalid_argument("ridge_predict: expected " + std::to_string(model.in) +
                                " columns, got " + std::to_string(x.cols));
  FeatureMatrix out;
  out.rows = x.rows;
  out.cols = model.out;
  out.data.assign(x.rows * model.out, 0.0);
  std::vector<double> xrow(model.in);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* raw = x.row(r);
    for (std::size_t c = 0; c < model.in; ++c)
      xrow[c] = (raw[c] - model.x_mean[c]) / model.x_std[c];
    for (std::size_t j = 0; j < model.out; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < model.in; ++c) acc += xrow[c] * model.w[c * model.out + j];
      out.data[r * model.out + j] = acc * model.y_std[j] + model.y_mean[j];
    }
  }
  return out;
}

std::vector<double> r2_per_column(const FeatureMatrix& y_true, const FeatureMatrix& y_pred) {
  if (y_true.rows != y_pred.rows || y_true.cols != y_pred.cols)
    throw std::invalid_argument("r2_per_column: shape mismatch");
  if (y_true.rows < 2) throw std::invalid_argument("r2_per_column: need >= 2 rows");
  std::vector<double> out(y_true.cols);
  for (std::size_t c = 0; c < y_true.cols; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < y_true.rows; ++r) mean += y_true.row(r)[c];
    mean /= double(y_true.rows);
    double ss_tot = 0.0, ss_res = 0.0;
    for (std::size_t r = 0; r < y_true.rows; ++r) {
      double t = y_true.row(r)[c];
      double d = t - y_pred.row(r)[c];
      ss_tot += (t - mean) * (t - mean);
      ss_res += d * d;
    }
    out[c] = ss_tot > 1e-12 ? 1.0 - ss_res / ss_tot
                            : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::vector<ProbeRow> ridge_probe(const FeatureMatrix& x_train, const FeatureMatrix& y_train,
                                  const FeatureMatrix& x_test, const FeatureMatrix& y_test,
                                  const FamilyColumns& families, double lambda) {
  if (x_test.rows < 2) throw std::invalid_argument("ridge_probe: need >= 2 test rows");
  RidgeModel model = fit_ridge(x_train, y_train, lambda);
  FeatureMatrix pred_train = ridge_predict(model, x_train);
  FeatureMatrix pred_test = ridge_predict(model, x_test);
  std::vector<double> r2_train = r2_per_column(y_train, pred_train);
  std::vector<double> r2_test = r2_per_column(y_test, pred_test);

  std::vector<ProbeRow> rows;
  for (const auto& [name, cols] : families) {
    ProbeRow row;
    row.family = name;
    double tr = 0, te = 0;
    std::size_t used = 0;
    for (std::size_t c : cols) {
      if (c >= y_train.cols) throw std::invalid_argument("ridge_probe: column out of range");
      if (std::isnan(r2_train[c]) || std::isnan(r2_test[c])) {
        ++row.excluded_columns;
        continue;
      }
      tr += r2_train[c];
      te += r2_test[c];
      ++used;
    }
    row.r2_train = used ? tr / double(used) : std::numeric_limits<double>::quiet_NaN();
    row.r2_test = used ? te / double(used) : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(std::move(row));
  }
  return rows;
}

FeatureMatrix probe_targets(const WindowedDataset& data, const ExtractorParams& params) {
  data.validate();
  std::size_t d = params.layout_for(data.window_len).total();
  FeatureMatrix fm;
  fm.rows = data.n_windows;
  fm.cols = d;
  fm.data.assign(fm.rows * fm.cols, 0.0);
  constexpr std::size_t kChunk = 128;
  for (std::size_t at = 0; at < data.n_windows; at += kChunk) {
    std::size_t end = std::min(data.n_windows, at + kChunk);
    std::vector<std::size_t> chunk;
    for (std::size_t i = at; i < end; ++i) chunk.push_back(i);
    Tensor x = data.batch(chunk);
    Tensor blocks = unfold_blocks(x, data.window_len, data.window_len);  // one block
    AnchorTensor anchors = extract_all(blocks, params, Mode::Hard);
    Tensor pooled = mean_axis(mean_axis(anchors.values, 1), 1);  // B x D
    for (std::size_t b = 0; b < chunk.size(); ++b)
      for (std::size_t k = 0; k < d; ++k) fm.data[chunk[b] * d + k] = pooled[b * d + k];
  }
  return fm;
}

FamilyColumns six_family_groups(const FamilyLayout& layout) {
  FamilyColumns out;
  auto push = [&](const std::string& probe_name, const std::vector<std::string>& members) {
    std::vector<std::size_t> cols;
    for (const auto& member : members) {
      const FamilyRange& r = layout.at(member);
      for (std::size_t c = r.begin; c < r.end; ++c) cols.push_back(c);
    }
    out.emplace_back(probe_name, std::move(cols));
  };
  push("filterbank", {"filterbank"});
  push("spectral", {"spectral"});
  push("statistics", {"statistics", "shape"});
  push("crossing", {"crossing"});
  push("quantiles", {"quantiles"});
  push("autocorr", {"autocorr"});
  return out;
}

void write_probe_csv(const std::vector<ProbeRow>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "family,r2_train,r2_test\n";
  for (const auto& r : rows) os << r.family << "," << r.r2_train << "," << r.r2_test << "\n";
}

}  // namespace tcnet
