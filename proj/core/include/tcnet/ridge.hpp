#pragma once

#include <string>
#include <vector>

#include "tcnet/dataset.hpp"
#include "tcnet/features.hpp"
#include "tcnet/train.hpp"

namespace tcnet {

// Closed-form ridge regression on standardized inputs and targets.
struct RidgeModel {
  std::size_t in = 0, out = 0;
  std::vector<double> w;  // in x out, standardized coordinates
  std::vector<double> x_mean, x_std, y_mean, y_std;
  double lambda = 1.0;
};

RidgeModel fit_ridge(const FeatureMatrix& x, const FeatureMatrix& y, double lambda);
FeatureMatrix ridge_predict(const RidgeModel& model, const FeatureMatrix& x);

// 1 - SS_res/SS_tot per column about the evaluated split's own mean; columns
// with SS_tot ~ 0 are reported as NaN (excluded upstream).
std::vector<double> r2_per_column(const FeatureMatrix& y_true, const FeatureMatrix& y_pred);

struct ProbeRow {
  std::string family;
  double r2_train = 0.0;
  double r2_test = 0.0;
  std::size_t excluded_columns = 0;
};

using FamilyColumns = std::vector<std::pair<std::string, std::vector<std::size_t>>>;

// Held-out R^2 per target family, Table-3/4 style.
std::vector<ProbeRow> ridge_probe(const FeatureMatrix& x_train, const FeatureMatrix& y_train,
                                  const FeatureMatrix& x_test, const FeatureMatrix& y_test,
                                  const FamilyColumns& families, double lambda);

// Window-level hard TSF targets (single whole-window block, channel mean).
FeatureMatrix probe_targets(const WindowedDataset& data, const ExtractorParams& params);

// Six-family probe grouping: the shape columns fold into "statistics".
FamilyColumns six_family_groups(const FamilyLayout& layout);

void write_probe_csv(const std::vector<ProbeRow>& rows, const std::string& path);

}  // namespace tcnet
