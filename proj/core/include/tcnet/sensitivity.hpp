#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcnet/dataset.hpp"
#include "tcnet/features.hpp"

namespace tcnet {

struct PerturbationSpec {
  enum class Kind { GaussianNoise, Rotation, TemporalShift };
  Kind kind = Kind::GaussianNoise;
  // sigma in signal-std units | degrees | fraction of the window
  double magnitude = 0.0;
  // rotation axis override; empty -> random axis per window (seeded)
  std::vector<double> axis;

  void validate() const;
  static Kind kind_from_string(const std::string& name);
  static std::string kind_name(Kind kind);
};

struct SensitivityRow {
  std::string kind;
  double magnitude = 0.0;
  std::string family;
  double mean_rel_change = 0.0;
};

// Per-family mean of |f(x') - f(x)| / (|f(x)| + 1e-8) over windows, channels
// and feature dims; hard-mode features at the given block size.
std::vector<SensitivityRow> sensitivity_scan(const WindowedDataset& data,
                                             const std::vector<PerturbationSpec>& grid,
                                             const ExtractorParams& params,
                                             std::size_t block_size, std::uint64_t seed);

// Exposed for tests: one perturbed copy of the dataset.
WindowedDataset apply_perturbation(const WindowedDataset& data, const PerturbationSpec& spec,
                                   std::uint64_t seed);

void write_sensitivity_csv(const std::vector<SensitivityRow>& rows, const std::string& path);

}  // namespace tcnet
