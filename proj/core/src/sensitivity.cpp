#include "tcnet/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "tcnet/model.hpp"

namespace tcnet {

void PerturbationSpec::validate() const {
  switch (kind) {
    case Kind::GaussianNoise:
      if (magnitude < 0) throw std::invalid_argument("perturbation: sigma must be >= 0");
      break;
    case Kind::Rotation:
      if (magnitude < 0 || magnitude >= 360)
        throw std::invalid_argument("perturbation: rotation must lie in [0,360) degrees");
      if (!axis.empty() && axis.size() != 3)
        throw std::invalid_argument("perturbation: rotation axis must have 3 components");
      break;
    case Kind::TemporalShift:
      if (magnitude < 0 || magnitude >= 1)
        throw std::invalid_argument("perturbation: shift fraction must lie in [0,1)");
      break;
  }
}

PerturbationSpec::Kind PerturbationSpec::kind_from_string(const std::string& name) {
  if (name == "noise" || name == "gaussian-noise") return Kind::GaussianNoise;
  if (name == "rotation") return Kind::Rotation;
  if (name == "shift" || name == "temporal-shift") return Kind::TemporalShift;
  throw std::invalid_argument("unknown perturbation kind '" + name + "'");
}

std::string PerturbationSpec::kind_name(Kind kind) {
  switch (kind) {
    case Kind::GaussianNoise: return "gaussian-noise";
    case Kind::Rotation: return "rotation";
    case Kind::TemporalShift: return "temporal-shift";
  }
  return "?";
}

WindowedDataset apply_perturbation(const WindowedDataset& data, const PerturbationSpec& spec,
                                   std::uint64_t seed) {
  spec.validate();
  data.validate();
  WindowedDataset out = data;
  std::size_t chans = data.n_channels, len = data.window_len;
  std::mt19937_64 rng(seed);

  switch (spec.kind) {
    case PerturbationSpec::Kind::GaussianNoise: {
      if (spec.magnitude == 0.0) return out;
      std::normal_distribution<double> unit(0.0, 1.0);
      for (std::size_t w = 0; w < data.n_windows; ++w)
        for (std::size_t c = 0; c < chans; ++c) {
          float* sig = &out.windows[(w * chans + c) * len];
          double mean = 0, var = 0;
          for (std::size_t t = 0; t < len; ++t) mean += sig[t];
          mean /= double(len);
          for (std::size_t t = 0; t < len; ++t) var += (sig[t] - mean) * (sig[t] - mean);
          var /= double(len);
          double scale = spec.magnitude * std::sqrt(var);
          for (std::size_t t = 0; t < len; ++t) sig[t] = float(sig[t] + scale * unit(rng));
        }
      return out;
    }
    case PerturbationSpec::Kind::Rotation: {
      if (chans % 3 != 0)
        throw std::invalid_argument("rotation requires a channel count divisible by 3, got " +
                                    std::to_string(chans));
      if (spec.magnitude == 0.0) return out;
      double theta = spec.magnitude * 3.14159265358979323846 / 180.0;
      std::normal_distribution<double> unit(0.0, 1.0);
      for (std::size_t w = 0; w < data.n_windows; ++w) {
        // random axis per window, fixed angle (Rodrigues form)
        double ax, ay, az;
        if (spec.axis.size() == 3) {
          ax = spec.axis[0];
          ay = spec.axis[1];
          az = spec.axis[2];
        } else {
          ax = unit(rng);
          ay = unit(rng);
          az = unit(rng);
        }
        double norm = std::sqrt(ax * ax + ay * ay + az * az);
        if (norm < 1e-12) {
          ax = 1;
          ay = az = 0;
          norm = 1;
        }
        ax /= norm;
        ay /= norm;
        az /= norm;
        double ct = std::cos(theta), st = std::sin(theta), omc = 1.0 - ct;
        double r[3][3] = {
            {ct + ax * ax * omc, ax * ay * omc - az * st, ax * az * omc + ay * st},
            {ay * ax * omc + az * st, ct + ay * ay * omc, ay * az * omc - ax * st},
            {az * ax * omc - ay * st, az * ay * omc + ax * st, ct + az * az * omc}};
        for (std::size_t g = 0; g < chans / 3; ++g) {
          float* x = &out.windows[(w * chans + g * 3) * len];
          float* y = x + len;
          float* z = y + len;
          for (std::size_t t = 0; t < len; ++t) {
            double vx = x[t], vy = y[t], vz = z[t];
            x[t] = float(r[0][0] * vx + r[0][1] * vy + r[0][2] * vz);
            y[t] = float(r[1][0] * vx + r[1][1] * vy + r[1][2] * vz);
            z[t] = float(r[2][0] * vx + r[2][1] * vy + r[2][2] * vz);
          }
        }
      }
      return out;
    }
    case PerturbationSpec::Kind::TemporalShift: {
      std::size_t shift = std::size_t(spec.magnitude * double(len));
      if (shift == 0) return out;
      std::vector<float> tmp(len);
      for (std::size_t w = 0; w < data.n_windows; ++w)
        for (std::size_t c = 0; c < chans; ++c) {
          float* sig = &out.windows[(w * chans + c) * len];
          for (std::size_t t = 0; t < len; ++t) tmp[t] = sig[(t + len - shift) % len];
          std::copy(tmp.begin(), tmp.end(), sig);
        }
      return out;
    }
  }
  return out;
}

std::vector<SensitivityRow> sensitivity_scan(const WindowedDataset& data,
                                             const std::vector<PerturbationSpec>& grid,
                                             const ExtractorParams& params,
                                             std::size_t block_size, std::uint64_t seed) {
  data.validate();
  if (block_size > data.window_len)
    throw std::invalid_argument("sensitivity_scan: block size exceeds window length");
  FamilyLayout layout = params.layout_for(block_size);
  constexpr double kEps = 1e-8;

  auto features_of = [&](const WindowedDataset& ds) {
    std::vector<double> out;
    constexpr std::size_t kChunk = 128;
    for (std::size_t at = 0; at < ds.n_windows; at += kChunk) {
      std::size_t end = std::min(ds.n_windows, at + kChunk);
      std::vector<std::size_t> chunk;
      for (std::size_t i = at; i < end; ++i) chunk.push_back(i);
      Tensor blocks = unfold_blocks(ds.batch(chunk), block_size, block_size);
      AnchorTensor anchors = extract_all(blocks, params, Mode::Hard);
      const auto& v = anchors.values.values();
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  };
  std::vector<double> base = features_of(data);

  std::vector<SensitivityRow> rows;
  for (const auto& spec : grid) {
    WindowedDataset perturbed = apply_perturbation(data, spec, seed);
    std::vector<double> feat = features_of(perturbed);
    std::size_t d = layout.total();
    std::vector<double> acc(layout.count(), 0.0);
    std::vector<std::size_t> counts(layout.count(), 0);
    for (std::size_t i = 0; i < base.size(); ++i) {
      std::size_t within = i % d;
      for (std::size_t f = 0; f < layout.count(); ++f)
        if (within >= layout.families[f].begin && within < layout.families[f].end) {
          acc[f] += std::fabs(feat[i] - base[i]) / (std::fabs(base[i]) + kEps);
          counts[f]++;
          break;
        }
    }
    for (std::size_t f = 0; f < layout.count(); ++f) {
      SensitivityRow row;
      row.kind = PerturbationSpec::kind_name(spec.kind);
      row.magnitude = spec.magnitude;
      row.family = layout.families[f].name;
      row.mean_rel_change = counts[f] ? acc[f] / double(counts[f]) : 0.0;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_sensitivity_csv(const std::vector<SensitivityRow>& rows, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "kind,magnitude,family,mean_rel_change\n";
  for (const auto& r : rows)
    os << r.kind << "," << r.magnitude << "," << r.family << "," << r.mean_rel_change << "\n";
}

}  // namespace tcnet
