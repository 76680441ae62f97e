#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcnet/tensor.hpp"

namespace tcnet {

// Labeled fixed-length multichannel windows with subject ids for
// subject-independent splits. Window payload is float32, count x C x L.
struct WindowedDataset {
  std::size_t n_windows = 0;
  std::size_t n_channels = 0;
  std::size_t window_len = 0;
  std::size_t n_classes = 0;
  double sampling_rate = 0.0;
  std::vector<float> windows;
  std::vector<std::int32_t> labels;
  std::vector<std::int32_t> subjects;
  std::vector<std::string> channel_names;
  std::vector<std::string> class_names;

  void validate() const;
  // Window i as doubles, channel-major (C x L).
  std::vector<double> window(std::size_t i) const;
  // Batch tensor B x C x L for the given indices.
  Tensor batch(const std::vector<std::size_t>& indices) const;
  WindowedDataset subset(const std::vector<std::size_t>& indices) const;
  std::vector<std::int32_t> subject_ids() const;
};

void save_dataset(const WindowedDataset& ds, const std::string& path);
WindowedDataset load_dataset(const std::string& path);

// Train/test split on disjoint subjects; test gets the highest subject ids
// covering at least `test_fraction` of the windows.
std::pair<WindowedDataset, WindowedDataset> split_by_subject(const WindowedDataset& ds,
                                                             double test_fraction);
std::pair<WindowedDataset, WindowedDataset> split_by_subject_list(
    const WindowedDataset& ds, const std::vector<std::int32_t>& test_subjects);

// Column mapping and windowing declaration for generic CSV ingestion.
struct CsvManifest {
  std::vector<std::string> channel_columns;
  std::string label_column;
  std::string subject_column;  // empty -> single subject 0
  std::size_t window_len = 0;
  double overlap = 0.0;  // fraction in [0, 1)
  double sampling_rate = 50.0;

  static CsvManifest from_json(const std::string& text);
  static CsvManifest from_file(const std::string& path);
};

struct CsvImport {
  WindowedDataset dataset;
  std::size_t dropped_rows = 0;
};
CsvImport import_csv(const std::string& csv_path, const CsvManifest& manifest);

// Seeded synthetic generator: class-specific sinusoid + asymmetric sawtooth
// + Gaussian noise, 10 round-robin pseudo-subjects.
WindowedDataset synth_generate(std::size_t n_classes, std::size_t per_class, std::size_t channels,
                               std::size_t window_len, double sampling_rate, std::uint64_t seed);

}  // namespace tcnet
