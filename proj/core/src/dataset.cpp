#include "tcnet/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tcnet {

using nlohmann::json;

void WindowedDataset::validate() const {
  if (labels.size() != n_windows || subjects.size() != n_windows)
    throw std::invalid_argument("WindowedDataset: window/label/subject counts differ");
  if (windows.size() != n_windows * n_channels * window_len)
    throw std::invalid_argument("WindowedDataset: payload size does not match dimensions");
  for (std::int32_t l : labels)
    if (l < 0 || std::size_t(l) >= n_classes)
      throw std::invalid_argument("WindowedDataset: label " + std::to_string(l) +
                                  " outside [0," + std::to_string(n_classes) + ")");
}

std::vector<double> WindowedDataset::window(std::size_t i) const {
  std::size_t stride = n_channels * window_len;
  std::vector<double> out(stride);
  for (std::size_t j = 0; j < stride; ++j) out[j] = double(windows[i * stride + j]);
  return out;
}

Tensor WindowedDataset::batch(const std::vector<std::size_t>& indices) const {
  std::size_t stride = n_channels * window_len;
  std::vector<double> vals(indices.size() * stride);
  for (std::size_t b = 0; b < indices.size(); ++b)
    for (std::size_t j = 0; j < stride; ++j)
      vals[b * stride + j] = double(windows[indices[b] * stride + j]);
  return Tensor::from({indices.size(), n_channels, window_len}, std::move(vals));
}

WindowedDataset WindowedDataset::subset(const std::vector<std::size_t>& indices) const {
  WindowedDataset out;
  out.n_windows = indices.size();
  out.n_channels = n_channels;
  out.window_len = window_len;
  out.n_classes = n_classes;
  out.sampling_rate = sampling_rate;
  out.channel_names = channel_names;
  out.class_names = class_names;
  std::size_t stride = n_channels * window_len;
  out.windows.resize(indices.size() * stride);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    std::copy_n(&windows[indices[b] * stride], stride, &out.windows[b * stride]);
    out.labels.push_back(labels[indices[b]]);
    out.subjects.push_back(subjects[indices[b]]);
  }
  return out;
}

std::vector<std::int32_t> WindowedDataset::subject_ids() const {
  std::set<std::int32_t> ids(subjects.begin(), subjects.end());
  return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------------------
// binary container ("TCN1")
// ---------------------------------------------------------------------------

namespace {

constexpr char kDatasetMagic[4] = {'T', 'C', 'N', '1'};
constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error(std::string("truncated payload reading ") + what);
  return v;
}

}  // namespace

void save_dataset(const WindowedDataset& ds, const std::string& path) {
  ds.validate();
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    os.write(kDatasetMagic, 4);
    write_pod<std::uint32_t>(os, kDatasetVersion);
    write_pod<std::uint32_t>(os, std::uint32_t(ds.n_windows));
    write_pod<std::uint32_t>(os, std::uint32_t(ds.n_channels));
    write_pod<std::uint32_t>(os, std::uint32_t(ds.window_len));
    write_pod<std::uint32_t>(os, std::uint32_t(ds.n_classes));
    write_pod<double>(os, ds.sampling_rate);
    json meta;
    meta["channel_names"] = ds.channel_names;
    meta["class_names"] = ds.class_names;
    std::string blob = meta.dump();
    write_pod<std::uint64_t>(os, blob.size());
    os.write(blob.data(), std::streamsize(blob.size()));
    os.write(reinterpret_cast<const char*>(ds.windows.data()),
             std::streamsize(ds.windows.size() * sizeof(float)));
    os.write(reinterpret_cast<const char*>(ds.labels.data()),
             std::streamsize(ds.labels.size() * sizeof(std::int32_t)));
    os.write(reinterpret_cast<const char*>(ds.subjects.data()),
             std::streamsize(ds.subjects.size() * sizeof(std::int32_t)));
    if (!os) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move '" + tmp + "' into place");
}

WindowedDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kDatasetMagic, 4) != 0)
    throw std::runtime_error("unrecognized format in '" + path + "' (bad magic)");
  auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kDatasetVersion)
    throw std::runtime_error("unsupported dataset version " + std::to_string(version));
  WindowedDataset ds;
  ds.n_windows = read_pod<std::uint32_t>(is, "window count");
  ds.n_channels = read_pod<std::uint32_t>(is, "channel count");
  ds.window_len = read_pod<std::uint32_t>(is, "window length");
  ds.n_classes = read_pod<std::uint32_t>(is, "class count");
  ds.sampling_rate = read_pod<double>(is, "sampling rate");
  auto blob_len = read_pod<std::uint64_t>(is, "metadata");
  std::string blob(blob_len, '\0');
  is.read(blob.data(), std::streamsize(blob_len));
  if (!is) throw std::runtime_error("truncated payload reading metadata");
  json meta = json::parse(blob, nullptr, false);
  if (meta.is_discarded()) throw std::runtime_error("corrupt metadata blob in '" + path + "'");
  ds.channel_names = meta.value("channel_names", std::vector<std::string>{});
  ds.class_names = meta.value("class_names", std::vector<std::string>{});
  ds.windows.resize(ds.n_windows * ds.n_channels * ds.window_len);
  is.read(reinterpret_cast<char*>(ds.windows.data()),
          std::streamsize(ds.windows.size() * sizeof(float)));
  if (!is) throw std::runtime_error("truncated payload reading windows");
  ds.labels.resize(ds.n_windows);
  is.read(reinterpret_cast<char*>(ds.labels.data()),
          std::streamsize(ds.labels.size() * sizeof(std::int32_t)));
  if (!is) throw std::runtime_error("truncated payload reading labels");
  ds.subjects.resize(ds.n_windows);
  is.read(reinterpret_cast<char*>(ds.subjects.data()),
          std::streamsize(ds.subjects.size() * sizeof(std::int32_t)));
  if (!is) throw std::runtime_error("truncated payload reading subjects");
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

std::pair<WindowedDataset, WindowedDataset> split_by_subject_list(
    const WindowedDataset& ds, const std::vector<std::int32_t>& test_subjects) {
  std::set<std::int32_t> test_set(test_subjects.begin(), test_subjects.end());
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < ds.n_windows; ++i)
    (test_set.count(ds.subjects[i]) ? test_idx : train_idx).push_back(i);
  if (train_idx.empty() || test_idx.empty())
    throw std::invalid_argument("split_by_subject_list: a side of the split is empty");
  return {ds.subset(train_idx), ds.subset(test_idx)};
}

std::pair<WindowedDataset, WindowedDataset> split_by_subject(const WindowedDataset& ds,
                                                             double test_fraction) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw std::invalid_argument("split_by_subject: fraction must be in (0,1)");
  auto ids = ds.subject_ids();
  if (ids.size() < 2)
    throw std::invalid_argument("split_by_subject: need at least two subjects");
  std::map<std::int32_t, std::size_t> counts;
  for (auto s : ds.subjects) counts[s]++;
  std::vector<std::int32_t> test;
  std::size_t need = std::size_t(std::ceil(test_fraction * double(ds.n_windows)));
  std::size_t got = 0;
  for (auto it = ids.rbegin(); it != ids.rend() && got < need && test.size() + 1 < ids.size();
       ++it) {
    test.push_back(*it);
    got += counts[*it];
  }
  return split_by_subject_list(ds, test);
}

// ---------------------------------------------------------------------------
// CSV import
// ---------------------------------------------------------------------------

CsvManifest CsvManifest::from_json(const std::string& text) {
  json j = json::parse(text);
  CsvManifest m;
  m.channel_columns = j.value("channel_columns", std::vector<std::string>{});
  m.label_column = j.value("label_column", std::string());
  m.subject_column = j.value("subject_column", std::string());
  m.window_len = j.value("window_len", std::size_t(0));
  m.overlap = j.value("overlap", 0.0);
  m.sampling_rate = j.value("sampling_rate", 50.0);
  if (m.channel_columns.empty() || m.label_column.empty() || m.window_len == 0)
    throw std::invalid_argument(
        "manifest must declare channel_columns, label_column and window_len");
  if (m.overlap < 0.0 || m.overlap >= 1.0)
    throw std::invalid_argument("manifest overlap must lie in [0,1)");
  return m;
}

CsvManifest CsvManifest::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  cells.push_back(cell);
  return cells;
}

struct CsvRow {
  std::vector<double> channels;
  std::string label;
  std::string subject;
};

}  // namespace

CsvImport import_csv(const std::string& csv_path, const CsvManifest& manifest) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (fs::is_directory(csv_path)) {
    for (const auto& e : fs::directory_iterator(csv_path))
      if (e.path().extension() == ".csv") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(csv_path);
  }
  if (files.empty()) throw std::runtime_error("no .csv files under '" + csv_path + "'");

  std::size_t chans = manifest.channel_columns.size();
  std::vector<CsvRow> rows;
  std::size_t dropped = 0;
  for (const auto& file : files) {
    std::ifstream is(file);
    if (!is) throw std::runtime_error("cannot open '" + file + "'");
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("'" + file + "' is empty");
    auto header = split_csv_line(line);
    auto col_of = [&](const std::string& name) {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end())
        throw std::runtime_error("column '" + name + "' missing from '" + file + "'");
      return std::size_t(it - header.begin());
    };
    std::vector<std::size_t> chan_cols;
    for (const auto& c : manifest.channel_columns) chan_cols.push_back(col_of(c));
    std::size_t label_col = col_of(manifest.label_column);
    std::size_t subject_col =
        manifest.subject_column.empty() ? header.size() : col_of(manifest.subject_column);

    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto cells = split_csv_line(line);
      CsvRow row;
      row.channels.resize(chans);
      bool ok = cells.size() >= header.size();
      for (std::size_t c = 0; ok && c < chans; ++c) {
        const std::string& cell = cells[chan_cols[c]];
        if (cell.empty()) {
          ok = false;
          break;
        }
        try {
          std::size_t used = 0;
          row.channels[c] = std::stod(cell, &used);
          if (used != cell.size()) ok = false;
        } catch (const std::exception&) {
          ok = false;
        }
      }
      if (ok && cells[label_col].empty()) ok = false;
      if (!ok) {
        ++dropped;
        continue;
      }
      row.label = cells[label_col];
      row.subject = subject_col < header.size() ? cells[subject_col] : "0";
      rows.push_back(std::move(row));
    }
  }

  // stable label/subject id assignment: sorted unique names
  std::set<std::string> label_names, subject_names;
  for (const auto& r : rows) {
    label_names.insert(r.label);
    subject_names.insert(r.subject);
  }
  std::map<std::string, std::int32_t> label_of, subject_of;
  for (const auto& n : label_names) label_of.emplace(n, std::int32_t(label_of.size()));
  for (const auto& n : subject_names) subject_of.emplace(n, std::int32_t(subject_of.size()));

  std::size_t len = manifest.window_len;
  std::size_t stride =
      std::max<std::size_t>(1, std::size_t(double(len) * (1.0 - manifest.overlap)));

  CsvImport out;
  WindowedDataset& ds = out.dataset;
  ds.n_channels = chans;
  ds.window_len = len;
  ds.n_classes = label_names.size();
  ds.sampling_rate = manifest.sampling_rate;
  ds.channel_names = manifest.channel_columns;
  ds.class_names.assign(label_names.begin(), label_names.end());
  out.dropped_rows = dropped;

  // windows are cut inside contiguous runs of one subject
  std::size_t run_start = 0;
  while (run_start < rows.size()) {
    std::size_t run_end = run_start + 1;
    while (run_end < rows.size() && rows[run_end].subject == rows[run_start].subject) ++run_end;
    std::size_t run_len = run_end - run_start;
    if (run_len >= len) {
      std::size_t count = (run_len - len) / stride + 1;
      for (std::size_t w = 0; w < count; ++w) {
        std::size_t begin = run_start + w * stride;
        for (std::size_t c = 0; c < chans; ++c)
          for (std::size_t t = 0; t < len; ++t)
            ds.windows.push_back(float(rows[begin + t].channels[c]));
        std::map<std::string, std::size_t> votes;
        for (std::size_t t = 0; t < len; ++t) votes[rows[begin + t].label]++;
        std::string majority;
        std::size_t best = 0;
        for (const auto& [name, n] : votes)
          if (n > best) {
            best = n;
            majority = name;
          }
        ds.labels.push_back(label_of.at(majority));
        ds.subjects.push_back(subject_of.at(rows[begin].subject));
        ++ds.n_windows;
      }
    }
    run_start = run_end;
  }
  ds.validate();
  return out;
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

WindowedDataset synth_generate(std::size_t n_classes, std::size_t per_class, std::size_t channels,
                               std::size_t window_len, double sampling_rate, std::uint64_t seed) {
  if (n_classes < 2) throw std::invalid_argument("synth_generate: need at least 2 classes");
  constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * kPi);
  std::uniform_real_distribution<double> offset_dist(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.1);

  WindowedDataset ds;
  ds.n_channels = channels;
  ds.window_len = window_len;
  ds.n_classes = n_classes;
  ds.sampling_rate = sampling_rate;
  for (std::size_t c = 0; c < channels; ++c) ds.channel_names.push_back("ch" + std::to_string(c));
  for (std::size_t k = 0; k < n_classes; ++k)
    ds.class_names.push_back("class" + std::to_string(k));

  std::size_t idx = 0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    double freq = double(k + 1) * sampling_rate / double(window_len) * 2.0;  // Hz
    double amp = 1.0 + 0.5 * double(k);
    double saw_period = double(window_len) / double(k + 2);  // samples
    for (std::size_t w = 0; w < per_class; ++w, ++idx) {
      double phase = phase_dist(rng);
      double saw_offset = offset_dist(rng) * saw_period;
      for (std::size_t c = 0; c < channels; ++c) {
        double chan_phase = phase + 0.5 * double(c);
        for (std::size_t t = 0; t < window_len; ++t) {
          double ts = double(t) / sampling_rate;
          double sine = amp * std::sin(2.0 * kPi * freq * ts + chan_phase);
          // quadratic ramp with a sharp reset: slow rise, instant fall, so
          // time reversal is detectable
          double sp = std::fmod(double(t) + saw_offset, saw_period) / saw_period;
          double saw = 2.0 * sp * sp - 1.0;
          ds.windows.push_back(float(sine + saw + noise(rng)));
        }
      }
      ds.labels.push_back(std::int32_t(k));
      ds.subjects.push_back(std::int32_t(idx % 10));
      ++ds.n_windows;
    }
  }
  ds.validate();
  return ds;
}

}  // namespace tcnet
