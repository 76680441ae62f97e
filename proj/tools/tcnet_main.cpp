// tcnet command line: dataset tooling, training, baselines and analysis.
#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "tcnet/dataset.hpp"
#include "tcnet/forest.hpp"
#include "tcnet/gradcheck_suite.hpp"
#include "tcnet/model.hpp"
#include "tcnet/ridge.hpp"
#include "tcnet/sensitivity.hpp"
#include "tcnet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tcnet;

namespace {

constexpr const char* kBuildVersion = "tcnet 0.1.0";

std::uint64_t default_seed() {
  if (const char* env = std::getenv("TCNET_SEED")) return std::strtoull(env, nullptr, 10);
  return 42;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// every run leaves a reproducibility record beside its outputs
void write_run_record(const std::string& out_path, const std::string& command,
                      const json& config, std::uint64_t seed) {
  json j;
  j["command"] = command;
  j["config_hash"] = fnv1a(config.dump());
  j["seed"] = seed;
  j["build_version"] = kBuildVersion;
  std::string path = out_path + ".run.json";
  std::ofstream os(path, std::ios::trunc);
  os << j.dump(2) << "\n";
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  std::size_t at = 0;
  while (at < csv.size()) {
    std::size_t comma = csv.find(',', at);
    if (comma == std::string::npos) comma = csv.size();
    out.push_back(std::stoul(csv.substr(at, comma - at)));
    at = comma + 1;
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::size_t at = 0;
  while (at < csv.size()) {
    std::size_t comma = csv.find(',', at);
    if (comma == std::string::npos) comma = csv.size();
    out.push_back(std::stod(csv.substr(at, comma - at)));
    at = comma + 1;
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    os << text;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move '" + tmp + "' into place");
}

WindowedDataset load_or_fail(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("dataset '" + path + "' does not exist");
  return load_dataset(path);
}

// splits a multi-sensor dataset into tri-axial pretraining instances
WindowedDataset triaxial_instances(const WindowedDataset& ds) {
  if (ds.n_channels % 3 != 0)
    throw std::runtime_error("channel count " + std::to_string(ds.n_channels) +
                             " is not divisible by 3; cannot form tri-axial groups");
  WindowedDataset out;
  out.n_channels = 3;
  out.window_len = ds.window_len;
  out.n_classes = ds.n_classes;
  out.sampling_rate = ds.sampling_rate;
  std::size_t groups = ds.n_channels / 3;
  for (std::size_t w = 0; w < ds.n_windows; ++w)
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < ds.window_len; ++t)
          out.windows.push_back(
              ds.windows[(w * ds.n_channels + g * 3 + c) * ds.window_len + t]);
      out.labels.push_back(ds.labels[w]);
      out.subjects.push_back(ds.subjects[w]);
      ++out.n_windows;
    }
  return out;
}

json dataset_summary(const WindowedDataset& ds) {
  json j;
  j["windows"] = ds.n_windows;
  j["channels"] = ds.n_channels;
  j["window_len"] = ds.window_len;
  j["classes"] = ds.n_classes;
  j["sampling_rate"] = ds.sampling_rate;
  return j;
}

int cmd_synth(std::size_t classes, std::size_t per_class, std::size_t channels, std::size_t len,
              double rate, std::uint64_t seed, const std::string& out) {
  WindowedDataset ds = synth_generate(classes, per_class, channels, len, rate, seed);
  save_dataset(ds, out);
  json cfg = dataset_summary(ds);
  write_run_record(out, "synth", cfg, seed);
  std::cout << "wrote " << ds.n_windows << " windows to " << out << "\n";
  return 0;
}

int cmd_import_csv(const std::string& input, const std::string& manifest_path,
                   const std::string& out) {
  CsvManifest manifest = CsvManifest::from_file(manifest_path);
  CsvImport imported = import_csv(input, manifest);
  save_dataset(imported.dataset, out);
  json cfg = dataset_summary(imported.dataset);
  cfg["dropped_rows"] = imported.dropped_rows;
  write_run_record(out, "import-csv", cfg, 0);
  std::cout << "imported " << imported.dataset.n_windows << " windows ("
            << imported.dropped_rows << " rows dropped) to " << out << "\n";
  return 0;
}

int cmd_extract(const std::string& data_path, std::size_t block_size, const std::string& mode,
                const std::string& out, std::uint64_t seed) {
  WindowedDataset ds = load_or_fail(data_path);
  ExtractorParams params = ExtractorParams::defaults(ds.sampling_rate);
  Mode m = mode == "soft" ? Mode::Soft : Mode::Hard;
  FamilyLayout layout = params.layout_for(block_size);
  std::ostringstream os;
  os << "window,block,channel";
  for (const auto& fam : layout.families)
    for (std::size_t k = 0; k < fam.width(); ++k) os << "," << fam.name << "_" << k;
  os << "\n";
  constexpr std::size_t kChunk = 64;
  for (std::size_t at = 0; at < ds.n_windows; at += kChunk) {
    std::size_t end = std::min(ds.n_windows, at + kChunk);
    std::vector<std::size_t> chunk;
    for (std::size_t i = at; i < end; ++i) chunk.push_back(i);
    Tensor blocks = unfold_blocks(ds.batch(chunk), block_size, block_size);
    AnchorTensor anchors = extract_all(blocks, params, m);
    std::size_t n = anchors.values.extent(1), c = anchors.values.extent(2);
    std::size_t d = anchors.layout.total();
    for (std::size_t b = 0; b < chunk.size(); ++b)
      for (std::size_t bn = 0; bn < n; ++bn)
        for (std::size_t ch = 0; ch < c; ++ch) {
          os << chunk[b] << "," << bn << "," << ch;
          for (std::size_t k = 0; k < d; ++k)
            os << "," << anchors.values[((b * n + bn) * c + ch) * d + k];
          os << "\n";
        }
  }
  write_text(out, os.str());
  json cfg;
  cfg["data"] = data_path;
  cfg["block_size"] = block_size;
  cfg["mode"] = mode;
  write_run_record(out, "extract", cfg, seed);
  std::cout << "wrote feature dump to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& preset_name, const std::string& data_path,
              const std::string& out_dir, std::uint64_t seed, double lr_override,
              std::size_t epochs_override, std::size_t batch_override, double test_fraction,
              bool disable_time, bool disable_freq, bool disable_correction) {
  Preset preset = find_preset(preset_name);
  WindowedDataset ds = load_or_fail(data_path);
  if (ds.n_channels != preset.model.n_channels || ds.window_len != preset.model.window_len ||
      ds.n_classes != preset.model.n_classes)
    throw std::runtime_error(
        "config mismatch: preset '" + preset_name + "' expects " +
        std::to_string(preset.model.n_channels) + " channels x " +
        std::to_string(preset.model.window_len) + " samples with " +
        std::to_string(preset.model.n_classes) + " classes, dataset has " +
        std::to_string(ds.n_channels) + " x " + std::to_string(ds.window_len) + " with " +
        std::to_string(ds.n_classes));
  preset.model.sampling_rate = ds.sampling_rate;
  preset.model.disable_time = disable_time;
  preset.model.disable_freq = disable_freq;
  preset.model.disable_correction = disable_correction;
  if (lr_override > 0) preset.learning_rate = lr_override;
  if (epochs_override > 0) preset.max_epochs = epochs_override;
  if (batch_override > 0) preset.batch_size = batch_override;

  auto [train_set, test_set] = split_by_subject(ds, test_fraction);
  fs::create_directories(out_dir);
  TcnetModel model(preset.model, seed);
  TrainConfig tc;
  tc.learning_rate = preset.learning_rate;
  tc.max_epochs = preset.max_epochs;
  tc.batch_size = preset.batch_size;
  tc.seed = seed;
  std::string ckpt = out_dir + "/model.tcnm";
  TrainResult result = train_model(model, train_set, tc, ckpt);
  write_history_csv(result.history, out_dir + "/history.csv");
  MetricsReport metrics = evaluate_model(model, test_set);
  write_text(out_dir + "/metrics.json", metrics.to_json() + "\n");
  json cfg = json::parse(preset.model.to_json());
  cfg["preset"] = preset_name;
  cfg["lr"] = preset.learning_rate;
  cfg["epochs"] = preset.max_epochs;
  write_run_record(out_dir + "/model.tcnm", "train", cfg, seed);
  std::cout << "best val mF1 " << result.best_val_mf1 << " at epoch " << result.best_epoch
            << "; test mF1 " << metrics.macro_f1 << ", acc " << metrics.accuracy << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::string& out,
             const std::string& correction_csv) {
  TcnetModel model = TcnetModel::load(ckpt);
  WindowedDataset ds = load_or_fail(data_path);
  MetricsReport metrics = evaluate_model(model, ds);
  write_text(out, metrics.to_json() + "\n");
  if (!correction_csv.empty()) {
    // per-family mean |delta| / (|Z_raw| + eps) over the dataset
    ExtractorParams params = ExtractorParams::defaults(ds.sampling_rate);
    FamilyLayout layout = params.layout_for(model.config().block_sizes[0]);
    std::vector<double> acc(layout.count(), 0.0);
    std::vector<std::size_t> counts(layout.count(), 0);
    constexpr std::size_t kChunk = 64;
    for (std::size_t at = 0; at < ds.n_windows; at += kChunk) {
      std::size_t end = std::min(ds.n_windows, at + kChunk);
      std::vector<std::size_t> chunk;
      for (std::size_t i = at; i < end; ++i) chunk.push_back(i);
      auto fwd = model.forward(ds.batch(chunk));
      for (const auto& bundle : fwd.bundles) {
        std::size_t chans = bundle.n_channels;
        Tensor z_raw = slice(bundle.z_multi, 2, 0, chans);
        std::size_t d = z_raw.extent(3);
        for (const Tensor& delta : bundle.deltas)
          for (std::size_t i = 0; i < delta.size(); ++i) {
            std::size_t within = i % d;
            for (std::size_t f = 0; f < layout.count(); ++f)
              if (within >= layout.families[f].begin && within < layout.families[f].end) {
                acc[f] += std::fabs(delta[i]) / (std::fabs(z_raw[i]) + 1e-8);
                counts[f]++;
                break;
              }
          }
      }
    }
    std::ostringstream os;
    os << "family,dataset,mean_rel_delta\n";
    std::string dataset_name = fs::path(data_path).stem().string();
    for (std::size_t f = 0; f < layout.count(); ++f)
      os << layout.families[f].name << "," << dataset_name << ","
         << (counts[f] ? acc[f] / double(counts[f]) : 0.0) << "\n";
    write_text(correction_csv, os.str());
  }
  json cfg;
  cfg["checkpoint"] = ckpt;
  cfg["data"] = data_path;
  write_run_record(out, "eval", cfg, 0);
  std::cout << "test mF1 " << metrics.macro_f1 << ", acc " << metrics.accuracy << "\n";
  return 0;
}

int cmd_grad_check(const std::string& module, std::uint64_t seed) {
  auto reports = run_gradcheck(module, seed);
  double worst = 0.0;
  bool ok = true;
  for (const auto& rep : reports) {
    bool pass = rep.max_err < 1e-4;
    ok = ok && pass;
    worst = std::max(worst, rep.max_err);
    std::printf("%-34s trials=%2zu max_rel_err=%.3e %s\n", rep.name.c_str(), rep.trials,
                rep.max_err, pass ? "PASS" : "FAIL");
  }
  std::printf("%zu checks, worst %.3e -> %s\n", reports.size(), worst, ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

int cmd_sensitivity(const std::string& data_path, std::size_t block_size,
                    const std::string& noise, const std::string& rotation,
                    const std::string& shift, const std::string& out, std::uint64_t seed) {
  WindowedDataset ds = load_or_fail(data_path);
  ExtractorParams params = ExtractorParams::defaults(ds.sampling_rate);
  std::vector<PerturbationSpec> grid;
  for (double v : parse_doubles(noise))
    grid.push_back({PerturbationSpec::Kind::GaussianNoise, v, {}});
  for (double v : parse_doubles(rotation))
    grid.push_back({PerturbationSpec::Kind::Rotation, v, {}});
  for (double v : parse_doubles(shift))
    grid.push_back({PerturbationSpec::Kind::TemporalShift, v, {}});
  if (grid.empty()) throw std::runtime_error("no perturbation magnitudes given");
  auto rows = sensitivity_scan(ds, grid, params, block_size, seed);
  write_sensitivity_csv(rows, out);
  json cfg;
  cfg["data"] = data_path;
  cfg["block_size"] = block_size;
  write_run_record(out, "sensitivity", cfg, seed);
  std::cout << "wrote " << rows.size() << " sensitivity rows to " << out << "\n";
  return 0;
}

int cmd_rf_baseline(const std::string& data_path, const std::string& scales_csv,
                    std::size_t trees, std::size_t depth, double test_fraction,
                    std::uint64_t seed, const std::string& out_dir) {
  WindowedDataset ds = load_or_fail(data_path);
  std::vector<std::size_t> scales = parse_sizes(scales_csv);
  ExtractorParams params = ExtractorParams::defaults(ds.sampling_rate);
  auto [train_set, test_set] = split_by_subject(ds, test_fraction);
  FeatureMatrix train_x = extract_rf_features(train_set, scales, params);
  FeatureMatrix test_x = extract_rf_features(test_set, scales, params);
  std::vector<int> train_y(train_set.labels.begin(), train_set.labels.end());
  std::vector<int> test_y(test_set.labels.begin(), test_set.labels.end());
  ForestConfig cfg;
  cfg.n_trees = trees;
  cfg.max_depth = depth;
  cfg.seed = seed;
  RandomForest forest = fit_forest(train_x, train_y, cfg);
  std::vector<int> preds = predict_forest_batch(forest, test_x);
  MetricsReport metrics = compute_metrics(preds, test_y, ds.n_classes);

  fs::create_directories(out_dir);
  save_forest(forest, out_dir + "/forest.tcrf");
  write_text(out_dir + "/metrics.json", metrics.to_json() + "\n");
  auto shares = family_importance(forest, params.layout_for(scales[0]));
  std::ostringstream os;
  os << "family,importance_share\n";
  for (const auto& [name, share] : shares) os << name << "," << share << "\n";
  write_text(out_dir + "/family_importance.csv", os.str());
  json record;
  record["data"] = data_path;
  record["scales"] = scales;
  record["trees"] = trees;
  record["depth"] = depth;
  write_run_record(out_dir + "/forest.tcrf", "rf-baseline", record, seed);
  std::cout << "rf-tsf test mF1 " << metrics.macro_f1 << ", acc " << metrics.accuracy << "\n";
  return 0;
}

int cmd_probe(const std::string& data_path, const std::string& encoder_path, double lambda,
              double test_fraction, const std::string& out, std::uint64_t seed) {
  WindowedDataset ds = load_or_fail(data_path);
  CompactTcnet encoder = CompactTcnet::load(encoder_path);
  auto [train_set, test_set] = split_by_subject(ds, test_fraction);
  FeatureMatrix x_train = freeze_embed(encoder, train_set);
  FeatureMatrix x_test = freeze_embed(encoder, test_set);
  ExtractorParams params = ExtractorParams::defaults(ds.sampling_rate);
  FeatureMatrix y_train = probe_targets(train_set, params);
  FeatureMatrix y_test = probe_targets(test_set, params);
  FamilyColumns groups = six_family_groups(params.layout_for(ds.window_len));
  auto rows = ridge_probe(x_train, y_train, x_test, y_test, groups, lambda);
  write_probe_csv(rows, out);
  json cfg;
  cfg["data"] = data_path;
  cfg["encoder"] = encoder_path;
  cfg["lambda"] = lambda;
  write_run_record(out, "probe", cfg, seed);
  for (const auto& row : rows)
    std::cout << row.family << ": R2 train " << row.r2_train << ", test " << row.r2_test << "\n";
  return 0;
}

int cmd_pretrain(const std::string& data_path, const std::string& out, std::size_t epochs,
                 std::size_t batch, double lr, std::size_t block_size, std::uint64_t seed) {
  WindowedDataset ds = load_or_fail(data_path);
  WindowedDataset instances = ds.n_channels == 3 ? ds : triaxial_instances(ds);
  CompactConfig cc;
  cc.window_len = ds.window_len;
  cc.block_size = block_size;
  cc.sampling_rate = ds.sampling_rate;
  CompactTcnet model(cc, seed);
  TrainConfig tc;
  tc.learning_rate = lr;
  tc.max_epochs = epochs;
  tc.patience = epochs;
  tc.batch_size = batch;
  tc.seed = seed;
  SslResult result = ssl_pretrain(model, instances, tc, out);
  std::ostringstream os;
  os << "epoch,loss,bce_aot,bce_permute,bce_warp,l_delta\n";
  for (const auto& h : result.history)
    os << h.epoch << "," << h.loss << "," << h.bce_aot << "," << h.bce_permute << ","
       << h.bce_warp << "," << h.l_delta << "\n";
  write_text(out + ".history.csv", os.str());
  json cfg = json::parse(cc.to_json());
  cfg["epochs"] = epochs;
  cfg["batch"] = batch;
  cfg["lr"] = lr;
  write_run_record(out, "pretrain", cfg, seed);
  std::cout << "pretrained " << epochs << " epochs on " << instances.n_windows
            << " tri-axial instances; final loss " << result.history.back().loss << "\n";
  return 0;
}

int cmd_freeze_embed(const std::string& encoder_path, const std::string& data_path,
                     const std::string& out) {
  CompactTcnet encoder = CompactTcnet::load(encoder_path);
  WindowedDataset ds = load_or_fail(data_path);
  FeatureMatrix fm = freeze_embed(encoder, ds);
  std::ostringstream os;
  os << "label,subject";
  for (std::size_t c = 0; c < fm.cols; ++c) os << ",e" << c;
  os << "\n";
  for (std::size_t r = 0; r < fm.rows; ++r) {
    os << ds.labels[r] << "," << ds.subjects[r];
    for (std::size_t c = 0; c < fm.cols; ++c) os << "," << fm.row(r)[c];
    os << "\n";
  }
  write_text(out, os.str());
  json cfg;
  cfg["encoder"] = encoder_path;
  cfg["data"] = data_path;
  cfg["columns"] = fm.cols;
  write_run_record(out, "freeze-embed", cfg, 0);
  std::cout << "wrote " << fm.rows << " x " << fm.cols << " embedding matrix to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TCNet feature-anchor pipeline"};
  app.require_subcommand(1);
  std::uint64_t seed = default_seed();
  app.add_option("--seed", seed, "global seed (env TCNET_SEED overrides the default)");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
  std::size_t sy_classes = 3, sy_per = 200, sy_chans = 3, sy_len = 128;
  double sy_rate = 50.0;
  std::string sy_out = "synthetic.tcn";
  synth->add_option("--classes", sy_classes);
  synth->add_option("--per-class", sy_per);
  synth->add_option("--channels", sy_chans);
  synth->add_option("--length", sy_len);
  synth->add_option("--rate", sy_rate);
  synth->add_option("--out", sy_out)->required();

  // import-csv
  auto* imp = app.add_subcommand("import-csv", "cut windows from CSV rows via a manifest");
  std::string ic_input, ic_manifest, ic_out;
  imp->add_option("--input", ic_input, "CSV file or directory")->required();
  imp->add_option("--manifest", ic_manifest, "JSON manifest")->required();
  imp->add_option("--out", ic_out)->required();

  // extract
  auto* extract = app.add_subcommand("extract", "dump per-(window,block,channel) TSF anchors");
  std::string ex_data, ex_out, ex_mode = "hard";
  std::size_t ex_block = 32;
  extract->add_option("--data", ex_data)->required();
  extract->add_option("--block-size", ex_block);
  extract->add_option("--mode", ex_mode)->check(CLI::IsMember({"hard", "soft"}));
  extract->add_option("--out", ex_out)->required();

  // train
  auto* train = app.add_subcommand("train", "train full TCNet with a named preset");
  std::string tr_preset, tr_data, tr_out = "train_out";
  double tr_lr = 0.0, tr_test_fraction = 0.2;
  std::size_t tr_epochs = 0, tr_batch = 0;
  bool tr_no_time = false, tr_no_freq = false, tr_no_corr = false;
  train->add_option("--preset", tr_preset)->required();
  train->add_option("--data", tr_data)->required();
  train->add_option("--out-dir", tr_out);
  train->add_option("--lr", tr_lr);
  train->add_option("--epochs", tr_epochs);
  train->add_option("--batch", tr_batch);
  train->add_option("--test-fraction", tr_test_fraction);
  train->add_flag("--disable-time", tr_no_time, "ablation: zero the time branch");
  train->add_flag("--disable-freq", tr_no_freq, "ablation: zero the frequency branch");
  train->add_flag("--disable-correction", tr_no_corr, "ablation: identity anchors only");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out = "metrics.json", ev_corr;
  eval->add_option("--checkpoint", ev_ckpt)->required();
  eval->add_option("--data", ev_data)->required();
  eval->add_option("--out", ev_out);
  eval->add_option("--correction-csv", ev_corr, "per-family mean relative correction dump");

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference audit of every op");
  std::string gc_module = "all";
  gc->add_option("--module", gc_module, "all or a name prefix such as features.");

  // sensitivity
  auto* sens = app.add_subcommand("sensitivity", "per-family perturbation response scan");
  std::string se_data, se_out = "sensitivity.csv", se_noise, se_rot, se_shift;
  std::size_t se_block = 32;
  sens->add_option("--data", se_data)->required();
  sens->add_option("--block-size", se_block);
  sens->add_option("--noise", se_noise, "comma list of sigma values");
  sens->add_option("--rotation", se_rot, "comma list of degrees");
  sens->add_option("--shift", se_shift, "comma list of window fractions");
  sens->add_option("--out", se_out);

  // rf-baseline
  auto* rf = app.add_subcommand("rf-baseline", "two-scale hard-TSF random forest");
  std::string rf_data, rf_scales = "32,128", rf_out = "rf_out";
  std::size_t rf_trees = 300, rf_depth = 20;
  double rf_test_fraction = 0.2;
  rf->add_option("--data", rf_data)->required();
  rf->add_option("--scales", rf_scales);
  rf->add_option("--trees", rf_trees);
  rf->add_option("--depth", rf_depth);
  rf->add_option("--test-fraction", rf_test_fraction);
  rf->add_option("--out-dir", rf_out);

  // probe
  auto* probe = app.add_subcommand("probe", "ridge linear probe from frozen embeddings to TSFs");
  std::string pr_data, pr_encoder, pr_out = "probe.csv";
  double pr_lambda = 1.0, pr_test_fraction = 0.2;
  probe->add_option("--data", pr_data)->required();
  probe->add_option("--encoder", pr_encoder, "compact encoder checkpoint")->required();
  probe->add_option("--lambda", pr_lambda);
  probe->add_option("--test-fraction", pr_test_fraction);
  probe->add_option("--out", pr_out);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "SSL pretraining of the compact encoder");
  std::string pt_data, pt_out = "encoder.tcnm";
  std::size_t pt_epochs = 20, pt_batch = 256, pt_block = 32;
  double pt_lr = 1e-3;
  pre->add_option("--data", pt_data)->required();
  pre->add_option("--out", pt_out);
  pre->add_option("--epochs", pt_epochs);
  pre->add_option("--batch", pt_batch);
  pre->add_option("--lr", pt_lr);
  pre->add_option("--block-size", pt_block);

  // freeze-embed
  auto* fe = app.add_subcommand("freeze-embed", "frozen 256-wide features per tri-axial group");
  std::string fe_encoder, fe_data, fe_out = "embeddings.csv";
  fe->add_option("--encoder", fe_encoder)->required();
  fe->add_option("--data", fe_data)->required();
  fe->add_option("--out", fe_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (*synth) return cmd_synth(sy_classes, sy_per, sy_chans, sy_len, sy_rate, seed, sy_out);
    if (*imp) return cmd_import_csv(ic_input, ic_manifest, ic_out);
    if (*extract) return cmd_extract(ex_data, ex_block, ex_mode, ex_out, seed);
    if (*train)
      return cmd_train(tr_preset, tr_data, tr_out, seed, tr_lr, tr_epochs, tr_batch,
                       tr_test_fraction, tr_no_time, tr_no_freq, tr_no_corr);
    if (*eval) return cmd_eval(ev_ckpt, ev_data, ev_out, ev_corr);
    if (*gc) return cmd_grad_check(gc_module, seed);
    if (*sens) return cmd_sensitivity(se_data, se_block, se_noise, se_rot, se_shift, se_out, seed);
    if (*rf)
      return cmd_rf_baseline(rf_data, rf_scales, rf_trees, rf_depth, rf_test_fraction, seed,
                             rf_out);
    if (*probe) return cmd_probe(pr_data, pr_encoder, pr_lambda, pr_test_fraction, pr_out, seed);
    if (*pre) return cmd_pretrain(pt_data, pt_out, pt_epochs, pt_batch, pt_lr, pt_block, seed);
    if (*fe) return cmd_freeze_embed(fe_encoder, fe_data, fe_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 2;
}
