#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tcnet/dataset.hpp"
#include "tcnet/model.hpp"

namespace tcnet {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t max_epochs = 300;
  std::size_t patience = 20;
  std::size_t batch_size = 32;
  double alpha = 1e-4;  // L_delta weight
  double beta = 1e-4;   // L_tv weight
  std::uint64_t seed = 42;
  double val_fraction = 0.1;
  bool class_weights = false;  // inverse-frequency weighting of L_cls

  void validate() const;
};

struct MetricsReport {
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1;
  std::vector<std::size_t> support;
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
  std::string to_json() const;
};

MetricsReport compute_metrics(const std::vector<int>& predictions,
                              const std::vector<int>& labels, std::size_t n_classes);

struct LossParts {
  Tensor total, cls, delta, tv;
};

// L = L_cls + alpha*L_delta + beta*L_tv; L_cls is mean cross-entropy.
LossParts total_loss(const ClassLogits& logits, const std::vector<int>& labels,
                     const std::vector<CorrectionBundle>& bundles, double alpha, double beta,
                     const std::vector<double>* class_weights = nullptr);

// Adam with decoupled weight decay (beta1=0.9, beta2=0.999, eps=1e-8).
// Consumes and clears each parameter's accumulated gradient.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};
void adam_step(ParamMap& params, AdamState& state, double lr, double weight_decay);

double cosine_lr(std::size_t epoch, std::size_t max_epochs, double lr0);

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0, train_loss = 0, l_cls = 0, l_delta = 0, l_tv = 0;
  double val_mf1 = 0, val_acc = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  double best_val_mf1 = 0.0;
};

// Supervised training with cosine schedule and early stopping on validation
// macro-F1. Saves the best checkpoint to `checkpoint_path` and leaves the
// model holding the best parameters.
TrainResult train_model(TcnetModel& model, const WindowedDataset& train_data, TrainConfig cfg,
                        const std::string& checkpoint_path);

MetricsReport evaluate_model(const TcnetModel& model, const WindowedDataset& data,
                             std::size_t batch_size = 64);
std::vector<int> predict_model(const TcnetModel& model, const WindowedDataset& data,
                               std::size_t batch_size = 64);

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);

// ---- self-supervised pretext tasks: AoT / Permutation / TimeWarp ----

enum class SslKind { Aot, Permute, Warp };

// Deterministic primitives on a channel-major (C x L) buffer.
std::vector<double> aot_reverse(const std::vector<double>& w, std::size_t chans, std::size_t len);
std::vector<double> permute_chunks(const std::vector<double>& w, std::size_t chans,
                                   std::size_t len, std::mt19937_64& rng);
std::vector<double> time_warp(const std::vector<double>& w, std::size_t chans, std::size_t len,
                              std::mt19937_64& rng);

// Coin-flip wrapper: applies the named transform with probability 0.5
// (label 1) and returns the window unchanged otherwise (label 0).
std::pair<std::vector<double>, int> ssl_transform(const std::vector<double>& window,
                                                  std::size_t chans, std::size_t len, SslKind kind,
                                                  std::mt19937_64& rng);

struct SslHeads {
  Linear aot, permute, warp;
  static SslHeads init(std::size_t rep_dim, std::mt19937_64& rng);
  void collect(ParamMap& pm) const;
};

struct SslEpochStats {
  std::size_t epoch = 0;
  double loss = 0, bce_aot = 0, bce_permute = 0, bce_warp = 0, l_delta = 0;
};

struct SslResult {
  std::vector<SslEpochStats> history;
  SslHeads heads;
};

// Joint pretraining of the compact encoder and three binary heads; the
// dataset must hold tri-axial (C=3) windows. Saves the encoder (without
// heads) to `encoder_path` when non-empty.
SslResult ssl_pretrain(CompactTcnet& model, const WindowedDataset& windows, TrainConfig cfg,
                       const std::string& encoder_path);

// Held-out pretext accuracy of one head on fresh transforms.
double ssl_head_accuracy(const CompactTcnet& model, const SslHeads& heads, SslKind kind,
                         const WindowedDataset& windows, std::uint64_t seed,
                         std::size_t batch_size = 64);

// Frozen-feature matrix: concat of forward_compact over consecutive
// tri-axial channel groups -> (C/3)*rep_dim columns per window.
struct FeatureMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;
  const double* row(std::size_t r) const { return &data[r * cols]; }
};
FeatureMatrix freeze_embed(const CompactTcnet& encoder, const WindowedDataset& data,
                           std::size_t batch_size = 64);

}  // namespace tcnet
