#include "tcnet/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace tcnet {

using nlohmann::json;

void TrainConfig::validate() const {
  if (learning_rate <= 0 || weight_decay < 0 || max_epochs == 0 || batch_size == 0)
    throw std::invalid_argument("TrainConfig: rates, epochs and batch size must be positive");
  if (patience == 0 || patience > max_epochs)
    throw std::invalid_argument("TrainConfig: patience must lie in [1, max_epochs]");
  if (alpha < 0 || beta < 0) throw std::invalid_argument("TrainConfig: negative loss weights");
  if (val_fraction <= 0 || val_fraction >= 1)
    throw std::invalid_argument("TrainConfig: val_fraction must lie in (0,1)");
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

MetricsReport compute_metrics(const std::vector<int>& predictions,
                              const std::vector<int>& labels, std::size_t n_classes) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("compute_metrics: prediction/label length mismatch");
  if (predictions.empty()) throw std::invalid_argument("compute_metrics: empty input");
  MetricsReport r;
  r.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= n_classes || predictions[i] < 0 ||
        std::size_t(predictions[i]) >= n_classes)
      throw std::invalid_argument("compute_metrics: class index out of range");
    r.confusion[labels[i]][predictions[i]]++;
  }
  r.precision.assign(n_classes, 0.0);
  r.recall.assign(n_classes, 0.0);
  r.f1.assign(n_classes, 0.0);
  r.support.assign(n_classes, 0);
  std::size_t correct = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t tp = r.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < n_classes; ++o) {
      if (o != c) {
        fp += r.confusion[o][c];
        fn += r.confusion[c][o];
      }
      r.support[c] += 0;  // filled below
    }
    r.support[c] = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t(0));
    correct += tp;
    r.precision[c] = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    r.recall[c] = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    r.f1[c] = (r.precision[c] + r.recall[c]) > 0
                  ? 2.0 * r.precision[c] * r.recall[c] / (r.precision[c] + r.recall[c])
                  : 0.0;
  }
  r.accuracy = double(correct) / double(labels.size());
  r.macro_f1 = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / double(n_classes);
  return r;
}

std::string MetricsReport::to_json() const {
  json j;
  j["macro_f1"] = macro_f1;
  j["accuracy"] = accuracy;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["support"] = support;
  j["confusion"] = confusion;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// loss / optimizer / schedule
// ---------------------------------------------------------------------------

LossParts total_loss(const ClassLogits& logits, const std::vector<int>& labels,
                     const std::vector<CorrectionBundle>& bundles, double alpha, double beta,
                     const std::vector<double>* class_weights) {
  const Tensor& z = logits.values;
  if (!z.defined() || z.rank() != 2 || z.extent(0) != labels.size())
    throw std::invalid_argument("total_loss: logits must be B x n_classes matching labels");
  std::size_t batch = z.extent(0), n_classes = z.extent(1);
  std::vector<double> mask(batch * n_classes, 0.0);
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    int y = labels[i];
    if (y < 0 || std::size_t(y) >= n_classes)
      throw std::invalid_argument("total_loss: label " + std::to_string(y) + " outside [0," +
                                  std::to_string(n_classes) + ")");
    double w = class_weights ? (*class_weights)[std::size_t(y)] : 1.0;
    mask[i * n_classes + std::size_t(y)] = w;
    weight_sum += w;
  }
  Tensor log_soft = sub(z, logsumexp_axis(z, 1, true));
  Tensor picked = mul(Tensor::from({batch, n_classes}, std::move(mask)), log_soft);
  LossParts parts;
  parts.cls = mul_scalar(neg(sum_all(picked)), 1.0 / weight_sum);
  Tensor l_delta, l_tv;
  for (const auto& bundle : bundles) {
    auto [ld, lt] = correction_regularizers(bundle);
    l_delta = l_delta.defined() ? add(l_delta, ld) : ld;
    l_tv = l_tv.defined() ? add(l_tv, lt) : lt;
  }
  parts.delta = l_delta.defined() ? l_delta : Tensor::scalar(0.0);
  parts.tv = l_tv.defined() ? l_tv : Tensor::scalar(0.0);
  parts.total = parts.cls;
  if (parts.delta.requires_grad() || parts.delta.item() != 0.0)
    parts.total = add(parts.total, mul_scalar(parts.delta, alpha));
  if (parts.tv.requires_grad() || parts.tv.item() != 0.0)
    parts.total = add(parts.total, mul_scalar(parts.tv, beta));
  return parts;
}

void adam_step(ParamMap& params, AdamState& state, double lr, double weight_decay) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (state.m.size() != params.items.size()) {
    state.m.assign(params.items.size(), {});
    state.v.assign(params.items.size(), {});
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      state.m[i].assign(params.items[i].second.size(), 0.0);
      state.v[i].assign(params.items[i].second.size(), 0.0);
    }
  }
  ++state.step;
  double c1 = 1.0 - std::pow(b1, double(state.step));
  double c2 = 1.0 - std::pow(b2, double(state.step));
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    auto& [name, p] = params.items[i];
    Tensor g = p.grad();
    std::vector<double> vals = p.values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      double gj = g[j];
      if (!std::isfinite(gj))
        throw std::runtime_error("adam_step: non-finite gradient in parameter '" + name + "'");
      state.m[i][j] = b1 * state.m[i][j] + (1.0 - b1) * gj;
      state.v[i][j] = b2 * state.v[i][j] + (1.0 - b2) * gj * gj;
      double mhat = state.m[i][j] / c1;
      double vhat = state.v[i][j] / c2;
      vals[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * vals[j]);
    }
    p.set_values(std::move(vals));
    p.zero_grad();
  }
}

double cosine_lr(std::size_t epoch, std::size_t max_epochs, double lr0) {
  if (epoch > max_epochs) throw std::invalid_argument("cosine_lr: epoch beyond max_epochs");
  constexpr double kPi = 3.14159265358979323846;
  return lr0 * (1.0 + std::cos(kPi * double(epoch) / double(max_epochs))) / 2.0;
}

// ---------------------------------------------------------------------------
// supervised training
// ---------------------------------------------------------------------------

namespace {

std::vector<double> inverse_frequency_weights(const WindowedDataset& ds) {
  std::vector<double> counts(ds.n_classes, 0.0);
  for (auto l : ds.labels) counts[std::size_t(l)] += 1.0;
  std::vector<double> w(ds.n_classes, 0.0);
  for (std::size_t c = 0; c < ds.n_classes; ++c)
    w[c] = counts[c] > 0 ? double(ds.n_windows) / (double(ds.n_classes) * counts[c]) : 0.0;
  return w;
}

// Seeded stratified split: last ceil(frac * count) of each class's shuffled
// indices go to validation.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const WindowedDataset& ds, double frac, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> per_class(ds.n_classes);
  for (std::size_t i = 0; i < ds.n_windows; ++i) per_class[std::size_t(ds.labels[i])].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train_idx, val_idx;
  for (auto& bucket : per_class) {
    std::shuffle(bucket.begin(), bucket.end(), rng);
    std::size_t take = bucket.empty() ? 0 : std::max<std::size_t>(1, std::size_t(std::llround(frac * double(bucket.size()))));
    if (take >= bucket.size()) take = bucket.size() > 1 ? bucket.size() - 1 : 0;
    for (std::size_t i = 0; i < bucket.size(); ++i)
      (i + take >= bucket.size() ? val_idx : train_idx).push_back(bucket[i]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  if (train_idx.empty() || val_idx.empty())
    throw std::invalid_argument("train: dataset too small for a validation split");
  return {train_idx, val_idx};
}

std::vector<int> predict_batches(const TcnetModel& model, const WindowedDataset& ds,
                                 const std::vector<std::size_t>& indices, std::size_t batch_size) {
  std::vector<int> preds;
  preds.reserve(indices.size());
  for (std::size_t at = 0; at < indices.size(); at += batch_size) {
    std::size_t end = std::min(indices.size(), at + batch_size);
    std::vector<std::size_t> chunk(indices.begin() + at, indices.begin() + end);
    Tensor logits = model.forward(ds.batch(chunk)).logits.values;
    std::size_t nc = logits.extent(1);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      int best = 0;
      for (std::size_t c = 1; c < nc; ++c)
        if (logits[b * nc + c] > logits[b * nc + best]) best = int(c);
      preds.push_back(best);
    }
  }
  return preds;
}

}  // namespace

std::vector<int> predict_model(const TcnetModel& model, const WindowedDataset& data,
                               std::size_t batch_size) {
  std::vector<std::size_t> all(data.n_windows);
  std::iota(all.begin(), all.end(), 0);
  return predict_batches(model, data, all, batch_size);
}

MetricsReport evaluate_model(const TcnetModel& model, const WindowedDataset& data,
                             std::size_t batch_size) {
  std::vector<int> preds = predict_model(model, data, batch_size);
  std::vector<int> labels(data.labels.begin(), data.labels.end());
  return compute_metrics(preds, labels, data.n_classes);
}

TrainResult train_model(TcnetModel& model, const WindowedDataset& train_data, TrainConfig cfg,
                        const std::string& checkpoint_path) {
  cfg.validate();
  train_data.validate();
  if (train_data.n_channels != model.config().n_channels ||
      train_data.window_len != model.config().window_len ||
      train_data.n_classes != model.config().n_classes)
    throw std::invalid_argument(
        "train: dataset shape (" + std::to_string(train_data.n_channels) + " channels, length " +
        std::to_string(train_data.window_len) + ", " + std::to_string(train_data.n_classes) +
        " classes) does not match the model config");

  auto [train_idx, val_idx] = stratified_split(train_data, cfg.val_fraction, cfg.seed);
  WindowedDataset val_set = train_data.subset(val_idx);
  std::vector<double> class_w;
  if (cfg.class_weights) class_w = inverse_frequency_weights(train_data);

  ParamMap params = model.params();
  AdamState state;
  TrainResult result;
  double best = -1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double lr = cosine_lr(epoch, cfg.max_epochs, cfg.learning_rate);
    std::mt19937_64 erng(cfg.seed * 1000003ULL + epoch);
    std::vector<std::size_t> order = train_idx;
    std::shuffle(order.begin(), order.end(), erng);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      std::size_t end = std::min(order.size(), at + cfg.batch_size);
      std::vector<std::size_t> chunk(order.begin() + at, order.begin() + end);
      Tensor x = train_data.batch(chunk);
      std::vector<int> labels;
      for (auto i : chunk) labels.push_back(train_data.labels[i]);
      auto out = model.forward(x);
      LossParts loss = total_loss(out.logits, labels, out.bundles, cfg.alpha, cfg.beta,
                                  cfg.class_weights ? &class_w : nullptr);
      double lv = loss.total.item();
      if (!std::isfinite(lv))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batches));
      backward(loss.total);
      adam_step(params, state, lr, cfg.weight_decay);
      stats.train_loss += lv;
      stats.l_cls += loss.cls.item();
      stats.l_delta += loss.delta.item();
      stats.l_tv += loss.tv.item();
      ++batches;
    }
    stats.train_loss /= double(batches);
    stats.l_cls /= double(batches);
    stats.l_delta /= double(batches);
    stats.l_tv /= double(batches);

    MetricsReport val = evaluate_model(model, val_set, cfg.batch_size);
    stats.val_mf1 = val.macro_f1;
    stats.val_acc = val.accuracy;
    result.history.push_back(stats);

    if (val.macro_f1 > best) {
      best = val.macro_f1;
      result.best_epoch = epoch;
      result.best_val_mf1 = best;
      since_best = 0;
      if (!checkpoint_path.empty()) model.save(checkpoint_path);
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (!checkpoint_path.empty()) model = TcnetModel::load(checkpoint_path);
  return result;
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "epoch,lr,train_loss,l_cls,l_delta,l_tv,val_mf1,val_acc\n";
  for (const auto& h : history)
    os << h.epoch << "," << h.lr << "," << h.train_loss << "," << h.l_cls << "," << h.l_delta
       << "," << h.l_tv << "," << h.val_mf1 << "," << h.val_acc << "\n";
}

// ---------------------------------------------------------------------------
// pretext tasks
// ---------------------------------------------------------------------------

std::vector<double> aot_reverse(const std::vector<double>& w, std::size_t chans,
                                std::size_t len) {
  std::vector<double> out(w.size());
  for (std::size_t c = 0; c < chans; ++c)
    for (std::size_t t = 0; t < len; ++t) out[c * len + t] = w[c * len + (len - 1 - t)];
  return out;
}

std::vector<double> permute_chunks(const std::vector<double>& w, std::size_t chans,
                                   std::size_t len, std::mt19937_64& rng) {
  constexpr std::size_t kChunks = 4, kMinChunk = 10;
  if (len < kChunks * kMinChunk)
    throw std::invalid_argument("permute_chunks: window of " + std::to_string(len) +
                                " samples is shorter than 4 chunks of 10");
  std::size_t chunk = len / kChunks;  // the last chunk absorbs the remainder
  std::array<std::size_t, kChunks> order{0, 1, 2, 3};
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> out(w.size());
  for (std::size_t c = 0; c < chans; ++c) {
    std::size_t at = 0;
    for (std::size_t i = 0; i < kChunks; ++i) {
      std::size_t src = order[i] * chunk;
      std::size_t n = order[i] == kChunks - 1 ? len - (kChunks - 1) * chunk : chunk;
      std::copy_n(&w[c * len + src], n, &out[c * len + at]);
      at += n;
    }
  }
  return out;
}

std::vector<double> time_warp(const std::vector<double>& w, std::size_t chans, std::size_t len,
                              std::mt19937_64& rng) {
  constexpr std::size_t kSegs = 4;
  std::uniform_real_distribution<double> log_speed(std::log(0.5), std::log(2.0));
  std::array<double, kSegs> speed;
  for (auto& s : speed) s = std::exp(log_speed(rng));

  // source knots q_i and output knots t_i, renormalized so the warp spans L
  std::array<double, kSegs + 1> q{}, t{};
  for (std::size_t i = 0; i <= kSegs; ++i) q[i] = double(len) * double(i) / double(kSegs);
  t[0] = 0;
  for (std::size_t i = 0; i < kSegs; ++i) t[i + 1] = t[i] + (q[i + 1] - q[i]) / speed[i];
  double scale = double(len) / t[kSegs];
  for (auto& v : t) v *= scale;

  std::vector<double> out(w.size());
  for (std::size_t c = 0; c < chans; ++c) {
    std::size_t seg = 0;
    for (std::size_t j = 0; j < len; ++j) {
      double tj = double(j);
      while (seg + 1 < kSegs && tj >= t[seg + 1]) ++seg;
      double p = q[seg] + (tj - t[seg]) * (q[seg + 1] - q[seg]) / (t[seg + 1] - t[seg]);
      if (p < 0) p = 0;
      if (p > double(len - 1)) p = double(len - 1);
      std::size_t lo = std::size_t(p);
      double frac = p - double(lo);
      double a = w[c * len + lo];
      double b = lo + 1 < len ? w[c * len + lo + 1] : a;
      out[c * len + j] = a + frac * (b - a);
    }
  }
  return out;
}

std::pair<std::vector<double>, int> ssl_transform(const std::vector<double>& window,
                                                  std::size_t chans, std::size_t len,
                                                  SslKind kind, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  // The transform's own randomness is drawn regardless of the coin so that a
  // skipped task does not shift the stream for the next one.
  bool apply = coin(rng) < 0.5;
  switch (kind) {
    case SslKind::Aot:
      return apply ? std::make_pair(aot_reverse(window, chans, len), 1)
                   : std::make_pair(window, 0);
    case SslKind::Permute: {
      auto permuted = permute_chunks(window, chans, len, rng);
      return apply ? std::make_pair(std::move(permuted), 1) : std::make_pair(window, 0);
    }
    case SslKind::Warp: {
      auto warped = time_warp(window, chans, len, rng);
      return apply ? std::make_pair(std::move(warped), 1) : std::make_pair(window, 0);
    }
  }
  throw std::invalid_argument("ssl_transform: unknown kind");
}

// ---------------------------------------------------------------------------
// SSL pretraining
// ---------------------------------------------------------------------------

SslHeads SslHeads::init(std::size_t rep_dim, std::mt19937_64& rng) {
  return {Linear::init(rep_dim, 1, rng), Linear::init(rep_dim, 1, rng),
          Linear::init(rep_dim, 1, rng)};
}

void SslHeads::collect(ParamMap& pm) const {
  aot.collect(pm, "ssl.aot");
  permute.collect(pm, "ssl.permute");
  warp.collect(pm, "ssl.warp");
}

namespace {

Tensor bce_with_logits(const Tensor& z, const std::vector<double>& targets) {
  Tensor y = Tensor::from({targets.size(), 1}, targets);
  return mean_all(sub(softplus(z), mul(y, z)));
}

struct SslBatch {
  Tensor x;
  std::vector<double> y_aot, y_permute, y_warp;
};

SslBatch make_ssl_batch(const WindowedDataset& ds, const std::vector<std::size_t>& indices,
                        std::mt19937_64& rng) {
  std::size_t chans = ds.n_channels, len = ds.window_len;
  SslBatch batch;
  std::vector<double> vals;
  vals.reserve(indices.size() * chans * len);
  for (std::size_t i : indices) {
    std::vector<double> w = ds.window(i);
    auto [w1, aot] = ssl_transform(w, chans, len, SslKind::Aot, rng);
    auto [w2, perm] = ssl_transform(w1, chans, len, SslKind::Permute, rng);
    auto [w3, warp] = ssl_transform(w2, chans, len, SslKind::Warp, rng);
    vals.insert(vals.end(), w3.begin(), w3.end());
    batch.y_aot.push_back(double(aot));
    batch.y_permute.push_back(double(perm));
    batch.y_warp.push_back(double(warp));
  }
  batch.x = Tensor::from({indices.size(), chans, len}, std::move(vals));
  return batch;
}

}  // namespace

SslResult ssl_pretrain(CompactTcnet& model, const WindowedDataset& windows, TrainConfig cfg,
                       const std::string& encoder_path) {
  cfg.validate();
  windows.validate();
  if (windows.n_channels != 3)
    throw std::invalid_argument("ssl_pretrain: expected tri-axial windows (C=3), got C=" +
                                std::to_string(windows.n_channels) +
                                "; split sensor groups upstream");
  if (windows.window_len < 40)
    throw std::invalid_argument("ssl_pretrain: windows shorter than 40 samples cannot be permuted");

  std::mt19937_64 rng(cfg.seed);
  SslResult result;
  result.heads = SslHeads::init(model.config().rep_dim(), rng);
  ParamMap params = model.params();
  result.heads.collect(params);
  AdamState state;

  std::vector<std::size_t> order(windows.n_windows);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::mt19937_64 erng(cfg.seed * 7919ULL + epoch);
    std::shuffle(order.begin(), order.end(), erng);
    SslEpochStats stats;
    stats.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      std::size_t end = std::min(order.size(), at + cfg.batch_size);
      std::vector<std::size_t> chunk(order.begin() + at, order.begin() + end);
      SslBatch batch = make_ssl_batch(windows, chunk, erng);
      auto out = model.forward(batch.x);
      Tensor bce_a = bce_with_logits(result.heads.aot.apply(out.rep), batch.y_aot);
      Tensor bce_p = bce_with_logits(result.heads.permute.apply(out.rep), batch.y_permute);
      Tensor bce_w = bce_with_logits(result.heads.warp.apply(out.rep), batch.y_warp);
      Tensor loss = mul_scalar(add(add(bce_a, bce_p), bce_w), 1.0 / 3.0);
      auto [l_delta, l_tv] = correction_regularizers(out.bundle);
      (void)l_tv;
      loss = add(loss, mul_scalar(l_delta, cfg.alpha));
      double lv = loss.item();
      if (!std::isfinite(lv))
        throw std::runtime_error("ssl_pretrain: non-finite loss at epoch " +
                                 std::to_string(epoch));
      backward(loss);
      adam_step(params, state, cfg.learning_rate, cfg.weight_decay);
      stats.loss += lv;
      stats.bce_aot += bce_a.item();
      stats.bce_permute += bce_p.item();
      stats.bce_warp += bce_w.item();
      stats.l_delta += l_delta.item();
      ++batches;
    }
    stats.loss /= double(batches);
    stats.bce_aot /= double(batches);
    stats.bce_permute /= double(batches);
    stats.bce_warp /= double(batches);
    stats.l_delta /= double(batches);
    result.history.push_back(stats);
  }
  if (!encoder_path.empty()) model.save(encoder_path);
  return result;
}

double ssl_head_accuracy(const CompactTcnet& model, const SslHeads& heads, SslKind kind,
                         const WindowedDataset& windows, std::uint64_t seed,
                         std::size_t batch_size) {
  std::mt19937_64 rng(seed);
  const Linear& head = kind == SslKind::Aot ? heads.aot
                       : kind == SslKind::Permute ? heads.permute
                                                  : heads.warp;
  std::size_t correct = 0;
  for (std::size_t at = 0; at < windows.n_windows; at += batch_size) {
    std::size_t end = std::min(windows.n_windows, at + batch_size);
    std::vector<double> vals;
    std::vector<int> ys;
    for (std::size_t i = at; i < end; ++i) {
      auto [w, y] = ssl_transform(windows.window(i), windows.n_channels, windows.window_len,
                                  kind, rng);
      vals.insert(vals.end(), w.begin(), w.end());
      ys.push_back(y);
    }
    Tensor x = Tensor::from({end - at, windows.n_channels, windows.window_len}, std::move(vals));
    Tensor z = head.apply(model.forward(x).rep);
    for (std::size_t b = 0; b < ys.size(); ++b)
      if ((z[b] > 0.0) == (ys[b] == 1)) ++correct;
  }
  return double(correct) / double(windows.n_windows);
}

FeatureMatrix freeze_embed(const CompactTcnet& encoder, const WindowedDataset& data,
                           std::size_t batch_size) {
  if (data.n_channels % 3 != 0)
    throw std::invalid_argument("freeze_embed: channel count " +
                                std::to_string(data.n_channels) + " is not divisible by 3");
  std::size_t groups = data.n_channels / 3;
  std::size_t rep = encoder.config().rep_dim();
  FeatureMatrix fm;
  fm.rows = data.n_windows;
  fm.cols = groups * rep;
  fm.data.assign(fm.rows * fm.cols, 0.0);
  for (std::size_t at = 0; at < data.n_windows; at += batch_size) {
    std::size_t end = std::min(data.n_windows, at + batch_size);
    std::vector<std::size_t> chunk;
    for (std::size_t i = at; i < end; ++i) chunk.push_back(i);
    Tensor x = data.batch(chunk);  // B x C x L
    for (std::size_t g = 0; g < groups; ++g) {
      Tensor xg = slice(x, 1, g * 3, g * 3 + 3);
      Tensor r = encoder.forward(xg).rep;  // B x rep
      for (std::size_t b = 0; b < chunk.size(); ++b)
        for (std::size_t j = 0; j < rep; ++j)
          fm.data[chunk[b] * fm.cols + g * rep + j] = r[b * rep + j];
    }
  }
  return fm;
}

}  // namespace tcnet
