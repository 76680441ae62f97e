#include "tcnet/model.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tcnet {

using nlohmann::json;

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (block_sizes.empty()) throw std::invalid_argument("ModelConfig: no block sizes");
  if (window_len == 0 || n_channels == 0 || n_classes == 0)
    throw std::invalid_argument("ModelConfig: window_len, n_channels and n_classes are required");
  for (std::size_t i = 0; i < block_sizes.size(); ++i) {
    if (block_sizes[i] > window_len)
      throw std::invalid_argument("ModelConfig: block size " + std::to_string(block_sizes[i]) +
                                  " exceeds window length " + std::to_string(window_len));
    if (stride_for(i) < 1) throw std::invalid_argument("ModelConfig: stride must be >= 1");
  }
  if (!strides.empty() && strides.size() != block_sizes.size())
    throw std::invalid_argument("ModelConfig: strides must match block_sizes");
  if (n_views < 1) throw std::invalid_argument("ModelConfig: K must be >= 1");
  if (s_max <= 0 || b_max <= 0) throw std::invalid_argument("ModelConfig: bounds must be positive");
  auto groups = effective_groups();
  std::vector<bool> seen(n_channels, false);
  for (const auto& g : groups)
    for (std::size_t c : g) {
      if (c >= n_channels || seen[c])
        throw std::invalid_argument("ModelConfig: sensor_groups must partition the channels");
      seen[c] = true;
    }
  for (bool s : seen)
    if (!s) throw std::invalid_argument("ModelConfig: sensor_groups must cover every channel");
  if (!skip_oversized_fft)
    for (std::size_t f : fft_sizes)
      if (f > window_len)
        throw std::invalid_argument("ModelConfig: FFT size " + std::to_string(f) +
                                    " exceeds window length (set skip_oversized_fft to drop it)");
  std::size_t max_kernel = 0;
  for (std::size_t k : time_kernels) max_kernel = std::max(max_kernel, k);
  if (max_kernel > window_len)
    throw std::invalid_argument("ModelConfig: time kernel exceeds window length");
}

std::size_t ModelConfig::stride_for(std::size_t scale) const {
  return strides.empty() ? block_sizes[scale] : strides[scale];
}

std::vector<std::vector<std::size_t>> ModelConfig::effective_groups() const {
  if (!sensor_groups.empty()) return sensor_groups;
  std::vector<std::vector<std::size_t>> groups;
  if (n_channels % 3 == 0) {
    for (std::size_t c = 0; c < n_channels; c += 3) groups.push_back({c, c + 1, c + 2});
  } else {
    std::vector<std::size_t> all(n_channels);
    for (std::size_t c = 0; c < n_channels; ++c) all[c] = c;
    groups.push_back(all);
  }
  return groups;
}

std::string ModelConfig::to_json() const {
  json j;
  j["block_sizes"] = block_sizes;
  j["strides"] = strides;
  j["n_views"] = n_views;
  j["d_proj"] = d_proj;
  j["d_ctx"] = d_ctx;
  j["d_blk"] = d_blk;
  j["time_kernels"] = time_kernels;
  j["time_conv_channels"] = time_conv_channels;
  j["fft_sizes"] = fft_sizes;
  j["freq_mix_channels"] = freq_mix_channels;
  j["mixer_width"] = mixer_width;
  j["sensor_groups"] = sensor_groups;
  j["n_channels"] = n_channels;
  j["n_classes"] = n_classes;
  j["window_len"] = window_len;
  j["sampling_rate"] = sampling_rate;
  j["s_max"] = s_max;
  j["b_max"] = b_max;
  j["skip_oversized_fft"] = skip_oversized_fft;
  j["disable_time"] = disable_time;
  j["disable_freq"] = disable_freq;
  j["disable_correction"] = disable_correction;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.block_sizes = j.value("block_sizes", c.block_sizes);
  c.strides = j.value("strides", c.strides);
  c.n_views = j.value("n_views", c.n_views);
  c.d_proj = j.value("d_proj", c.d_proj);
  c.d_ctx = j.value("d_ctx", c.d_ctx);
  c.d_blk = j.value("d_blk", c.d_blk);
  c.time_kernels = j.value("time_kernels", c.time_kernels);
  c.time_conv_channels = j.value("time_conv_channels", c.time_conv_channels);
  c.fft_sizes = j.value("fft_sizes", c.fft_sizes);
  c.freq_mix_channels = j.value("freq_mix_channels", c.freq_mix_channels);
  c.mixer_width = j.value("mixer_width", c.mixer_width);
  c.sensor_groups = j.value("sensor_groups", c.sensor_groups);
  c.n_channels = j.value("n_channels", c.n_channels);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.window_len = j.value("window_len", c.window_len);
  c.sampling_rate = j.value("sampling_rate", c.sampling_rate);
  c.s_max = j.value("s_max", c.s_max);
  c.b_max = j.value("b_max", c.b_max);
  c.skip_oversized_fft = j.value("skip_oversized_fft", c.skip_oversized_fft);
  c.disable_time = j.value("disable_time", c.disable_time);
  c.disable_freq = j.value("disable_freq", c.disable_freq);
  c.disable_correction = j.value("disable_correction", c.disable_correction);
  return c;
}

namespace {

Preset make_preset(const std::string& name, std::vector<std::size_t> blocks, std::size_t views,
                   std::size_t channels, std::size_t classes, std::size_t window, double fs,
                   double lr, std::size_t epochs) {
  Preset p;
  p.name = name;
  p.model.block_sizes = std::move(blocks);
  p.model.n_views = views;
  p.model.n_channels = channels;
  p.model.n_classes = classes;
  p.model.window_len = window;
  p.model.sampling_rate = fs;
  p.learning_rate = lr;
  p.max_epochs = epochs;
  return p;
}

}  // namespace

const std::vector<Preset>& all_presets() {
  static const std::vector<Preset> presets = [] {
    std::vector<Preset> v;
    v.push_back(make_preset("usc-had-shape", {50, 100}, 2, 6, 12, 200, 100.0, 3e-4, 300));
    v.push_back(make_preset("uci-har-shape", {32, 128}, 4, 9, 6, 128, 50.0, 5e-4, 300));
    v.push_back(make_preset("daphnet-shape", {32, 192}, 4, 9, 2, 192, 64.0, 1e-3, 300));
    v.push_back(make_preset("mhealth-shape", {32, 64}, 4, 15, 12, 100, 50.0, 1e-3, 50));
    v.push_back(make_preset("pamap2-shape", {32, 128}, 4, 36, 12, 256, 100.0, 1e-3, 120));
    Preset tiny = make_preset("tiny", {32, 128}, 2, 3, 3, 128, 50.0, 2e-3, 30);
    tiny.model.d_proj = 32;
    tiny.model.d_ctx = 32;
    tiny.model.d_blk = 16;
    tiny.model.time_conv_channels = 8;
    tiny.model.mixer_width = 32;
    tiny.model.freq_mix_channels = 4;
    v.push_back(tiny);
    return v;
  }();
  return presets;
}

Preset find_preset(const std::string& name) {
  for (const auto& p : all_presets())
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : all_presets()) known += (known.empty() ? "" : ", ") + p.name;
  throw std::invalid_argument("unknown preset '" + name + "' (known: " + known + ")");
}

// ---------------------------------------------------------------------------
// blocking
// ---------------------------------------------------------------------------

std::size_t block_count(std::size_t window_len, std::size_t block_size, std::size_t stride) {
  if (block_size > window_len)
    throw std::invalid_argument("block_count: block size " + std::to_string(block_size) +
                                " exceeds window length " + std::to_string(window_len));
  if (stride < 1) throw std::invalid_argument("block_count: stride must be >= 1");
  return (window_len - block_size) / stride + 1;
}

Tensor unfold_blocks(const Tensor& x, std::size_t block_size, std::size_t stride) {
  if (!x.defined() || x.rank() != 3)
    throw std::invalid_argument("unfold_blocks: input must be B x C x L");
  std::size_t batch = x.extent(0), len = x.extent(2);
  std::size_t n = block_count(len, block_size, stride);
  std::vector<Tensor> blocks;
  blocks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor b = slice(x, 2, i * stride, i * stride + block_size);  // B x C x m
    blocks.push_back(reshape(transpose(b, {0, 2, 1}), {batch, 1, block_size, x.extent(1)}));
  }
  return n == 1 ? blocks[0] : concat(blocks, 1);
}

// ---------------------------------------------------------------------------
// TcnetModel
// ---------------------------------------------------------------------------

namespace {

// per-family projection widths: floor split with the remainder on the last
std::vector<std::size_t> family_proj_widths(std::size_t families, std::size_t d_proj) {
  std::vector<std::size_t> w(families, d_proj / families);
  w.back() += d_proj - (d_proj / families) * families;
  return w;
}

Tensor broadcast_over_blocks(const Tensor& per_batch, std::size_t n_blocks) {
  std::size_t batch = per_batch.extent(0), dim = per_batch.extent(1);
  Tensor row = reshape(per_batch, {batch, 1, dim});
  if (n_blocks == 1) return row;
  return mul(row, Tensor::full({1, n_blocks, 1}, 1.0));
}

// log(1 + |STFT|^2) spectrogram: x B x C x L -> B x C x nf x bins
Tensor spectrogram(const Tensor& x, std::size_t n_fft) {
  std::size_t batch = x.extent(0), chans = x.extent(1), len = x.extent(2);
  std::size_t hop = n_fft / 2;
  std::size_t nf = (len - n_fft) / hop + 1;
  std::size_t bins = n_fft / 2 + 1;
  std::vector<Tensor> frames;
  frames.reserve(nf);
  for (std::size_t j = 0; j < nf; ++j)
    frames.push_back(
        reshape(slice(x, 2, j * hop, j * hop + n_fft), {batch, chans, 1, n_fft}));
  Tensor stacked = nf == 1 ? frames[0] : concat(frames, 2);
  Tensor flat = reshape(stacked, {batch * chans * nf, n_fft});
  std::vector<double> cb(n_fft * bins), sb(n_fft * bins);
  for (std::size_t t = 0; t < n_fft; ++t)
    for (std::size_t k = 0; k < bins; ++k) {
      double ang = 2.0 * 3.14159265358979323846 * double(k) * double(t) / double(n_fft);
      cb[t * bins + k] = std::cos(ang);
      sb[t * bins + k] = -std::sin(ang);
    }
  Tensor re = matmul(flat, Tensor::from({n_fft, bins}, cb));
  Tensor im = matmul(flat, Tensor::from({n_fft, bins}, sb));
  Tensor power = add(mul(re, re), mul(im, im));
  return reshape(log_op(add_scalar(power, 1.0)), {batch, chans, nf, bins});
}

}  // namespace

TcnetModel::TcnetModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  extractor_ = ExtractorParams::defaults(cfg_.sampling_rate);

  for (std::size_t k : cfg_.time_kernels) {
    double bound = 1.0 / std::sqrt(double(cfg_.n_channels * k));
    time_conv_.push_back(uniform_param({cfg_.time_conv_channels, cfg_.n_channels, k}, bound, rng));
  }
  time_mlp_ = Mlp2::init(cfg_.time_conv_channels * cfg_.time_kernels.size(), cfg_.d_ctx,
                         cfg_.d_ctx, rng);

  for (std::size_t f : cfg_.fft_sizes) {
    if (f > cfg_.window_len) continue;  // validated: only reachable with skip_oversized_fft
    FreqPath path;
    std::size_t hop = f / 2;
    std::size_t nf = (cfg_.window_len - f) / hop + 1;
    std::size_t patch = (f / 2 + 1) * cfg_.freq_mix_channels;
    path.mix = Linear::init(cfg_.n_channels, cfg_.freq_mix_channels, rng);
    path.token_mix = Mlp2::init(nf, cfg_.mixer_width, nf, rng);
    path.patch_mix = Mlp2::init(patch, cfg_.mixer_width, patch, rng);
    path.to_ctx = Mlp2::init(patch, cfg_.d_ctx, cfg_.d_ctx, rng);
    freq_paths_.push_back(std::move(path));
  }

  std::size_t ctx_in = 2 * cfg_.d_ctx + cfg_.d_blk;
  std::size_t k_eff = cfg_.disable_correction ? 1 : cfg_.n_views;
  for (std::size_t m : cfg_.block_sizes) {
    ScalePath path;
    FamilyLayout layout = extractor_.layout_for(m);
    std::size_t d = layout.total();
    path.f_blk = Mlp2::init(d, cfg_.d_ctx / 2, cfg_.d_blk, rng);
    path.heads = CorrectionHeadParams::init(k_eff, ctx_in, cfg_.d_ctx / 2, cfg_.n_channels,
                                            layout.count(), rng);
    path.heads.s_max = cfg_.s_max;
    path.heads.b_max = cfg_.b_max;
    auto widths = family_proj_widths(layout.count(), cfg_.d_proj);
    for (std::size_t i = 0; i < layout.count(); ++i)
      path.family_proj.push_back(Linear::init(layout.families[i].width(), widths[i], rng));
    scales_.push_back(std::move(path));
  }

  view_score_ = Linear::init(cfg_.d_proj, 1, rng);
  group_score_ = Linear::init(cfg_.d_proj, 1, rng);
  block_score_ = Linear::init(cfg_.d_proj, 1, rng);
  fuse_ = Linear::init(cfg_.d_proj * cfg_.block_sizes.size(), cfg_.d_proj, rng);
  res1_ = Linear::init(cfg_.d_proj, cfg_.d_proj, rng);
  res2_ = Linear::init(cfg_.d_proj, cfg_.d_proj, rng);
  head_ = Linear::init(cfg_.d_proj, cfg_.n_classes, rng);
}

Tensor TcnetModel::time_branch(const Tensor& x) const {
  std::size_t max_kernel = 0;
  for (std::size_t k : cfg_.time_kernels) max_kernel = std::max(max_kernel, k);
  if (x.extent(2) < max_kernel)
    throw std::invalid_argument("time_branch: window shorter than the largest kernel");
  std::vector<Tensor> pooled;
  pooled.reserve(time_conv_.size());
  for (const Tensor& w : time_conv_) pooled.push_back(mean_axis(conv1d(x, w), 2));
  return time_mlp_.apply(concat(pooled, 1));
}

Tensor TcnetModel::freq_branch(const Tensor& x) const {
  std::size_t batch = x.extent(0);
  Tensor acc;
  std::size_t used = 0;
  std::size_t path_idx = 0;
  for (std::size_t f : cfg_.fft_sizes) {
    if (f > cfg_.window_len) {
      if (cfg_.skip_oversized_fft) continue;
      throw std::invalid_argument("freq_branch: FFT size " + std::to_string(f) +
                                  " exceeds window length");
    }
    const FreqPath& path = freq_paths_[path_idx++];
    Tensor s = spectrogram(x, f);  // B x C x nf x bins
    std::size_t nf = s.extent(2), bins = s.extent(3);
    Tensor mixed = path.mix.apply(transpose(s, {0, 2, 3, 1}));  // B x nf x bins x mixC
    Tensor tokens = reshape(mixed, {batch, nf, bins * cfg_.freq_mix_channels});
    Tensor tok_t = transpose(tokens, {0, 2, 1});
    tokens = add(tokens, transpose(path.token_mix.apply(tok_t), {0, 2, 1}));
    tokens = add(tokens, path.patch_mix.apply(tokens));
    Tensor emb = path.to_ctx.apply(mean_axis(tokens, 1));  // B x d_ctx
    acc = acc.defined() ? add(acc, emb) : emb;
    ++used;
  }
  if (used == 0) throw std::invalid_argument("freq_branch: no usable FFT size");
  return mul_scalar(acc, 1.0 / double(used));
}

Tensor TcnetModel::project_groups(const Tensor& z_multi, const FamilyLayout& layout,
                                  const ScalePath& path) const {
  if (z_multi.extent(3) != layout.total())
    throw std::invalid_argument("group_project: layout width " + std::to_string(layout.total()) +
                                " does not match anchors " + shape_str(z_multi.shape()));
  std::vector<Tensor> parts;
  parts.reserve(layout.count());
  for (std::size_t i = 0; i < layout.count(); ++i) {
    const FamilyRange& fam = layout.families[i];
    parts.push_back(path.family_proj[i].apply(slice(z_multi, 3, fam.begin, fam.end)));
  }
  return concat(parts, 3);
}

Tensor attention_pool(const Tensor& values, const Tensor& scores, std::size_t axis) {
  Tensor weights = softmax(scores, axis);
  return sum_axis(mul(values, weights), axis);
}

Tensor TcnetModel::attend_views_groups(const Tensor& h_proj, std::size_t n_views) const {
  std::size_t batch = h_proj.extent(0), blocks = h_proj.extent(1);
  std::size_t kc = h_proj.extent(2), d = h_proj.extent(3);
  std::size_t chans = kc / n_views;
  Tensor by_view = reshape(h_proj, {batch, blocks, n_views, chans, d});
  auto groups = cfg_.effective_groups();
  std::vector<Tensor> fused_groups;
  fused_groups.reserve(groups.size());
  for (const auto& g : groups) {
    Tensor mean_chan;
    for (std::size_t c : g) {
      Tensor chan = slice(by_view, 3, c, c + 1);  // B x N x K x 1 x d
      mean_chan = mean_chan.defined() ? add(mean_chan, chan) : chan;
    }
    mean_chan = mul_scalar(mean_chan, 1.0 / double(g.size()));
    Tensor per_group = reshape(mean_chan, {batch, blocks, n_views, d});
    Tensor fused = attention_pool(per_group, view_score_.apply(per_group), 2);  // B x N x d
    fused_groups.push_back(reshape(fused, {batch, blocks, 1, d}));
  }
  Tensor stacked = fused_groups.size() == 1 ? fused_groups[0] : concat(fused_groups, 2);
  return attention_pool(stacked, group_score_.apply(stacked), 2);  // B x N x d
}

Tensor TcnetModel::pool_blocks(const Tensor& h_blk) const {
  return attention_pool(h_blk, block_score_.apply(h_blk), 1);  // B x d
}

TcnetModel::Output TcnetModel::forward(const Tensor& x) const {
  if (!x.defined() || x.rank() != 3 || x.extent(1) != cfg_.n_channels ||
      x.extent(2) != cfg_.window_len)
    throw std::invalid_argument(
        "forward: input must be B x " + std::to_string(cfg_.n_channels) + " x " +
        std::to_string(cfg_.window_len) + ", got " + (x.defined() ? shape_str(x.shape()) : "none"));
  std::size_t batch = x.extent(0);
  Tensor h_time = cfg_.disable_time ? Tensor::zeros({batch, cfg_.d_ctx}) : time_branch(x);
  Tensor h_freq = cfg_.disable_freq ? Tensor::zeros({batch, cfg_.d_ctx}) : freq_branch(x);
  Tensor h_global = concat({h_time, h_freq}, 1);

  Output out;
  std::size_t k_eff = cfg_.disable_correction ? 1 : cfg_.n_views;
  std::vector<Tensor> scale_vecs;
  for (std::size_t i = 0; i < cfg_.block_sizes.size(); ++i) {
    const ScalePath& path = scales_[i];
    Tensor blocks = unfold_blocks(x, cfg_.block_sizes[i], cfg_.stride_for(i));
    AnchorTensor anchors = extract_all(blocks, extractor_, Mode::Soft);
    Tensor h_blk = block_context(anchors, path.f_blk);
    Tensor h_ctx = concat({broadcast_over_blocks(h_global, blocks.extent(1)), h_blk}, 2);
    CorrectionBundle bundle = assemble_views(anchors, h_ctx, path.heads);
    Tensor h_proj = project_groups(bundle.z_multi, anchors.layout, path);
    Tensor fused = attend_views_groups(h_proj, k_eff);
    scale_vecs.push_back(pool_blocks(fused));
    out.bundles.push_back(std::move(bundle));
  }
  Tensor h = fuse_.apply(scale_vecs.size() == 1 ? scale_vecs[0] : concat(scale_vecs, 1));
  h = add(h, tanh_op(res1_.apply(h)));
  h = add(h, tanh_op(res2_.apply(h)));
  out.logits.values = head_.apply(h);
  return out;
}

ParamMap TcnetModel::params() const {
  ParamMap pm;
  pm.add("extractor.sinc_low", extractor_.sinc_low_logits);
  pm.add("extractor.sinc_high", extractor_.sinc_high_logits);
  pm.add("extractor.gauss_log_width", extractor_.gauss_log_width);
  for (std::size_t i = 0; i < time_conv_.size(); ++i)
    pm.add("time.conv" + std::to_string(i), time_conv_[i]);
  time_mlp_.collect(pm, "time.mlp");
  for (std::size_t i = 0; i < freq_paths_.size(); ++i) {
    std::string p = "freq" + std::to_string(i);
    freq_paths_[i].mix.collect(pm, p + ".mix");
    freq_paths_[i].token_mix.collect(pm, p + ".token_mix");
    freq_paths_[i].patch_mix.collect(pm, p + ".patch_mix");
    freq_paths_[i].to_ctx.collect(pm, p + ".to_ctx");
  }
  for (std::size_t i = 0; i < scales_.size(); ++i) {
    std::string p = "scale" + std::to_string(i);
    scales_[i].f_blk.collect(pm, p + ".f_blk");
    scales_[i].heads.collect(pm, p + ".correction");
    for (std::size_t f = 0; f < scales_[i].family_proj.size(); ++f)
      scales_[i].family_proj[f].collect(pm, p + ".proj" + std::to_string(f));
  }
  view_score_.collect(pm, "attn.view");
  group_score_.collect(pm, "attn.group");
  block_score_.collect(pm, "attn.block");
  fuse_.collect(pm, "classifier.fuse");
  res1_.collect(pm, "classifier.res1");
  res2_.collect(pm, "classifier.res2");
  head_.collect(pm, "classifier.head");
  return pm;
}

// ---------------------------------------------------------------------------
// record container
// ---------------------------------------------------------------------------

namespace record_io {

namespace {

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

void write(const std::string& path, const char magic[4], const RecordFile& contents) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    os.write(magic, 4);
    write_pod<std::uint32_t>(os, contents.version);
    write_pod<std::uint64_t>(os, contents.json_blob.size());
    os.write(contents.json_blob.data(), std::streamsize(contents.json_blob.size()));
    write_pod<std::uint64_t>(os, contents.tensors.size());
    for (const auto& [name, t] : contents.tensors) {
      write_pod<std::uint32_t>(os, std::uint32_t(name.size()));
      os.write(name.data(), std::streamsize(name.size()));
      write_pod<std::uint32_t>(os, std::uint32_t(t.rank()));
      for (std::size_t e : t.shape()) write_pod<std::uint64_t>(os, e);
      for (double v : t.values()) write_pod<float>(os, float(v));
    }
    if (!os) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move '" + tmp + "' into place");
}

RecordFile read(const std::string& path, const char magic[4]) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  char got[4];
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0)
    throw std::runtime_error("unrecognized format in '" + path + "' (bad magic)");
  RecordFile rf;
  rf.version = read_pod<std::uint32_t>(is, "version");
  if (rf.version != 1)
    throw std::runtime_error("unsupported format version " + std::to_string(rf.version));
  auto json_len = read_pod<std::uint64_t>(is, "header");
  rf.json_blob.resize(json_len);
  is.read(rf.json_blob.data(), std::streamsize(json_len));
  if (!is) throw std::runtime_error("truncated payload reading config blob");
  auto n_tensors = read_pod<std::uint64_t>(is, "record count");
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    auto name_len = read_pod<std::uint32_t>(is, "record name");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("truncated payload reading record name");
    auto rank = read_pod<std::uint32_t>(is, "record rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& e : shape) {
      e = read_pod<std::uint64_t>(is, "record extents");
      numel *= e;
    }
    std::vector<double> vals(numel);
    for (auto& v : vals) v = double(read_pod<float>(is, "record values"));
    rf.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(vals)));
  }
  return rf;
}

}  // namespace record_io

namespace {

constexpr char kModelMagic[4] = {'T', 'C', 'N', 'M'};
constexpr char kCompactMagic[4] = {'T', 'C', 'N', 'M'};

void restore_params(const ParamMap& pm, const record_io::RecordFile& rf, const char* what) {
  if (pm.items.size() != rf.tensors.size())
    throw std::runtime_error(std::string(what) + ": checkpoint has " +
                             std::to_string(rf.tensors.size()) + " tensors, model expects " +
                             std::to_string(pm.items.size()));
  for (std::size_t i = 0; i < pm.items.size(); ++i) {
    const auto& [name, target] = pm.items[i];
    const auto& [got_name, value] = rf.tensors[i];
    if (name != got_name)
      throw std::runtime_error(std::string(what) + ": tensor order mismatch at '" + got_name +
                               "', expected '" + name + "'");
    if (value.shape() != target.shape())
      throw std::runtime_error(std::string(what) + ": shape mismatch for '" + name + "'");
    const_cast<Tensor&>(target).set_values(value.values());
  }
}

}  // namespace

void TcnetModel::save(const std::string& path) const {
  record_io::RecordFile rf;
  json j = json::parse(cfg_.to_json());
  j["model_kind"] = "tcnet";
  rf.json_blob = j.dump();
  rf.tensors = params().items;
  record_io::write(path, kModelMagic, rf);
}

TcnetModel TcnetModel::load(const std::string& path) {
  record_io::RecordFile rf = record_io::read(path, kModelMagic);
  json j = json::parse(rf.json_blob);
  if (j.value("model_kind", "tcnet") != "tcnet")
    throw std::runtime_error("checkpoint '" + path + "' does not hold a full model");
  TcnetModel model(ModelConfig::from_json(rf.json_blob), 0);
  restore_params(model.params(), rf, "TcnetModel::load");
  return model;
}

// ---------------------------------------------------------------------------
// CompactTcnet
// ---------------------------------------------------------------------------

void CompactConfig::validate() const {
  if (window_len < n_fft)
    throw std::invalid_argument("CompactConfig: window shorter than FFT size");
  if (window_len < block_size)
    throw std::invalid_argument("CompactConfig: window shorter than block size");
  if (block_size < 31)
    throw std::invalid_argument("CompactConfig: block size must fit the 31-tap sinc kernel");
}

std::string CompactConfig::to_json() const {
  json j;
  j["model_kind"] = "compact";
  j["window_len"] = window_len;
  j["block_size"] = block_size;
  j["sampling_rate"] = sampling_rate;
  j["d_time"] = d_time;
  j["d_freq"] = d_freq;
  j["n_fft"] = n_fft;
  j["freq_mix_channels"] = freq_mix_channels;
  j["d_blk"] = d_blk;
  j["content_dim"] = content_dim;
  j["tsf_proj_dim"] = tsf_proj_dim;
  j["s_max"] = s_max;
  j["b_max"] = b_max;
  return j.dump();
}

CompactConfig CompactConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  CompactConfig c;
  c.window_len = j.value("window_len", c.window_len);
  c.block_size = j.value("block_size", c.block_size);
  c.sampling_rate = j.value("sampling_rate", c.sampling_rate);
  c.d_time = j.value("d_time", c.d_time);
  c.d_freq = j.value("d_freq", c.d_freq);
  c.n_fft = j.value("n_fft", c.n_fft);
  c.freq_mix_channels = j.value("freq_mix_channels", c.freq_mix_channels);
  c.d_blk = j.value("d_blk", c.d_blk);
  c.content_dim = j.value("content_dim", c.content_dim);
  c.tsf_proj_dim = j.value("tsf_proj_dim", c.tsf_proj_dim);
  c.s_max = j.value("s_max", c.s_max);
  c.b_max = j.value("b_max", c.b_max);
  return c;
}

CompactTcnet::CompactTcnet(CompactConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  extractor_ = ExtractorParams::defaults(cfg_.sampling_rate);
  double b1 = 1.0 / std::sqrt(3.0 * 7.0);
  conv1_ = uniform_param({32, 3, 7}, b1, rng);
  double b2 = 1.0 / std::sqrt(32.0 * 7.0);
  conv2_ = uniform_param({cfg_.d_time, 32, 7}, b2, rng);
  std::size_t bins = cfg_.n_fft / 2 + 1;
  freq_mix_ = Linear::init(3, cfg_.freq_mix_channels, rng);
  freq_out_ = Linear::init(bins * cfg_.freq_mix_channels, cfg_.d_freq, rng);
  FamilyLayout layout = extractor_.layout_for(cfg_.block_size);
  f_blk_ = Mlp2::init(layout.total(), 32, cfg_.d_blk, rng);
  std::size_t ctx_in = cfg_.d_time + cfg_.d_freq + cfg_.d_blk;
  head_ = CorrectionHeadParams::init(2, ctx_in, 64, 3, layout.count(), rng);
  head_.s_max = cfg_.s_max;
  head_.b_max = cfg_.b_max;
  content_ = Mlp2::init(cfg_.d_time + cfg_.d_freq, 2 * cfg_.content_dim, cfg_.content_dim, rng);
  tsf_proj_ = Linear::init(layout.total(), cfg_.tsf_proj_dim, rng);
}

CompactTcnet::Output CompactTcnet::forward(const Tensor& x) const {
  if (!x.defined() || x.rank() != 3 || x.extent(1) != 3)
    throw std::invalid_argument("forward_compact: input must be a tri-axial stream B x 3 x L, got " +
                                (x.defined() ? shape_str(x.shape()) : "none"));
  if (x.extent(2) != cfg_.window_len)
    throw std::invalid_argument("forward_compact: window length mismatch");
  std::size_t batch = x.extent(0);

  Tensor h1 = tanh_op(conv1d(x, conv1_, 1));
  Tensor h_time = mean_axis(tanh_op(conv1d(h1, conv2_, 1)), 2);  // B x d_time

  Tensor s = spectrogram(x, cfg_.n_fft);  // B x 3 x nf x bins
  std::size_t nf = s.extent(2), bins = s.extent(3);
  Tensor mixed = freq_mix_.apply(transpose(s, {0, 2, 3, 1}));  // B x nf x bins x mixC
  Tensor tokens = reshape(mixed, {batch, nf, bins * cfg_.freq_mix_channels});
  Tensor h_freq = tanh_op(freq_out_.apply(mean_axis(tokens, 1)));  // B x d_freq

  Tensor blocks = unfold_blocks(x, cfg_.block_size, cfg_.block_size);
  AnchorTensor anchors = extract_all(blocks, extractor_, Mode::Soft);
  Tensor h_blk = block_context(anchors, f_blk_);
  Tensor h_global = concat({h_time, h_freq}, 1);
  Tensor h_ctx = concat({broadcast_over_blocks(h_global, blocks.extent(1)), h_blk}, 2);

  const CorrectionHead& expert = head_.heads.front();
  CorrectionPrediction pred = predict_correction(h_ctx, expert, 3, anchors.layout.count());
  AppliedCorrection corr = apply_correction(anchors.values, pred.scale, pred.bias, pred.gate,
                                            expert.alpha, head_.s_max, head_.b_max, anchors.layout);

  Tensor pooled_tsf = mean_axis(mean_axis(corr.z_k, 1), 1);  // B x D
  Tensor rep = concat({content_.apply(h_global), tsf_proj_.apply(pooled_tsf)}, 1);

  Output out;
  out.rep = rep;
  out.bundle.z_multi = corr.z_k;
  out.bundle.lambdas = {corr.lambda};
  out.bundle.deltas = {corr.delta};
  out.bundle.n_views = 1;
  out.bundle.n_channels = 3;
  return out;
}

ParamMap CompactTcnet::params() const {
  ParamMap pm;
  pm.add("extractor.sinc_low", extractor_.sinc_low_logits);
  pm.add("extractor.sinc_high", extractor_.sinc_high_logits);
  pm.add("extractor.gauss_log_width", extractor_.gauss_log_width);
  pm.add("time.conv1", conv1_);
  pm.add("time.conv2", conv2_);
  freq_mix_.collect(pm, "freq.mix");
  freq_out_.collect(pm, "freq.out");
  f_blk_.collect(pm, "f_blk");
  head_.collect(pm, "correction");
  content_.collect(pm, "content");
  tsf_proj_.collect(pm, "tsf_proj");
  return pm;
}

void CompactTcnet::save(const std::string& path) const {
  record_io::RecordFile rf;
  rf.json_blob = cfg_.to_json();
  rf.tensors = params().items;
  record_io::write(path, kCompactMagic, rf);
}

CompactTcnet CompactTcnet::load(const std::string& path) {
  record_io::RecordFile rf = record_io::read(path, kCompactMagic);
  json j = json::parse(rf.json_blob);
  if (j.value("model_kind", "") != "compact")
    throw std::runtime_error("checkpoint '" + path + "' does not hold a compact encoder");
  CompactTcnet model(CompactConfig::from_json(rf.json_blob), 0);
  restore_params(model.params(), rf, "CompactTcnet::load");
  return model;
}

}  // namespace tcnet
