#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tcnet/correction.hpp"
#include "tcnet/features.hpp"
#include "tcnet/nn.hpp"
#include "tcnet/tensor.hpp"

namespace tcnet {

// Architectural and run hyperparameters in one validated record.
struct ModelConfig {
  std::vector<std::size_t> block_sizes;  // m per scale
  std::vector<std::size_t> strides;      // empty -> non-overlapping (s_m = m)
  std::size_t n_views = 4;               // K
  std::size_t d_proj = 128;
  std::size_t d_ctx = 256;
  std::size_t d_blk = 32;
  std::vector<std::size_t> time_kernels{5, 11, 21};
  std::size_t time_conv_channels = 16;
  std::vector<std::size_t> fft_sizes{32, 64, 128};
  std::size_t freq_mix_channels = 8;
  std::size_t mixer_width = 64;
  std::vector<std::vector<std::size_t>> sensor_groups;  // empty -> consecutive triples
  std::size_t n_channels = 0;
  std::size_t n_classes = 0;
  std::size_t window_len = 0;
  double sampling_rate = 50.0;
  double s_max = 0.5;
  double b_max = 0.5;
  bool skip_oversized_fft = false;
  bool disable_time = false;
  bool disable_freq = false;
  bool disable_correction = false;

  void validate() const;
  std::size_t stride_for(std::size_t scale) const;
  std::vector<std::vector<std::size_t>> effective_groups() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Named per-dataset-shape configurations plus the desk-scale "tiny" setup.
struct Preset {
  std::string name;
  ModelConfig model;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 300;
  std::size_t batch_size = 32;
};
const std::vector<Preset>& all_presets();
Preset find_preset(const std::string& name);

// N_m = floor((L - m)/s) + 1 non-overlapping or strided blocks,
// x: B x C x L -> B x N x m x C
Tensor unfold_blocks(const Tensor& x, std::size_t block_size, std::size_t stride);
std::size_t block_count(std::size_t window_len, std::size_t block_size, std::size_t stride);

struct ClassLogits {
  Tensor values;  // B x n_classes
};

class TcnetModel {
 public:
  TcnetModel(ModelConfig cfg, std::uint64_t seed);

  struct Output {
    ClassLogits logits;
    std::vector<CorrectionBundle> bundles;  // one per scale
  };
  Output forward(const Tensor& x) const;  // x: B x C x L

  Tensor time_branch(const Tensor& x) const;  // B x d_ctx
  Tensor freq_branch(const Tensor& x) const;  // B x d_ctx

  const ModelConfig& config() const { return cfg_; }
  ExtractorParams& extractor() { return extractor_; }
  const ExtractorParams& extractor() const { return extractor_; }
  ParamMap params() const;

  void save(const std::string& path) const;
  static TcnetModel load(const std::string& path);

 private:
  struct ScalePath {
    Mlp2 f_blk;
    CorrectionHeadParams heads;
    std::vector<Linear> family_proj;
  };

  Tensor project_groups(const Tensor& z_multi, const FamilyLayout& layout,
                        const ScalePath& path) const;
  Tensor attend_views_groups(const Tensor& h_proj, std::size_t n_views) const;
  Tensor pool_blocks(const Tensor& h_blk) const;

  ModelConfig cfg_;
  ExtractorParams extractor_;
  std::vector<Tensor> time_conv_;  // one weight per kernel size
  Mlp2 time_mlp_;
  struct FreqPath {
    Linear mix;           // 1x1 channel mixer
    Mlp2 token_mix;       // across frames
    Mlp2 patch_mix;       // across patch dims
    Mlp2 to_ctx;
  };
  std::vector<FreqPath> freq_paths_;
  std::vector<ScalePath> scales_;
  Linear view_score_, group_score_, block_score_;
  Linear fuse_;                    // concat of per-scale vectors -> d_proj
  Linear res1_, res2_, head_;      // residual MLP classifier
  friend struct ModelSurgeon;
};

// Hierarchical fusion helpers exposed for tests.
Tensor attention_pool(const Tensor& values, const Tensor& scores, std::size_t axis);

// Compact encoder: tri-axial input, one correction expert, 256-wide
// frozen representation = [content embedding ; pooled corrected anchors].
struct CompactConfig {
  std::size_t window_len = 128;
  std::size_t block_size = 32;
  double sampling_rate = 50.0;
  std::size_t d_time = 64;
  std::size_t d_freq = 64;
  std::size_t n_fft = 64;
  std::size_t freq_mix_channels = 8;
  std::size_t d_blk = 16;
  std::size_t content_dim = 128;
  std::size_t tsf_proj_dim = 128;
  double s_max = 0.5;
  double b_max = 0.5;

  void validate() const;
  std::string to_json() const;
  static CompactConfig from_json(const std::string& text);
  std::size_t rep_dim() const { return content_dim + tsf_proj_dim; }
};

class CompactTcnet {
 public:
  CompactTcnet(CompactConfig cfg, std::uint64_t seed);

  struct Output {
    Tensor rep;  // B x 256
    CorrectionBundle bundle;
  };
  Output forward(const Tensor& x) const;  // x: B x 3 x L

  const CompactConfig& config() const { return cfg_; }
  ParamMap params() const;
  std::size_t encoder_param_count() const { return params().total_count(); }

  void save(const std::string& path) const;
  static CompactTcnet load(const std::string& path);

 private:
  CompactConfig cfg_;
  ExtractorParams extractor_;
  Tensor conv1_, conv2_;  // {32,3,7} stride 2, {64,32,7}
  Linear freq_mix_;
  Linear freq_out_;
  Mlp2 f_blk_;
  CorrectionHeadParams head_;
  Mlp2 content_;
  Linear tsf_proj_;
  friend struct ModelSurgeon;
};

// Versioned binary container shared by model and forest checkpoints.
namespace record_io {
struct RecordFile {
  std::uint32_t version = 1;
  std::string json_blob;
  std::vector<std::pair<std::string, Tensor>> tensors;
};
void write(const std::string& path, const char magic[4], const RecordFile& contents);
RecordFile read(const std::string& path, const char magic[4]);
}  // namespace record_io

}  // namespace tcnet
