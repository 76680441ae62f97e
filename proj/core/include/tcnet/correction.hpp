#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "tcnet/features.hpp"
#include "tcnet/nn.hpp"
#include "tcnet/tensor.hpp"

namespace tcnet {

// One correction head: shared trunk, separate linear outputs for scale, bias
// and gate, each per (channel, family), plus the learnable gate prior alpha.
struct CorrectionHead {
  Linear trunk;
  Linear scale_out, bias_out, gate_out;
  Tensor alpha;

  static CorrectionHead init(std::size_t ctx_dim, std::size_t hidden, std::size_t channels,
                             std::size_t families, std::mt19937_64& rng, double alpha0 = -2.0);
  void collect(ParamMap& pm, const std::string& prefix) const;
};

// K-1 heads for K total views; view 0 is always the identity view.
struct CorrectionHeadParams {
  std::vector<CorrectionHead> heads;
  double s_max = 0.5;
  double b_max = 0.5;
  std::size_t n_channels = 0;
  std::size_t n_families = 0;

  static CorrectionHeadParams init(std::size_t n_views, std::size_t ctx_dim, std::size_t hidden,
                                   std::size_t channels, std::size_t families,
                                   std::mt19937_64& rng);
  std::size_t n_views() const { return heads.size() + 1; }
  void collect(ParamMap& pm, const std::string& prefix) const;
};

// Multi-view anchors plus the per-view gates and effective deltas the
// regularizers and the analysis dump need.
struct CorrectionBundle {
  Tensor z_multi;               // B x N x (K*C) x D
  std::vector<Tensor> lambdas;  // per corrected view, B x N x C x D
  std::vector<Tensor> deltas;   // per corrected view, Z_k - Z_raw
  std::size_t n_views = 1;
  std::size_t n_channels = 0;
};

// h_blk = f_blk(mean over channels of Z_raw); B x N x d_b
Tensor block_context(const AnchorTensor& z_raw, const Mlp2& f_blk);

struct CorrectionPrediction {
  Tensor scale, bias, gate;  // each B x N x C x families, unbounded
};

// h_ctx: B x N x ctx_dim (global context already broadcast per block)
CorrectionPrediction predict_correction(const Tensor& h_ctx, const CorrectionHead& head,
                                        std::size_t channels, std::size_t families);

struct AppliedCorrection {
  Tensor z_k, lambda, delta;  // each B x N x C x D
};

// Bounded residual interpolation toward the affine-corrected anchors.
AppliedCorrection apply_correction(const Tensor& z_raw, const Tensor& s_hat, const Tensor& b_hat,
                                   const Tensor& lambda_hat, const Tensor& alpha, double s_max,
                                   double b_max, const FamilyLayout& layout);

CorrectionBundle assemble_views(const AnchorTensor& z_raw, const Tensor& h_ctx,
                                const CorrectionHeadParams& params);

// (L_delta, L_tv); plain sums over all corrected views, no batch-mean scaling.
std::pair<Tensor, Tensor> correction_regularizers(const CorrectionBundle& bundle);

// Broadcasts per-family columns (B x N x C x families) across each family's
// feature range, yielding B x N x C x D.
Tensor broadcast_families(const Tensor& per_family, const FamilyLayout& layout);

}  // namespace tcnet
