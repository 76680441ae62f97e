#include "tcnet/correction.hpp"

#include <cmath>
#include <stdexcept>

namespace tcnet {

CorrectionHead CorrectionHead::init(std::size_t ctx_dim, std::size_t hidden, std::size_t channels,
                                    std::size_t families, std::mt19937_64& rng, double alpha0) {
  CorrectionHead h;
  h.trunk = Linear::init(ctx_dim, hidden, rng);
  std::size_t out = channels * families;
  h.scale_out = Linear::init(hidden, out, rng);
  h.bias_out = Linear::init(hidden, out, rng);
  h.gate_out = Linear::init(hidden, out, rng);
  h.alpha = Tensor::param({}, {alpha0});
  return h;
}

void CorrectionHead::collect(ParamMap& pm, const std::string& prefix) const {
  trunk.collect(pm, prefix + ".trunk");
  scale_out.collect(pm, prefix + ".scale");
  bias_out.collect(pm, prefix + ".bias");
  gate_out.collect(pm, prefix + ".gate");
  pm.add(prefix + ".alpha", alpha);
}

CorrectionHeadParams CorrectionHeadParams::init(std::size_t n_views, std::size_t ctx_dim,
                                                std::size_t hidden, std::size_t channels,
                                                std::size_t families, std::mt19937_64& rng) {
  if (n_views < 1) throw std::invalid_argument("CorrectionHeadParams: need at least one view");
  CorrectionHeadParams p;
  p.n_channels = channels;
  p.n_families = families;
  for (std::size_t k = 1; k < n_views; ++k)
    p.heads.push_back(CorrectionHead::init(ctx_dim, hidden, channels, families, rng));
  return p;
}

void CorrectionHeadParams::collect(ParamMap& pm, const std::string& prefix) const {
  for (std::size_t k = 0; k < heads.size(); ++k)
    heads[k].collect(pm, prefix + ".head" + std::to_string(k + 1));
}

Tensor block_context(const AnchorTensor& z_raw, const Mlp2& f_blk) {
  const Tensor& z = z_raw.values;  // B x N x C x D
  if (z.rank() != 4)
    throw std::invalid_argument("block_context: anchors must be B x N x C x D, got " +
                                shape_str(z.shape()));
  Tensor pooled = mean_axis(z, 2);  // B x N x D
  return f_blk.apply(pooled);
}

CorrectionPrediction predict_correction(const Tensor& h_ctx, const CorrectionHead& head,
                                        std::size_t channels, std::size_t families) {
  if (h_ctx.rank() != 3)
    throw std::invalid_argument("predict_correction: context must be B x N x d, got " +
                                shape_str(h_ctx.shape()));
  std::size_t batch = h_ctx.extent(0), blocks = h_ctx.extent(1);
  Tensor hidden = tanh_op(head.trunk.apply(h_ctx));
  Shape out_shape{batch, blocks, channels, families};
  CorrectionPrediction pred;
  pred.scale = reshape(head.scale_out.apply(hidden), out_shape);
  pred.bias = reshape(head.bias_out.apply(hidden), out_shape);
  pred.gate = reshape(head.gate_out.apply(hidden), out_shape);
  return pred;
}

Tensor broadcast_families(const Tensor& per_family, const FamilyLayout& layout) {
  if (per_family.rank() != 4 || per_family.extent(3) != layout.count())
    throw std::invalid_argument("broadcast_families: expected trailing extent " +
                                std::to_string(layout.count()) + ", got " +
                                shape_str(per_family.shape()));
  std::vector<Tensor> cols;
  cols.reserve(layout.count());
  for (std::size_t i = 0; i < layout.count(); ++i) {
    Tensor col = slice(per_family, 3, i, i + 1);
    std::size_t w = layout.families[i].width();
    cols.push_back(w == 1 ? col : mul(col, Tensor::full({1, w}, 1.0)));
  }
  return concat(cols, 3);
}

AppliedCorrection apply_correction(const Tensor& z_raw, const Tensor& s_hat, const Tensor& b_hat,
                                   const Tensor& lambda_hat, const Tensor& alpha, double s_max,
                                   double b_max, const FamilyLayout& layout) {
  if (s_max <= 0 || b_max <= 0)
    throw std::invalid_argument("apply_correction: s_max and b_max must be positive");
  Tensor s_bc = broadcast_families(s_hat, layout);
  Tensor b_bc = broadcast_families(b_hat, layout);
  Tensor l_bc = broadcast_families(lambda_hat, layout);
  Tensor z_tilde = add(mul(z_raw, add_scalar(mul_scalar(tanh_op(s_bc), s_max), 1.0)),
                       mul_scalar(tanh_op(b_bc), b_max));
  Tensor lambda = mul(sigmoid(alpha), sigmoid(l_bc));
  Tensor one_minus = add_scalar(neg(lambda), 1.0);
  AppliedCorrection out;
  out.z_k = add(mul(one_minus, z_raw), mul(lambda, z_tilde));
  out.lambda = lambda;
  out.delta = sub(out.z_k, z_raw);
  return out;
}

CorrectionBundle assemble_views(const AnchorTensor& z_raw, const Tensor& h_ctx,
                                const CorrectionHeadParams& params) {
  const Tensor& z = z_raw.values;
  if (z.rank() != 4)
    throw std::invalid_argument("assemble_views: anchors must be B x N x C x D");
  std::size_t channels = z.extent(2);
  CorrectionBundle bundle;
  bundle.n_views = params.n_views();
  bundle.n_channels = channels;
  if (params.heads.empty()) {
    bundle.z_multi = z;
    return bundle;
  }
  std::vector<Tensor> views{z};  // view 0: identity
  for (const auto& head : params.heads) {
    CorrectionPrediction pred = predict_correction(h_ctx, head, channels, params.n_families);
    AppliedCorrection corr = apply_correction(z, pred.scale, pred.bias, pred.gate, head.alpha,
                                              params.s_max, params.b_max, z_raw.layout);
    views.push_back(corr.z_k);
    bundle.lambdas.push_back(corr.lambda);
    bundle.deltas.push_back(corr.delta);
  }
  bundle.z_multi = concat(views, 2);
  return bundle;
}

std::pair<Tensor, Tensor> correction_regularizers(const CorrectionBundle& bundle) {
  if (!bundle.z_multi.defined())
    throw std::invalid_argument("correction_regularizers: empty bundle");
  if (bundle.deltas.empty()) return {Tensor::scalar(0.0), Tensor::scalar(0.0)};
  Tensor l_delta, l_tv;
  for (const Tensor& delta : bundle.deltas) {
    Tensor term = sum_all(abs_op(delta));
    l_delta = l_delta.defined() ? add(l_delta, term) : term;
    std::size_t blocks = delta.extent(1);
    if (blocks >= 2) {
      Tensor dd = sub(slice(delta, 1, 1, blocks), slice(delta, 1, 0, blocks - 1));
      Tensor tv = sum_all(abs_op(dd));
      l_tv = l_tv.defined() ? add(l_tv, tv) : tv;
    }
  }
  if (!l_tv.defined()) l_tv = Tensor::scalar(0.0);
  return {l_delta, l_tv};
}

}  // namespace tcnet
