#include "tcnet/gradcheck_suite.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "tcnet/correction.hpp"
#include "tcnet/features.hpp"
#include "tcnet/model.hpp"
#include "tcnet/train.hpp"

namespace tcnet {

namespace {

Tensor random_values(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> vals(shape_numel(shape));
  for (auto& v : vals) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(vals));
}

// random linear functional of an arbitrary tensor, fixing the reduction
Tensor pick(const Tensor& t, std::mt19937_64& rng) {
  Tensor w = random_values(t.shape(), rng);
  return sum_all(mul(t, w));
}

ExtractorParams seeded_extractor(std::mt19937_64& rng) {
  ExtractorParams p = ExtractorParams::defaults(50.0);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  std::vector<double> lo = p.sinc_low_logits.values(), hi = p.sinc_high_logits.values();
  for (auto& v : lo) v += jitter(rng);
  for (auto& v : hi) v += jitter(rng);
  p.sinc_low_logits = Tensor::param({lo.size()}, lo);
  p.sinc_high_logits = Tensor::param({hi.size()}, hi);
  return p;
}

template <typename ExtractFn>
double check_family(ExtractFn extract, std::size_t block_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ExtractorParams params = seeded_extractor(rng);
  Shape shape{1, 2, block_len, 2};
  Tensor blocks = random_values(shape, rng);
  Tensor weights;  // fixed after first call so f is deterministic
  auto f = [&, params](const Tensor& x) mutable {
    Tensor feats = extract(reshape(x, shape), params, Mode::Soft);
    if (!weights.defined()) {
      std::mt19937_64 wrng(seed ^ 0xabcdef);
      weights = random_values(feats.shape(), wrng);
    }
    return sum_all(mul(feats, weights));
  };
  return grad_check(f, reshape(blocks, {shape_numel(shape)}), 1e-5);
}

double check_family_params(std::uint64_t seed) {
  // gradient w.r.t. the learnable sinc logits and Gaussian width
  std::mt19937_64 rng(seed);
  Shape shape{1, 1, 32, 2};
  Tensor blocks = random_values(shape, rng);
  std::mt19937_64 wrng(seed ^ 0x5555);
  Tensor fb_w = random_values({1, 1, 2, 8}, wrng);
  Tensor sp_w = random_values({1, 1, 2, 21}, wrng);
  ExtractorParams base = seeded_extractor(rng);
  std::vector<double> theta = base.sinc_low_logits.values();
  {
    auto hi = base.sinc_high_logits.values();
    theta.insert(theta.end(), hi.begin(), hi.end());
    theta.push_back(base.gauss_log_width.item());
  }
  auto f = [&](const Tensor& packed) {
    ExtractorParams p = base;
    p.sinc_low_logits = slice(packed, 0, 0, 8);
    p.sinc_high_logits = slice(packed, 0, 8, 16);
    p.gauss_log_width = reshape(slice(packed, 0, 16, 17), Shape{});
    Tensor fb = extract_filterbank(blocks, p, Mode::Soft);
    Tensor sp = extract_spectral(blocks, p, Mode::Soft);
    return add(sum_all(mul(fb, fb_w)), sum_all(mul(sp, sp_w)));
  };
  return grad_check(f, Tensor::from({17}, theta), 1e-5);
}

double check_correction(std::uint64_t seed, bool wrt_predictions) {
  std::mt19937_64 rng(seed);
  ExtractorParams params = seeded_extractor(rng);
  FamilyLayout layout = params.layout_for(32);
  std::size_t chans = 2, families = layout.count(), d = layout.total();
  Shape z_shape{1, 2, chans, d};
  Tensor z_raw = random_values(z_shape, rng);
  Shape p_shape{1, 2, chans, families};
  Tensor s_hat = random_values(p_shape, rng);
  Tensor b_hat = random_values(p_shape, rng);
  Tensor l_hat = random_values(p_shape, rng);
  Tensor alpha = Tensor::scalar(-0.5);
  auto run = [&](const Tensor& z, const Tensor& s, const Tensor& b, const Tensor& l) {
    AppliedCorrection corr = apply_correction(z, s, b, l, alpha, 0.5, 0.5, layout);
    CorrectionBundle bundle;
    bundle.z_multi = corr.z_k;
    bundle.deltas = {corr.delta};
    bundle.lambdas = {corr.lambda};
    auto [ld, lt] = correction_regularizers(bundle);
    return add(add(sum_all(corr.z_k), ld), lt);
  };
  if (wrt_predictions) {
    auto f = [&](const Tensor& x) {
      Tensor s = reshape(slice(x, 0, 0, shape_numel(p_shape)), p_shape);
      Tensor b = reshape(slice(x, 0, shape_numel(p_shape), 2 * shape_numel(p_shape)), p_shape);
      return run(z_raw, s, b, l_hat);
    };
    std::vector<double> packed = s_hat.values();
    auto bv = b_hat.values();
    packed.insert(packed.end(), bv.begin(), bv.end());
    return grad_check(f, Tensor::from({packed.size()}, packed), 1e-5);
  }
  auto f = [&](const Tensor& x) { return run(reshape(x, z_shape), s_hat, b_hat, l_hat); };
  return grad_check(f, reshape(z_raw, {shape_numel(z_shape)}), 1e-5);
}

ModelConfig tiny_model_config(std::size_t window, std::size_t d_proj, std::size_t d_ctx,
                              std::vector<std::size_t> block_sizes, std::size_t views) {
  ModelConfig cfg;
  cfg.block_sizes = std::move(block_sizes);
  cfg.n_views = views;
  cfg.d_proj = d_proj;
  cfg.d_ctx = d_ctx;
  cfg.d_blk = 8;
  cfg.time_kernels = {3, 5};
  cfg.time_conv_channels = 4;
  cfg.fft_sizes = {16};
  cfg.freq_mix_channels = 2;
  cfg.mixer_width = 8;
  cfg.n_channels = 3;
  cfg.n_classes = 3;
  cfg.window_len = window;
  return cfg;
}

double check_model_branch(std::uint64_t seed, bool freq) {
  std::mt19937_64 rng(seed);
  TcnetModel model(tiny_model_config(32, 8, 8, {32}, 2), seed);
  Shape x_shape{2, 3, 32};
  Tensor x = random_values(x_shape, rng);
  std::mt19937_64 wrng(seed ^ 0x7777);
  Tensor w = random_values({2, 8}, wrng);
  auto f = [&](const Tensor& flat) {
    Tensor input = reshape(flat, x_shape);
    Tensor h = freq ? model.freq_branch(input) : model.time_branch(input);
    return sum_all(mul(h, w));
  };
  return grad_check(f, reshape(x, {shape_numel(x_shape)}), 1e-5);
}

double check_fusion(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Shape shape{2, 4, 6};
  Tensor x = random_values(shape, rng);
  Tensor score_w = random_values({6, 1}, rng);
  auto f = [&](const Tensor& flat) {
    Tensor v = reshape(flat, shape);
    Tensor scores = matmul(v, score_w);
    Tensor pooled = attention_pool(v, scores, 1);  // {2, 6}
    return sum_all(mul(pooled, pooled));
  };
  return grad_check(f, reshape(x, {shape_numel(shape)}), 1e-5);
}

double check_classifier(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Linear fuse = Linear::init(6, 6, rng);
  Linear res = Linear::init(6, 6, rng);
  Linear head = Linear::init(6, 3, rng);
  Shape shape{4, 6};
  Tensor x = random_values(shape, rng);
  auto f = [&](const Tensor& flat) {
    Tensor h = fuse.apply(reshape(flat, shape));
    h = add(h, tanh_op(res.apply(h)));
    Tensor logits = head.apply(h);
    return logsumexp_axis(reshape(logits, {12}), 0);
  };
  return grad_check(f, reshape(x, {shape_numel(shape)}), 1e-5);
}

double check_total_loss(std::uint64_t seed, bool spec_tiny) {
  std::mt19937_64 rng(seed);
  ModelConfig cfg = spec_tiny ? tiny_model_config(64, 16, 16, {32}, 2)
                              : tiny_model_config(32, 8, 8, {32}, 2);
  TcnetModel model(cfg, seed);
  std::size_t batch = spec_tiny ? 2 : 1;
  Shape x_shape{batch, 3, cfg.window_len};
  Tensor x = random_values(x_shape, rng, -0.8, 0.8);
  std::vector<int> labels(batch);
  for (auto& l : labels) l = int(rng() % 3);
  auto f = [&](const Tensor& flat) {
    auto out = model.forward(reshape(flat, x_shape));
    return total_loss(out.logits, labels, out.bundles, 1e-4, 1e-4).total;
  };
  return grad_check(f, reshape(x, {shape_numel(x_shape)}), 1e-5);
}

std::vector<GradCheckEntry> build_suite() {
  std::vector<GradCheckEntry> s;
  auto op = [&](const std::string& name, std::size_t trials,
                std::function<double(std::uint64_t)> fn) {
    s.push_back({name, trials, std::move(fn)});
  };

  // --- tensor ops ---
  auto unary = [](Tensor (*fn)(const Tensor&), double lo, double hi) {
    return [fn, lo, hi](std::uint64_t seed) {
      std::mt19937_64 rng(seed);
      Tensor x = random_values({7}, rng, lo, hi);
      return grad_check([&](const Tensor& t) { return sum_all(mul(fn(t), fn(t))); }, x, 1e-5);
    };
  };
  op("tensor.add", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor b = random_values({1, 5}, rng);
    Tensor x = random_values({3, 5}, rng);
    return grad_check([&](const Tensor& t) { return sum_all(mul(add(t, b), add(t, b))); }, x, 1e-5);
  });
  op("tensor.sub_mul_div", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor b = random_values({6}, rng, 0.5, 1.5);
    Tensor x = random_values({6}, rng, 0.5, 1.5);
    return grad_check(
        [&](const Tensor& t) { return sum_all(divide(mul(sub(t, b), t), add_scalar(b, 1.0))); }, x,
        1e-5);
  });
  op("tensor.tanh", 20, unary(&tanh_op, -2, 2));
  op("tensor.sigmoid", 20, unary(&sigmoid, -3, 3));
  op("tensor.exp", 20, unary(&exp_op, -1, 1));
  op("tensor.log", 20, unary(&log_op, 0.3, 2.0));
  op("tensor.sqrt", 20, unary(&sqrt_op, 0.3, 2.0));
  op("tensor.abs", 20, unary(&abs_op, 0.2, 1.0));
  op("tensor.sin", 20, unary(&sin_op, -2, 2));
  op("tensor.cos", 20, unary(&cos_op, -2, 2));
  op("tensor.softplus", 20, unary(&softplus, -3, 3));
  op("tensor.power", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_values({6}, rng, 0.3, 1.5);
    return grad_check([](const Tensor& t) { return sum_all(pow_op(t, 2.5)); }, x, 1e-5);
  });
  op("tensor.atan2", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor other = random_values({6}, rng, 0.5, 1.5);
    Tensor x = random_values({6}, rng, 0.5, 1.5);
    return grad_check([&](const Tensor& t) { return sum_all(atan2_op(t, other)); }, x, 1e-5);
  });
  op("tensor.matmul", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor w = random_values({4, 3}, rng);
    Tensor x = random_values({2, 4}, rng);
    return grad_check(
        [&](const Tensor& t) { return sum_all(mul(matmul(t, w), matmul(t, w))); }, x, 1e-5);
  });
  op("tensor.conv1d", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor w = random_values({2, 2, 3}, rng);
    Tensor x = random_values({1, 2, 9}, rng);
    return grad_check(
        [&](const Tensor& t) {
          Tensor y = conv1d(reshape(t, {1, 2, 9}), w, 2);
          return sum_all(mul(y, y));
        },
        reshape(x, {18}), 1e-5);
  });
  op("tensor.conv1d_depthwise", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor w = random_values({2, 3}, rng);
    Tensor x = random_values({1, 2, 8}, rng);
    return grad_check(
        [&](const Tensor& t) {
          Tensor y = conv1d_depthwise(reshape(t, {1, 2, 8}), w, 1);
          return sum_all(mul(y, y));
        },
        reshape(x, {16}), 1e-5);
  });
  op("tensor.structure", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_values({3, 4}, rng);
    return grad_check(
        [&](const Tensor& t) {
          Tensor a = transpose(t, {1, 0});
          Tensor b = concat({slice(a, 0, 0, 2), slice(a, 0, 2, 4)}, 1);
          return mean_all(mul(b, b));
        },
        x, 1e-5);
  });
  op("tensor.reductions", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_values({3, 5}, rng);
    return grad_check(
        [&](const Tensor& t) {
          Tensor means = mean_axis(t, 1);
          return add(sum_all(mul(means, means)), sum_all(logsumexp_axis(t, 0)));
        },
        x, 1e-5);
  });
  op("tensor.softmax", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor w = random_values({4, 5}, rng);
    Tensor x = random_values({4, 5}, rng, -2, 2);
    return grad_check([&](const Tensor& t) { return sum_all(mul(softmax(t, 1), w)); }, x, 1e-5);
  });
  op("tensor.dft_magnitude", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor win = random_values({10}, rng, 0.5, 1.0);
    Tensor x = random_values({10}, rng, 0.5, 1.5);
    return grad_check(
        [&](const Tensor& t) { return sum_all(dft_magnitude(t, win)); }, x, 1e-5);
  });
  op("tensor.wrap_angle", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_values({6}, rng, 0.3, 2.8);
    return grad_check(
        [&](const Tensor& t) { return sum_all(mul(wrap_angle(t), wrap_angle(t))); }, x, 1e-5);
  });

  // --- TSF families ---
  op("features.filterbank", 20,
     [](std::uint64_t seed) { return check_family(&extract_filterbank, 32, seed); });
  op("features.spectral", 20,
     [](std::uint64_t seed) { return check_family(&extract_spectral, 48, seed); });
  op("features.statistics", 20,
     [](std::uint64_t seed) { return check_family(&extract_statistics, 16, seed); });
  op("features.shape", 20,
     [](std::uint64_t seed) { return check_family(&extract_shape, 16, seed); });
  op("features.crossings", 20,
     [](std::uint64_t seed) { return check_family(&extract_crossings, 16, seed); });
  op("features.quantiles", 20,
     [](std::uint64_t seed) { return check_family(&extract_quantiles, 16, seed); });
  op("features.autocorr", 20,
     [](std::uint64_t seed) { return check_family(&extract_autocorr, 16, seed); });
  op("features.extract_all", 5, [](std::uint64_t seed) {
    return check_family(
        [](const Tensor& b, const ExtractorParams& p, Mode m) {
          return extract_all(b, p, m).values;
        },
        32, seed);
  });
  op("features.learnable_params", 20, &check_family_params);

  // --- correction ---
  op("correction.block_context", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Mlp2 f_blk = Mlp2::init(10, 8, 4, rng);
    Shape shape{2, 3, 2, 10};
    Tensor z = random_values(shape, rng);
    std::mt19937_64 wrng(seed ^ 0x9999);
    Tensor w = random_values({2, 3, 4}, wrng);
    return grad_check(
        [&](const Tensor& t) {
          AnchorTensor anchors;
          anchors.values = reshape(t, shape);
          return sum_all(mul(block_context(anchors, f_blk), w));
        },
        reshape(z, {shape_numel(shape)}), 1e-5);
  });
  op("correction.predict", 20, [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    CorrectionHead head = CorrectionHead::init(6, 8, 2, 3, rng);
    Shape shape{2, 2, 6};
    Tensor h = random_values(shape, rng);
    std::mt19937_64 wrng(seed ^ 0x1111);
    Tensor w = random_values({2, 2, 2, 3}, wrng);
    return grad_check(
        [&](const Tensor& t) {
          auto pred = predict_correction(reshape(t, shape), head, 2, 3);
          return sum_all(mul(add(add(pred.scale, pred.bias), pred.gate), w));
        },
        reshape(h, {shape_numel(shape)}), 1e-5);
  });
  op("correction.apply_wrt_anchors", 20,
     [](std::uint64_t seed) { return check_correction(seed, false); });
  op("correction.apply_wrt_predictions", 20,
     [](std::uint64_t seed) { return check_correction(seed, true); });

  // --- model pieces ---
  op("model.time_branch", 20, [](std::uint64_t seed) { return check_model_branch(seed, false); });
  op("model.freq_branch", 20, [](std::uint64_t seed) { return check_model_branch(seed, true); });
  op("model.fusion", 20, &check_fusion);
  op("model.classifier", 20, &check_classifier);

  // --- loss, end to end ---
  op("loss.total_small", 20, [](std::uint64_t seed) { return check_total_loss(seed, false); });
  op("loss.total_tiny_e2e", 1, [](std::uint64_t seed) { return check_total_loss(seed, true); });
  return s;
}

}  // namespace

const std::vector<GradCheckEntry>& gradcheck_suite() {
  static const std::vector<GradCheckEntry> suite = build_suite();
  return suite;
}

std::vector<GradCheckReport> run_gradcheck(const std::string& module_filter,
                                           std::uint64_t base_seed) {
  std::vector<GradCheckReport> reports;
  bool matched = false;
  for (const auto& entry : gradcheck_suite()) {
    if (module_filter != "all" && entry.name.rfind(module_filter, 0) != 0) continue;
    matched = true;
    GradCheckReport rep;
    rep.name = entry.name;
    rep.trials = entry.trials;
    for (std::size_t t = 0; t < entry.trials; ++t)
      rep.max_err = std::max(rep.max_err, entry.run(base_seed + 31 * t));
    reports.push_back(std::move(rep));
  }
  if (!matched)
    throw std::invalid_argument("grad-check: no entries match module '" + module_filter + "'");
  return reports;
}

}  // namespace tcnet
