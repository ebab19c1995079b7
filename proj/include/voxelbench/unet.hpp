#pragma once

#include <bit>
#include <cstdio>
#include <fstream>
#include <variant>

#include "voxelbench/grid.hpp"
#include "voxelbench/layers.hpp"
#include "voxelbench/rng.hpp"

namespace voxelbench {

// Encoder-decoder with `depth` down/up-scaling steps joined by skip
// connections: per level two 3-extent convolutions + ReLU, max-pool 2 down,
// transposed-conv 2 up, channel-concat skips, 1-extent projection + sigmoid.
struct UNetConfig {
  int rank = 3;  // spatial rank: 2 slice-wise, 3 volumetric
  int depth = 4;
  int base_channels = 8;
  int in_channels = 1;
  int out_channels = 1;
  int input_extent = 96;

  int channels_at(int level) const { return base_channels << level; }

  void validate() const {
    if (rank != 2 && rank != 3) throw data_error("unet rank must be 2 or 3");
    if (depth < 1) throw data_error("unet depth must be >= 1");
    if (base_channels < 1) throw data_error("unet base_channels must be >= 1");
    if (in_channels != 1 || out_channels < 1) throw data_error("unet channel plan unsupported");
    const int div = 1 << depth;
    if (input_extent < div || input_extent % div != 0) {
      throw data_error("input extent " + std::to_string(input_extent) +
                       " must be divisible by 2^depth = " + std::to_string(div));
    }
  }
};

struct WeightDef {
  std::string name;
  std::vector<std::int64_t> shape;
  std::int64_t fan_in = 0;  // 0 for biases
};

inline std::vector<WeightDef> unet_weight_plan(const UNetConfig& c) {
  c.validate();
  std::vector<WeightDef> plan;
  const int r = c.rank;
  auto conv_shape = [&](int cout, int cin, int k) {
    std::vector<std::int64_t> s{cout, cin};
    for (int i = 0; i < r; ++i) s.push_back(k);
    return s;
  };
  auto taps = [&](int k) {
    std::int64_t t = 1;
    for (int i = 0; i < r; ++i) t *= k;
    return t;
  };
  auto add_conv = [&](const std::string& name, int cout, int cin, int k) {
    plan.push_back({name + "_w", conv_shape(cout, cin, k), cin * taps(k)});
    plan.push_back({name + "_b", {cout}, 0});
  };
  for (int i = 0; i < c.depth; ++i) {
    const int cin = i == 0 ? c.in_channels : c.channels_at(i - 1);
    add_conv("enc" + std::to_string(i) + "_conv1", c.channels_at(i), cin, 3);
    add_conv("enc" + std::to_string(i) + "_conv2", c.channels_at(i), c.channels_at(i), 3);
  }
  add_conv("bottleneck_conv1", c.channels_at(c.depth), c.channels_at(c.depth - 1), 3);
  add_conv("bottleneck_conv2", c.channels_at(c.depth), c.channels_at(c.depth), 3);
  for (int i = c.depth - 1; i >= 0; --i) {
    plan.push_back({"up" + std::to_string(i) + "_w",
                    conv_shape(c.channels_at(i), c.channels_at(i + 1), 2),
                    c.channels_at(i + 1) * taps(2)});
    add_conv("dec" + std::to_string(i) + "_conv1", c.channels_at(i), 2 * c.channels_at(i), 3);
    add_conv("dec" + std::to_string(i) + "_conv2", c.channels_at(i), c.channels_at(i), 3);
  }
  add_conv("final", c.out_channels, c.channels_at(0), 1);
  return plan;
}

template <typename S>
struct UNetModel {
  UNetConfig config;
  std::vector<Tensor<S>> weights;
  std::vector<std::string> names;
  std::uint64_t train_seed = 0;

  std::int64_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<std::int64_t>(i);
    }
    throw data_error("model has no weight named \"" + name + "\"");
  }

  const Tensor<S>& tensor(const std::string& name) const {
    return weights[static_cast<std::size_t>(index_of(name))];
  }
};

// He-normal kernels, zero biases, drawn in declaration order.
template <typename S>
UNetModel<S> init_unet(const UNetConfig& config, std::uint64_t seed) {
  UNetModel<S> model;
  model.config = config;
  model.train_seed = seed;
  Rng rng(mix_seed(seed, hash_string("unet-init")));
  for (const WeightDef& def : unet_weight_plan(config)) {
    Tensor<S> w(def.shape);
    if (def.fan_in > 0) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(def.fan_in));
      for (std::int64_t i = 0; i < w.size(); ++i) {
        w[i] = static_cast<S>(rng.normal(0.0, stddev));
      }
    }
    model.names.push_back(def.name);
    model.weights.push_back(std::move(w));
  }
  return model;
}

namespace nn_detail {

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.dim(0) != b.dim(0) || a.ndim() != b.ndim()) {
    throw data_error("concat: incompatible shapes");
  }
  std::vector<std::int64_t> shape = a.shape();
  shape[1] += b.dim(1);
  Tensor<S> out(shape);
  const std::int64_t n = a.dim(0);
  const std::int64_t va = a.size() / n, vb = b.size() / n;
  for (std::int64_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * (va + vb), a.data() + i * va,
                static_cast<std::size_t>(va) * sizeof(S));
    std::memcpy(out.data() + i * (va + vb) + va, b.data() + i * vb,
                static_cast<std::size_t>(vb) * sizeof(S));
  }
  return out;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>& d, std::int64_t ca,
                                               std::int64_t cb) {
  std::vector<std::int64_t> sa = d.shape(), sb = d.shape();
  sa[1] = ca;
  sb[1] = cb;
  Tensor<S> a(sa), b(sb);
  const std::int64_t n = d.dim(0);
  const std::int64_t va = a.size() / n, vb = b.size() / n;
  for (std::int64_t i = 0; i < n; ++i) {
    std::memcpy(a.data() + i * va, d.data() + i * (va + vb),
                static_cast<std::size_t>(va) * sizeof(S));
    std::memcpy(b.data() + i * vb, d.data() + i * (va + vb) + va,
                static_cast<std::size_t>(vb) * sizeof(S));
  }
  return {std::move(a), std::move(b)};
}

}  // namespace nn_detail

template <typename S>
struct UNetCache {
  Tensor<S> input;
  std::vector<Tensor<S>> enc_r1, enc_r2;  // post-ReLU activations; enc_r2 feeds the skips
  std::vector<Tensor<S>> pool_out;
  std::vector<Tensor<std::int32_t>> pool_arg;
  Tensor<S> bott_r1, bott_r2;
  std::vector<Tensor<S>> concat;  // indexed by level
  std::vector<Tensor<S>> dec_r1, dec_r2;
  Tensor<S> prob;
};

// Forward pass; all output values lie in (0,1).
template <typename S>
Tensor<S> unet_forward(const UNetModel<S>& model, const Tensor<S>& input,
                       UNetCache<S>* cache = nullptr) {
  const UNetConfig& c = model.config;
  c.validate();
  if (static_cast<int>(input.ndim()) != c.rank + 2 || input.dim(1) != c.in_channels) {
    throw data_error("unet input must be [N, 1, spatial...], got " + input.shape_string());
  }
  for (int i = 0; i < c.rank; ++i) {
    if (input.shape()[2 + i] != c.input_extent) {
      throw data_error("unet input extent mismatch: expected " + std::to_string(c.input_extent) +
                       ", got " + input.shape_string());
    }
  }

  UNetCache<S> local;
  UNetCache<S>& cc = cache ? *cache : local;
  cc = UNetCache<S>{};
  cc.input = input;

  auto w = [&](const std::string& name) -> const Tensor<S>& { return model.tensor(name); };

  const Tensor<S>* x = &cc.input;
  for (int i = 0; i < c.depth; ++i) {
    const std::string base = "enc" + std::to_string(i);
    Tensor<S> r1 =
        relu_forward(conv_forward(*x, w(base + "_conv1_w"), w(base + "_conv1_b"), c.rank));
    Tensor<S> r2 =
        relu_forward(conv_forward(r1, w(base + "_conv2_w"), w(base + "_conv2_b"), c.rank));
    PoolResult<S> pooled = maxpool_forward(r2, c.rank);
    cc.enc_r1.push_back(std::move(r1));
    cc.enc_r2.push_back(std::move(r2));
    cc.pool_arg.push_back(std::move(pooled.argmax));
    cc.pool_out.push_back(std::move(pooled.output));
    x = &cc.pool_out.back();
  }

  cc.bott_r1 =
      relu_forward(conv_forward(*x, w("bottleneck_conv1_w"), w("bottleneck_conv1_b"), c.rank));
  cc.bott_r2 = relu_forward(
      conv_forward(cc.bott_r1, w("bottleneck_conv2_w"), w("bottleneck_conv2_b"), c.rank));
  x = &cc.bott_r2;

  cc.concat.resize(c.depth);
  cc.dec_r1.resize(c.depth);
  cc.dec_r2.resize(c.depth);
  for (int i = c.depth - 1; i >= 0; --i) {
    const std::string base = "dec" + std::to_string(i);
    Tensor<S> up = upconv_forward(*x, w("up" + std::to_string(i) + "_w"), c.rank);
    cc.concat[i] = nn_detail::concat_channels(up, cc.enc_r2[i]);
    cc.dec_r1[i] = relu_forward(
        conv_forward(cc.concat[i], w(base + "_conv1_w"), w(base + "_conv1_b"), c.rank));
    cc.dec_r2[i] = relu_forward(
        conv_forward(cc.dec_r1[i], w(base + "_conv2_w"), w(base + "_conv2_b"), c.rank));
    x = &cc.dec_r2[i];
  }

  Tensor<S> logits = conv_forward(*x, w("final_w"), w("final_b"), c.rank);
  cc.prob = sigmoid_forward(logits);
  return cc.prob;
}

// Backward pass from d(loss)/d(prob); gradients align with model.weights.
// When dinput is non-null it receives d(loss)/d(input).
template <typename S>
std::vector<Tensor<S>> unet_backward(const UNetModel<S>& model, const UNetCache<S>& cache,
                                     const Tensor<S>& dprob, Tensor<S>* dinput = nullptr) {
  const UNetConfig& c = model.config;
  std::vector<Tensor<S>> grads(model.weights.size());
  auto w = [&](const std::string& name) -> const Tensor<S>& { return model.tensor(name); };
  auto put = [&](const std::string& name, Tensor<S>&& g) {
    grads[static_cast<std::size_t>(model.index_of(name))] = std::move(g);
  };

  Tensor<S> dx = sigmoid_backward(dprob, cache.prob);
  {
    ConvGrads<S> g = conv_backward(cache.dec_r2[0], w("final_w"), dx, c.rank);
    put("final_w", std::move(g.kernel));
    put("final_b", std::move(g.bias));
    dx = std::move(g.input);
  }

  std::vector<Tensor<S>> skip_grad(c.depth);
  for (int i = 0; i < c.depth; ++i) {
    const std::string base = "dec" + std::to_string(i);
    Tensor<S> d = relu_backward(dx, cache.dec_r2[i]);
    ConvGrads<S> g2 = conv_backward(cache.dec_r1[i], w(base + "_conv2_w"), d, c.rank);
    put(base + "_conv2_w", std::move(g2.kernel));
    put(base + "_conv2_b", std::move(g2.bias));
    d = relu_backward(g2.input, cache.dec_r1[i]);
    ConvGrads<S> g1 = conv_backward(cache.concat[i], w(base + "_conv1_w"), d, c.rank);
    put(base + "_conv1_w", std::move(g1.kernel));
    put(base + "_conv1_b", std::move(g1.bias));

    auto [d_up, d_skip] =
        nn_detail::split_channels(g1.input, c.channels_at(i), c.channels_at(i));
    skip_grad[i] = std::move(d_skip);
    const Tensor<S>& up_in = i == c.depth - 1 ? cache.bott_r2 : cache.dec_r2[i + 1];
    UpconvGrads<S> gu = upconv_backward(up_in, w("up" + std::to_string(i) + "_w"), d_up, c.rank);
    put("up" + std::to_string(i) + "_w", std::move(gu.kernel));
    dx = std::move(gu.input);
  }

  {
    Tensor<S> d = relu_backward(dx, cache.bott_r2);
    ConvGrads<S> g2 = conv_backward(cache.bott_r1, w("bottleneck_conv2_w"), d, c.rank);
    put("bottleneck_conv2_w", std::move(g2.kernel));
    put("bottleneck_conv2_b", std::move(g2.bias));
    d = relu_backward(g2.input, cache.bott_r1);
    ConvGrads<S> g1 =
        conv_backward(cache.pool_out[c.depth - 1], w("bottleneck_conv1_w"), d, c.rank);
    put("bottleneck_conv1_w", std::move(g1.kernel));
    put("bottleneck_conv1_b", std::move(g1.bias));
    dx = std::move(g1.input);
  }

  for (int i = c.depth - 1; i >= 0; --i) {
    const std::string base = "enc" + std::to_string(i);
    Tensor<S> d_r2 =
        maxpool_backward(dx, cache.pool_arg[i], cache.enc_r2[i].shape(), c.rank);
    d_r2.array() += skip_grad[i].array();
    Tensor<S> d = relu_backward(d_r2, cache.enc_r2[i]);
    ConvGrads<S> g2 = conv_backward(cache.enc_r1[i], w(base + "_conv2_w"), d, c.rank);
    put(base + "_conv2_w", std::move(g2.kernel));
    put(base + "_conv2_b", std::move(g2.bias));
    d = relu_backward(g2.input, cache.enc_r1[i]);
    const Tensor<S>& in = i == 0 ? cache.input : cache.pool_out[i - 1];
    ConvGrads<S> g1 = conv_backward(in, w(base + "_conv1_w"), d, c.rank);
    put(base + "_conv1_w", std::move(g1.kernel));
    put(base + "_conv1_b", std::move(g1.bias));
    dx = std::move(g1.input);
  }
  if (dinput != nullptr) *dinput = std::move(dx);
  return grads;
}

struct TrainConfig {
  int batch_size = 8;
  int epochs = 100;
  std::uint64_t seed = 1;
  double learning_rate = 1e-3;
  int float_width = 32;  // 32 or 64

  void validate() const {
    if (batch_size < 1) throw data_error("batch size must be >= 1");
    if (epochs < 1) throw data_error("epochs must be >= 1");
    if (float_width != 32 && float_width != 64) throw data_error("float width must be 32 or 64");
  }
};

template <typename S>
struct TrainOutcome {
  UNetModel<S> model;
  std::vector<double> loss_history;  // per-epoch mean loss
};

namespace nn_detail {

// Per-patch z-score of the intensities. The network always consumes
// standardized inputs; raw patches keep their HU-scale values. Patch-level
// statistics (not per-slice) so both ranks see identically scaled data.
struct PatchNorm {
  double mean = 0.0;
  double inv_sd = 1.0;

  static PatchNorm of(const VoiPatch& p) {
    PatchNorm n;
    const auto values = p.intensities.cast<double>();
    n.mean = values.mean();
    const double var = (values - n.mean).square().mean();
    n.inv_sd = 1.0 / (std::sqrt(var) + 1e-6);
    return n;
  }

  template <typename S>
  S apply(float v) const {
    return static_cast<S>((static_cast<double>(v) - mean) * inv_sd);
  }
};

// Sample store: rank 3 keeps one sample per patch, rank 2 one per axial slice.
template <typename S>
struct SampleStore {
  std::vector<std::int64_t> sample_shape;  // [1, spatial...]
  std::int64_t count = 0;
  std::int64_t sample_elems = 0;
  Tensor<S> x, y;

  static SampleStore build(const UNetConfig& c, const std::vector<VoiPatch>& patches) {
    for (const VoiPatch& p : patches) {
      if (p.extent != c.input_extent) {
        throw data_error("patch extent " + std::to_string(p.extent) +
                         " does not match configured input extent " +
                         std::to_string(c.input_extent));
      }
      if (!p.has_labels()) {
        throw data_error("training patch for case \"" + p.source_case + "\" carries no labels");
      }
    }
    SampleStore s;
    const std::int64_t e = c.input_extent;
    if (c.rank == 3) {
      s.sample_shape = {1, e, e, e};
      s.count = static_cast<std::int64_t>(patches.size());
      s.sample_elems = e * e * e;
    } else {
      s.sample_shape = {1, e, e};
      s.count = static_cast<std::int64_t>(patches.size()) * e;
      s.sample_elems = e * e;
    }
    s.x = Tensor<S>({s.count, s.sample_elems});
    s.y = Tensor<S>({s.count, s.sample_elems});
    std::int64_t row = 0;
    for (const VoiPatch& p : patches) {
      const PatchNorm norm = PatchNorm::of(p);
      const std::int64_t per_patch = c.rank == 3 ? 1 : e;
      for (std::int64_t k = 0; k < per_patch; ++k, ++row) {
        S* xd = s.x.data() + row * s.sample_elems;
        S* yd = s.y.data() + row * s.sample_elems;
        const std::int64_t off = c.rank == 3 ? 0 : k * e * e;
        for (std::int64_t i = 0; i < s.sample_elems; ++i) {
          xd[i] = norm.apply<S>(p.intensities[off + i]);
          yd[i] = static_cast<S>(p.labels[off + i]);
        }
      }
    }
    return s;
  }

  void gather(const std::vector<std::int64_t>& rows, std::size_t b0, std::size_t b1,
              Tensor<S>& bx, Tensor<S>& by) const {
    const std::int64_t bs = static_cast<std::int64_t>(b1 - b0);
    std::vector<std::int64_t> shape = sample_shape;
    shape.insert(shape.begin(), bs);
    bx = Tensor<S>(shape);
    by = Tensor<S>(shape);
    for (std::int64_t i = 0; i < bs; ++i) {
      const std::int64_t row = rows[b0 + i];
      std::memcpy(bx.data() + i * sample_elems, x.data() + row * sample_elems,
                  static_cast<std::size_t>(sample_elems) * sizeof(S));
      std::memcpy(by.data() + i * sample_elems, y.data() + row * sample_elems,
                  static_cast<std::size_t>(sample_elems) * sizeof(S));
    }
  }
};

}  // namespace nn_detail

// Seeded epochs of shuffled minibatches; every sample is visited exactly once
// per epoch (the final batch may be short).
template <typename S>
TrainOutcome<S> train_unet(const UNetConfig& config, const std::vector<VoiPatch>& train,
                           const TrainConfig& tcfg) {
  config.validate();
  tcfg.validate();
  if (train.empty()) {
    throw data_error("training set is empty");
  }

  const auto store = nn_detail::SampleStore<S>::build(config, train);
  TrainOutcome<S> out;
  out.model = init_unet<S>(config, tcfg.seed);
  AdamState<S> adam = AdamState<S>::init(out.model.weights, tcfg.learning_rate);
  Rng shuffle_rng(mix_seed(tcfg.seed, hash_string("epoch-shuffle")));

  std::vector<std::int64_t> order(static_cast<std::size_t>(store.count));
  for (std::int64_t i = 0; i < store.count; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(tcfg.batch_size));
      Tensor<S> bx, by;
      store.gather(order, b0, b1, bx, by);
      UNetCache<S> cache;
      Tensor<S> prob = unet_forward(out.model, bx, &cache);
      LossResult<S> loss = bce_loss(prob, by);
      std::vector<Tensor<S>> grads = unet_backward(out.model, cache, loss.dprob);
      adam_step(adam, out.model.weights, grads);
      epoch_loss += loss.loss * static_cast<double>(b1 - b0);
    }
    out.loss_history.push_back(epoch_loss / static_cast<double>(store.count));
  }
  return out;
}

// Probability patch: rank 3 is one forward pass, rank 2 runs per axial slice
// and restacks in order.
template <typename S>
VoiPatch predict_voi(const UNetModel<S>& model, const VoiPatch& patch) {
  const UNetConfig& c = model.config;
  c.validate();
  if (patch.extent != c.input_extent) {
    throw data_error("patch extent " + std::to_string(patch.extent) +
                     " does not match model input extent " + std::to_string(c.input_extent));
  }
  const std::int64_t e = c.input_extent;

  VoiPatch out;
  out.extent = patch.extent;
  out.source_box = patch.source_box;
  out.source_case = patch.source_case;
  out.intensities.resize(patch.voxel_count());
  const nn_detail::PatchNorm norm = nn_detail::PatchNorm::of(patch);

  if (c.rank == 3) {
    Tensor<S> x({1, 1, e, e, e});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = norm.apply<S>(patch.intensities[i]);
    const Tensor<S> prob = unet_forward(model, x);
    for (std::int64_t i = 0; i < prob.size(); ++i) {
      out.intensities[i] = static_cast<float>(prob[i]);
    }
    return out;
  }

  const std::int64_t slice = e * e;
  for (std::int64_t k = 0; k < e; ++k) {
    Tensor<S> x({1, 1, e, e});
    for (std::int64_t i = 0; i < slice; ++i) {
      x[i] = norm.apply<S>(patch.intensities[k * slice + i]);
    }
    const Tensor<S> prob = unet_forward(model, x);
    for (std::int64_t i = 0; i < slice; ++i) {
      out.intensities[k * slice + i] = static_cast<float>(prob[i]);
    }
  }
  return out;
}

// Foreground iff probability >= theta.
inline VoiPatch threshold_mask(const VoiPatch& prob, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) {
    throw data_error("threshold must lie in (0,1), got " + std::to_string(theta));
  }
  VoiPatch out = prob;
  out.labels.resize(out.voxel_count());
  for (std::int64_t i = 0; i < out.voxel_count(); ++i) {
    out.labels[i] = prob.intensities[i] >= static_cast<float>(theta) ? 1 : 0;
  }
  return out;
}

struct ModelFootprint {
  std::int64_t parameter_count = 0;
  std::int64_t activation_elements = 0;  // per batch item, forward op outputs
  std::int64_t estimated_bytes = 0;      // float32; weights+optimizer+activations+grads
};

inline ModelFootprint model_footprint(const UNetConfig& c) {
  c.validate();
  ModelFootprint f;
  for (const WeightDef& def : unet_weight_plan(c)) {
    f.parameter_count += Tensor<float>::count(def.shape);
  }
  auto vox = [&](int level) {
    std::int64_t v = 1;
    for (int i = 0; i < c.rank; ++i) v *= c.input_extent >> level;
    return v;
  };
  for (int i = 0; i < c.depth; ++i) {
    // conv1, conv2, pool outputs
    f.activation_elements += 2 * static_cast<std::int64_t>(c.channels_at(i)) * vox(i);
    f.activation_elements += static_cast<std::int64_t>(c.channels_at(i)) * vox(i + 1);
  }
  f.activation_elements += 2 * static_cast<std::int64_t>(c.channels_at(c.depth)) * vox(c.depth);
  for (int i = c.depth - 1; i >= 0; --i) {
    // upconv, concat, conv1, conv2 outputs
    f.activation_elements += static_cast<std::int64_t>(c.channels_at(i)) * vox(i) * 4;
  }
  // final projection + sigmoid
  f.activation_elements += 2 * static_cast<std::int64_t>(c.out_channels) * vox(0);
  f.estimated_bytes = (3 * f.parameter_count + 2 * f.activation_elements) *
                      static_cast<std::int64_t>(sizeof(float));
  return f;
}

// --------------------------------------------------------------------------
// Model file: text meta block, then per tensor one header line and a raw
// little-endian payload. Output is byte-deterministic.
// --------------------------------------------------------------------------

namespace nn_detail {

template <typename S>
const char* scalar_name() {
  if constexpr (std::is_same_v<S, float>) return "float32";
  else return "float64";
}

template <typename S>
void write_scalar_le(std::ostream& os, S v) {
  if constexpr (std::is_same_v<S, float>) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                 static_cast<char>((u >> 16) & 0xff), static_cast<char>(u >> 24)};
    os.write(b, 4);
  } else {
    const auto u = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
    os.write(b, 8);
  }
}

template <typename S>
S read_scalar_le(std::istream& is) {
  if constexpr (std::is_same_v<S, float>) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                            static_cast<std::uint32_t>(b[1]) << 8 |
                            static_cast<std::uint32_t>(b[2]) << 16 |
                            static_cast<std::uint32_t>(b[3]) << 24;
    return std::bit_cast<float>(u);
  } else {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(u);
  }
}

}  // namespace nn_detail

template <typename S>
void save_model(const UNetModel<S>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open \"" + path + "\" for writing");
  }
  const UNetConfig& c = model.config;
  out << "FORMAT voxelbench-unet-1\n";
  out << "rank: " << c.rank << "\n";
  out << "depth: " << c.depth << "\n";
  out << "base_channels: " << c.base_channels << "\n";
  out << "in_channels: " << c.in_channels << "\n";
  out << "out_channels: " << c.out_channels << "\n";
  out << "input_extent: " << c.input_extent << "\n";
  out << "scalar: " << nn_detail::scalar_name<S>() << "\n";
  out << "seed: " << model.train_seed << "\n";
  out << "tensors: " << model.weights.size() << "\n\n";
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    const Tensor<S>& w = model.weights[i];
    out << "tensor " << model.names[i] << " " << w.ndim();
    for (std::size_t d = 0; d < w.ndim(); ++d) out << " " << w.shape()[d];
    out << " " << w.size() * static_cast<std::int64_t>(sizeof(S)) << "\n";
    for (std::int64_t j = 0; j < w.size(); ++j) nn_detail::write_scalar_le(out, w[j]);
    out << "\n";
  }
  if (!out) {
    throw std::runtime_error("write failed for \"" + path + "\"");
  }
}

inline std::string peek_model_scalar(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw data_error("cannot open model file \"" + path + "\"");
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("scalar: ", 0) == 0) return line.substr(8);
    if (line.empty()) break;
  }
  throw data_error(path + ": missing scalar declaration");
}

template <typename S>
UNetModel<S> load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw data_error("cannot open model file \"" + path + "\"");
  }
  std::string line;
  auto expect = [&](const std::string& key) -> std::string {
    if (!std::getline(in, line) || line.rfind(key, 0) != 0) {
      throw data_error(path + ": expected \"" + key + "...\"");
    }
    return line.substr(key.size());
  };
  if (!std::getline(in, line) || line != "FORMAT voxelbench-unet-1") {
    throw data_error(path + ": expected \"FORMAT voxelbench-unet-1\"");
  }
  UNetModel<S> model;
  UNetConfig c;
  c.rank = std::stoi(expect("rank: "));
  c.depth = std::stoi(expect("depth: "));
  c.base_channels = std::stoi(expect("base_channels: "));
  c.in_channels = std::stoi(expect("in_channels: "));
  c.out_channels = std::stoi(expect("out_channels: "));
  c.input_extent = std::stoi(expect("input_extent: "));
  const std::string scalar = expect("scalar: ");
  if (scalar != nn_detail::scalar_name<S>()) {
    throw data_error(path + ": model stores " + scalar + " weights, expected " +
                     nn_detail::scalar_name<S>());
  }
  model.train_seed = std::stoull(expect("seed: "));
  const int tensor_count = std::stoi(expect("tensors: "));
  if (!std::getline(in, line) || !line.empty()) {
    throw data_error(path + ": expected blank line before tensor blocks");
  }
  model.config = c;
  c.validate();

  const auto plan = unet_weight_plan(c);
  if (static_cast<int>(plan.size()) != tensor_count) {
    throw data_error(path + ": tensor count " + std::to_string(tensor_count) +
                     " does not match the architecture plan (" + std::to_string(plan.size()) +
                     ")");
  }
  for (int t = 0; t < tensor_count; ++t) {
    std::string tag, name;
    std::size_t ndim = 0;
    if (!(in >> tag >> name >> ndim) || tag != "tensor") {
      throw data_error(path + ": bad tensor header for tensor " + std::to_string(t));
    }
    std::vector<std::int64_t> shape(ndim);
    for (auto& d : shape) {
      if (!(in >> d)) throw data_error(path + ": bad tensor shape");
    }
    std::int64_t bytes = 0;
    if (!(in >> bytes)) throw data_error(path + ": bad tensor byte count");
    in.get();  // newline before payload
    if (name != plan[t].name || shape != plan[t].shape) {
      throw data_error(path + ": tensor \"" + name + "\" does not match the plan entry \"" +
                       plan[t].name + "\"");
    }
    Tensor<S> w(shape);
    if (bytes != w.size() * static_cast<std::int64_t>(sizeof(S))) {
      throw data_error(path + ": tensor \"" + name + "\" byte count mismatch");
    }
    for (std::int64_t j = 0; j < w.size(); ++j) w[j] = nn_detail::read_scalar_le<S>(in);
    in.get();  // trailing newline
    if (!in) {
      throw data_error(path + ": truncated tensor payload in \"" + name + "\"");
    }
    model.names.push_back(name);
    model.weights.push_back(std::move(w));
  }
  return model;
}

using AnyUNetModel = std::variant<UNetModel<float>, UNetModel<double>>;

inline AnyUNetModel load_model_any(const std::string& path) {
  const std::string scalar = peek_model_scalar(path);
  if (scalar == "float32") return load_model<float>(path);
  if (scalar == "float64") return load_model<double>(path);
  throw data_error(path + ": unsupported scalar \"" + scalar + "\"");
}

}  // namespace voxelbench
