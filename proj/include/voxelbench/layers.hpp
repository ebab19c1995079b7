#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "voxelbench/tensor.hpp"

namespace voxelbench {

// Differentiable layer primitives for spatial rank 2 or 3. Tensors are
// [N, C, spatial...] row-major with the innermost (x) axis fastest.
// Convolutions run as blocked im2col + Eigen GEMM.

namespace nn_detail {

constexpr std::int64_t kWorkspaceBytes = 384 << 10;

inline void check_rank(int rank) {
  if (rank != 2 && rank != 3) {
    throw data_error("spatial rank must be 2 or 3, got " + std::to_string(rank));
  }
}

inline std::array<std::int64_t, 3> spatial_of(const std::vector<std::int64_t>& shape, int rank) {
  if (static_cast<int>(shape.size()) != rank + 2) {
    throw data_error("tensor must be [N, C, spatial...]: expected " + std::to_string(rank + 2) +
                     " dims, got " + std::to_string(shape.size()));
  }
  std::array<std::int64_t, 3> s{1, 1, 1};
  for (int i = 0; i < rank; ++i) s[3 - rank + i] = shape[2 + i];
  return s;  // s = {D, H, W} with D forced to 1 at rank 2
}

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Gather kernel-tap rows for output lines [l0, l0+nlines) of one batch item.
// P is (cin*taps) x (nlines*W), row-major; each row handles one (ci, tap).
template <typename S>
void im2col_block(const S* in, std::int64_t cin, const std::array<std::int64_t, 3>& sd, int rank,
                  int k, std::int64_t l0, std::int64_t nlines, S* P) {
  const std::int64_t D = sd[0], H = sd[1], W = sd[2];
  const std::int64_t V = D * H * W;
  const bool rank3 = rank == 3;
  const std::int64_t taps = (rank3 ? k : 1) * static_cast<std::int64_t>(k) * k;
  const int p = k / 2;

  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < cin; ++ci) {
    const S* plane = in + ci * V;
    for (std::int64_t t = 0; t < taps; ++t, ++row) {
      std::int64_t dz = 0, dy, dx;
      if (rank3) {
        dz = t / (k * k) - p;
        dy = (t / k) % k - p;
        dx = t % k - p;
      } else {
        dy = t / k - p;
        dx = t % k - p;
      }
      S* dst_row = P + row * (nlines * W);
      const std::int64_t x_lo = dx < 0 ? -dx : 0;
      const std::int64_t x_hi = dx > 0 ? W - dx : W;
      for (std::int64_t li = 0; li < nlines; ++li) {
        const std::int64_t line = l0 + li;
        const std::int64_t z = line / H;
        const std::int64_t y = line % H;
        S* dst = dst_row + li * W;
        const std::int64_t zs = z + dz;
        const std::int64_t ys = y + dy;
        if (zs < 0 || zs >= D || ys < 0 || ys >= H || x_lo >= x_hi) {
          std::memset(dst, 0, static_cast<std::size_t>(W) * sizeof(S));
          continue;
        }
        const S* src = plane + (zs * H + ys) * W;
        if (x_lo > 0) std::memset(dst, 0, static_cast<std::size_t>(x_lo) * sizeof(S));
        std::memcpy(dst + x_lo, src + x_lo + dx,
                    static_cast<std::size_t>(x_hi - x_lo) * sizeof(S));
        if (x_hi < W) {
          std::memset(dst + x_hi, 0, static_cast<std::size_t>(W - x_hi) * sizeof(S));
        }
      }
    }
  }
}

// Scatter-add of the gathered layout back into a gradient plane (col2im).
template <typename S>
void col2im_block(S* din, std::int64_t cin, const std::array<std::int64_t, 3>& sd, int rank,
                  int k, std::int64_t l0, std::int64_t nlines, const S* G) {
  const std::int64_t D = sd[0], H = sd[1], W = sd[2];
  const std::int64_t V = D * H * W;
  const bool rank3 = rank == 3;
  const std::int64_t taps = (rank3 ? k : 1) * static_cast<std::int64_t>(k) * k;
  const int p = k / 2;

  std::int64_t row = 0;
  for (std::int64_t ci = 0; ci < cin; ++ci) {
    S* plane = din + ci * V;
    for (std::int64_t t = 0; t < taps; ++t, ++row) {
      std::int64_t dz = 0, dy, dx;
      if (rank3) {
        dz = t / (k * k) - p;
        dy = (t / k) % k - p;
        dx = t % k - p;
      } else {
        dy = t / k - p;
        dx = t % k - p;
      }
      const S* src_row = G + row * (nlines * W);
      const std::int64_t x_lo = dx < 0 ? -dx : 0;
      const std::int64_t x_hi = dx > 0 ? W - dx : W;
      if (x_lo >= x_hi) continue;
      for (std::int64_t li = 0; li < nlines; ++li) {
        const std::int64_t line = l0 + li;
        const std::int64_t z = line / H;
        const std::int64_t y = line % H;
        const std::int64_t zs = z + dz;
        const std::int64_t ys = y + dy;
        if (zs < 0 || zs >= D || ys < 0 || ys >= H) continue;
        S* dst = plane + (zs * H + ys) * W + dx;
        const S* src = src_row + li * W;
        for (std::int64_t x = x_lo; x < x_hi; ++x) dst[x] += src[x];
      }
    }
  }
}

template <typename S>
void check_conv_shapes(const Tensor<S>& input, const Tensor<S>& kernel, int rank,
                       int expected_extent) {
  check_rank(rank);
  if (static_cast<int>(kernel.ndim()) != rank + 2) {
    throw data_error("kernel must be [Cout, Cin, spatial...]");
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw data_error("channel mismatch: input has " + std::to_string(input.dim(1)) +
                     " channels, kernel expects " + std::to_string(kernel.dim(1)));
  }
  for (int i = 0; i < rank; ++i) {
    const std::int64_t k = kernel.dim(2 + i);
    if (k != kernel.dim(2)) {
      throw data_error("kernel spatial extents must match on all axes");
    }
    if (expected_extent > 0 && k != expected_extent) {
      throw data_error("kernel spatial extent must be " + std::to_string(expected_extent));
    }
  }
}

}  // namespace nn_detail

// --------------------------------------------------------------------------
// Convolution, odd extent, same padding, stride 1.
// input [N,Cin,S...], kernel [Cout,Cin,k...], bias [Cout].
// --------------------------------------------------------------------------

template <typename S>
Tensor<S> conv_forward(const Tensor<S>& input, const Tensor<S>& kernel, const Tensor<S>& bias,
                       int rank) {
  using namespace nn_detail;
  check_conv_shapes(input, kernel, rank, 0);
  const int k = static_cast<int>(kernel.dim(2));
  if (k % 2 == 0) {
    throw data_error("convolution kernel extent must be odd, got " + std::to_string(k));
  }
  if (bias.size() != kernel.dim(0)) {
    throw data_error("bias length must equal output channel count");
  }
  const auto sd = spatial_of(input.shape(), rank);
  const std::int64_t N = input.dim(0), Cin = input.dim(1), Cout = kernel.dim(0);
  const std::int64_t V = sd[0] * sd[1] * sd[2];
  const std::int64_t W = sd[2];
  const std::int64_t lines = V / W;
  std::int64_t taps = 1;
  for (int i = 0; i < rank; ++i) taps *= k;
  const std::int64_t K = Cin * taps;

  std::vector<std::int64_t> out_shape = input.shape();
  out_shape[1] = Cout;
  Tensor<S> out(out_shape);

  const std::int64_t lines_per_block =
      std::max<std::int64_t>(1, kWorkspaceBytes / static_cast<std::int64_t>(sizeof(S)) / (K * W));
  Tensor<S> workspace({K, std::min(lines, lines_per_block) * W});

  ConstMatMap<S> kmat(kernel.data(), Cout, K);
  Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>> bvec(bias.data(), Cout);

  for (std::int64_t n = 0; n < N; ++n) {
    MatMap<S> out_mat(out.data() + n * Cout * V, Cout, V);
    const S* in_ptr = input.data() + n * Cin * V;
    for (std::int64_t l0 = 0; l0 < lines; l0 += lines_per_block) {
      const std::int64_t nl = std::min(lines_per_block, lines - l0);
      im2col_block(in_ptr, Cin, sd, rank, k, l0, nl, workspace.data());
      ConstMatMap<S> pmat(workspace.data(), K, nl * W);
      out_mat.middleCols(l0 * W, nl * W).noalias() = kmat * pmat;
    }
    out_mat.colwise() += bvec;
  }
  return out;
}

template <typename S>
struct ConvGrads {
  Tensor<S> input;
  Tensor<S> kernel;
  Tensor<S> bias;
};

template <typename S>
ConvGrads<S> conv_backward(const Tensor<S>& input, const Tensor<S>& kernel, const Tensor<S>& dout,
                           int rank) {
  using namespace nn_detail;
  check_conv_shapes(input, kernel, rank, 0);
  const int k = static_cast<int>(kernel.dim(2));
  const auto sd = spatial_of(input.shape(), rank);
  const std::int64_t N = input.dim(0), Cin = input.dim(1), Cout = kernel.dim(0);
  const std::int64_t V = sd[0] * sd[1] * sd[2];
  const std::int64_t W = sd[2];
  const std::int64_t lines = V / W;
  std::int64_t taps = 1;
  for (int i = 0; i < rank; ++i) taps *= k;
  const std::int64_t K = Cin * taps;
  if (dout.dim(0) != N || dout.dim(1) != Cout) {
    throw data_error("dout shape does not match the convolution output");
  }

  ConvGrads<S> g{Tensor<S>(input.shape()), Tensor<S>(kernel.shape()),
                 Tensor<S>({kernel.dim(0)})};

  const std::int64_t lines_per_block =
      std::max<std::int64_t>(1, kWorkspaceBytes / static_cast<std::int64_t>(sizeof(S)) / (K * W));
  const std::int64_t block_cols = std::min(lines, lines_per_block) * W;
  Tensor<S> workspace({K, block_cols});
  Tensor<S> gbuffer({K, block_cols});

  ConstMatMap<S> kmat(kernel.data(), Cout, K);
  MatMap<S> dkmat(g.kernel.data(), Cout, K);
  Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> dbias(g.bias.data(), Cout);

  for (std::int64_t n = 0; n < N; ++n) {
    ConstMatMap<S> dout_mat(dout.data() + n * Cout * V, Cout, V);
    const S* in_ptr = input.data() + n * Cin * V;
    S* din_ptr = g.input.data() + n * Cin * V;
    dbias += dout_mat.rowwise().sum();
    for (std::int64_t l0 = 0; l0 < lines; l0 += lines_per_block) {
      const std::int64_t nl = std::min(lines_per_block, lines - l0);
      im2col_block(in_ptr, Cin, sd, rank, k, l0, nl, workspace.data());
      ConstMatMap<S> pmat(workspace.data(), K, nl * W);
      const auto dout_block = dout_mat.middleCols(l0 * W, nl * W);
      dkmat.noalias() += dout_block * pmat.transpose();
      MatMap<S> gmat(gbuffer.data(), K, nl * W);
      gmat.noalias() = kmat.transpose() * dout_block;
      col2im_block(din_ptr, Cin, sd, rank, k, l0, nl, gbuffer.data());
    }
  }
  return g;
}

// --------------------------------------------------------------------------
// Max pooling, window 2 and stride 2 per spatial axis; even extents required.
// Gradient routes to the stored argmax; ties keep the lowest linear index.
// --------------------------------------------------------------------------

template <typename S>
struct PoolResult {
  Tensor<S> output;
  Tensor<std::int32_t> argmax;  // input spatial linear index per output voxel
};

template <typename S>
PoolResult<S> maxpool_forward(const Tensor<S>& input, int rank) {
  using namespace nn_detail;
  check_rank(rank);
  const auto sd = spatial_of(input.shape(), rank);
  for (int i = 0; i < rank; ++i) {
    if (input.shape()[2 + i] % 2 != 0) {
      throw data_error("max pooling needs even spatial extents, got " + input.shape_string());
    }
  }
  const std::int64_t N = input.dim(0), C = input.dim(1);
  const std::int64_t D = sd[0], H = sd[1], W = sd[2];
  const std::int64_t V = D * H * W;
  const std::int64_t Do = rank == 3 ? D / 2 : 1, Ho = H / 2, Wo = W / 2;
  const std::int64_t Vo = Do * Ho * Wo;

  std::vector<std::int64_t> out_shape = input.shape();
  for (int i = 0; i < rank; ++i) out_shape[2 + i] /= 2;
  PoolResult<S> r{Tensor<S>(out_shape), Tensor<std::int32_t>(out_shape)};

  const std::int64_t zmax = rank == 3 ? 2 : 1;
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const S* in = input.data() + nc * V;
    S* out = r.output.data() + nc * Vo;
    std::int32_t* arg = r.argmax.data() + nc * Vo;
    std::int64_t o = 0;
    for (std::int64_t z = 0; z < Do; ++z)
      for (std::int64_t y = 0; y < Ho; ++y)
        for (std::int64_t x = 0; x < Wo; ++x, ++o) {
          S best{};
          std::int64_t best_idx = -1;
          for (std::int64_t dz = 0; dz < zmax; ++dz)
            for (std::int64_t dy = 0; dy < 2; ++dy)
              for (std::int64_t dx = 0; dx < 2; ++dx) {
                const std::int64_t idx = ((2 * z + dz) * H + 2 * y + dy) * W + 2 * x + dx;
                if (best_idx < 0 || in[idx] > best) {
                  best = in[idx];
                  best_idx = idx;
                }
              }
          out[o] = best;
          arg[o] = static_cast<std::int32_t>(best_idx);
        }
  }
  return r;
}

template <typename S>
Tensor<S> maxpool_backward(const Tensor<S>& dout, const Tensor<std::int32_t>& argmax,
                           const std::vector<std::int64_t>& input_shape, int rank) {
  using namespace nn_detail;
  check_rank(rank);
  const auto sd = spatial_of(input_shape, rank);
  const std::int64_t V = sd[0] * sd[1] * sd[2];
  const std::int64_t N = input_shape[0], C = input_shape[1];
  const std::int64_t Vo = dout.size() / (N * C);
  Tensor<S> din(input_shape);
  for (std::int64_t nc = 0; nc < N * C; ++nc) {
    const S* dsrc = dout.data() + nc * Vo;
    const std::int32_t* arg = argmax.data() + nc * Vo;
    S* dst = din.data() + nc * V;
    for (std::int64_t o = 0; o < Vo; ++o) dst[arg[o]] += dsrc[o];
  }
  return din;
}

// --------------------------------------------------------------------------
// Transposed convolution, extent 2, stride 2: doubles each spatial extent.
// kernel [Cout, Cin, 2...]; tap blocks do not overlap, so each tap is one
// small GEMM scattered into the output.
// --------------------------------------------------------------------------

template <typename S>
Tensor<S> upconv_forward(const Tensor<S>& input, const Tensor<S>& kernel, int rank) {
  using namespace nn_detail;
  check_conv_shapes(input, kernel, rank, 2);
  const auto sd = spatial_of(input.shape(), rank);
  const std::int64_t N = input.dim(0), Cin = input.dim(1), Cout = kernel.dim(0);
  const std::int64_t V = sd[0] * sd[1] * sd[2];
  const std::int64_t taps = std::int64_t{1} << rank;

  std::vector<std::int64_t> out_shape = input.shape();
  out_shape[1] = Cout;
  for (int i = 0; i < rank; ++i) out_shape[2 + i] *= 2;
  Tensor<S> out(out_shape);
  const auto od = spatial_of(out_shape, rank);
  const std::int64_t Vo = od[0] * od[1] * od[2];

  Tensor<S> buffer({Cout, V});
  using StridedMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>,
                                0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

  for (std::int64_t n = 0; n < N; ++n) {
    ConstMatMap<S> in_mat(input.data() + n * Cin * V, Cin, V);
    S* out_base = out.data() + n * Cout * Vo;
    for (std::int64_t t = 0; t < taps; ++t) {
      const std::int64_t dz = rank == 3 ? t >> 2 : 0;
      const std::int64_t dy = (t >> 1) & 1;
      const std::int64_t dx = t & 1;
      StridedMap wt(kernel.data() + t, Cout, Cin,
                    Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(Cin * taps, taps));
      MatMap<S> buf(buffer.data(), Cout, V);
      buf.noalias() = wt * in_mat;
      for (std::int64_t co = 0; co < Cout; ++co) {
        const S* src = buffer.data() + co * V;
        S* plane = out_base + co * Vo;
        std::int64_t i = 0;
        for (std::int64_t z = 0; z < sd[0]; ++z)
          for (std::int64_t y = 0; y < sd[1]; ++y) {
            S* line = plane + ((2 * z + dz) * od[1] + (2 * y + dy)) * od[2] + dx;
            for (std::int64_t x = 0; x < sd[2]; ++x, ++i) line[2 * x] = src[i];
          }
      }
    }
  }
  return out;
}

template <typename S>
struct UpconvGrads {
  Tensor<S> input;
  Tensor<S> kernel;
};

template <typename S>
UpconvGrads<S> upconv_backward(const Tensor<S>& input, const Tensor<S>& kernel,
                               const Tensor<S>& dout, int rank) {
  using namespace nn_detail;
  check_conv_shapes(input, kernel, rank, 2);
  const auto sd = spatial_of(input.shape(), rank);
  const std::int64_t N = input.dim(0), Cin = input.dim(1), Cout = kernel.dim(0);
  const std::int64_t V = sd[0] * sd[1] * sd[2];
  const std::int64_t taps = std::int64_t{1} << rank;
  const auto od = spatial_of(dout.shape(), rank);
  const std::int64_t Vo = od[0] * od[1] * od[2];

  UpconvGrads<S> g{Tensor<S>(input.shape()), Tensor<S>(kernel.shape())};
  Tensor<S> buffer({Cout, V});

  for (std::int64_t n = 0; n < N; ++n) {
    ConstMatMap<S> in_mat(input.data() + n * Cin * V, Cin, V);
    MatMap<S> din_mat(g.input.data() + n * Cin * V, Cin, V);
    const S* dout_base = dout.data() + n * Cout * Vo;
    for (std::int64_t t = 0; t < taps; ++t) {
      const std::int64_t dz = rank == 3 ? t >> 2 : 0;
      const std::int64_t dy = (t >> 1) & 1;
      const std::int64_t dx = t & 1;
      // Gather this tap's output gradients back into dense (Cout x V).
      for (std::int64_t co = 0; co < Cout; ++co) {
        S* dst = buffer.data() + co * V;
        const S* plane = dout_base + co * Vo;
        std::int64_t i = 0;
        for (std::int64_t z = 0; z < sd[0]; ++z)
          for (std::int64_t y = 0; y < sd[1]; ++y) {
            const S* line = plane + ((2 * z + dz) * od[1] + (2 * y + dy)) * od[2] + dx;
            for (std::int64_t x = 0; x < sd[2]; ++x, ++i) dst[i] = line[2 * x];
          }
      }
      ConstMatMap<S> dmat(buffer.data(), Cout, V);
      // dW_t = dOut_t * In^T; dIn += W_t^T * dOut_t.
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> dwt = dmat * in_mat.transpose();
      for (std::int64_t co = 0; co < Cout; ++co)
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
          g.kernel[(co * Cin + ci) * taps + t] += dwt(co, ci);
        }
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>, 0,
                 Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>
          wt(kernel.data() + t, Cout, Cin,
             Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(Cin * taps, taps));
      din_mat.noalias() += wt.transpose() * dmat;
    }
  }
  return g;
}

// --------------------------------------------------------------------------
// Elementwise activations and the loss.
// --------------------------------------------------------------------------

template <typename S>
Tensor<S> relu_forward(const Tensor<S>& input) {
  Tensor<S> out(input.shape());
  out.array() = input.array().max(S(0));
  return out;
}

template <typename S>
Tensor<S> relu_backward(const Tensor<S>& dout, const Tensor<S>& output) {
  Tensor<S> din(dout.shape());
  din.array() = dout.array() * (output.array() > S(0)).template cast<S>();
  return din;
}

template <typename S>
Tensor<S> sigmoid_forward(const Tensor<S>& input) {
  Tensor<S> out(input.shape());
  out.array() = S(1) / (S(1) + (-input.array()).exp());
  return out;
}

template <typename S>
Tensor<S> sigmoid_backward(const Tensor<S>& dout, const Tensor<S>& output) {
  Tensor<S> din(dout.shape());
  din.array() = dout.array() * output.array() * (S(1) - output.array());
  return din;
}

template <typename S>
struct LossResult {
  double loss = 0.0;
  Tensor<S> dprob;
};

// Mean binary cross entropy with probabilities clamped to [1e-7, 1-1e-7].
template <typename S>
LossResult<S> bce_loss(const Tensor<S>& prob, const Tensor<S>& target) {
  if (!prob.same_shape(target)) {
    throw data_error("bce loss shape mismatch: " + prob.shape_string() + " vs " +
                     target.shape_string());
  }
  const S lo = S(1e-7);
  const S hi = S(1) - S(1e-7);
  LossResult<S> r;
  r.dprob = Tensor<S>(prob.shape());
  const std::int64_t n = prob.size();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    S p = prob[i];
    if (p < lo) p = lo;
    if (p > hi) p = hi;
    const S t = target[i];
    acc -= static_cast<double>(t) * std::log(static_cast<double>(p)) +
           (1.0 - static_cast<double>(t)) * std::log(1.0 - static_cast<double>(p));
    r.dprob[i] = (p - t) / (p * (S(1) - p) * static_cast<S>(n));
  }
  r.loss = acc / static_cast<double>(n);
  return r;
}

// --------------------------------------------------------------------------
// Adam optimizer state over a flat list of weight tensors.
// --------------------------------------------------------------------------

template <typename S>
struct AdamState {
  std::vector<Tensor<S>> m;
  std::vector<Tensor<S>> v;
  long step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState init(const std::vector<Tensor<S>>& weights, double lr = 1e-3) {
    AdamState s;
    s.learning_rate = lr;
    s.m.reserve(weights.size());
    s.v.reserve(weights.size());
    for (const auto& w : weights) {
      s.m.emplace_back(w.shape());
      s.v.emplace_back(w.shape());
    }
    return s;
  }
};

template <typename S>
void adam_step(AdamState<S>& state, std::vector<Tensor<S>>& weights,
               const std::vector<Tensor<S>>& grads) {
  if (weights.size() != grads.size() || weights.size() != state.m.size()) {
    throw data_error("adam: weight/gradient/state counts differ");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    auto w = weights[i].array();
    auto g = grads[i].array();
    auto m = state.m[i].array();
    auto v = state.v[i].array();
    m = S(state.beta1) * m + S(1.0 - state.beta1) * g;
    v = S(state.beta2) * v + S(1.0 - state.beta2) * g * g;
    w -= (S(state.learning_rate) * (m / S(bc1))) /
         ((v / S(bc2)).sqrt() + S(state.epsilon));
  }
}

}  // namespace voxelbench
