#include "psae/ops.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <string>

#include <Eigen/Dense>

namespace psae {

void ConvTransposeSpec::validate() const {
  if (in_channels == 0 || out_channels == 0) throw ConfigError("conv-transpose: zero channel count");
  for (int a = 0; a < 2; ++a) {
    if (kernel[a] == 0 || stride[a] == 0) throw ConfigError("conv-transpose: zero kernel or stride");
    if (output_padding[a] >= stride[a]) {
      throw ConfigError("conv-transpose: output_padding " + std::to_string(output_padding[a]) +
                        " must be smaller than stride " + std::to_string(stride[a]));
    }
  }
}

std::array<std::size_t, 2> ConvTransposeSpec::output_size(std::size_t h_in, std::size_t w_in) const {
  validate();
  std::array<std::size_t, 2> in{h_in, w_in};
  std::array<std::size_t, 2> out{};
  for (int a = 0; a < 2; ++a) {
    if (in[a] == 0) throw ConfigError("conv-transpose: empty input extent");
    const long long size = static_cast<long long>(in[a] - 1) * static_cast<long long>(stride[a]) -
                           2 * static_cast<long long>(padding[a]) + static_cast<long long>(kernel[a]) +
                           static_cast<long long>(output_padding[a]);
    if (size <= 0) {
      throw ConfigError("conv-transpose: computed output extent " + std::to_string(size) +
                        " is not positive");
    }
    out[a] = static_cast<std::size_t>(size);
  }
  return out;
}

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(s));
  }
}

// Range of input columns iw with 0 <= iw*s - p + k < out_w.
struct TapRange {
  std::ptrdiff_t lo;
  std::ptrdiff_t hi;
};

TapRange tap_range(std::ptrdiff_t in_w, std::ptrdiff_t out_w, std::ptrdiff_t s, std::ptrdiff_t p,
                   std::ptrdiff_t k) {
  // iw*s >= p - k  and  iw*s <= out_w - 1 + p - k
  const std::ptrdiff_t lo_num = p - k;
  std::ptrdiff_t lo = lo_num <= 0 ? 0 : (lo_num + s - 1) / s;
  const std::ptrdiff_t hi_num = out_w - 1 + p - k;
  std::ptrdiff_t hi = hi_num < 0 ? 0 : hi_num / s + 1;
  lo = std::min(lo, in_w);
  hi = std::clamp(hi, lo, in_w);
  return {lo, hi};
}

struct ConvGeometry {
  std::ptrdiff_t batch, cin, cout, h, w, ho, wo, kh, kw, sh, sw, ph, pw;
};

ConvGeometry conv_geometry(const Shape& in, const Shape& weight, const ConvTransposeSpec& spec) {
  require_rank(in, 4, "conv_transpose2d input");
  if (in[1] != spec.in_channels) {
    throw DimensionError("conv_transpose2d: input " + shape_str(in) + " has " +
                         std::to_string(in[1]) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
  }
  require_same_shape(weight, spec.weight_shape(), "conv_transpose2d weights");
  const auto out = spec.output_size(in[2], in[3]);
  auto s = [](std::size_t v) { return static_cast<std::ptrdiff_t>(v); };
  return {s(in[0]),          s(spec.in_channels), s(spec.out_channels), s(in[2]),         s(in[3]),
          s(out[0]),         s(out[1]),           s(spec.kernel[0]),    s(spec.kernel[1]), s(spec.stride[0]),
          s(spec.stride[1]), s(spec.padding[0]),  s(spec.padding[1])};
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// The layer is expressed per sample as a GEMM producing one column per input pixel
// and kernel tap, followed by a scatter-add (col2im) into the output plane:
//   cols[(co,ky,kx), (iy,ix)] = sum_ci W[ci,(co,ky,kx)] * x[ci,(iy,ix)]
//   out[co, iy*s - p + ky, ix*s - p + kx] += cols[(co,ky,kx), (iy,ix)]

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, T* out_plane_base) {
  const std::ptrdiff_t hw = g.h * g.w;
  for (std::ptrdiff_t co = 0; co < g.cout; ++co) {
    T* out_plane = out_plane_base + co * g.ho * g.wo;
    for (std::ptrdiff_t ky = 0; ky < g.kh; ++ky) {
      const TapRange rows = tap_range(g.h, g.ho, g.sh, g.ph, ky);
      for (std::ptrdiff_t kx = 0; kx < g.kw; ++kx) {
        const TapRange cl = tap_range(g.w, g.wo, g.sw, g.pw, kx);
        const T* c = cols + ((co * g.kh + ky) * g.kw + kx) * hw;
        for (std::ptrdiff_t iy = rows.lo; iy < rows.hi; ++iy) {
          const T* src = c + iy * g.w;
          T* dst = out_plane + (iy * g.sh - g.ph + ky) * g.wo - g.pw + kx;
          if (g.sw == 1) {
            for (std::ptrdiff_t ix = cl.lo; ix < cl.hi; ++ix) dst[ix] += src[ix];
          } else {
            for (std::ptrdiff_t ix = cl.lo; ix < cl.hi; ++ix) dst[ix * g.sw] += src[ix];
          }
        }
      }
    }
  }
}

// Gathers, for every kernel tap and input pixel, the output-gradient value it touched (0 outside).
template <typename T>
void im2col_gather(const ConvGeometry& g, const T* gout_base, T* cols) {
  const std::ptrdiff_t hw = g.h * g.w;
  for (std::ptrdiff_t co = 0; co < g.cout; ++co) {
    const T* gout_plane = gout_base + co * g.ho * g.wo;
    for (std::ptrdiff_t ky = 0; ky < g.kh; ++ky) {
      const TapRange rows = tap_range(g.h, g.ho, g.sh, g.ph, ky);
      for (std::ptrdiff_t kx = 0; kx < g.kw; ++kx) {
        const TapRange cl = tap_range(g.w, g.wo, g.sw, g.pw, kx);
        T* c = cols + ((co * g.kh + ky) * g.kw + kx) * hw;
        std::fill_n(c, hw, T{0});
        for (std::ptrdiff_t iy = rows.lo; iy < rows.hi; ++iy) {
          T* dst = c + iy * g.w;
          const T* src = gout_plane + (iy * g.sh - g.ph + ky) * g.wo - g.pw + kx;
          if (g.sw == 1) {
            for (std::ptrdiff_t ix = cl.lo; ix < cl.hi; ++ix) dst[ix] = src[ix];
          } else {
            for (std::ptrdiff_t ix = cl.lo; ix < cl.hi; ++ix) dst[ix] = src[ix * g.sw];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_transpose_forward(const ConvGeometry& g, const T* in, const T* wt, const T* bias, T* out) {
  const std::ptrdiff_t hw = g.h * g.w, taps = g.cout * g.kh * g.kw, plane_out = g.ho * g.wo;
  const ConstMatMap<T> weights(wt, g.cin, taps);
  RowMatrix<T> cols(taps, hw);
  for (std::ptrdiff_t b = 0; b < g.batch; ++b) {
    T* out_b = out + b * g.cout * plane_out;
    for (std::ptrdiff_t co = 0; co < g.cout; ++co) std::fill_n(out_b + co * plane_out, plane_out, bias[co]);
    const ConstMatMap<T> x(in + b * g.cin * hw, g.cin, hw);
    cols.noalias() = weights.transpose() * x;
    col2im_add(g, cols.data(), out_b);
  }
}

template <typename T>
void conv_transpose_backward(const ConvGeometry& g, const T* in, const T* gout, const T* wt, T* gin, T* gwt,
                             T* gbias) {
  const std::ptrdiff_t hw = g.h * g.w, taps = g.cout * g.kh * g.kw, plane_out = g.ho * g.wo;
  const ConstMatMap<T> weights(wt, g.cin, taps);
  RowMatrix<T> cols(taps, hw);
  for (std::ptrdiff_t b = 0; b < g.batch; ++b) {
    const T* gout_b = gout + b * g.cout * plane_out;
    im2col_gather(g, gout_b, cols.data());
    if (gin) {
      MatMap<T> dx(gin + b * g.cin * hw, g.cin, hw);
      dx.noalias() += weights * cols;
    }
    if (gwt) {
      const ConstMatMap<T> x(in + b * g.cin * hw, g.cin, hw);
      MatMap<T> dw(gwt, g.cin, taps);
      dw.noalias() += x * cols.transpose();
    }
    if (gbias) {
      for (std::ptrdiff_t co = 0; co < g.cout; ++co) {
        const T* p = gout_b + co * plane_out;
        T acc{0};
        for (std::ptrdiff_t i = 0; i < plane_out; ++i) acc += p[i];
        gbias[co] += acc;
      }
    }
  }
}

}  // namespace

template <typename T>
Var dense(Tape<T>& tape, Var input, Var weights, Var bias) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& w = tape.value(weights);
  const Tensor<T>& bv = tape.value(bias);
  if (x.rank() != 2 || w.rank() != 2 || bv.rank() != 1 || x.dim(1) != w.dim(0) || w.dim(1) != bv.dim(0)) {
    throw DimensionError("dense: input " + shape_str(x.shape()) + " and weights " +
                         shape_str(w.shape()) + " (bias " + shape_str(bv.shape()) + ") do not conform");
  }
  const std::size_t batch = x.dim(0), m = w.dim(0), n = w.dim(1);
  Tensor<T> out(Shape{batch, n});
  for (std::size_t b = 0; b < batch; ++b) {
    T* o = out.ptr() + b * n;
    std::copy_n(bv.ptr(), n, o);
    for (std::size_t i = 0; i < m; ++i) {
      const T xv = x[b * m + i];
      const T* wr = w.ptr() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += xv * wr[j];
    }
  }
  return tape.record(std::move(out), {input, weights, bias},
                     [input, weights, bias, batch, m, n](Tape<T>& t, const Tensor<T>& gout) {
                       const Tensor<T>& xv = t.value(input);
                       const Tensor<T>& wv = t.value(weights);
                       if (t.requires_grad(input)) {
                         Tensor<T>& gx = t.grad_buffer(input);
                         for (std::size_t b = 0; b < batch; ++b) {
                           for (std::size_t i = 0; i < m; ++i) {
                             T acc{0};
                             for (std::size_t j = 0; j < n; ++j) acc += gout[b * n + j] * wv[i * n + j];
                             gx[b * m + i] += acc;
                           }
                         }
                       }
                       if (t.requires_grad(weights)) {
                         Tensor<T>& gw = t.grad_buffer(weights);
                         for (std::size_t b = 0; b < batch; ++b) {
                           for (std::size_t i = 0; i < m; ++i) {
                             const T xi = xv[b * m + i];
                             for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += xi * gout[b * n + j];
                           }
                         }
                       }
                       if (t.requires_grad(bias)) {
                         Tensor<T>& gb = t.grad_buffer(bias);
                         for (std::size_t b = 0; b < batch; ++b) {
                           for (std::size_t j = 0; j < n; ++j) gb[j] += gout[b * n + j];
                         }
                       }
                     });
}

template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var input, Var weights, Var bias, const ConvTransposeSpec& spec) {
  const Tensor<T>& x = tape.value(input);
  const ConvGeometry g = conv_geometry(x.shape(), tape.value(weights).shape(), spec);
  require_same_shape(tape.value(bias).shape(), Shape{spec.out_channels}, "conv_transpose2d bias");
  Tensor<T> out(Shape{x.dim(0), spec.out_channels, static_cast<std::size_t>(g.ho),
                      static_cast<std::size_t>(g.wo)});
  conv_transpose_forward(g, x.ptr(), tape.value(weights).ptr(), tape.value(bias).ptr(), out.ptr());
  return tape.record(std::move(out), {input, weights, bias},
                     [input, weights, bias, g](Tape<T>& t, const Tensor<T>& gout) {
                       T* gin = t.requires_grad(input) ? t.grad_buffer(input).ptr() : nullptr;
                       T* gw = t.requires_grad(weights) ? t.grad_buffer(weights).ptr() : nullptr;
                       T* gb = t.requires_grad(bias) ? t.grad_buffer(bias).ptr() : nullptr;
                       conv_transpose_backward(g, t.value(input).ptr(), gout.ptr(), t.value(weights).ptr(), gin, gw,
                                               gb);
                     });
}

template <typename T>
Var batch_norm(Tape<T>& tape, Var input, Var gamma, Var beta, BatchNormState<T>& state, BatchNormMode mode,
               const BatchNormOptions& options) {
  const Tensor<T>& x = tape.value(input);
  require_rank(x.shape(), 4, "batch_norm input");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  require_same_shape(tape.value(gamma).shape(), Shape{channels}, "batch_norm gamma");
  require_same_shape(tape.value(beta).shape(), Shape{channels}, "batch_norm beta");
  require_same_shape(state.running_mean.shape(), Shape{channels}, "batch_norm running mean");
  if (mode == BatchNormMode::train && batch < 2) {
    throw DimensionError("batch_norm: train mode needs batch >= 2, got " + std::to_string(batch));
  }
  const Tensor<T>& gm = tape.value(gamma);
  const Tensor<T>& bt = tape.value(beta);
  const std::size_t count = batch * plane;

  Tensor<T> mean(Shape{channels});
  Tensor<T> inv_std(Shape{channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double mu, var;
    if (mode == BatchNormMode::train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.ptr() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.ptr() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      state.running_mean[c] =
          static_cast<T>(options.momentum * state.running_mean[c] + (1.0 - options.momentum) * mu);
      state.running_var[c] =
          static_cast<T>(options.momentum * state.running_var[c] + (1.0 - options.momentum) * unbiased);
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    mean[c] = static_cast<T>(mu);
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + options.epsilon));
  }

  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (x[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        out[off + i] = gm[c] * h + bt[c];
      }
    }
  }

  const bool train = mode == BatchNormMode::train;
  return tape.record(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels, plane, count,
       train](Tape<T>& t, const Tensor<T>& gout) {
        const Tensor<T>& gmv = t.value(gamma);
        std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy[c] += gout[off + i];
              sum_dy_xhat[c] += static_cast<double>(gout[off + i]) * xhat[off + i];
            }
          }
        }
        if (t.requires_grad(gamma)) {
          Tensor<T>& g = t.grad_buffer(gamma);
          for (std::size_t c = 0; c < channels; ++c) g[c] += static_cast<T>(sum_dy_xhat[c]);
        }
        if (t.requires_grad(beta)) {
          Tensor<T>& g = t.grad_buffer(beta);
          for (std::size_t c = 0; c < channels; ++c) g[c] += static_cast<T>(sum_dy[c]);
        }
        if (!t.requires_grad(input)) return;
        Tensor<T>& gx = t.grad_buffer(input);
        const double n = static_cast<double>(count);
        for (std::size_t c = 0; c < channels; ++c) {
          const double scale = static_cast<double>(gmv[c]) * inv_std[c];
          const double mean_dy = sum_dy[c] / n;
          const double mean_dy_xhat = sum_dy_xhat[c] / n;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t off = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (train) {
                gx[off + i] += static_cast<T>(scale * (gout[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat));
              } else {
                gx[off + i] += static_cast<T>(scale * gout[off + i]);
              }
            }
          }
        }
      });
}

template <typename T>
Var leaky_relu(Tape<T>& tape, Var input, T slope) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= T{0} ? x[i] : slope * x[i];
  return tape.record(std::move(out), {input}, [input, slope](Tape<T>& t, const Tensor<T>& gout) {
    const Tensor<T>& xv = t.value(input);
    Tensor<T>& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += xv[i] >= T{0} ? gout[i] : slope * gout[i];
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Split on sign so exp never overflows.
    const T v = x[i];
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
    out[i] = std::clamp(out[i], std::numeric_limits<T>::min(), T{1} - std::numeric_limits<T>::epsilon() / T{2});
  }
  Tensor<T> saved = tape.grad_enabled() ? out : Tensor<T>();
  return tape.record(std::move(out), {input}, [input, saved = std::move(saved)](Tape<T>& t, const Tensor<T>& gout) {
    Tensor<T>& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < saved.size(); ++i) gx[i] += gout[i] * saved[i] * (T{1} - saved[i]);
  });
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& input, PoolPadding* padding) {
  if (input.rank() < 2) throw DimensionError("avg_pool2: rank < 2 tensor " + shape_str(input.shape()));
  const Shape& s = input.shape();
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (h == 0 || w == 0) throw DimensionError("avg_pool2: empty image " + shape_str(s));
  const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  if (padding) *padding = PoolPadding{h % 2 == 1, w % 2 == 1};
  Shape os = s;
  os[os.size() - 2] = ho;
  os[os.size() - 1] = wo;
  Tensor<T> out(os);
  const std::size_t planes = shape_size(s) / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = input.ptr() + p * h * w;
    T* dst = out.ptr() + p * ho * wo;
    for (std::size_t r = 0; r < ho; ++r) {
      const std::size_t r0 = 2 * r, r1 = std::min(2 * r + 1, h - 1);
      for (std::size_t c = 0; c < wo; ++c) {
        const std::size_t c0 = 2 * c, c1 = std::min(2 * c + 1, w - 1);
        dst[r * wo + c] =
            (src[r0 * w + c0] + src[r0 * w + c1] + src[r1 * w + c0] + src[r1 * w + c1]) * T(0.25);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  const std::size_t h = input_shape[input_shape.size() - 2], w = input_shape[input_shape.size() - 1];
  const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  Shape expect = input_shape;
  expect[expect.size() - 2] = ho;
  expect[expect.size() - 1] = wo;
  require_same_shape(grad_out.shape(), expect, "avg_pool2 backward");
  Tensor<T> gin(input_shape);
  const std::size_t planes = shape_size(input_shape) / (h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* go = grad_out.ptr() + p * ho * wo;
    T* gi = gin.ptr() + p * h * w;
    for (std::size_t r = 0; r < ho; ++r) {
      const std::size_t r0 = 2 * r, r1 = std::min(2 * r + 1, h - 1);
      for (std::size_t c = 0; c < wo; ++c) {
        const std::size_t c0 = 2 * c, c1 = std::min(2 * c + 1, w - 1);
        const T g = go[r * wo + c] * T(0.25);
        gi[r0 * w + c0] += g;
        gi[r0 * w + c1] += g;
        gi[r1 * w + c0] += g;
        gi[r1 * w + c1] += g;
      }
    }
  }
  return gin;
}

template <typename T>
Var avg_pool2(Tape<T>& tape, Var input, PoolPadding* padding) {
  Tensor<T> out = avg_pool2(tape.value(input), padding);
  return tape.record(std::move(out), {input}, [input](Tape<T>& t, const Tensor<T>& gout) {
    const Tensor<T> gi = avg_pool2_backward(gout, t.value(input).shape());
    Tensor<T>& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < gi.size(); ++i) gx[i] += gi[i];
  });
}

template <typename T>
Var reshape(Tape<T>& tape, Var input, Shape shape) {
  Tensor<T> out = tape.value(input).reshaped(std::move(shape));
  return tape.record(std::move(out), {input}, [input](Tape<T>& t, const Tensor<T>& gout) {
    Tensor<T>& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < gout.size(); ++i) gx[i] += gout[i];
  });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var input, const Tensor<T>& weights) {
  const Tensor<T>& x = tape.value(input);
  require_same_shape(weights.shape(), x.shape(), "weighted_sum");
  T acc{0};
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * weights[i];
  return tape.record(Tensor<T>(Shape{1}, std::vector<T>{acc}), {input},
                     [input, weights](Tape<T>& t, const Tensor<T>& gout) {
                       Tensor<T>& gx = t.grad_buffer(input);
                       for (std::size_t i = 0; i < weights.size(); ++i) gx[i] += gout[0] * weights[i];
                     });
}

#define PSAE_INSTANTIATE_OPS(T)                                                                      \
  template Var dense<T>(Tape<T>&, Var, Var, Var);                                                   \
  template Var conv_transpose2d<T>(Tape<T>&, Var, Var, Var, const ConvTransposeSpec&);              \
  template Var batch_norm<T>(Tape<T>&, Var, Var, Var, BatchNormState<T>&, BatchNormMode,            \
                             const BatchNormOptions&);                                              \
  template Var leaky_relu<T>(Tape<T>&, Var, T);                                                     \
  template Var sigmoid<T>(Tape<T>&, Var);                                                           \
  template Tensor<T> avg_pool2<T>(const Tensor<T>&, PoolPadding*);                                  \
  template Tensor<T> avg_pool2_backward<T>(const Tensor<T>&, const Shape&);                         \
  template Var avg_pool2<T>(Tape<T>&, Var, PoolPadding*);                                           \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                                    \
  template Var weighted_sum<T>(Tape<T>&, Var, const Tensor<T>&);

PSAE_INSTANTIATE_OPS(float)
PSAE_INSTANTIATE_OPS(double)

}  // namespace psae
