#include "psae/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "psae/ops.hpp"
#include "psae/parallel.hpp"

namespace psae {

void MsSsimConfig::validate() const {
  if (alphas.size() != top_scale + 1) {
    throw ConfigError("ms-ssim: " + std::to_string(top_scale + 1) + " exponents required, got " +
                      std::to_string(alphas.size()));
  }
  for (double a : alphas) {
    if (!(a >= 0.0)) throw ConfigError("ms-ssim: exponents must be non-negative");
  }
  if (window_size == 0 || window_stride == 0) throw ConfigError("ms-ssim: zero window size or stride");
  if (window == WindowKind::gaussian && !(gaussian_sigma > 0.0)) {
    throw ConfigError("ms-ssim: gaussian sigma must be positive");
  }
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ConfigError("ms-ssim: stability constants must be positive");
  // The contrast-structure product is evaluated in its closed form, which needs C3 = C2/2.
  if (std::abs(c3 - 0.5 * c2) > 1e-15 * c2) throw ConfigError("ms-ssim: C3 must equal C2/2");
}

void MsSsimConfig::validate_for(std::size_t h, std::size_t w) const {
  validate();
  for (std::size_t j = 0; j < top_scale; ++j) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  if (h < window_size || w < window_size) {
    throw DomainError("ms-ssim: image at scale " + std::to_string(top_scale) + " is " + std::to_string(h) +
                      "x" + std::to_string(w) + ", smaller than the " + std::to_string(window_size) +
                      "-pixel window");
  }
}

MsSsimConfig MsSsimConfig::single_scale() {
  MsSsimConfig c;
  c.top_scale = 0;
  c.alphas = {1.0};
  return c;
}

MsSsimConfig MsSsimConfig::gaussian_window() {
  MsSsimConfig c;
  c.window = WindowKind::gaussian;
  c.window_size = 11;
  return c;
}

std::vector<double> window_weights(const MsSsimConfig& config) {
  const std::size_t k = config.window_size;
  std::vector<double> w(k, 1.0 / static_cast<double>(k));
  if (config.window == WindowKind::gaussian) {
    const double center = (static_cast<double>(k) - 1.0) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double d = (static_cast<double>(i) - center) / config.gaussian_sigma;
      w[i] = std::exp(-0.5 * d * d);
      total += w[i];
    }
    for (double& v : w) v /= total;
  }
  return w;
}

namespace {

using Plane = Tensor<double>;

struct Filter {
  std::vector<double> taps;
  std::size_t stride;

  std::size_t out_extent(std::size_t n) const { return (n - taps.size()) / stride + 1; }

  // Valid-mode separable weighted window sums.
  Plane apply(const Plane& x) const {
    const std::size_t h = x.dim(0), w = x.dim(1), k = taps.size();
    const std::size_t oh = out_extent(h), ow = out_extent(w);
    Plane tmp(Shape{h, ow});
    for (std::size_t r = 0; r < h; ++r) {
      const double* src = x.ptr() + r * w;
      double* dst = tmp.ptr() + r * ow;
      for (std::size_t c = 0; c < ow; ++c) {
        const double* s = src + c * stride;
        double acc = 0.0;
        for (std::size_t t = 0; t < k; ++t) acc += taps[t] * s[t];
        dst[c] = acc;
      }
    }
    Plane out(Shape{oh, ow});
    for (std::size_t r = 0; r < oh; ++r) {
      double* dst = out.ptr() + r * ow;
      for (std::size_t t = 0; t < k; ++t) {
        const double* s = tmp.ptr() + (r * stride + t) * ow;
        const double tw = taps[t];
        for (std::size_t c = 0; c < ow; ++c) dst[c] += tw * s[c];
      }
    }
    return out;
  }

  // Transpose of apply(): scatters window gradients back to the pixels they cover.
  Plane adjoint(const Plane& g, std::size_t h, std::size_t w) const {
    const std::size_t k = taps.size(), oh = g.dim(0), ow = g.dim(1);
    Plane tmp(Shape{h, ow});
    for (std::size_t r = 0; r < oh; ++r) {
      const double* s = g.ptr() + r * ow;
      for (std::size_t t = 0; t < k; ++t) {
        double* dst = tmp.ptr() + (r * stride + t) * ow;
        const double tw = taps[t];
        for (std::size_t c = 0; c < ow; ++c) dst[c] += tw * s[c];
      }
    }
    Plane out(Shape{h, w});
    for (std::size_t r = 0; r < h; ++r) {
      const double* s = tmp.ptr() + r * ow;
      double* dst = out.ptr() + r * w;
      for (std::size_t c = 0; c < ow; ++c) {
        const double v = s[c];
        double* d = dst + c * stride;
        for (std::size_t t = 0; t < k; ++t) d[t] += taps[t] * v;
      }
    }
    return out;
  }
};

Plane product(const Plane& a, const Plane& b) {
  Plane out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Plane to_plane(const Tensor<T>& img, const char* what) {
  if (img.rank() != 2) throw DimensionError(std::string(what) + ": expected an (H,W) image, got " + shape_str(img.shape()));
  Plane p(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = static_cast<double>(img[i]);
    if (!(v >= 0.0)) throw DomainError(std::string(what) + ": pixel values must be finite and non-negative");
    p[i] = v;
  }
  return p;
}

struct Moments {
  Plane mu_y, mu_p, var_y, var_p, cov;
};

Moments moments(const Filter& f, const Plane& y, const Plane& p) {
  Moments m;
  m.mu_y = f.apply(y);
  m.mu_p = f.apply(p);
  const Plane e_yy = f.apply(product(y, y));
  const Plane e_pp = f.apply(product(p, p));
  const Plane e_yp = f.apply(product(y, p));
  m.var_y = Plane(m.mu_y.shape());
  m.var_p = Plane(m.mu_y.shape());
  m.cov = Plane(m.mu_y.shape());
  for (std::size_t i = 0; i < m.mu_y.size(); ++i) {
    m.var_y[i] = e_yy[i] - m.mu_y[i] * m.mu_y[i];
    m.var_p[i] = e_pp[i] - m.mu_p[i] * m.mu_p[i];
    m.cov[i] = e_yp[i] - m.mu_y[i] * m.mu_p[i];
  }
  return m;
}

double ms_ssim_impl(const Plane& ref, const Plane& pred, const MsSsimConfig& cfg, double* grad) {
  require_same_shape(ref.shape(), pred.shape(), "ms-ssim");
  cfg.validate_for(ref.dim(0), ref.dim(1));
  const Filter filter{window_weights(cfg), cfg.window_stride};
  const std::size_t scales = cfg.top_scale + 1;

  std::vector<Plane> ys{ref}, ps{pred};
  for (std::size_t j = 1; j < scales; ++j) {
    ys.push_back(avg_pool2(ys.back()));
    ps.push_back(avg_pool2(ps.back()));
  }

  std::vector<Moments> mom(scales);
  std::vector<double> means(scales);
  for (std::size_t j = 0; j < scales; ++j) {
    mom[j] = moments(filter, ys[j], ps[j]);
    const Moments& m = mom[j];
    const bool top = j == cfg.top_scale;
    double sum = 0.0;
    for (std::size_t i = 0; i < m.mu_y.size(); ++i) {
      double f = (2.0 * m.cov[i] + cfg.c2) / (m.var_y[i] + m.var_p[i] + cfg.c2);
      if (top) {
        f *= (2.0 * m.mu_y[i] * m.mu_p[i] + cfg.c1) / (m.mu_y[i] * m.mu_y[i] + m.mu_p[i] * m.mu_p[i] + cfg.c1);
      }
      sum += f;
    }
    means[j] = sum / static_cast<double>(m.mu_y.size());
  }

  // Negative mean structure (anticorrelated images) is clamped so fractional exponents stay real.
  double h = 1.0;
  for (std::size_t j = 0; j < scales; ++j) h *= std::pow(std::max(means[j], 0.0), cfg.alphas[j]);
  if (!grad) return h;

  Plane total;
  for (std::size_t jj = scales; jj-- > 0;) {
    const Moments& m = mom[jj];
    const bool top = jj == cfg.top_scale;
    const std::size_t hj = ys[jj].dim(0), wj = ys[jj].dim(1);

    double dh_dmean = 0.0;
    if (means[jj] > 0.0 && cfg.alphas[jj] != 0.0) {
      dh_dmean = cfg.alphas[jj] * std::pow(means[jj], cfg.alphas[jj] - 1.0);
      for (std::size_t k = 0; k < scales; ++k) {
        if (k != jj) dh_dmean *= std::pow(std::max(means[k], 0.0), cfg.alphas[k]);
      }
    }
    const double scale = dh_dmean / static_cast<double>(m.mu_y.size());

    Plane g_mu(m.mu_y.shape()), g_pp(m.mu_y.shape()), g_yp(m.mu_y.shape());
    for (std::size_t i = 0; i < m.mu_y.size(); ++i) {
      const double a = 2.0 * m.cov[i] + cfg.c2;
      const double b = m.var_y[i] + m.var_p[i] + cfg.c2;
      const double cs = a / b;
      const double dcs_dcov = 2.0 / b;
      const double dcs_dvar = -a / (b * b);
      // cov = E[yp] - mu_y mu_p, var_p = E[pp] - mu_p^2
      double d_mu = dcs_dcov * (-m.mu_y[i]) + dcs_dvar * (-2.0 * m.mu_p[i]);
      double d_pp = dcs_dvar;
      double d_yp = dcs_dcov;
      if (top) {
        const double num = 2.0 * m.mu_y[i] * m.mu_p[i] + cfg.c1;
        const double den = m.mu_y[i] * m.mu_y[i] + m.mu_p[i] * m.mu_p[i] + cfg.c1;
        const double l = num / den;
        const double dl_dmu = 2.0 * m.mu_y[i] / den - num * 2.0 * m.mu_p[i] / (den * den);
        d_mu = l * d_mu + cs * dl_dmu;
        d_pp *= l;
        d_yp *= l;
      }
      g_mu[i] = scale * d_mu;
      g_pp[i] = scale * d_pp;
      g_yp[i] = scale * d_yp;
    }
    const Plane a_mu = filter.adjoint(g_mu, hj, wj);
    const Plane a_pp = filter.adjoint(g_pp, hj, wj);
    const Plane a_yp = filter.adjoint(g_yp, hj, wj);
    Plane gj(Shape{hj, wj});
    for (std::size_t q = 0; q < gj.size(); ++q) {
      gj[q] = a_mu[q] + 2.0 * ps[jj][q] * a_pp[q] + ys[jj][q] * a_yp[q];
    }
    if (!total.empty()) {
      const Plane up = avg_pool2_backward(total, gj.shape());
      for (std::size_t q = 0; q < gj.size(); ++q) gj[q] += up[q];
    }
    total = std::move(gj);
  }
  std::copy(total.data().begin(), total.data().end(), grad);
  return h;
}

// Splits a (B,H,W) or (B,1,H,W) batch into its leading extent and image dims.
struct BatchGeometry {
  std::size_t batch, h, w;
};

BatchGeometry batch_geometry(const Shape& s, const char* what) {
  if (s.size() == 3) return {s[0], s[1], s[2]};
  if (s.size() == 4 && s[1] == 1) return {s[0], s[2], s[3]};
  throw DimensionError(std::string(what) + ": expected (B,H,W) or (B,1,H,W), got " + shape_str(s));
}

template <typename T>
Plane image_of(const Tensor<T>& batch, const BatchGeometry& g, std::size_t i, const char* what) {
  Plane p(Shape{g.h, g.w});
  const T* src = batch.ptr() + i * g.h * g.w;
  for (std::size_t q = 0; q < p.size(); ++q) {
    const double v = static_cast<double>(src[q]);
    if (!(v >= 0.0)) throw DomainError(std::string(what) + ": pixel values must be finite and non-negative");
    p[q] = v;
  }
  return p;
}

}  // namespace

template <typename T>
WindowStats window_stats(const Tensor<T>& ref, const Tensor<T>& pred, const MsSsimConfig& config) {
  const Plane y = to_plane(ref, "window_stats");
  const Plane p = to_plane(pred, "window_stats");
  require_same_shape(y.shape(), p.shape(), "window_stats");
  config.validate();
  if (y.dim(0) < config.window_size || y.dim(1) < config.window_size) {
    throw DomainError("window_stats: image " + shape_str(y.shape()) + " is smaller than the window");
  }
  const Filter filter{window_weights(config), config.window_stride};
  const Moments m = moments(filter, y, p);
  WindowStats s;
  s.rows = m.mu_y.dim(0);
  s.cols = m.mu_y.dim(1);
  const auto to_vec = [](const Plane& x) { return std::vector<double>(x.data().begin(), x.data().end()); };
  s.mean_ref = to_vec(m.mu_y);
  s.mean_pred = to_vec(m.mu_p);
  s.covariance = to_vec(m.cov);
  s.std_ref.resize(m.var_y.size());
  s.std_pred.resize(m.var_y.size());
  for (std::size_t i = 0; i < m.var_y.size(); ++i) {
    s.std_ref[i] = std::sqrt(std::max(m.var_y[i], 0.0));
    s.std_pred[i] = std::sqrt(std::max(m.var_p[i], 0.0));
  }
  return s;
}

SsimComponents ssim_components(const WindowStats& st, const MsSsimConfig& config) {
  const std::size_t n = st.mean_ref.size();
  SsimComponents out;
  out.luminance.resize(n);
  out.contrast.resize(n);
  out.structure.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mu = st.mean_ref[i], mup = st.mean_pred[i];
    const double sd = st.std_ref[i], sdp = st.std_pred[i];
    out.luminance[i] = (2.0 * mu * mup + config.c1) / (mu * mu + mup * mup + config.c1);
    out.contrast[i] = (2.0 * sd * sdp + config.c2) / (sd * sd + sdp * sdp + config.c2);
    out.structure[i] = (st.covariance[i] + config.c3) / (sd * sdp + config.c3);
  }
  return out;
}

template <typename T>
double ms_ssim(const Tensor<T>& ref, const Tensor<T>& pred, const MsSsimConfig& config) {
  return ms_ssim_impl(to_plane(ref, "ms_ssim"), to_plane(pred, "ms_ssim"), config, nullptr);
}

template <typename T>
double ms_ssim_with_grad(const Tensor<T>& ref, const Tensor<T>& pred, const MsSsimConfig& config,
                         std::span<double> grad_pred) {
  if (grad_pred.size() != pred.size()) throw DimensionError("ms_ssim_with_grad: gradient buffer size mismatch");
  return ms_ssim_impl(to_plane(ref, "ms_ssim"), to_plane(pred, "ms_ssim"), config, grad_pred.data());
}

template <typename T>
double single_scale_ssim(const Tensor<T>& ref, const Tensor<T>& pred) {
  return ms_ssim(ref, pred, MsSsimConfig::single_scale());
}

template <typename T>
std::vector<double> ms_ssim_batch(const Tensor<T>& ref, const Tensor<T>& pred, const MsSsimConfig& config) {
  require_same_shape(ref.shape(), pred.shape(), "ms_ssim_batch");
  const BatchGeometry g = batch_geometry(ref.shape(), "ms_ssim_batch");
  std::vector<double> h(g.batch);
  parallel_for(g.batch, [&](std::size_t i) {
    h[i] = ms_ssim_impl(image_of(ref, g, i, "ms_ssim_batch"), image_of(pred, g, i, "ms_ssim_batch"), config,
                        nullptr);
  });
  return h;
}

template <typename T>
double batch_loss(const Tensor<T>& ref, const Tensor<T>& pred, const MsSsimConfig& config) {
  const std::vector<double> h = ms_ssim_batch(ref, pred, config);
  if (h.empty()) throw DimensionError("batch_loss: empty batch");
  double sum = 0.0;
  for (double v : h) sum += 1.0 - v;
  return sum / static_cast<double>(h.size());
}

template <typename T>
double mse_loss(const Tensor<T>& ref, const Tensor<T>& pred) {
  require_same_shape(ref.shape(), pred.shape(), "mse_loss");
  if (ref.empty()) throw DimensionError("mse_loss: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(ref[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(ref.size());
}

template <typename T>
Var ms_ssim_loss(Tape<T>& tape, const Tensor<T>& ref, Var pred, const MsSsimConfig& config) {
  const Tensor<T>& p = tape.value(pred);
  require_same_shape(ref.shape(), p.shape(), "ms_ssim_loss");
  const BatchGeometry g = batch_geometry(ref.shape(), "ms_ssim_loss");
  if (g.batch == 0) throw DimensionError("ms_ssim_loss: empty batch");
  const bool need_grad = tape.requires_grad(pred);
  std::vector<double> h(g.batch);
  std::vector<double> grads(need_grad ? p.size() : 0);
  parallel_for(g.batch, [&](std::size_t i) {
    h[i] = ms_ssim_impl(image_of(ref, g, i, "ms_ssim_loss"), image_of(p, g, i, "ms_ssim_loss"), config,
                        need_grad ? grads.data() + i * g.h * g.w : nullptr);
  });
  double loss = 0.0;
  for (double v : h) loss += 1.0 - v;
  loss /= static_cast<double>(g.batch);
  const double per_image = -1.0 / static_cast<double>(g.batch);
  return tape.record(Tensor<T>(Shape{1}, std::vector<T>{static_cast<T>(loss)}), {pred},
                     [pred, grads = std::move(grads), per_image](Tape<T>& t, const Tensor<T>& gout) {
                       Tensor<T>& gp = t.grad_buffer(pred);
                       const double s = per_image * static_cast<double>(gout[0]);
                       for (std::size_t i = 0; i < grads.size(); ++i) gp[i] += static_cast<T>(s * grads[i]);
                     });
}

template <typename T>
Var mse_loss(Tape<T>& tape, const Tensor<T>& ref, Var pred) {
  const double loss = mse_loss(ref, tape.value(pred));
  return tape.record(Tensor<T>(Shape{1}, std::vector<T>{static_cast<T>(loss)}), {pred},
                     [pred, ref](Tape<T>& t, const Tensor<T>& gout) {
                       const Tensor<T>& p = t.value(pred);
                       Tensor<T>& gp = t.grad_buffer(pred);
                       const double s = 2.0 * static_cast<double>(gout[0]) / static_cast<double>(p.size());
                       for (std::size_t i = 0; i < p.size(); ++i) {
                         gp[i] += static_cast<T>(s * (static_cast<double>(p[i]) - static_cast<double>(ref[i])));
                       }
                     });
}

#define PSAE_INSTANTIATE_LOSS(T)                                                                         \
  template WindowStats window_stats<T>(const Tensor<T>&, const Tensor<T>&, const MsSsimConfig&);         \
  template double ms_ssim<T>(const Tensor<T>&, const Tensor<T>&, const MsSsimConfig&);                   \
  template double ms_ssim_with_grad<T>(const Tensor<T>&, const Tensor<T>&, const MsSsimConfig&,          \
                                       std::span<double>);                                               \
  template double single_scale_ssim<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template std::vector<double> ms_ssim_batch<T>(const Tensor<T>&, const Tensor<T>&, const MsSsimConfig&); \
  template double batch_loss<T>(const Tensor<T>&, const Tensor<T>&, const MsSsimConfig&);                \
  template double mse_loss<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Var ms_ssim_loss<T>(Tape<T>&, const Tensor<T>&, Var, const MsSsimConfig&);                    \
  template Var mse_loss<T>(Tape<T>&, const Tensor<T>&, Var);

PSAE_INSTANTIATE_LOSS(float)
PSAE_INSTANTIATE_LOSS(double)

}  // namespace psae
