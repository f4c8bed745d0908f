#include "rhrseg/netcore.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace rhrseg {

void ConvSpec::validate() const {
  if (kernel < 1 || stride < 1 || padding < 0 || in_channels < 1 ||
      out_channels < 1) {
    throw InvalidConfig("invalid conv spec: in=" + std::to_string(in_channels) +
                        " out=" + std::to_string(out_channels) +
                        " k=" + std::to_string(kernel) +
                        " s=" + std::to_string(stride) +
                        " p=" + std::to_string(padding));
  }
}

TensorShape conv_output_shape(const TensorShape& in, const ConvSpec& spec) {
  spec.validate();
  in.validate();
  if (spec.transposed) {
    throw InvalidConfig("conv_output_shape called with a transposed spec");
  }
  if (in.channels != spec.in_channels) {
    throw ChannelMismatch("conv expects " + std::to_string(spec.in_channels) +
                          " channels, input has " + in.str());
  }
  // Integer floor division; numerator may be negative.
  auto axis = [&](int n) {
    const int num = n + 2 * spec.padding - spec.kernel;
    if (num < 0) return 0;
    return num / spec.stride + 1;
  };
  const int h = axis(in.height);
  const int w = axis(in.width);
  if (h < 1 || w < 1) {
    throw NonPositiveOutput("conv k" + std::to_string(spec.kernel) + " s" +
                            std::to_string(spec.stride) + " p" +
                            std::to_string(spec.padding) + " on " + in.str() +
                            " yields no output pixels");
  }
  return {in.batch, spec.out_channels, h, w};
}

TensorShape transconv_output_shape(const TensorShape& in, const ConvSpec& spec) {
  spec.validate();
  in.validate();
  if (!spec.transposed) {
    throw InvalidConfig("transconv_output_shape called with a plain conv spec");
  }
  if (in.channels != spec.in_channels) {
    throw ChannelMismatch("transposed conv expects " +
                          std::to_string(spec.in_channels) +
                          " channels, input has " + in.str());
  }
  const int h = (in.height - 1) * spec.stride - 2 * spec.padding + spec.kernel;
  const int w = (in.width - 1) * spec.stride - 2 * spec.padding + spec.kernel;
  if (h < 1 || w < 1) {
    throw NonPositiveOutput("transposed conv on " + in.str() +
                            " yields no output pixels");
  }
  return {in.batch, spec.out_channels, h, w};
}

template <typename T>
NormState<T> NormState<T>::identity(int channels) {
  if (channels < 1) throw InvalidConfig("norm state needs >= 1 channel");
  NormState s;
  s.running_mean.assign(channels, T(0));
  s.running_var.assign(channels, T(1));
  const TensorShape shape{1, channels, 1, 1};
  s.scale = make_leaf(Tensor<T>(shape, T(1)), true);
  s.shift = make_leaf(Tensor<T>(shape, T(0)), true);
  return s;
}

template <typename T>
void NormState<T>::validate() const {
  const std::size_t c = running_mean.size();
  if (running_var.size() != c || !scale || !shift || scale->value.size() != c ||
      shift->value.size() != c) {
    throw ChannelMismatch("norm state vectors disagree in length");
  }
  for (T v : running_var) {
    if (!(v >= T(0))) throw InvalidConfig("negative running variance");
  }
  if (!(momentum > 0.0 && momentum < 1.0) || !(epsilon > 0.0)) {
    throw InvalidConfig("norm momentum must be in (0,1) and epsilon > 0");
  }
}

template struct NormState<float>;
template struct NormState<double>;

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

const TensorShape kScalar{1, 1, 1, 1};

// Patch matrix of shape (C*k*k, out_h*out_w).
template <typename T>
void im2col(const T* img, int channels, int height, int width, int k, int s,
            int p, int out_h, int out_w, T* col) {
  for (int c = 0; c < channels; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + ((static_cast<std::size_t>(c) * k + ki) * k + kj) *
                           out_h * out_w;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * s - p + ki;
          T* dst = row + static_cast<std::size_t>(oh) * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * s - p + kj;
            dst[ow] = (iw >= 0 && iw < width) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col; accumulates into img.
template <typename T>
void col2im(const T* col, int channels, int height, int width, int k, int s,
            int p, int out_h, int out_w, T* img) {
  for (int c = 0; c < channels; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + ((static_cast<std::size_t>(c) * k + ki) * k + kj) *
                                 out_h * out_w;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * s - p + ki;
          if (ih < 0 || ih >= height) continue;
          const T* src = row + static_cast<std::size_t>(oh) * out_w;
          T* dst = plane + static_cast<std::size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * s - p + kj;
            if (iw >= 0 && iw < width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void require_same_shape(const TensorShape& a, const TensorShape& b,
                        const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shapes " + a.str() + " and " +
                     b.str() + " differ");
  }
}

template <typename T>
void check_bias(const Var<T>& bias, int channels) {
  if (bias && bias->value.size() != static_cast<std::size_t>(channels)) {
    throw ChannelMismatch("bias has " + std::to_string(bias->value.size()) +
                          " entries, expected " + std::to_string(channels));
  }
}

template <typename T>
void add_bias(Tensor<T>& out, const Var<T>& bias) {
  if (!bias) return;
  const auto& s = out.shape();
  for (int n = 0; n < s.batch; ++n) {
    for (int c = 0; c < s.channels; ++c) {
      T* plane = out.plane_ptr(n, c);
      const T b = bias->value[c];
      for (std::size_t i = 0; i < s.plane(); ++i) plane[i] += b;
    }
  }
}

template <typename T>
void accumulate_bias_grad(const Tensor<T>& g, Node<T>& bias) {
  auto& gb = bias.grad_buffer();
  const auto& s = g.shape();
  for (int c = 0; c < s.channels; ++c) {
    double acc = 0.0;
    for (int n = 0; n < s.batch; ++n) {
      const T* plane = g.plane_ptr(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) acc += plane[i];
    }
    gb[c] += static_cast<T>(acc);
  }
}

struct AxisTable {
  std::vector<int> lo, hi;
  std::vector<double> w_lo, w_hi;
};

AxisTable make_axis(int in, int out) {
  AxisTable t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.w_lo.resize(out);
  t.w_hi.resize(out);
  const double ratio = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(src);
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    const double frac = src - lo;
    t.lo[d] = lo;
    t.hi[d] = hi;
    t.w_hi[d] = frac;
    t.w_lo[d] = 1.0 - frac;
  }
  return t;
}

}  // namespace

namespace ops {

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              int stride, int padding) {
  const TensorShape xs = x->value.shape();
  const TensorShape ws = weight->value.shape();
  if (ws.height != ws.width) throw ShapeError("conv kernels must be square");
  const ConvSpec spec{ws.channels, ws.batch, ws.height, stride, padding, false,
                      bias != nullptr};
  const TensorShape os = conv_output_shape(xs, spec);
  check_bias(bias, spec.out_channels);

  const int k = spec.kernel;
  const int kdim = spec.in_channels * k * k;
  const int pixels = os.height * os.width;
  const bool pointwise = (k == 1 && stride == 1 && padding == 0);

  Tensor<T> out(os);
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * pixels);
  ConstMapMat<T> wm(weight->value.data().data(), spec.out_channels, kdim);
  for (int n = 0; n < xs.batch; ++n) {
    const T* colp = x->value.sample_ptr(n);
    if (!pointwise) {
      im2col(x->value.sample_ptr(n), xs.channels, xs.height, xs.width, k,
             stride, padding, os.height, os.width, col.data());
      colp = col.data();
    }
    ConstMapMat<T> cm(colp, kdim, pixels);
    MapMat<T> om(out.sample_ptr(n), spec.out_channels, pixels);
    om.noalias() = wm * cm;
  }
  add_bias(out, bias);

  return make_result<T>(
      std::move(out), {x, weight, bias},
      [xs, os, spec, stride, padding, kdim, pixels, pointwise](Node<T>& self) {
        Node<T>& xn = *self.parents[0];
        Node<T>& wn = *self.parents[1];
        const int k = spec.kernel;
        std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * pixels);
        std::vector<T> dcol(col.size());
        ConstMapMat<T> wm(wn.value.data().data(), spec.out_channels, kdim);
        for (int n = 0; n < xs.batch; ++n) {
          ConstMapMat<T> gm(self.grad.sample_ptr(n), spec.out_channels, pixels);
          if (wn.requires_grad) {
            const T* colp = xn.value.sample_ptr(n);
            if (!pointwise) {
              im2col(xn.value.sample_ptr(n), xs.channels, xs.height, xs.width,
                     k, stride, padding, os.height, os.width, col.data());
              colp = col.data();
            }
            ConstMapMat<T> cm(colp, kdim, pixels);
            MapMat<T> dw(wn.grad_buffer().data().data(), spec.out_channels, kdim);
            dw.noalias() += gm * cm.transpose();
          }
          if (xn.requires_grad) {
            auto& gx = xn.grad_buffer();
            if (pointwise) {
              MapMat<T> dx(gx.sample_ptr(n), kdim, pixels);
              dx.noalias() += wm.transpose() * gm;
            } else {
              MapMat<T> dc(dcol.data(), kdim, pixels);
              dc.noalias() = wm.transpose() * gm;
              col2im(dcol.data(), xs.channels, xs.height, xs.width, k, stride,
                     padding, os.height, os.width, gx.sample_ptr(n));
            }
          }
        }
        if (self.parents[2] && self.parents[2]->requires_grad) {
          accumulate_bias_grad(self.grad, *self.parents[2]);
        }
      });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight,
                        const Var<T>& bias, int stride, int padding) {
  const TensorShape xs = x->value.shape();
  const TensorShape ws = weight->value.shape();
  if (ws.height != ws.width) throw ShapeError("conv kernels must be square");
  const ConvSpec spec{ws.batch, ws.channels, ws.height, stride, padding, true,
                      bias != nullptr};
  const TensorShape os = transconv_output_shape(xs, spec);
  check_bias(bias, spec.out_channels);

  const int k = spec.kernel;
  const int cdim = spec.out_channels * k * k;
  const int in_pixels = xs.height * xs.width;

  Tensor<T> out(os);
  std::vector<T> col(static_cast<std::size_t>(cdim) * in_pixels);
  ConstMapMat<T> wm(weight->value.data().data(), spec.in_channels, cdim);
  for (int n = 0; n < xs.batch; ++n) {
    ConstMapMat<T> xm(x->value.sample_ptr(n), spec.in_channels, in_pixels);
    MapMat<T> cm(col.data(), cdim, in_pixels);
    cm.noalias() = wm.transpose() * xm;
    col2im(col.data(), spec.out_channels, os.height, os.width, k, stride,
           padding, xs.height, xs.width, out.sample_ptr(n));
  }
  add_bias(out, bias);

  return make_result<T>(
      std::move(out), {x, weight, bias},
      [xs, os, spec, stride, padding, cdim, in_pixels](Node<T>& self) {
        Node<T>& xn = *self.parents[0];
        Node<T>& wn = *self.parents[1];
        const int k = spec.kernel;
        std::vector<T> gcol(static_cast<std::size_t>(cdim) * in_pixels);
        ConstMapMat<T> wm(wn.value.data().data(), spec.in_channels, cdim);
        for (int n = 0; n < xs.batch; ++n) {
          im2col(self.grad.sample_ptr(n), spec.out_channels, os.height,
                 os.width, k, stride, padding, xs.height, xs.width, gcol.data());
          ConstMapMat<T> gc(gcol.data(), cdim, in_pixels);
          if (xn.requires_grad) {
            MapMat<T> dx(xn.grad_buffer().sample_ptr(n), spec.in_channels,
                         in_pixels);
            dx.noalias() += wm * gc;
          }
          if (wn.requires_grad) {
            ConstMapMat<T> xm(xn.value.sample_ptr(n), spec.in_channels,
                              in_pixels);
            MapMat<T> dw(wn.grad_buffer().data().data(), spec.in_channels, cdim);
            dw.noalias() += xm * gc.transpose();
          }
        }
        if (self.parents[2] && self.parents[2]->requires_grad) {
          accumulate_bias_grad(self.grad, *self.parents[2]);
        }
      });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, NormState<T>& state, Mode mode) {
  const TensorShape s = x->value.shape();
  if (s.channels != state.channels()) {
    throw ChannelMismatch("batch norm over " + std::to_string(state.channels()) +
                          " channels got input " + s.str());
  }
  const int channels = s.channels;
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.batch) * plane;
  std::vector<T> invstd(channels);
  Tensor<T> xhat(s);
  Tensor<T> out(s);
  const auto& scale = state.scale->value;
  const auto& shift = state.shift->value;

  for (int c = 0; c < channels; ++c) {
    T mean;
    if (mode == Mode::kTrain) {
      double sum = 0.0;
      for (int n = 0; n < s.batch; ++n) {
        const T* p = x->value.plane_ptr(n, c);
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const double m = sum / count;
      double sq = 0.0;
      for (int n = 0; n < s.batch; ++n) {
        const T* p = x->value.plane_ptr(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - m;
          sq += d * d;
        }
      }
      const double var = sq / count;
      const double unbiased = count > 1.0 ? sq / (count - 1.0) : var;
      mean = static_cast<T>(m);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + state.epsilon));
      const double mom = state.momentum;
      state.running_mean[c] =
          static_cast<T>((1.0 - mom) * state.running_mean[c] + mom * m);
      state.running_var[c] =
          static_cast<T>((1.0 - mom) * state.running_var[c] + mom * unbiased);
    } else {
      mean = state.running_mean[c];
      invstd[c] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.epsilon));
    }
    for (int n = 0; n < s.batch; ++n) {
      const T* p = x->value.plane_ptr(n, c);
      T* h = xhat.plane_ptr(n, c);
      T* o = out.plane_ptr(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        h[i] = (p[i] - mean) * invstd[c];
        o[i] = scale[c] * h[i] + shift[c];
      }
    }
  }

  return make_result<T>(
      std::move(out), {x, state.scale, state.shift},
      [s, mode, invstd = std::move(invstd), xhat = std::move(xhat),
       count](Node<T>& self) {
        Node<T>& xn = *self.parents[0];
        Node<T>& scale_n = *self.parents[1];
        Node<T>& shift_n = *self.parents[2];
        const std::size_t plane = s.plane();
        for (int c = 0; c < s.channels; ++c) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (int n = 0; n < s.batch; ++n) {
            const T* g = self.grad.plane_ptr(n, c);
            const T* h = xhat.plane_ptr(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += g[i];
              sum_gx += static_cast<double>(g[i]) * h[i];
            }
          }
          if (scale_n.requires_grad) scale_n.grad_buffer()[c] += static_cast<T>(sum_gx);
          if (shift_n.requires_grad) shift_n.grad_buffer()[c] += static_cast<T>(sum_g);
          if (!xn.requires_grad) continue;
          const double gamma = scale_n.value[c];
          const double k = gamma * invstd[c];
          auto& gx = xn.grad_buffer();
          for (int n = 0; n < s.batch; ++n) {
            const T* g = self.grad.plane_ptr(n, c);
            const T* h = xhat.plane_ptr(n, c);
            T* d = gx.plane_ptr(n, c);
            if (mode == Mode::kTrain) {
              const double mg = sum_g / count;
              const double mgx = sum_gx / count;
              for (std::size_t i = 0; i < plane; ++i) {
                d[i] += static_cast<T>(k * (g[i] - mg - h[i] * mgx));
              }
            } else {
              for (std::size_t i = 0; i < plane; ++i) {
                d[i] += static_cast<T>(k * g[i]);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x->value.shape());
  const auto in = x->value.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    auto& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xn.value[i] > T(0)) gx[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope) {
  Tensor<T> out(x->value.shape());
  const T a = static_cast<T>(slope);
  const auto in = x->value.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : a * in[i];
  return make_result<T>(std::move(out), {x}, [a](Node<T>& self) {
    Node<T>& xn = *self.parents[0];
    auto& gx = xn.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += xn.value[i] > T(0) ? self.grad[i] : a * self.grad[i];
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value.shape(), b->value.shape(), "add");
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (int p = 0; p < 2; ++p) {
      Node<T>& n = *self.parents[p];
      if (!n.requires_grad) continue;
      auto& g = n.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  Tensor<T> out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] * f;
  return make_result<T>(std::move(out), {x}, [f](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * f;
  });
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int height, int width) {
  if (height < 1 || width < 1) {
    throw ShapeError("resize target must be >= 1x1");
  }
  const TensorShape is = x->value.shape();
  const TensorShape os{is.batch, is.channels, height, width};
  if (is.height == height && is.width == width) {
    return make_result<T>(Tensor<T>(x->value), {x}, [](Node<T>& self) {
      auto& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  }
  const AxisTable ty = make_axis(is.height, height);
  const AxisTable tx = make_axis(is.width, width);
  Tensor<T> out(os);
  for (int n = 0; n < is.batch; ++n) {
    for (int c = 0; c < is.channels; ++c) {
      const T* src = x->value.plane_ptr(n, c);
      T* dst = out.plane_ptr(n, c);
      for (int h = 0; h < height; ++h) {
        const T* r0 = src + static_cast<std::size_t>(ty.lo[h]) * is.width;
        const T* r1 = src + static_cast<std::size_t>(ty.hi[h]) * is.width;
        const T wy0 = static_cast<T>(ty.w_lo[h]);
        const T wy1 = static_cast<T>(ty.w_hi[h]);
        for (int w = 0; w < width; ++w) {
          const T wx0 = static_cast<T>(tx.w_lo[w]);
          const T wx1 = static_cast<T>(tx.w_hi[w]);
          const T top = wx0 * r0[tx.lo[w]] + wx1 * r0[tx.hi[w]];
          const T bot = wx0 * r1[tx.lo[w]] + wx1 * r1[tx.hi[w]];
          dst[static_cast<std::size_t>(h) * width + w] = wy0 * top + wy1 * bot;
        }
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [is, os, ty, tx](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int n = 0; n < is.batch; ++n) {
      for (int c = 0; c < is.channels; ++c) {
        const T* go = self.grad.plane_ptr(n, c);
        T* gi = g.plane_ptr(n, c);
        for (int h = 0; h < os.height; ++h) {
          T* r0 = gi + static_cast<std::size_t>(ty.lo[h]) * is.width;
          T* r1 = gi + static_cast<std::size_t>(ty.hi[h]) * is.width;
          const T wy0 = static_cast<T>(ty.w_lo[h]);
          const T wy1 = static_cast<T>(ty.w_hi[h]);
          for (int w = 0; w < os.width; ++w) {
            const T v = go[static_cast<std::size_t>(h) * os.width + w];
            const T wx0 = static_cast<T>(tx.w_lo[w]);
            const T wx1 = static_cast<T>(tx.w_hi[w]);
            r0[tx.lo[w]] += wy0 * wx0 * v;
            r0[tx.hi[w]] += wy0 * wx1 * v;
            r1[tx.lo[w]] += wy1 * wx0 * v;
            r1[tx.hi[w]] += wy1 * wx1 * v;
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  TensorShape os = parts[0]->value.shape();
  os.channels = 0;
  for (const auto& p : parts) {
    const auto& s = p->value.shape();
    if (s.batch != os.batch || s.height != os.height || s.width != os.width) {
      throw ShapeError("concat: " + s.str() + " does not align with " +
                       parts[0]->value.shape().str());
    }
    os.channels += s.channels;
  }
  Tensor<T> out(os);
  const std::size_t plane = os.plane();
  std::vector<int> offsets;
  int offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const int c = p->value.shape().channels;
    for (int n = 0; n < os.batch; ++n) {
      std::copy_n(p->value.sample_ptr(n), c * plane, out.plane_ptr(n, offset));
    }
    offset += c;
  }
  std::vector<Var<T>> parents(parts.begin(), parts.end());
  return make_result<T>(std::move(out), std::move(parents),
                        [offsets, os](Node<T>& self) {
                          const std::size_t plane = os.plane();
                          for (std::size_t k = 0; k < self.parents.size(); ++k) {
                            Node<T>& p = *self.parents[k];
                            if (!p.requires_grad) continue;
                            auto& g = p.grad_buffer();
                            const int c = p.value.shape().channels;
                            for (int n = 0; n < os.batch; ++n) {
                              const T* src = self.grad.plane_ptr(n, offsets[k]);
                              T* dst = g.sample_ptr(n);
                              for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  const TensorShape s = x->value.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(s);
  for (int n = 0; n < s.batch; ++n) {
    const T* in = x->value.sample_ptr(n);
    T* o = out.sample_ptr(n);
    for (std::size_t i = 0; i < plane; ++i) {
      double mx = in[i];
      for (int c = 1; c < s.channels; ++c) mx = std::max<double>(mx, in[c * plane + i]);
      double z = 0.0;
      for (int c = 0; c < s.channels; ++c) z += std::exp(in[c * plane + i] - mx);
      for (int c = 0; c < s.channels; ++c) {
        o[c * plane + i] = static_cast<T>(std::exp(in[c * plane + i] - mx) / z);
      }
    }
  }
  auto probs = out;
  return make_result<T>(std::move(out), {x}, [s, probs = std::move(probs)](Node<T>& self) {
    const std::size_t plane = s.plane();
    auto& g = self.parents[0]->grad_buffer();
    for (int n = 0; n < s.batch; ++n) {
      const T* y = probs.sample_ptr(n);
      const T* go = self.grad.sample_ptr(n);
      T* gi = g.sample_ptr(n);
      for (std::size_t i = 0; i < plane; ++i) {
        double dot = 0.0;
        for (int c = 0; c < s.channels; ++c) dot += double(go[c * plane + i]) * y[c * plane + i];
        for (int c = 0; c < s.channels; ++c) {
          gi[c * plane + i] += static_cast<T>(y[c * plane + i] * (go[c * plane + i] - dot));
        }
      }
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::uint8_t> labels,
                     int ignore_index, std::int64_t* valid_pixels) {
  const TensorShape s = logits->value.shape();
  const std::size_t plane = s.plane();
  if (labels.size() != static_cast<std::size_t>(s.batch) * plane) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + s.str());
  }
  std::int64_t valid = 0;
  double total = 0.0;
  for (int n = 0; n < s.batch; ++n) {
    const T* in = logits->value.sample_ptr(n);
    for (std::size_t i = 0; i < plane; ++i) {
      const int y = labels[n * plane + i];
      if (y == ignore_index) continue;
      if (y >= s.channels) {
        throw ShapeError("cross_entropy: label " + std::to_string(y) +
                         " outside " + std::to_string(s.channels) + " classes");
      }
      double mx = in[i];
      for (int c = 1; c < s.channels; ++c) mx = std::max<double>(mx, in[c * plane + i]);
      double z = 0.0;
      for (int c = 0; c < s.channels; ++c) z += std::exp(in[c * plane + i] - mx);
      total += std::log(z) + mx - in[y * plane + i];
      ++valid;
    }
  }
  if (valid_pixels) *valid_pixels = valid;
  if (valid == 0) return make_leaf(Tensor<T>(kScalar, T(0)), false);
  const double inv = 1.0 / static_cast<double>(valid);
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  return make_result<T>(
      Tensor<T>(kScalar, static_cast<T>(total * inv)), {logits},
      [s, lab = std::move(lab), ignore_index, inv](Node<T>& self) {
        const std::size_t plane = s.plane();
        Node<T>& ln = *self.parents[0];
        auto& g = ln.grad_buffer();
        const double up = self.grad[0] * inv;
        for (int n = 0; n < s.batch; ++n) {
          const T* in = ln.value.sample_ptr(n);
          T* gi = g.sample_ptr(n);
          for (std::size_t i = 0; i < plane; ++i) {
            const int y = lab[n * plane + i];
            if (y == ignore_index) continue;
            double mx = in[i];
            for (int c = 1; c < s.channels; ++c) mx = std::max<double>(mx, in[c * plane + i]);
            double z = 0.0;
            for (int c = 0; c < s.channels; ++c) z += std::exp(in[c * plane + i] - mx);
            for (int c = 0; c < s.channels; ++c) {
              const double p = std::exp(in[c * plane + i] - mx) / z;
              gi[c * plane + i] += static_cast<T>(up * (p - (c == y ? 1.0 : 0.0)));
            }
          }
        }
      });
}

template <typename T>
Var<T> bce_with_logits(const Var<T>& x, double target) {
  const auto in = x->value.data();
  double total = 0.0;
  for (T v : in) {
    const double z = v;
    total += std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
  }
  const double inv = 1.0 / static_cast<double>(in.size());
  return make_result<T>(Tensor<T>(kScalar, static_cast<T>(total * inv)), {x},
                        [target, inv](Node<T>& self) {
                          Node<T>& xn = *self.parents[0];
                          auto& g = xn.grad_buffer();
                          const double up = self.grad[0] * inv;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const double z = xn.value[i];
                            const double sig = 1.0 / (1.0 + std::exp(-z));
                            g[i] += static_cast<T>(up * (sig - target));
                          }
                        });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  require_same_shape(x->value.shape(), weights.shape(), "weighted_sum");
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    total += static_cast<double>(x->value[i]) * weights[i];
  }
  return make_result<T>(Tensor<T>(kScalar, static_cast<T>(total)), {x},
                        [weights](Node<T>& self) {
                          auto& g = self.parents[0]->grad_buffer();
                          const T up = self.grad[0];
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * weights[i];
                        });
}

#define RHRSEG_INSTANTIATE_OPS(T)                                                    \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);    \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, const Var<T>&, int, \
                                   int);                                             \
  template Var<T> batch_norm(const Var<T>&, NormState<T>&, Mode);                   \
  template Var<T> relu(const Var<T>&);                                              \
  template Var<T> leaky_relu(const Var<T>&, double);                                \
  template Var<T> add(const Var<T>&, const Var<T>&);                                \
  template Var<T> scale(const Var<T>&, double);                                     \
  template Var<T> bilinear_resize(const Var<T>&, int, int);                         \
  template Var<T> concat_channels(std::span<const Var<T>>);                         \
  template Var<T> softmax_channels(const Var<T>&);                                  \
  template Var<T> cross_entropy(const Var<T>&, std::span<const std::uint8_t>, int,  \
                                std::int64_t*);                                     \
  template Var<T> bce_with_logits(const Var<T>&, double);                           \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);

RHRSEG_INSTANTIATE_OPS(float)
RHRSEG_INSTANTIATE_OPS(double)
#undef RHRSEG_INSTANTIATE_OPS

}  // namespace ops

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, NormState<T>& state, Mode mode) {
  NoGradGuard guard;
  return ops::batch_norm(make_leaf(x), state, mode)->value;
}

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int height, int width) {
  NoGradGuard guard;
  return ops::bilinear_resize(make_leaf(x), height, width)->value;
}

template Tensor<float> batchnorm_forward(const Tensor<float>&, NormState<float>&, Mode);
template Tensor<double> batchnorm_forward(const Tensor<double>&, NormState<double>&, Mode);
template Tensor<float> bilinear_resize(const Tensor<float>&, int, int);
template Tensor<double> bilinear_resize(const Tensor<double>&, int, int);

}  // namespace rhrseg
