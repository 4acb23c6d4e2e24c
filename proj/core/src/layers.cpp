#include "irview/layers.hpp"

#include <Eigen/Core>
#include <cmath>

namespace irview {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using ColMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using ColMap = Eigen::Map<ColMatrix<T>>;
template <typename T>
using ConstColMap = Eigen::Map<const ColMatrix<T>>;

struct Geometry {
  int channels, height, width;  // the large (convolution input) image
  int kernel, stride, pad;
  int out_h, out_w;             // the small (convolution output) grid
};

// Unfolds one (C,H,W) image into a (C*K*K, out_h*out_w) row-major matrix.
template <typename T>
void im2col(const T* image, const Geometry& g, T* col) {
  const int cols = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        T* row = col + static_cast<std::ptrdiff_t>(((c * g.kernel + ki) * g.kernel + kj)) * cols;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = image + (static_cast<std::ptrdiff_t>(c) * g.height + ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds the columns back into a zeroed (C,H,W) image.
template <typename T>
void col2im(const T* col, const Geometry& g, T* image) {
  const int cols = g.out_h * g.out_w;
  std::fill(image, image + static_cast<std::ptrdiff_t>(g.channels) * g.height * g.width, T{0});
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const T* row = col + static_cast<std::ptrdiff_t>(((c * g.kernel + ki) * g.kernel + kj)) * cols;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) continue;
          const T* src = row + oh * g.out_w;
          T* dst = image + (static_cast<std::ptrdiff_t>(c) * g.height + ih) * g.width;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void require_nchw(const Tensor<T>& x, int channels, const char* what) {
  if (x.rank() != 4 || x.dim(1) != channels)
    throw ShapeError(std::string(what) + ": expected (batch," + std::to_string(channels) + ",H,W), got " +
                     shape_string(x.shape()));
}

// Stride-1 convolution computed directly on zero-padded planes; used for thin layers where
// im2col would dominate.
template <typename T>
void pad_planes(const T* x, int channels, int h, int w, int pad, AlignedVector<T>& out) {
  const int ph = h + 2 * pad, pw = w + 2 * pad;
  out.assign(static_cast<std::size_t>(channels) * ph * pw, T{0});
  for (int c = 0; c < channels; ++c)
    for (int r = 0; r < h; ++r)
      std::copy_n(x + (static_cast<std::size_t>(c) * h + r) * w, w,
                  out.data() + (static_cast<std::size_t>(c) * ph + r + pad) * pw + pad);
}

template <typename T>
void direct_forward(const T* x, const T* w, const T* bias, int cin, int cout, int k, int pad, int h, int wd, T* y) {
  AlignedVector<T> xp;
  pad_planes(x, cin, h, wd, pad, xp);
  const int ph = h + 2 * pad, pw = wd + 2 * pad;
  for (int oc = 0; oc < cout; ++oc) {
    RowMap<T> out(y + static_cast<std::size_t>(oc) * h * wd, h, wd);
    out.setConstant(bias[oc]);
    for (int c = 0; c < cin; ++c) {
      ConstRowMap<T> in(xp.data() + static_cast<std::size_t>(c) * ph * pw, ph, pw);
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj)
          out += w[((static_cast<std::size_t>(oc) * cin + c) * k + ki) * k + kj] * in.block(ki, kj, h, wd);
    }
  }
}

template <typename T>
void direct_backward(const T* x, const T* w, const T* dy, int cin, int cout, int k, int pad, int h, int wd, T* dw,
                     T* db, T* dx) {
  AlignedVector<T> xp;
  pad_planes(x, cin, h, wd, pad, xp);
  const int ph = h + 2 * pad, pw = wd + 2 * pad;
  AlignedVector<T> dxp(dx ? xp.size() : 0, T{0});
  for (int oc = 0; oc < cout; ++oc) {
    ConstRowMap<T> g(dy + static_cast<std::size_t>(oc) * h * wd, h, wd);
    db[oc] += g.sum();
    for (int c = 0; c < cin; ++c) {
      ConstRowMap<T> in(xp.data() + static_cast<std::size_t>(c) * ph * pw, ph, pw);
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          const std::size_t widx = ((static_cast<std::size_t>(oc) * cin + c) * k + ki) * k + kj;
          dw[widx] += in.block(ki, kj, h, wd).cwiseProduct(g).sum();
          if (dx) RowMap<T>(dxp.data() + static_cast<std::size_t>(c) * ph * pw, ph, pw).block(ki, kj, h, wd) += w[widx] * g;
        }
      }
    }
  }
  if (dx) {
    for (int c = 0; c < cin; ++c)
      for (int r = 0; r < h; ++r)
        std::copy_n(dxp.data() + (static_cast<std::size_t>(c) * ph + r + pad) * pw + pad, wd,
                    dx + (static_cast<std::size_t>(c) * h + r) * wd);
  }
}

}  // namespace

template <typename T>
void init_uniform(Tensor<T>& t, double bound, std::mt19937_64& rng) {
  for (auto& v : t.values()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = static_cast<T>((2.0 * u - 1.0) * bound);
  }
}

// ---------------------------------------------------------------------------------------------
// Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_((kernel - 1) / 2),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
  require_nchw(x, in_channels_, "conv2d");
  const int batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const Geometry g{in_channels_, h, w, kernel_, stride_, pad_, output_size(h), output_size(w)};
  const int rows = in_channels_ * kernel_ * kernel_;
  const int cols = g.out_h * g.out_w;

  Tensor<T> y({batch, out_channels_, g.out_h, g.out_w});
  if (stride_ == 1 && out_channels_ <= 4) {
    for (int b = 0; b < batch; ++b)
      direct_forward(x.data() + static_cast<std::size_t>(b) * in_channels_ * h * w, weight_.value.data(),
                     bias_.value.data(), in_channels_, out_channels_, kernel_, pad_, h, w,
                     y.data() + static_cast<std::size_t>(b) * out_channels_ * cols);
    return y;
  }
  AlignedVector<T> col(static_cast<std::size_t>(rows) * cols);
  ConstRowMap<T> wmat(weight_.value.data(), out_channels_, rows);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(bias_.value.data(), out_channels_);
  const std::size_t in_stride = static_cast<std::size_t>(in_channels_) * h * w;
  const std::size_t out_stride = static_cast<std::size_t>(out_channels_) * cols;
  for (int b = 0; b < batch; ++b) {
    im2col(x.data() + b * in_stride, g, col.data());
    RowMap<T> out(y.data() + b * out_stride, out_channels_, cols);
    out.noalias() = wmat * ConstRowMap<T>(col.data(), rows, cols);
    out.colwise() += bias;
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_input_grad) {
  require_nchw(x, in_channels_, "conv2d backward");
  const int batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const Geometry g{in_channels_, h, w, kernel_, stride_, pad_, output_size(h), output_size(w)};
  require_shape(dy, {batch, out_channels_, g.out_h, g.out_w}, "conv2d backward dy");
  const int rows = in_channels_ * kernel_ * kernel_;
  const int cols = g.out_h * g.out_w;

  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(x.shape());
  if (stride_ == 1 && out_channels_ <= 4) {
    for (int b = 0; b < batch; ++b) {
      const std::size_t in_off = static_cast<std::size_t>(b) * in_channels_ * h * w;
      direct_backward(x.data() + in_off, weight_.value.data(),
                      dy.data() + static_cast<std::size_t>(b) * out_channels_ * cols, in_channels_, out_channels_,
                      kernel_, pad_, h, w, weight_.grad.data(), bias_.grad.data(),
                      need_input_grad ? dx.data() + in_off : nullptr);
    }
    return dx;
  }
  AlignedVector<T> col(static_cast<std::size_t>(rows) * cols);
  AlignedVector<T> dcol(need_input_grad ? col.size() : 0);
  ConstRowMap<T> wmat(weight_.value.data(), out_channels_, rows);
  RowMap<T> dw(weight_.grad.data(), out_channels_, rows);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias_.grad.data(), out_channels_);
  const std::size_t in_stride = static_cast<std::size_t>(in_channels_) * h * w;
  const std::size_t out_stride = static_cast<std::size_t>(out_channels_) * cols;
  for (int b = 0; b < batch; ++b) {
    im2col(x.data() + b * in_stride, g, col.data());
    ConstRowMap<T> dyb(dy.data() + b * out_stride, out_channels_, cols);
    dw.noalias() += dyb * ConstRowMap<T>(col.data(), rows, cols).transpose();
    db += dyb.rowwise().sum();
    if (need_input_grad) {
      RowMap<T>(dcol.data(), rows, cols).noalias() = wmat.transpose() * dyb;
      col2im(dcol.data(), g, dx.data() + b * in_stride);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------------------------
// ConvTranspose2d

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(const std::string& name, int in_channels, int out_channels, int kernel,
                                    int stride)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_((kernel - 1) / 2),
      weight_(name + ".weight", {in_channels, out_channels, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x) const {
  require_nchw(x, in_channels_, "conv_transpose2d");
  const int batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = output_size(h), ow = output_size(w);
  const Geometry g{out_channels_, oh, ow, kernel_, stride_, pad_, h, w};
  if ((oh + 2 * pad_ - kernel_) / stride_ + 1 != h)
    throw ShapeError("conv_transpose2d: kernel/stride do not invert to input size " + std::to_string(h));
  const int rows = out_channels_ * kernel_ * kernel_;
  const int cols = h * w;

  Tensor<T> y({batch, out_channels_, oh, ow});
  AlignedVector<T> col(static_cast<std::size_t>(rows) * cols);
  ConstRowMap<T> wmat(weight_.value.data(), in_channels_, rows);
  const std::size_t in_stride = static_cast<std::size_t>(in_channels_) * cols;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  for (int b = 0; b < batch; ++b) {
    RowMap<T>(col.data(), rows, cols).noalias() = wmat.transpose() * ConstRowMap<T>(x.data() + b * in_stride, in_channels_, cols);
    T* out = y.data() + b * out_channels_ * out_plane;
    col2im(col.data(), g, out);
    for (int c = 0; c < out_channels_; ++c) {
      const T bc = bias_.value[static_cast<std::size_t>(c)];
      T* plane = out + c * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) plane[i] += bc;
    }
  }
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_input_grad) {
  require_nchw(x, in_channels_, "conv_transpose2d backward");
  const int batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = output_size(h), ow = output_size(w);
  require_shape(dy, {batch, out_channels_, oh, ow}, "conv_transpose2d backward dy");
  const Geometry g{out_channels_, oh, ow, kernel_, stride_, pad_, h, w};
  const int rows = out_channels_ * kernel_ * kernel_;
  const int cols = h * w;

  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(x.shape());
  AlignedVector<T> dcol(static_cast<std::size_t>(rows) * cols);
  ConstRowMap<T> wmat(weight_.value.data(), in_channels_, rows);
  RowMap<T> dw(weight_.grad.data(), in_channels_, rows);
  const std::size_t in_stride = static_cast<std::size_t>(in_channels_) * cols;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  for (int b = 0; b < batch; ++b) {
    const T* dyb = dy.data() + b * out_channels_ * out_plane;
    im2col(dyb, g, dcol.data());
    ConstRowMap<T> dcm(dcol.data(), rows, cols);
    dw.noalias() += ConstRowMap<T>(x.data() + b * in_stride, in_channels_, cols) * dcm.transpose();
    if (need_input_grad) RowMap<T>(dx.data() + b * in_stride, in_channels_, cols).noalias() = wmat * dcm;
    for (int c = 0; c < out_channels_; ++c) {
      const T* plane = dyb + c * out_plane;
      T acc{0};
      for (std::size_t i = 0; i < out_plane; ++i) acc += plane[i];
      bias_.grad[static_cast<std::size_t>(c)] += acc;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T>::Dense(const std::string& name, int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {}

template <typename T>
Tensor<T> Dense<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 2 || x.dim(1) != in_)
    throw ShapeError("dense: expected (batch," + std::to_string(in_) + "), got " + shape_string(x.shape()));
  const int batch = x.dim(0);
  Tensor<T> y({batch, out_});
  ColMap<T> out(y.data(), out_, batch);
  out.noalias() = ConstRowMap<T>(weight_.value.data(), out_, in_) * ConstColMap<T>(x.data(), in_, batch);
  out.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias_.value.data(), out_);
  return y;
}

template <typename T>
Tensor<T> Dense<T>::backward(const Tensor<T>& x, const Tensor<T>& dy, bool need_input_grad) {
  const int batch = x.dim(0);
  require_shape(x, {batch, in_}, "dense backward x");
  require_shape(dy, {batch, out_}, "dense backward dy");
  ConstColMap<T> xm(x.data(), in_, batch);
  ConstColMap<T> dym(dy.data(), out_, batch);
  RowMap<T>(weight_.grad.data(), out_, in_).noalias() += dym * xm.transpose();
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias_.grad.data(), out_) += dym.rowwise().sum();
  Tensor<T> dx;
  if (need_input_grad) {
    dx = Tensor<T>(x.shape());
    ColMap<T>(dx.data(), in_, batch).noalias() = ConstRowMap<T>(weight_.value.data(), out_, in_).transpose() * dym;
  }
  return dx;
}

// ---------------------------------------------------------------------------------------------
// Activations

template <typename T>
void leaky_relu_inplace(Tensor<T>& x, T slope) {
  for (auto& v : x.values()) v = v > T{0} ? v : v * slope;
}

template <typename T>
void leaky_relu_backward(const Tensor<T>& y, Tensor<T>& dy, T slope) {
  if (y.shape() != dy.shape()) throw ShapeError("leaky_relu backward: shape mismatch");
  auto yv = y.values();
  auto dv = dy.values();
  for (std::size_t i = 0; i < dv.size(); ++i)
    if (!(yv[i] > T{0})) dv[i] *= slope;
}

template <typename T>
void tanh_inplace(Tensor<T>& x) {
  for (auto& v : x.values()) v = std::tanh(v);
}

template <typename T>
void tanh_backward(const Tensor<T>& y, Tensor<T>& dy) {
  if (y.shape() != dy.shape()) throw ShapeError("tanh backward: shape mismatch");
  auto yv = y.values();
  auto dv = dy.values();
  for (std::size_t i = 0; i < dv.size(); ++i) dv[i] *= T{1} - yv[i] * yv[i];
}

#define IRVIEW_INSTANTIATE(T)                                              \
  template void init_uniform<T>(Tensor<T>&, double, std::mt19937_64&);     \
  template class Conv2d<T>;                                                \
  template class ConvTranspose2d<T>;                                       \
  template class Dense<T>;                                                 \
  template void leaky_relu_inplace<T>(Tensor<T>&, T);                      \
  template void leaky_relu_backward<T>(const Tensor<T>&, Tensor<T>&, T);   \
  template void tanh_inplace<T>(Tensor<T>&);                               \
  template void tanh_backward<T>(const Tensor<T>&, Tensor<T>&);

IRVIEW_INSTANTIATE(float)
IRVIEW_INSTANTIATE(double)

#undef IRVIEW_INSTANTIATE

}  // namespace irview
