#include "lookalike/layers.hpp"

#include <Eigen/Core>
#include <cmath>

namespace lookalike::layers {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;

template <typename T>
CMap<T> cmap(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return CMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <typename T>
Map<T> map(std::vector<T>& v, std::size_t rows, std::size_t cols) {
  return Map<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::ShapeError, what);
}

// Lowers a 3x3, padding-1 convolution with column stride `sw` over x into a
// [(c*9 + kh*3 + kw)][n][h][wo] matrix.
template <typename T>
std::vector<T> im2col(const FeatureMap<T>& x, std::size_t sw, std::size_t w_out) {
  const std::size_t positions = x.n * x.h * w_out;
  std::vector<T> cols(x.c * 9 * positions, T(0));
  for (std::size_t c = 0; c < x.c; ++c) {
    for (std::size_t kh = 0; kh < 3; ++kh) {
      for (std::size_t kw = 0; kw < 3; ++kw) {
        T* row = cols.data() + ((c * 9 + kh * 3 + kw) * positions);
        for (std::size_t n = 0; n < x.n; ++n) {
          for (std::size_t h = 0; h < x.h; ++h) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h + kh) - 1;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(x.h)) continue;
            const T* src = x.v.data() + x.index(c, n, static_cast<std::size_t>(ih), 0);
            T* dst = row + (n * x.h + h) * w_out;
            for (std::size_t wo = 0; wo < w_out; ++wo) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(wo * sw + kw) - 1;
              if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(x.w)) dst[wo] = src[iw];
            }
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatters columns back into a map of shape (c, n, h, w).
template <typename T>
FeatureMap<T> col2im(const std::vector<T>& cols, std::size_t c_dim, std::size_t n_dim, std::size_t h_dim,
                     std::size_t w_dim, std::size_t sw, std::size_t w_out) {
  FeatureMap<T> x(c_dim, n_dim, h_dim, w_dim);
  const std::size_t positions = n_dim * h_dim * w_out;
  for (std::size_t c = 0; c < c_dim; ++c) {
    for (std::size_t kh = 0; kh < 3; ++kh) {
      for (std::size_t kw = 0; kw < 3; ++kw) {
        const T* row = cols.data() + ((c * 9 + kh * 3 + kw) * positions);
        for (std::size_t n = 0; n < n_dim; ++n) {
          for (std::size_t h = 0; h < h_dim; ++h) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h + kh) - 1;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h_dim)) continue;
            T* dst = x.v.data() + x.index(c, n, static_cast<std::size_t>(ih), 0);
            const T* src = row + (n * h_dim + h) * w_out;
            for (std::size_t wo = 0; wo < w_out; ++wo) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(wo * sw + kw) - 1;
              if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w_dim)) dst[iw] += src[wo];
            }
          }
        }
      }
    }
  }
  return x;
}

template <typename T>
void add_channel_bias(FeatureMap<T>& y, const Tensor<T>& bias) {
  const std::size_t p = y.plane();
  for (std::size_t c = 0; c < y.c; ++c) {
    const T b = bias.data[c];
    T* row = y.v.data() + c * p;
    for (std::size_t i = 0; i < p; ++i) row[i] += b;
  }
}

template <typename T>
void channel_sums(const FeatureMap<T>& dy, Tensor<T>& dbias) {
  const std::size_t p = dy.plane();
  for (std::size_t c = 0; c < dy.c; ++c) {
    T s = T(0);
    const T* row = dy.v.data() + c * p;
    for (std::size_t i = 0; i < p; ++i) s += row[i];
    dbias.data[c] = s;
  }
}

}  // namespace

template <typename T>
FeatureMap<T> conv2d_forward(const FeatureMap<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  require(kernel.shape.size() == 4 && kernel.shape[1] == x.c && kernel.shape[2] == 3 && kernel.shape[3] == 3,
          "conv2d kernel shape mismatch");
  const std::size_t c_out = kernel.shape[0];
  require(bias.size() == c_out, "conv2d bias shape mismatch");
  const auto cols = im2col(x, 1, x.w);
  FeatureMap<T> y(c_out, x.n, x.h, x.w);
  map(y.v, c_out, y.plane()).noalias() = cmap(kernel.data, c_out, x.c * 9) * cmap(cols, x.c * 9, y.plane());
  add_channel_bias(y, bias);
  return y;
}

template <typename T>
FeatureMap<T> conv2d_backward(const FeatureMap<T>& x, const Tensor<T>& kernel, const FeatureMap<T>& dy,
                              Tensor<T>& dkernel, Tensor<T>& dbias) {
  const std::size_t c_out = kernel.shape[0];
  require(dy.c == c_out && dy.n == x.n && dy.h == x.h && dy.w == x.w, "conv2d gradient shape mismatch");
  const auto cols = im2col(x, 1, x.w);
  const std::size_t p = dy.plane();
  dkernel.shape = kernel.shape;
  dkernel.data.assign(kernel.size(), T(0));
  map(dkernel.data, c_out, x.c * 9).noalias() = cmap(dy.v, c_out, p) * cmap(cols, x.c * 9, p).transpose();
  dbias.shape = {c_out};
  dbias.data.assign(c_out, T(0));
  channel_sums(dy, dbias);
  std::vector<T> dcols(x.c * 9 * p);
  map(dcols, x.c * 9, p).noalias() = cmap(kernel.data, c_out, x.c * 9).transpose() * cmap(dy.v, c_out, p);
  return col2im(dcols, x.c, x.n, x.h, x.w, 1, x.w);
}

template <typename T>
FeatureMap<T> conv_transpose2d_forward(const FeatureMap<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  require(kernel.shape.size() == 4 && kernel.shape[0] == x.c && kernel.shape[2] == 3 && kernel.shape[3] == 3,
          "conv_transpose2d kernel shape mismatch");
  const std::size_t c_out = kernel.shape[1];
  require(bias.size() == c_out, "conv_transpose2d bias shape mismatch");
  const std::size_t p = x.plane();
  std::vector<T> cols(c_out * 9 * p);
  map(cols, c_out * 9, p).noalias() = cmap(kernel.data, x.c, c_out * 9).transpose() * cmap(x.v, x.c, p);
  FeatureMap<T> y = col2im(cols, c_out, x.n, x.h, 2 * x.w, 2, x.w);
  add_channel_bias(y, bias);
  return y;
}

template <typename T>
FeatureMap<T> conv_transpose2d_backward(const FeatureMap<T>& x, const Tensor<T>& kernel, const FeatureMap<T>& dy,
                                        Tensor<T>& dkernel, Tensor<T>& dbias) {
  const std::size_t c_out = kernel.shape[1];
  require(dy.c == c_out && dy.n == x.n && dy.h == x.h && dy.w == 2 * x.w, "conv_transpose2d gradient shape mismatch");
  const std::size_t p = x.plane();
  const auto dcols = im2col(dy, 2, x.w);
  dkernel.shape = kernel.shape;
  dkernel.data.assign(kernel.size(), T(0));
  map(dkernel.data, x.c, c_out * 9).noalias() = cmap(x.v, x.c, p) * cmap(dcols, c_out * 9, p).transpose();
  dbias.shape = {c_out};
  dbias.data.assign(c_out, T(0));
  channel_sums(dy, dbias);
  FeatureMap<T> dx(x.c, x.n, x.h, x.w);
  map(dx.v, x.c, p).noalias() = cmap(kernel.data, x.c, c_out * 9) * cmap(dcols, c_out * 9, p);
  return dx;
}

template <typename T>
FeatureMap<T> maxpool_cols_forward(const FeatureMap<T>& x, std::vector<std::uint8_t>& argmax) {
  require(x.w % 2 == 0, "maxpool needs an even column count");
  FeatureMap<T> y(x.c, x.n, x.h, x.w / 2);
  argmax.assign(y.v.size(), 0);
  for (std::size_t i = 0; i < y.v.size(); ++i) {
    const T a = x.v[2 * i];
    const T b = x.v[2 * i + 1];
    if (b > a) {
      y.v[i] = b;
      argmax[i] = 1;
    } else {
      y.v[i] = a;
    }
  }
  return y;
}

template <typename T>
FeatureMap<T> maxpool_cols_backward(const FeatureMap<T>& dy, const std::vector<std::uint8_t>& argmax) {
  require(argmax.size() == dy.v.size(), "maxpool gradient shape mismatch");
  FeatureMap<T> dx(dy.c, dy.n, dy.h, dy.w * 2);
  for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[2 * i + argmax[i]] = dy.v[i];
  return dx;
}

template <typename T>
FeatureMap<T> batchnorm_forward_train(const FeatureMap<T>& x, const Tensor<T>& gain, const Tensor<T>& shift,
                                      BatchNormCache<T>& cache) {
  require(gain.size() == x.c && shift.size() == x.c, "batchnorm parameter shape mismatch");
  const std::size_t p = x.plane();
  cache.mean.assign(x.c, T(0));
  cache.var.assign(x.c, T(0));
  cache.inv_std.assign(x.c, T(0));
  cache.xhat = FeatureMap<T>(x.c, x.n, x.h, x.w);
  FeatureMap<T> y(x.c, x.n, x.h, x.w);
  for (std::size_t c = 0; c < x.c; ++c) {
    const T* src = x.v.data() + c * p;
    T mean = T(0);
    for (std::size_t i = 0; i < p; ++i) mean += src[i];
    mean /= static_cast<T>(p);
    T var = T(0);
    for (std::size_t i = 0; i < p; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<T>(p);
    const T inv_std = T(1) / std::sqrt(var + static_cast<T>(kBatchNormEps));
    cache.mean[c] = mean;
    cache.var[c] = var;
    cache.inv_std[c] = inv_std;
    T* xh = cache.xhat.v.data() + c * p;
    T* dst = y.v.data() + c * p;
    for (std::size_t i = 0; i < p; ++i) {
      xh[i] = (src[i] - mean) * inv_std;
      dst[i] = gain.data[c] * xh[i] + shift.data[c];
    }
  }
  return y;
}

template <typename T>
FeatureMap<T> batchnorm_forward_infer(const FeatureMap<T>& x, const Tensor<T>& gain, const Tensor<T>& shift,
                                      const Tensor<T>& running_mean, const Tensor<T>& running_var) {
  require(gain.size() == x.c && running_mean.size() == x.c && running_var.size() == x.c,
          "batchnorm parameter shape mismatch");
  const std::size_t p = x.plane();
  FeatureMap<T> y(x.c, x.n, x.h, x.w);
  for (std::size_t c = 0; c < x.c; ++c) {
    const T scale = gain.data[c] / std::sqrt(running_var.data[c] + static_cast<T>(kBatchNormEps));
    const T offset = shift.data[c] - running_mean.data[c] * scale;
    const T* src = x.v.data() + c * p;
    T* dst = y.v.data() + c * p;
    for (std::size_t i = 0; i < p; ++i) dst[i] = src[i] * scale + offset;
  }
  return y;
}

template <typename T>
FeatureMap<T> batchnorm_backward(const FeatureMap<T>& dy, const Tensor<T>& gain, const BatchNormCache<T>& cache,
                                 Tensor<T>& dgain, Tensor<T>& dshift) {
  const std::size_t p = dy.plane();
  dgain.shape = gain.shape;
  dgain.data.assign(dy.c, T(0));
  dshift.shape = gain.shape;
  dshift.data.assign(dy.c, T(0));
  FeatureMap<T> dx(dy.c, dy.n, dy.h, dy.w);
  for (std::size_t c = 0; c < dy.c; ++c) {
    const T* g = dy.v.data() + c * p;
    const T* xh = cache.xhat.v.data() + c * p;
    T sum_g = T(0), sum_gx = T(0);
    for (std::size_t i = 0; i < p; ++i) {
      sum_g += g[i];
      sum_gx += g[i] * xh[i];
    }
    dgain.data[c] = sum_gx;
    dshift.data[c] = sum_g;
    const T k = gain.data[c] * cache.inv_std[c] / static_cast<T>(p);
    T* dst = dx.v.data() + c * p;
    for (std::size_t i = 0; i < p; ++i) {
      dst[i] = k * (static_cast<T>(p) * g[i] - sum_g - xh[i] * sum_gx);
    }
  }
  return dx;
}

template <typename T>
Rows<T> dense_forward(const Rows<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(weight.shape.size() == 2 && weight.shape[0] == x.d, "dense weight shape mismatch");
  const std::size_t out = weight.shape[1];
  require(bias.size() == out, "dense bias shape mismatch");
  Rows<T> y(x.n, out);
  auto ym = map(y.v, x.n, out);
  ym.noalias() = cmap(x.v, x.n, x.d) * cmap(weight.data, x.d, out);
  for (std::size_t i = 0; i < x.n; ++i) {
    for (std::size_t j = 0; j < out; ++j) y.at(i, j) += bias.data[j];
  }
  return y;
}

template <typename T>
Rows<T> dense_backward(const Rows<T>& x, const Tensor<T>& weight, const Rows<T>& dy, Tensor<T>& dweight,
                       Tensor<T>& dbias) {
  const std::size_t out = weight.shape[1];
  require(dy.n == x.n && dy.d == out, "dense gradient shape mismatch");
  dweight.shape = weight.shape;
  dweight.data.assign(weight.size(), T(0));
  map(dweight.data, x.d, out).noalias() = cmap(x.v, x.n, x.d).transpose() * cmap(dy.v, dy.n, out);
  dbias.shape = {out};
  dbias.data.assign(out, T(0));
  for (std::size_t i = 0; i < dy.n; ++i) {
    for (std::size_t j = 0; j < out; ++j) dbias.data[j] += dy.at(i, j);
  }
  Rows<T> dx(x.n, x.d);
  map(dx.v, x.n, x.d).noalias() = cmap(dy.v, dy.n, out) * cmap(weight.data, x.d, out).transpose();
  return dx;
}

template <typename T>
void relu_inplace(std::vector<T>& v) {
  for (auto& a : v) a = a > T(0) ? a : T(0);
}

template <typename T>
void relu_backward_inplace(std::vector<T>& dy, const std::vector<T>& y) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(y[i] > T(0))) dy[i] = T(0);
  }
}

template <typename T>
void sigmoid_inplace(std::vector<T>& v) {
  for (auto& a : v) a = T(1) / (T(1) + std::exp(-a));
}

template <typename T>
void sigmoid_backward_inplace(std::vector<T>& dy, const std::vector<T>& y) {
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= y[i] * (T(1) - y[i]);
}

template <typename T>
Rows<T> flatten(const FeatureMap<T>& x) {
  Rows<T> r(x.n, x.c * x.h * x.w);
  const std::size_t hw = x.h * x.w;
  for (std::size_t c = 0; c < x.c; ++c) {
    for (std::size_t n = 0; n < x.n; ++n) {
      std::copy_n(x.v.data() + x.index(c, n, 0, 0), hw, r.v.data() + n * r.d + c * hw);
    }
  }
  return r;
}

template <typename T>
FeatureMap<T> unflatten(const Rows<T>& r, std::size_t c_dim, std::size_t h_dim, std::size_t w_dim) {
  require(r.d == c_dim * h_dim * w_dim, "unflatten size mismatch");
  FeatureMap<T> x(c_dim, r.n, h_dim, w_dim);
  const std::size_t hw = h_dim * w_dim;
  for (std::size_t c = 0; c < c_dim; ++c) {
    for (std::size_t n = 0; n < r.n; ++n) {
      std::copy_n(r.v.data() + n * r.d + c * hw, hw, x.v.data() + x.index(c, n, 0, 0));
    }
  }
  return x;
}

#define LOOKALIKE_INSTANTIATE_LAYERS(T)                                                                         \
  template FeatureMap<T> conv2d_forward(const FeatureMap<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template FeatureMap<T> conv2d_backward(const FeatureMap<T>&, const Tensor<T>&, const FeatureMap<T>&,         \
                                         Tensor<T>&, Tensor<T>&);                                              \
  template FeatureMap<T> conv_transpose2d_forward(const FeatureMap<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template FeatureMap<T> conv_transpose2d_backward(const FeatureMap<T>&, const Tensor<T>&,                     \
                                                   const FeatureMap<T>&, Tensor<T>&, Tensor<T>&);              \
  template FeatureMap<T> maxpool_cols_forward(const FeatureMap<T>&, std::vector<std::uint8_t>&);               \
  template FeatureMap<T> maxpool_cols_backward(const FeatureMap<T>&, const std::vector<std::uint8_t>&);        \
  template FeatureMap<T> batchnorm_forward_train(const FeatureMap<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                                 BatchNormCache<T>&);                                          \
  template FeatureMap<T> batchnorm_forward_infer(const FeatureMap<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                                 const Tensor<T>&, const Tensor<T>&);                          \
  template FeatureMap<T> batchnorm_backward(const FeatureMap<T>&, const Tensor<T>&, const BatchNormCache<T>&,  \
                                            Tensor<T>&, Tensor<T>&);                                           \
  template Rows<T> dense_forward(const Rows<T>&, const Tensor<T>&, const Tensor<T>&);                          \
  template Rows<T> dense_backward(const Rows<T>&, const Tensor<T>&, const Rows<T>&, Tensor<T>&, Tensor<T>&);   \
  template void relu_inplace(std::vector<T>&);                                                                 \
  template void relu_backward_inplace(std::vector<T>&, const std::vector<T>&);                                 \
  template void sigmoid_inplace(std::vector<T>&);                                                              \
  template void sigmoid_backward_inplace(std::vector<T>&, const std::vector<T>&);                              \
  template Rows<T> flatten(const FeatureMap<T>&);                                                              \
  template FeatureMap<T> unflatten(const Rows<T>&, std::size_t, std::size_t, std::size_t);

LOOKALIKE_INSTANTIATE_LAYERS(float)
LOOKALIKE_INSTANTIATE_LAYERS(double)

#undef LOOKALIKE_INSTANTIATE_LAYERS

}  // namespace lookalike::layers
