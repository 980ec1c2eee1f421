#pragma once

// Forward and backward kernels for the layer types used by the autoencoder.
// Convolution activations are channel-major ([channels][batch][rows][cols])
// so that a whole batch lowers to a single matrix product; dense activations
// are row-major [batch][features].

#include <cstddef>
#include <cstdint>
#include <vector>

#include "lookalike/tensor.hpp"

namespace lookalike::layers {

template <typename T>
struct FeatureMap {
  std::size_t c = 0, n = 0, h = 0, w = 0;
  std::vector<T> v;

  FeatureMap() = default;
  FeatureMap(std::size_t c_, std::size_t n_, std::size_t h_, std::size_t w_, T fill = T(0))
      : c(c_), n(n_), h(h_), w(w_), v(c_ * n_ * h_ * w_, fill) {}

  std::size_t plane() const { return n * h * w; }
  std::size_t index(std::size_t ci, std::size_t ni, std::size_t hi, std::size_t wi) const {
    return ((ci * n + ni) * h + hi) * w + wi;
  }
  T& at(std::size_t ci, std::size_t ni, std::size_t hi, std::size_t wi) { return v[index(ci, ni, hi, wi)]; }
  T at(std::size_t ci, std::size_t ni, std::size_t hi, std::size_t wi) const { return v[index(ci, ni, hi, wi)]; }
};

template <typename T>
struct Rows {
  std::size_t n = 0, d = 0;
  std::vector<T> v;

  Rows() = default;
  Rows(std::size_t n_, std::size_t d_, T fill = T(0)) : n(n_), d(d_), v(n_ * d_, fill) {}

  T& at(std::size_t i, std::size_t j) { return v[i * d + j]; }
  T at(std::size_t i, std::size_t j) const { return v[i * d + j]; }
};

// 3x3 convolution, stride 1, zero padding 1. kernel [out, in, 3, 3], bias [out].
template <typename T>
FeatureMap<T> conv2d_forward(const FeatureMap<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias);
template <typename T>
FeatureMap<T> conv2d_backward(const FeatureMap<T>& x, const Tensor<T>& kernel, const FeatureMap<T>& dy,
                              Tensor<T>& dkernel, Tensor<T>& dbias);

// 3x3 transposed convolution upsampling the column axis by 2 (stride (1,2),
// padding 1, output padding 1). kernel [in, out, 3, 3], bias [out].
template <typename T>
FeatureMap<T> conv_transpose2d_forward(const FeatureMap<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias);
template <typename T>
FeatureMap<T> conv_transpose2d_backward(const FeatureMap<T>& x, const Tensor<T>& kernel, const FeatureMap<T>& dy,
                                        Tensor<T>& dkernel, Tensor<T>& dbias);

// (1,2) max pool along the column (frequency) axis. argmax records which of
// the two inputs won (0 or 1); ties go to the first.
template <typename T>
FeatureMap<T> maxpool_cols_forward(const FeatureMap<T>& x, std::vector<std::uint8_t>& argmax);
template <typename T>
FeatureMap<T> maxpool_cols_backward(const FeatureMap<T>& dy, const std::vector<std::uint8_t>& argmax);

template <typename T>
struct BatchNormCache {
  std::vector<T> mean;     // per channel batch mean
  std::vector<T> var;      // per channel biased batch variance
  std::vector<T> inv_std;  // 1 / sqrt(var + eps)
  FeatureMap<T> xhat;
};

inline constexpr double kBatchNormEps = 1e-3;

// Spatial batch norm: statistics per channel over batch, rows and columns.
template <typename T>
FeatureMap<T> batchnorm_forward_train(const FeatureMap<T>& x, const Tensor<T>& gain, const Tensor<T>& shift,
                                      BatchNormCache<T>& cache);
template <typename T>
FeatureMap<T> batchnorm_forward_infer(const FeatureMap<T>& x, const Tensor<T>& gain, const Tensor<T>& shift,
                                      const Tensor<T>& running_mean, const Tensor<T>& running_var);
template <typename T>
FeatureMap<T> batchnorm_backward(const FeatureMap<T>& dy, const Tensor<T>& gain, const BatchNormCache<T>& cache,
                                 Tensor<T>& dgain, Tensor<T>& dshift);

// y = x W + b with W [in, out].
template <typename T>
Rows<T> dense_forward(const Rows<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
Rows<T> dense_backward(const Rows<T>& x, const Tensor<T>& weight, const Rows<T>& dy, Tensor<T>& dweight,
                       Tensor<T>& dbias);

// Elementwise activations over a flat buffer; backward uses the forward output.
template <typename T>
void relu_inplace(std::vector<T>& v);
template <typename T>
void relu_backward_inplace(std::vector<T>& dy, const std::vector<T>& y);
template <typename T>
void sigmoid_inplace(std::vector<T>& v);
template <typename T>
void sigmoid_backward_inplace(std::vector<T>& dy, const std::vector<T>& y);

// [C][N][H][W] <-> [N][C*H*W]
template <typename T>
Rows<T> flatten(const FeatureMap<T>& x);
template <typename T>
FeatureMap<T> unflatten(const Rows<T>& x, std::size_t c, std::size_t h, std::size_t w);

}  // namespace lookalike::layers
