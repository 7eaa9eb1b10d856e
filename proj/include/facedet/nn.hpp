// Copyright 2026 The facedet Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace facedet {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Channel-major feature tensor: `data` is channels x (rows*cols).
template <typename Scalar>
struct Tensor {
  int channels = 0;
  int rows = 0;
  int cols = 0;
  Mat<Scalar> data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), rows(h), cols(w), data(Mat<Scalar>::Zero(c, h * w)) {}

  static Tensor zeros(int c, int h, int w) { return Tensor(c, h, w); }
  static Tensor constant(int c, int h, int w, Scalar v) {
    Tensor t(c, h, w);
    t.data.setConstant(v);
    return t;
  }

  int plane() const { return rows * cols; }
  bool same_shape(const Tensor& o) const { return channels == o.channels && rows == o.rows && cols == o.cols; }
  Scalar& at(int c, int i, int j) { return data(c, i * cols + j); }
  Scalar at(int c, int i, int j) const { return data(c, i * cols + j); }
  bool all_finite() const { return data.allFinite(); }
};

/// Learnable array with its accumulated gradient.
template <typename Scalar>
struct Param {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
using ParamList = std::vector<Param<Scalar>*>;

enum class Init { kXavier, kKaiming, kHead };

/// Fan-based uniform initialization; kHead is uniform with standard
/// deviation 0.01. Bias starts at zero.
template <typename Scalar, typename Rng>
void initialize(Param<Scalar>& p, int fan_in, int fan_out, Init init, Rng& rng) {
  double bound = 0.01 * std::sqrt(3.0);
  if (init == Init::kXavier) bound = std::sqrt(6.0 / (fan_in + fan_out));
  if (init == Init::kKaiming) bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = Scalar(dist(rng));
  p.zero_grad();
}

/// 2-D convolution, square kernel, zero padding kernel/2, lowered to a GEMM
/// over an im2col buffer.
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, const std::string& name)
      : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(kernel / 2) {
    weight_.name = name + ".weight";
    bias_.name = name + ".bias";
    weight_.value = Mat<Scalar>::Zero(out_channels, in_channels * kernel * kernel);
    bias_.value = Mat<Scalar>::Zero(out_channels, 1);
    weight_.zero_grad();
    bias_.zero_grad();
  }

  template <typename Rng>
  void init(Init init, Rng& rng) {
    const int k2 = kernel_ * kernel_;
    initialize(weight_, in_ * k2, out_ * k2, init, rng);
    bias_.value.setZero();
    bias_.zero_grad();
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int output_extent(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }

  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }

  void collect(ParamList<Scalar>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    if (x.channels != in_)
      throw std::invalid_argument(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                                  std::to_string(x.channels));
    in_rows_ = x.rows;
    in_cols_ = x.cols;
    const int oh = output_extent(x.rows);
    const int ow = output_extent(x.cols);
    Tensor<Scalar> y(out_, oh, ow);
    if (pointwise()) {
      input_ = x.data;
      y.data.noalias() = weight_.value * input_;
    } else {
      im2col(x, oh, ow);
      y.data.noalias() = weight_.value * cols_;
    }
    y.data.colwise() += bias_.value.col(0);
    return y;
  }

  /// Accumulates parameter gradients and returns the input gradient.
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    const Mat<Scalar>& lowered = pointwise() ? input_ : cols_;
    weight_.grad.noalias() += dy.data * lowered.transpose();
    bias_.grad.col(0) += dy.data.rowwise().sum();
    Tensor<Scalar> dx(in_, in_rows_, in_cols_);
    if (pointwise()) {
      dx.data.noalias() = weight_.value.transpose() * dy.data;
    } else {
      Mat<Scalar> dcols = weight_.value.transpose() * dy.data;
      col2im(dcols, dy.rows, dy.cols, dx);
    }
    return dx;
  }

 private:
  bool pointwise() const { return kernel_ == 1 && stride_ == 1; }

  void im2col(const Tensor<Scalar>& x, int oh, int ow) {
    const int k = kernel_;
    cols_.resize(static_cast<Eigen::Index>(in_) * k * k, static_cast<Eigen::Index>(oh) * ow);
    for (int c = 0; c < in_; ++c) {
      const Scalar* src = x.data.row(c).data();
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj) {
          Scalar* dst = cols_.row((c * k + ki) * k + kj).data();
          for (int i = 0; i < oh; ++i) {
            const int si = i * stride_ - pad_ + ki;
            Scalar* row = dst + static_cast<std::ptrdiff_t>(i) * ow;
            if (si < 0 || si >= x.rows) {
              std::fill(row, row + ow, Scalar(0));
              continue;
            }
            const Scalar* srow = src + static_cast<std::ptrdiff_t>(si) * x.cols;
            for (int j = 0; j < ow; ++j) {
              const int sj = j * stride_ - pad_ + kj;
              row[j] = (sj >= 0 && sj < x.cols) ? srow[sj] : Scalar(0);
            }
          }
        }
    }
  }

  void col2im(const Mat<Scalar>& dcols, int oh, int ow, Tensor<Scalar>& dx) const {
    const int k = kernel_;
    for (int c = 0; c < in_; ++c) {
      Scalar* dst = dx.data.row(c).data();
      for (int ki = 0; ki < k; ++ki)
        for (int kj = 0; kj < k; ++kj) {
          const Scalar* src = dcols.row((c * k + ki) * k + kj).data();
          for (int i = 0; i < oh; ++i) {
            const int si = i * stride_ - pad_ + ki;
            if (si < 0 || si >= dx.rows) continue;
            const Scalar* row = src + static_cast<std::ptrdiff_t>(i) * ow;
            Scalar* drow = dst + static_cast<std::ptrdiff_t>(si) * dx.cols;
            for (int j = 0; j < ow; ++j) {
              const int sj = j * stride_ - pad_ + kj;
              if (sj >= 0 && sj < dx.cols) drow[sj] += row[j];
            }
          }
        }
    }
  }

  int in_ = 0;
  int out_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
  Param<Scalar> weight_;
  Param<Scalar> bias_;
  Mat<Scalar> cols_;
  Mat<Scalar> input_;
  int in_rows_ = 0;
  int in_cols_ = 0;
};

template <typename Scalar>
class ReLU {
 public:
  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    Tensor<Scalar> y = x;
    y.data = x.data.cwiseMax(Scalar(0));
    output_ = y.data;
    return y;
  }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) const {
    Tensor<Scalar> dx = dy;
    dx.data = (output_.array() > Scalar(0)).select(dy.data, Scalar(0));
    return dx;
  }

 private:
  Mat<Scalar> output_;
};

/// Convolution followed by ReLU.
template <typename Scalar>
class ConvReLU {
 public:
  ConvReLU() = default;
  ConvReLU(int in, int out, int kernel, int stride, const std::string& name) : conv_(in, out, kernel, stride, name) {}

  template <typename Rng>
  void init(Init init, Rng& rng) {
    conv_.init(init, rng);
  }
  void collect(ParamList<Scalar>& out) { conv_.collect(out); }
  Conv2d<Scalar>& conv() { return conv_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) { return relu_.forward(conv_.forward(x)); }
  Tensor<Scalar> backward(const Tensor<Scalar>& dy) { return conv_.backward(relu_.backward(dy)); }

 private:
  Conv2d<Scalar> conv_;
  ReLU<Scalar> relu_;
};

/// Nearest-neighbour x2 upsampling, cropped to (rows, cols).
template <typename Scalar>
Tensor<Scalar> upsample2x(const Tensor<Scalar>& x, int rows, int cols) {
  Tensor<Scalar> y(x.channels, rows, cols);
  for (int c = 0; c < x.channels; ++c)
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) y.at(c, i, j) = x.at(c, std::min(i / 2, x.rows - 1), std::min(j / 2, x.cols - 1));
  return y;
}

template <typename Scalar>
Tensor<Scalar> upsample2x_backward(const Tensor<Scalar>& dy, int rows, int cols) {
  Tensor<Scalar> dx(dy.channels, rows, cols);
  for (int c = 0; c < dy.channels; ++c)
    for (int i = 0; i < dy.rows; ++i)
      for (int j = 0; j < dy.cols; ++j) dx.at(c, std::min(i / 2, rows - 1), std::min(j / 2, cols - 1)) += dy.at(c, i, j);
  return dx;
}

/// Numerically stable log(1 + exp(x)).
template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
}

}  // namespace facedet
