#pragma once

// Minimal layers with hand-written backward passes. Each layer caches what
// its backward pass needs from the most recent forward call, so a forward
// must be followed by its matching backward before the next forward.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "benthic/types.hpp"

namespace benthic::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Trainable tensor with its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;

  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)) {}
  Eigen::Index size() const { return value.size(); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

template <typename T>
void zero_grad(const ParamList<T>& ps) {
  for (auto* p : ps) p->grad.setZero();
}

template <typename T>
long count_params(const ParamList<T>& ps) {
  long n = 0;
  for (auto* p : ps) n += static_cast<long>(p->size());
  return n;
}

template <typename T>
void init_normal(Param<T>& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(d(rng));
}

template <typename T>
void init_uniform(Param<T>& p, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(d(rng));
}

/// Channel-major feature map [C, H*W].
template <typename T>
struct FeatureMap {
  int channels = 0, height = 0, width = 0;
  Mat<T> data;  // channels x (height*width)

  FeatureMap() = default;
  FeatureMap(int c, int h, int w)
      : channels(c), height(h), width(w), data(Mat<T>::Zero(c, static_cast<Eigen::Index>(h) * w)) {}
  T& at(int c, int y, int x) { return data(c, static_cast<Eigen::Index>(y) * width + x); }
  T at(int c, int y, int x) const { return data(c, static_cast<Eigen::Index>(y) * width + x); }
  Eigen::Index numel() const { return data.size(); }
};

// ---- convolution ------------------------------------------------------------

template <typename T>
class Conv2d {
 public:
  Conv2d(std::string name, int in, int out, int kernel, int stride)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(kernel / 2),
        weight_(name + ".weight", out, in * kernel * kernel), bias_(name + ".bias", out, 1) {}

  int out_channels() const { return out_; }
  int out_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  void collect(ParamList<T>& ps) { ps.push_back(&weight_), ps.push_back(&bias_); }

  FeatureMap<T> forward(const FeatureMap<T>& x) {
    if (x.channels != in_) throw NumericError("conv input channel mismatch");
    in_h_ = x.height, in_w_ = x.width;
    const int oh = out_size(x.height), ow = out_size(x.width);
    im2col(x, oh, ow);
    FeatureMap<T> y(out_, oh, ow);
    y.data.noalias() = weight_.value * cols_;
    y.data.colwise() += bias_.value.col(0);
    return y;
  }

  /// Accumulates parameter gradients; returns the input gradient.
  FeatureMap<T> backward(const FeatureMap<T>& dy) {
    weight_.grad.noalias() += dy.data * cols_.transpose();
    bias_.grad.col(0) += dy.data.rowwise().sum().transpose();
    Mat<T> dcols = weight_.value.transpose() * dy.data;
    FeatureMap<T> dx(in_, in_h_, in_w_);
    const int oh = dy.height, ow = dy.width;
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(c) * k_ + ky) * k_ + kx;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * stride_ - pad_ + ky;
            if (iy < 0 || iy >= in_h_) continue;
            for (int x = 0; x < ow; ++x) {
              const int ix = x * stride_ - pad_ + kx;
              if (ix < 0 || ix >= in_w_) continue;
              dx.at(c, iy, ix) += dcols(row, static_cast<Eigen::Index>(y) * ow + x);
            }
          }
        }
    return dx;
  }

 private:
  void im2col(const FeatureMap<T>& x, int oh, int ow) {
    cols_.setZero(static_cast<Eigen::Index>(in_) * k_ * k_, static_cast<Eigen::Index>(oh) * ow);
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const Eigen::Index row = (static_cast<Eigen::Index>(c) * k_ + ky) * k_ + kx;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.height) continue;
            for (int xo = 0; xo < ow; ++xo) {
              const int ix = xo * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.width) continue;
              cols_(row, static_cast<Eigen::Index>(y) * ow + xo) = x.at(c, iy, ix);
            }
          }
        }
  }

  int in_, out_, k_, stride_, pad_;
  Param<T> weight_, bias_;
  Mat<T> cols_;
  int in_h_ = 0, in_w_ = 0;
};

// ---- elementwise ------------------------------------------------------------

template <typename T>
class ReLU {
 public:
  void forward_inplace(Mat<T>& x) {
    mask_ = (x.array() > T(0)).template cast<T>();
    x.array() *= mask_.array();
  }
  void backward_inplace(Mat<T>& dy) const { dy.array() *= mask_.array(); }

 private:
  Mat<T> mask_;
};

// ---- fully connected ----------------------------------------------------------

/// Row-batched affine map: X [n, in] -> X W^T + b, [n, out].
template <typename T>
class Linear {
 public:
  Linear(std::string name, int in, int out)
      : in_(in), out_(out), weight_(name + ".weight", out, in), bias_(name + ".bias", out, 1) {}

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  void collect(ParamList<T>& ps) { ps.push_back(&weight_), ps.push_back(&bias_); }

  Mat<T> forward(const Mat<T>& x) {
    if (x.cols() != in_) throw NumericError("linear input width mismatch");
    x_ = x;
    Mat<T> y = x * weight_.value.transpose();
    y.rowwise() += bias_.value.col(0).transpose();
    return y;
  }

  Mat<T> backward(const Mat<T>& dy) {
    weight_.grad.noalias() += dy.transpose() * x_;
    bias_.grad.col(0) += dy.colwise().sum().transpose();
    return dy * weight_.value;
  }

 private:
  int in_, out_;
  Param<T> weight_, bias_;
  Mat<T> x_;
};

// ---- strided 1D reduction -----------------------------------------------------

/// Single-channel 1D convolution with kernel == stride over a flattened
/// feature vector, reducing length N to N / kernel.
template <typename T>
class Conv1dReduce {
 public:
  Conv1dReduce(std::string name, long input_len, int output_len, bool with_bias = true)
      : n_(input_len), d_(output_len),
        weight_(name + ".weight", 1, output_len > 0 ? input_len / output_len : 1),
        bias_(name + ".bias", 1, 1), with_bias_(with_bias) {
    if (output_len <= 0 || input_len % output_len != 0)
      throw DataError("global feature length " + std::to_string(output_len) +
                      " must divide the flattened backbone size " + std::to_string(input_len));
  }

  int kernel() const { return static_cast<int>(n_ / d_); }
  int output_len() const { return d_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  void collect(ParamList<T>& ps) {
    ps.push_back(&weight_);
    if (with_bias_) ps.push_back(&bias_);
  }

  /// x: row vector [1, N] -> [1, D]
  Mat<T> forward(const Mat<T>& x) {
    if (x.size() != n_) throw NumericError("global reduction input length mismatch");
    x_ = x;
    const int k = kernel();
    Eigen::Map<const Mat<T>> xs(x.data(), d_, k);
    Mat<T> y = (xs * weight_.value.transpose()).transpose();
    if (with_bias_) y.array() += bias_.value(0, 0);
    return y;
  }

  Mat<T> backward(const Mat<T>& dy) {
    const int k = kernel();
    Eigen::Map<const Mat<T>> xs(x_.data(), d_, k);
    weight_.grad.noalias() += dy * xs;
    if (with_bias_) bias_.grad(0, 0) += dy.sum();
    Mat<T> dx(1, n_);
    Eigen::Map<Mat<T>> dxs(dx.data(), d_, k);
    dxs.noalias() = dy.transpose() * weight_.value;
    return dx;
  }

 private:
  long n_;
  int d_;
  Param<T> weight_, bias_;
  bool with_bias_;
  Mat<T> x_;
};

// ---- region pooling -------------------------------------------------------------

/// Bilinear RoI pooling onto a P x P grid with a fixed number of samples per
/// bin edge. Box coordinates are image pixels; spatial_scale maps them onto
/// the feature map. Output rows are regions, columns are [C, P, P] flattened.
template <typename T>
class RoIAlign {
 public:
  RoIAlign(int pooled, double spatial_scale, int sampling_ratio = 2)
      : p_(pooled), scale_(spatial_scale), s_(sampling_ratio) {}

  int pooled() const { return p_; }

  Mat<T> forward(const FeatureMap<T>& f, const std::vector<Box>& rois) {
    c_ = f.channels, h_ = f.height, w_ = f.width;
    build_taps(rois);
    const int bins = p_ * p_;
    Mat<T> out = Mat<T>::Zero(static_cast<Eigen::Index>(rois.size()), static_cast<Eigen::Index>(c_) * bins);
    for (std::size_t r = 0; r < rois.size(); ++r)
      for (int b = 0; b < bins; ++b)
        for (const auto& tap : taps_[r * bins + b])
          for (int c = 0; c < c_; ++c)
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c) * bins + b) +=
                static_cast<T>(tap.weight) * f.data(c, tap.index);
    return out;
  }

  FeatureMap<T> backward(const Mat<T>& dout) const {
    FeatureMap<T> df(c_, h_, w_);
    const int bins = p_ * p_;
    const auto n = static_cast<std::size_t>(dout.rows());
    for (std::size_t r = 0; r < n; ++r)
      for (int b = 0; b < bins; ++b)
        for (const auto& tap : taps_[r * bins + b])
          for (int c = 0; c < c_; ++c)
            df.data(c, tap.index) +=
                static_cast<T>(tap.weight) * dout(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c) * bins + b);
    return df;
  }

 private:
  struct Tap {
    Eigen::Index index;
    double weight;
  };

  void add_sample(std::vector<Tap>& taps, double y, double x, double w) const {
    if (y < -1.0 || y > h_ || x < -1.0 || x > w_) return;
    y = std::max(y, 0.0);
    x = std::max(x, 0.0);
    int y0 = static_cast<int>(y), x0 = static_cast<int>(x), y1, x1;
    if (y0 >= h_ - 1) {
      y1 = y0 = h_ - 1;
      y = y0;
    } else {
      y1 = y0 + 1;
    }
    if (x0 >= w_ - 1) {
      x1 = x0 = w_ - 1;
      x = x0;
    } else {
      x1 = x0 + 1;
    }
    const double ly = y - y0, lx = x - x0, hy = 1.0 - ly, hx = 1.0 - lx;
    auto idx = [&](int yy, int xx) { return static_cast<Eigen::Index>(yy) * w_ + xx; };
    taps.push_back({idx(y0, x0), w * hy * hx});
    taps.push_back({idx(y0, x1), w * hy * lx});
    taps.push_back({idx(y1, x0), w * ly * hx});
    taps.push_back({idx(y1, x1), w * ly * lx});
  }

  void build_taps(const std::vector<Box>& rois) {
    const int bins = p_ * p_;
    taps_.assign(rois.size() * bins, {});
    const double inv = 1.0 / (s_ * s_);
    for (std::size_t r = 0; r < rois.size(); ++r) {
      const auto& b = rois[r];
      const double sx = b.x1 * scale_, sy = b.y1 * scale_;
      const double rw = std::max(b.x2 * scale_ - sx, 1.0), rh = std::max(b.y2 * scale_ - sy, 1.0);
      const double bw = rw / p_, bh = rh / p_;
      for (int py = 0; py < p_; ++py)
        for (int px = 0; px < p_; ++px) {
          auto& taps = taps_[r * bins + py * p_ + px];
          for (int iy = 0; iy < s_; ++iy)
            for (int ix = 0; ix < s_; ++ix)
              add_sample(taps, sy + py * bh + (iy + 0.5) * bh / s_, sx + px * bw + (ix + 0.5) * bw / s_, inv);
        }
    }
  }

  int p_;
  double scale_;
  int s_;
  int c_ = 0, h_ = 0, w_ = 0;
  std::vector<std::vector<Tap>> taps_;
};

}  // namespace benthic::nn
