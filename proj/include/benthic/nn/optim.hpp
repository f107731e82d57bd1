#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "benthic/nn/layers.hpp"

namespace benthic::nn {

template <typename T>
class Adam {
 public:
  Adam(ParamList<T> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
       double weight_decay = 0)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
    for (auto* p : params_) {
      m_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void set_lr(double lr) { lr_ = lr; }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      Mat<T> g = p.grad;
      if (wd_ != 0) g += static_cast<T>(wd_) * p.value;
      m_[i] = static_cast<T>(b1_) * m_[i] + static_cast<T>(1 - b1_) * g;
      v_[i] = static_cast<T>(b2_) * v_[i] + static_cast<T>(1 - b2_) * g.cwiseProduct(g);
      p.value.array() -= static_cast<T>(lr_ / c1) * m_[i].array() /
                         ((v_[i].array() / static_cast<T>(c2)).sqrt() + static_cast<T>(eps_));
    }
  }

 private:
  ParamList<T> params_;
  double lr_, b1_, b2_, eps_, wd_;
  long t_ = 0;
  std::vector<Mat<T>> m_, v_;
};

template <typename T>
class Sgd {
 public:
  Sgd(ParamList<T> params, double lr, double momentum = 0.9, double weight_decay = 1e-4)
      : params_(std::move(params)), lr_(lr), mom_(momentum), wd_(weight_decay) {
    for (auto* p : params_) buf_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
  }

  void set_lr(double lr) { lr_ = lr; }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      Mat<T> g = p.grad;
      if (wd_ != 0) g += static_cast<T>(wd_) * p.value;
      buf_[i] = static_cast<T>(mom_) * buf_[i] + g;
      p.value -= static_cast<T>(lr_) * buf_[i];
    }
  }

 private:
  ParamList<T> params_;
  double lr_, mom_, wd_;
  std::vector<Mat<T>> buf_;
};

// ---- weight (de)serialization ---------------------------------------------------
// Per parameter: name length, name bytes, rows, cols, values as float64.

template <typename T>
void write_params(std::ostream& out, const ParamList<T>& ps) {
  const auto n = static_cast<std::uint64_t>(ps.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (const auto* p : ps) {
    const auto len = static_cast<std::uint64_t>(p->name.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(p->name.data(), static_cast<std::streamsize>(len));
    const std::int64_t dims[2] = {p->value.rows(), p->value.cols()};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double v = static_cast<double>(p->value.data()[i]);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

template <typename T>
void read_params(std::istream& in, const ParamList<T>& ps) {
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || n != ps.size()) throw DataError("checkpoint parameter count mismatch");
  for (auto* p : ps) {
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > 4096) throw DataError("corrupt checkpoint");
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    std::int64_t dims[2] = {0, 0};
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in || name != p->name || dims[0] != p->value.rows() || dims[1] != p->value.cols())
      throw DataError("checkpoint parameter '" + name + "' does not match model '" + p->name + "'");
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      p->value.data()[i] = static_cast<T>(v);
    }
    if (!in) throw DataError("truncated checkpoint");
  }
}

}  // namespace benthic::nn
