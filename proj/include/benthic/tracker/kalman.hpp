#pragma once

// Constant-velocity Kalman filter over (cx, cy, aspect, height) with noise
// proportional to box height.

#include <Eigen/Dense>

#include "benthic/types.hpp"

namespace benthic {

using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat8 = Eigen::Matrix<double, 8, 8>;
using Vec4 = Eigen::Matrix<double, 4, 1>;
using Mat4 = Eigen::Matrix<double, 4, 4>;
using Mat48 = Eigen::Matrix<double, 4, 8>;

struct KalmanState {
  Vec8 mean = Vec8::Zero();
  Mat8 covariance = Mat8::Identity();
};

struct KalmanParams {
  double std_weight_position = 1.0 / 20;
  double std_weight_velocity = 1.0 / 160;
  // Aspect-ratio noise is absolute, not height-scaled. Boxes clipped at the
  // top or bottom border change aspect fast, hence 10x the pedestrian value.
  double std_aspect = 1e-1;
  double std_aspect_velocity = 1e-5;
  double std_aspect_measurement = 1e-1;
};

inline Vec4 to_xyah(const Box& b) {
  return {b.cx(), b.cy(), b.width() / b.height(), b.height()};
}

inline Box from_xyah(const Vec8& m) {
  const double h = m(3), w = m(2) * h;
  return {m(0) - w / 2, m(1) - h / 2, m(0) + w / 2, m(1) + h / 2};
}

inline Mat8 transition_matrix() {
  Mat8 f = Mat8::Identity();
  for (int i = 0; i < 4; ++i) f(i, i + 4) = 1.0;
  return f;
}

inline Mat48 measurement_matrix() {
  Mat48 h = Mat48::Zero();
  for (int i = 0; i < 4; ++i) h(i, i) = 1.0;
  return h;
}

inline KalmanState kalman_initiate(const Vec4& z, const KalmanParams& p = {}) {
  KalmanState s;
  s.mean.head<4>() = z;
  const double h = z(3), sp = p.std_weight_position, sv = p.std_weight_velocity;
  Vec8 sd;
  sd << 2 * sp * h, 2 * sp * h, p.std_aspect, 2 * sp * h, 10 * sv * h, 10 * sv * h, p.std_aspect_velocity, 10 * sv * h;
  s.covariance = sd.cwiseAbs2().asDiagonal();
  return s;
}

inline Mat8 process_noise(const Vec8& mean, const KalmanParams& p) {
  const double h = mean(3), sp = p.std_weight_position, sv = p.std_weight_velocity;
  Vec8 sd;
  sd << sp * h, sp * h, p.std_aspect, sp * h, sv * h, sv * h, p.std_aspect_velocity, sv * h;
  return sd.cwiseAbs2().asDiagonal();
}

inline Mat4 measurement_noise(const Vec8& mean, const KalmanParams& p) {
  const double h = mean(3), sp = p.std_weight_position;
  Vec4 sd;
  sd << sp * h, sp * h, p.std_aspect_measurement, sp * h;
  return sd.cwiseAbs2().asDiagonal();
}

inline void symmetrize(Mat8& m) { m = 0.5 * (m + m.transpose()).eval(); }

/// x' = F x, P' = F P F^T + Q.
inline KalmanState kalman_predict(const KalmanState& s, const KalmanParams& p = {}) {
  const Mat8 f = transition_matrix();
  KalmanState out;
  out.mean = f * s.mean;
  out.covariance = f * s.covariance * f.transpose() + process_noise(s.mean, p);
  symmetrize(out.covariance);
  return out;
}

/// Standard gain update against a measured box.
inline KalmanState kalman_update(const KalmanState& s, const Box& measured, const KalmanParams& p = {}) {
  if (!measured.valid()) throw DataError("invalid measurement box");
  const Mat48 hm = measurement_matrix();
  const Mat4 innovation_cov = hm * s.covariance * hm.transpose() + measurement_noise(s.mean, p);
  const Eigen::LLT<Mat4> llt(innovation_cov);
  if (llt.info() != Eigen::Success) throw NumericError("singular innovation covariance");
  const Eigen::Matrix<double, 8, 4> pht = s.covariance * hm.transpose();
  const Eigen::Matrix<double, 8, 4> gain = llt.solve(pht.transpose()).transpose();
  KalmanState out;
  out.mean = s.mean + gain * (to_xyah(measured) - hm * s.mean);
  out.covariance = s.covariance - gain * innovation_cov * gain.transpose();
  symmetrize(out.covariance);
  return out;
}

}  // namespace benthic
