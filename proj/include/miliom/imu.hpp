/// @file imu.hpp
/// IMU preintegration, forward propagation, and the two-state inertial residual.
#pragma once

#include <vector>

#include "miliom/geometry.hpp"

namespace miliom {

using Vec15 = Eigen::Matrix<double, 15, 1>;
using Mat15 = Eigen::Matrix<double, 15, 15>;

struct ImuSample {
  double t = 0.0;
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

/// Full navigation state: attitude, position, velocity, gyro and accel bias.
struct NavState {
  UnitQuaternion q;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();
};

/// Continuous-time noise densities; discretized per sample interval.
struct ImuNoise {
  double gyro_sigma = 1e-3;      // rad/s/sqrt(Hz)
  double accel_sigma = 1e-2;     // m/s^2/sqrt(Hz)
  double gyro_bias_rw = 1e-5;    // rad/s^2/sqrt(Hz)
  double accel_bias_rw = 1e-5;   // m/s^3/sqrt(Hz)
};

/// Gravity-free preintegrated motion over one inter-state interval, with the
/// covariance and bias Jacobians of its error state.
/// Error/residual block order: alpha(0), beta(3), theta(6), bg(9), ba(12).
struct PreintObservation {
  double dt = 0.0;
  Vec3 alpha = Vec3::Zero();
  Vec3 beta = Vec3::Zero();
  UnitQuaternion gamma;
  Mat15 cov = Mat15::Zero();
  Mat3 d_alpha_d_bg = Mat3::Zero();
  Mat3 d_alpha_d_ba = Mat3::Zero();
  Mat3 d_beta_d_bg = Mat3::Zero();
  Mat3 d_beta_d_ba = Mat3::Zero();
  Mat3 d_gamma_d_bg = Mat3::Zero();
  Vec3 bg_ref = Vec3::Zero();
  Vec3 ba_ref = Vec3::Zero();
};

struct TimedState {
  double t = 0.0;
  UnitQuaternion q;
  Vec3 p = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

/// Dense forward-propagated states, one per IMU sample time.
struct PropagatedStates {
  std::vector<TimedState> states;

  /// Interpolated state at t (slerp attitude, linear position/velocity).
  /// t must lie within the propagated span up to 1 us of slack.
  TimedState state_at(double t) const;
  /// Pose of the body at t_b expressed in the body frame at t_a.
  RigidTransform relative_transform(double t_a, double t_b) const;
};

/// Extracts the samples covering [t0, t1], synthesizing linearly interpolated
/// boundary samples at exactly t0 and t1. The input must cover the interval.
std::vector<ImuSample> slice_imu(const std::vector<ImuSample>& samples, double t0, double t1);

/// Zero-order-hold preintegration of N samples over their N-1 intervals,
/// with measurements corrected by the reference biases. Seed-independent.
PreintObservation preintegrate(const std::vector<ImuSample>& samples, const Vec3& bg_ref,
                               const Vec3& ba_ref, const ImuNoise& noise);

/// Zero-order-hold propagation from a seed state taken at samples.front().t.
/// gravity is the physical gravity acceleration vector (default points -z).
PropagatedStates propagate(const NavState& seed, const std::vector<ImuSample>& samples,
                           const Vec3& gravity);

struct ImuResidualJacobians {
  Mat15 d_prev = Mat15::Zero();  // columns: theta(0), p(3), v(6), bg(9), ba(12)
  Mat15 d_curr = Mat15::Zero();
};

/// 15-dim preintegration residual between consecutive states, first-order
/// bias-corrected around the observation's reference biases.
Vec15 imu_residual(const NavState& prev, const NavState& curr, const PreintObservation& obs,
                   const Vec3& gravity, ImuResidualJacobians* jac = nullptr);

/// Applies a 15-dim error-state increment: q <- q Exp(dtheta), additive rest.
NavState boxplus(const NavState& x, const Vec15& delta);

}  // namespace miliom
