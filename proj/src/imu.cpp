#include "miliom/imu.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace miliom {

namespace {

ImuSample lerp_sample(const ImuSample& a, const ImuSample& b, double t) {
  if (b.t <= a.t) return {t, a.gyro, a.accel};
  double s = (t - a.t) / (b.t - a.t);
  return {t, (1.0 - s) * a.gyro + s * b.gyro, (1.0 - s) * a.accel + s * b.accel};
}

}  // namespace

std::vector<ImuSample> slice_imu(const std::vector<ImuSample>& samples, double t0, double t1) {
  constexpr double kSlack = 1e-6;
  if (samples.empty()) throw std::invalid_argument("slice_imu: empty sample batch");
  if (t1 < t0) throw std::invalid_argument("slice_imu: reversed interval");
  if (samples.front().t > t0 + kSlack || samples.back().t < t1 - kSlack)
    throw std::invalid_argument("slice_imu: samples do not cover the interval");

  std::vector<ImuSample> out;
  auto cmp = [](const ImuSample& s, double t) { return s.t < t; };
  auto lo = std::lower_bound(samples.begin(), samples.end(), t0, cmp);
  if (lo == samples.end()) lo = samples.end() - 1;
  if (lo->t > t0 && lo != samples.begin()) {
    out.push_back(lerp_sample(*(lo - 1), *lo, t0));
  } else if (lo->t > t0) {
    out.push_back({t0, lo->gyro, lo->accel});
  }
  for (auto it = lo; it != samples.end() && it->t < t1; ++it) {
    if (it->t >= t0) out.push_back(*it);
  }
  auto hi = std::lower_bound(samples.begin(), samples.end(), t1, cmp);
  if (hi != samples.end() && hi->t == t1) {
    out.push_back(*hi);
  } else if (hi == samples.end()) {
    out.push_back({t1, samples.back().gyro, samples.back().accel});
  } else if (hi != samples.begin()) {
    out.push_back(lerp_sample(*(hi - 1), *hi, t1));
  }
  return out;
}

PreintObservation preintegrate(const std::vector<ImuSample>& samples, const Vec3& bg_ref,
                               const Vec3& ba_ref, const ImuNoise& noise) {
  if (samples.empty()) throw std::invalid_argument("preintegrate: empty sample batch");
  for (size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].t < samples[i - 1].t)
      throw std::invalid_argument("preintegrate: non-monotone timestamps");
  }

  PreintObservation obs;
  obs.bg_ref = bg_ref;
  obs.ba_ref = ba_ref;
  Mat15 A = Mat15::Identity();  // accumulated error-state transition

  for (size_t m = 0; m + 1 < samples.size(); ++m) {
    double dt = samples[m + 1].t - samples[m].t;
    if (dt <= 0.0) continue;
    Vec3 w = samples[m].gyro - bg_ref;
    Vec3 a = samples[m].accel - ba_ref;
    Mat3 R = obs.gamma.matrix();
    Vec3 Ra = R * a;

    Vec3 wdt = dt * w;
    Mat3 Jr = so3_right_jacobian(wdt);
    Mat3 Rstep_t = exp_rotvec(wdt).matrix().transpose();

    Mat15 F = Mat15::Identity();
    F.block<3, 3>(0, 3) = dt * Mat3::Identity();
    F.block<3, 3>(0, 6) = -0.5 * dt * dt * R * skew(a);
    F.block<3, 3>(0, 12) = -0.5 * dt * dt * R;
    F.block<3, 3>(3, 6) = -dt * R * skew(a);
    F.block<3, 3>(3, 12) = -dt * R;
    F.block<3, 3>(6, 6) = Rstep_t;
    F.block<3, 3>(6, 9) = -dt * Jr;

    Eigen::Matrix<double, 15, 12> G = Eigen::Matrix<double, 15, 12>::Zero();
    G.block<3, 3>(0, 0) = 0.5 * dt * dt * R;
    G.block<3, 3>(3, 0) = dt * R;
    G.block<3, 3>(6, 3) = -dt * Jr;
    G.block<3, 3>(9, 6) = Mat3::Identity();
    G.block<3, 3>(12, 9) = Mat3::Identity();

    Eigen::Matrix<double, 12, 1> qd;
    qd.segment<3>(0).setConstant(noise.accel_sigma * noise.accel_sigma / dt);
    qd.segment<3>(3).setConstant(noise.gyro_sigma * noise.gyro_sigma / dt);
    qd.segment<3>(6).setConstant(noise.gyro_bias_rw * noise.gyro_bias_rw * dt);
    qd.segment<3>(9).setConstant(noise.accel_bias_rw * noise.accel_bias_rw * dt);

    obs.cov = F * obs.cov * F.transpose() + G * qd.asDiagonal() * G.transpose();
    A = F * A;

    obs.alpha += dt * obs.beta + 0.5 * dt * dt * Ra;
    obs.beta += dt * Ra;
    obs.gamma = obs.gamma * exp_rotvec(wdt);
    obs.dt += dt;
  }

  obs.d_alpha_d_bg = A.block<3, 3>(0, 9);
  obs.d_alpha_d_ba = A.block<3, 3>(0, 12);
  obs.d_beta_d_bg = A.block<3, 3>(3, 9);
  obs.d_beta_d_ba = A.block<3, 3>(3, 12);
  obs.d_gamma_d_bg = A.block<3, 3>(6, 9);
  return obs;
}

PropagatedStates propagate(const NavState& seed, const std::vector<ImuSample>& samples,
                           const Vec3& gravity) {
  if (samples.empty()) throw std::invalid_argument("propagate: empty sample batch");
  PropagatedStates out;
  out.states.reserve(samples.size());
  out.states.push_back({samples.front().t, seed.q, seed.p, seed.v});
  for (size_t m = 0; m + 1 < samples.size(); ++m) {
    double dt = samples[m + 1].t - samples[m].t;
    const TimedState& s = out.states.back();
    if (dt <= 0.0) {
      out.states.push_back({samples[m + 1].t, s.q, s.p, s.v});
      continue;
    }
    Vec3 w = samples[m].gyro - seed.bg;
    Vec3 a = samples[m].accel - seed.ba;
    Vec3 acc_w = s.q.rotate(a) + gravity;
    TimedState next;
    next.t = samples[m + 1].t;
    next.q = s.q * exp_rotvec(dt * w);
    next.v = s.v + dt * acc_w;
    next.p = s.p + dt * s.v + 0.5 * dt * dt * acc_w;
    out.states.push_back(next);
  }
  return out;
}

TimedState PropagatedStates::state_at(double t) const {
  constexpr double kSlack = 1e-6;
  if (states.empty()) throw std::logic_error("state_at: empty propagation");
  if (t <= states.front().t + 1e-12) {
    if (t < states.front().t - kSlack) throw std::invalid_argument("state_at: before span");
    return states.front();
  }
  if (t >= states.back().t - 1e-12) {
    if (t > states.back().t + kSlack) throw std::invalid_argument("state_at: after span");
    return states.back();
  }
  auto it = std::lower_bound(states.begin(), states.end(), t,
                             [](const TimedState& s, double tt) { return s.t < tt; });
  const TimedState& b = *it;
  const TimedState& a = *(it - 1);
  if (b.t - a.t <= 0.0) return b;
  double s = (t - a.t) / (b.t - a.t);
  TimedState r;
  r.t = t;
  r.q = slerp(a.q, b.q, s);
  r.p = (1.0 - s) * a.p + s * b.p;
  r.v = (1.0 - s) * a.v + s * b.v;
  return r;
}

RigidTransform PropagatedStates::relative_transform(double t_a, double t_b) const {
  TimedState sa = state_at(t_a);
  TimedState sb = state_at(t_b);
  UnitQuaternion qi = sa.q.inverse();
  return {qi * sb.q, qi.rotate(sb.p - sa.p)};
}

Vec15 imu_residual(const NavState& prev, const NavState& curr, const PreintObservation& obs,
                   const Vec3& gravity, ImuResidualJacobians* jac) {
  double dt = obs.dt;
  Vec3 dbg = prev.bg - obs.bg_ref;
  Vec3 dba = prev.ba - obs.ba_ref;

  Vec3 alpha_c = obs.alpha + obs.d_alpha_d_bg * dbg + obs.d_alpha_d_ba * dba;
  Vec3 beta_c = obs.beta + obs.d_beta_d_bg * dbg + obs.d_beta_d_ba * dba;
  Vec3 gamma_step = obs.d_gamma_d_bg * dbg;
  UnitQuaternion gamma_c = obs.gamma * exp_rotvec(gamma_step);

  Mat3 R1t = prev.q.matrix().transpose();
  Vec3 dp = curr.p - prev.p - prev.v * dt - 0.5 * dt * dt * gravity;
  Vec3 dv = curr.v - prev.v - dt * gravity;

  Vec3 eps = log_quat(gamma_c.inverse() * (prev.q.inverse() * curr.q));

  Vec15 r;
  r.segment<3>(0) = R1t * dp - alpha_c;
  r.segment<3>(3) = R1t * dv - beta_c;
  r.segment<3>(6) = eps;
  r.segment<3>(9) = curr.bg - prev.bg;
  r.segment<3>(12) = curr.ba - prev.ba;

  if (jac) {
    Mat3 Jl_inv = so3_right_jacobian_inv(-eps);  // left-Jacobian inverse at eps
    Mat3 Jr_inv = so3_right_jacobian_inv(eps);

    Mat15& J1 = jac->d_prev;
    Mat15& J2 = jac->d_curr;
    J1.setZero();
    J2.setZero();

    J1.block<3, 3>(0, 0) = skew(R1t * dp);
    J1.block<3, 3>(0, 3) = -R1t;
    J1.block<3, 3>(0, 6) = -dt * R1t;
    J1.block<3, 3>(0, 9) = -obs.d_alpha_d_bg;
    J1.block<3, 3>(0, 12) = -obs.d_alpha_d_ba;
    J1.block<3, 3>(3, 0) = skew(R1t * dv);
    J1.block<3, 3>(3, 6) = -R1t;
    J1.block<3, 3>(3, 9) = -obs.d_beta_d_bg;
    J1.block<3, 3>(3, 12) = -obs.d_beta_d_ba;
    J1.block<3, 3>(6, 0) = -Jl_inv * gamma_c.matrix().transpose();
    J1.block<3, 3>(6, 9) = -Jl_inv * so3_right_jacobian(gamma_step) * obs.d_gamma_d_bg;
    J1.block<3, 3>(9, 9) = -Mat3::Identity();
    J1.block<3, 3>(12, 12) = -Mat3::Identity();

    J2.block<3, 3>(0, 3) = R1t;
    J2.block<3, 3>(3, 6) = R1t;
    J2.block<3, 3>(6, 0) = Jr_inv;
    J2.block<3, 3>(9, 9) = Mat3::Identity();
    J2.block<3, 3>(12, 12) = Mat3::Identity();
  }
  return r;
}

NavState boxplus(const NavState& x, const Vec15& delta) {
  NavState out = x;
  out.q = x.q * exp_rotvec(delta.segment<3>(0));
  out.p = x.p + delta.segment<3>(3);
  out.v = x.v + delta.segment<3>(6);
  out.bg = x.bg + delta.segment<3>(9);
  out.ba = x.ba + delta.segment<3>(12);
  return out;
}

}  // namespace miliom
