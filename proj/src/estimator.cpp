#include "miliom/estimator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace miliom {

namespace {

double huber(double s, double delta) {
  double d2 = delta * delta;
  return s <= d2 ? s : 2.0 * delta * std::sqrt(s) - d2;
}

double huber_weight(double s, double delta) {
  double d2 = delta * delta;
  return s <= d2 ? 1.0 : delta / std::sqrt(s);
}

Mat15 whitener(const Mat15& cov) {
  // Noise-free observations produce a singular covariance; a tiny diagonal
  // floor keeps the factorization defined without touching realistic scales.
  Mat15 floored = cov + Mat15::Identity() * 1e-14;
  return Mat15(floored.llt().matrixL()).inverse();
}

}  // namespace

std::optional<std::pair<WindowState, CfcCloud>> slide_window(SlidingWindow& window, double t_new,
                                                             CfcCloud cloud,
                                                             PreintObservation preint,
                                                             const NavState& seed) {
  if (!window.states.empty()) {
    double gap = t_new - window.states.back().t;
    if (gap <= 0.0) throw std::invalid_argument("window timestamps must increase");
    if (std::abs(preint.dt - gap) > 1e-6)
      throw std::invalid_argument("preintegration span does not bridge the new state");
    window.preints.push_back(std::move(preint));
  }
  window.states.push_back({t_new, seed});
  window.clouds.push_back(std::move(cloud));

  if (window.states.size() <= window.capacity) return std::nullopt;
  auto dropped = std::make_pair(window.states.front(), std::move(window.clouds.front()));
  window.states.erase(window.states.begin());
  window.clouds.erase(window.clouds.begin());
  window.preints.erase(window.preints.begin());
  return dropped;
}

JointProblem build_problem(const SlidingWindow& window, const std::vector<FmmSet>& fmm,
                           const Vec3& gravity, const SolverConfig& cfg) {
  if (fmm.size() != window.states.size())
    throw std::invalid_argument("one FmmSet per window state required");
  JointProblem problem;
  problem.num_states = static_cast<int>(window.states.size());
  problem.gravity = gravity;
  problem.huber_delta = cfg.huber_delta;
  problem.lidar_sigma = cfg.lidar_sigma;

  for (size_t i = 0; i < window.preints.size(); ++i) {
    ImuFactor factor;
    factor.state_a = static_cast<int>(i);
    factor.state_b = static_cast<int>(i + 1);
    factor.obs = window.preints[i];
    factor.sqrt_info = whitener(factor.obs.cov);
    problem.imu_factors.push_back(std::move(factor));
  }
  std::vector<int> lidar_count(window.states.size(), 0);
  for (size_t m = 0; m < fmm.size(); ++m) {
    for (const auto& coeff : fmm[m].coeffs) {
      problem.lidar_factors.push_back({static_cast<int>(m), coeff});
      ++lidar_count[m];
    }
  }
  std::vector<bool> anchored(window.states.size(), false);
  for (const auto& f : problem.imu_factors) anchored[f.state_a] = anchored[f.state_b] = true;
  for (size_t m = 0; m < window.states.size(); ++m)
    if (lidar_count[m] == 0 && !anchored[m]) problem.under_constrained.push_back(m);
  return problem;
}

double evaluate_cost(const JointProblem& problem, const std::vector<WindowState>& states,
                     std::vector<double>* per_factor) {
  if (per_factor) per_factor->clear();
  double total = 0.0;
  for (const auto& f : problem.imu_factors) {
    Vec15 r = f.sqrt_info * imu_residual(states[f.state_a].x, states[f.state_b].x, f.obs,
                                         problem.gravity);
    double term = r.squaredNorm();
    total += term;
    if (per_factor) per_factor->push_back(term);
  }
  for (const auto& f : problem.lidar_factors) {
    const NavState& x = states[f.state].x;
    double u = lidar_residual({x.q, x.p}, f.coeff) / problem.lidar_sigma;
    double term = huber(u * u, problem.huber_delta);
    total += term;
    if (per_factor) per_factor->push_back(term);
  }
  return total;
}

namespace {

void accumulate_normal_equations(const JointProblem& problem,
                                 const std::vector<WindowState>& states, Eigen::MatrixXd& H,
                                 Eigen::VectorXd& g) {
  const int n = problem.num_states * 15;
  H.setZero(n, n);
  g.setZero(n);
  for (const auto& f : problem.imu_factors) {
    ImuResidualJacobians jac;
    Vec15 r = imu_residual(states[f.state_a].x, states[f.state_b].x, f.obs, problem.gravity, &jac);
    Vec15 rw = f.sqrt_info * r;
    Mat15 ja = f.sqrt_info * jac.d_prev;
    Mat15 jb = f.sqrt_info * jac.d_curr;
    int a = f.state_a * 15, b = f.state_b * 15;
    H.block<15, 15>(a, a) += ja.transpose() * ja;
    H.block<15, 15>(b, b) += jb.transpose() * jb;
    H.block<15, 15>(a, b) += ja.transpose() * jb;
    H.block<15, 15>(b, a) += jb.transpose() * ja;
    g.segment<15>(a) += ja.transpose() * rw;
    g.segment<15>(b) += jb.transpose() * rw;
  }
  for (const auto& f : problem.lidar_factors) {
    const NavState& x = states[f.state].x;
    Eigen::Matrix<double, 1, 6> row;
    double u = lidar_residual({x.q, x.p}, f.coeff, &row) / problem.lidar_sigma;
    row /= problem.lidar_sigma;
    double w = huber_weight(u * u, problem.huber_delta);
    int base = f.state * 15;
    Eigen::Matrix<double, 6, 6> block = w * row.transpose() * row;
    H.block<6, 6>(base, base) += block;
    g.segment<6>(base) += w * row.transpose() * u;
  }
}

std::vector<WindowState> apply_step(const std::vector<WindowState>& states,
                                    const Eigen::VectorXd& delta) {
  std::vector<WindowState> out = states;
  for (size_t i = 0; i < out.size(); ++i)
    out[i].x = boxplus(out[i].x, Vec15(delta.segment<15>(static_cast<int>(i) * 15)));
  return out;
}

}  // namespace

OptimizeReport optimize(const JointProblem& problem, SlidingWindow& window,
                        const SolverConfig& cfg) {
  OptimizeReport report;
  if (problem.num_states != static_cast<int>(window.states.size()))
    throw std::invalid_argument("problem and window sizes differ");
  double cost = evaluate_cost(problem, window.states);
  report.initial_cost = report.final_cost = cost;
  if (!std::isfinite(cost)) {
    report.aborted_non_finite = true;
    return report;
  }

  const int n = problem.num_states * 15;
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd g(n);
  double lambda = cfg.initial_lambda;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    accumulate_normal_equations(problem, window.states, H, g);
    if (g.lpNorm<Eigen::Infinity>() <= cfg.gradient_tolerance) {
      report.converged = true;
      break;
    }
    Eigen::MatrixXd damped = H;
    damped.diagonal() += lambda * H.diagonal().cwiseMax(1e-12);
    Eigen::VectorXd delta = damped.ldlt().solve(-g);
    ++report.iterations;
    if (!delta.allFinite()) {
      lambda *= 10.0;
      continue;
    }
    if (delta.lpNorm<Eigen::Infinity>() <= cfg.step_tolerance) {
      report.converged = true;
      break;
    }
    auto candidate = apply_step(window.states, delta);
    double new_cost = evaluate_cost(problem, candidate);
    if (std::isfinite(new_cost) && new_cost < cost) {
      window.states = std::move(candidate);
      double decrease = (cost - new_cost) / std::max(cost, 1e-300);
      cost = new_cost;
      report.accepted_costs.push_back(cost);
      lambda = std::max(lambda / 3.0, 1e-12);
      if (decrease < cfg.function_tolerance) {
        report.converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
    }
  }
  report.final_cost = cost;
  return report;
}

Eigen::MatrixXd gauss_newton_hessian(const JointProblem& problem,
                                     const std::vector<WindowState>& states) {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  accumulate_normal_equations(problem, states, H, g);
  return H;
}

NearNullDirection position_near_null_direction(const Eigen::MatrixXd& hessian, int num_states) {
  const int n = num_states * 15;
  if (hessian.rows() != n || hessian.cols() != n)
    throw std::invalid_argument("hessian size does not match state count");
  std::vector<int> pos, rest;
  for (int i = 0; i < num_states; ++i) {
    for (int c = 0; c < 15; ++c) {
      int col = i * 15 + c;
      (c >= 3 && c < 6 ? pos : rest).push_back(col);
    }
  }
  Eigen::MatrixXd Hpp(pos.size(), pos.size()), Hpr(pos.size(), rest.size()),
      Hrr(rest.size(), rest.size());
  for (size_t a = 0; a < pos.size(); ++a) {
    for (size_t b = 0; b < pos.size(); ++b) Hpp(a, b) = hessian(pos[a], pos[b]);
    for (size_t b = 0; b < rest.size(); ++b) Hpr(a, b) = hessian(pos[a], rest[b]);
  }
  for (size_t a = 0; a < rest.size(); ++a)
    for (size_t b = 0; b < rest.size(); ++b) Hrr(a, b) = hessian(rest[a], rest[b]);
  double reg = 1e-9 * std::max(1.0, Hrr.diagonal().maxCoeff());
  Hrr.diagonal().array() += reg;
  Eigen::MatrixXd schur = Hpp - Hpr * Hrr.ldlt().solve(Hpr.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(schur);
  NearNullDirection out;
  out.smallest = eig.eigenvalues()(0);
  out.second = eig.eigenvalues()(1);
  Eigen::VectorXd v = eig.eigenvectors().col(0);
  Vec3 dir = Vec3::Zero();
  for (int i = 0; i < num_states; ++i) dir += v.segment<3>(i * 3);
  out.direction = dir.norm() > 0 ? Vec3(dir / dir.norm()) : Vec3::Zero();
  return out;
}

Mat3 common_translation_hessian(const Eigen::MatrixXd& hessian, int num_states) {
  Mat3 out = Mat3::Zero();
  for (int i = 0; i < num_states; ++i)
    for (int j = 0; j < num_states; ++j) out += hessian.block<3, 3>(i * 15 + 3, j * 15 + 3);
  return out;
}

PropagatedStates predict(const NavState& latest, double t_latest, double t_query,
                         const std::vector<ImuSample>& samples, const Vec3& gravity) {
  if (t_query < t_latest) throw std::invalid_argument("prediction target precedes the state");
  auto span = slice_imu(samples, t_latest, t_query);
  return propagate(latest, span, gravity);
}

}  // namespace miliom
