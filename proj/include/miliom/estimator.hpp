/// @file estimator.hpp
/// Sliding-window state estimation over IMU and lidar factors.
#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "miliom/cloud.hpp"
#include "miliom/imu.hpp"
#include "miliom/matching.hpp"

namespace miliom {

struct SolverConfig {
  int max_iterations = 8;
  double function_tolerance = 1e-6;   // relative cost decrease
  double gradient_tolerance = 1e-10;  // infinity norm of the gradient
  double step_tolerance = 1e-12;      // infinity norm of the update
  double initial_lambda = 1e-4;
  double huber_delta = 1.0;           // on the whitened squared lidar residual
  double lidar_sigma = 0.05;          // meters per weighted residual
};

struct WindowState {
  double t = 0.0;
  NavState x;
};

/// States X_w..X_k with their body-frame clouds and the preintegrated IMU
/// observation between each consecutive pair.
struct SlidingWindow {
  size_t capacity = 10;
  std::vector<WindowState> states;
  std::vector<CfcCloud> clouds;             // one per state
  std::vector<PreintObservation> preints;   // preints[i] spans states[i] -> states[i+1]

  bool full() const { return states.size() >= capacity; }
};

/// Appends a state seeded from propagation and drops the oldest beyond
/// capacity. Returns the dropped state and its cloud, if any.
std::optional<std::pair<WindowState, CfcCloud>> slide_window(SlidingWindow& window, double t_new,
                                                             CfcCloud cloud,
                                                             PreintObservation preint,
                                                             const NavState& seed);

struct ImuFactor {
  int state_a = 0;
  int state_b = 0;
  PreintObservation obs;
  Mat15 sqrt_info = Mat15::Identity();
};

struct LidarFactorTerm {
  int state = 0;
  FmmCoeff coeff;
};

/// Joint sliding-window problem: pairwise whitened IMU terms plus unary
/// Huber-robustified lidar terms.
struct JointProblem {
  int num_states = 0;
  Vec3 gravity = Vec3(0, 0, -9.81);
  double huber_delta = 1.0;
  double lidar_sigma = 0.05;
  std::vector<ImuFactor> imu_factors;
  std::vector<LidarFactorTerm> lidar_factors;
  std::vector<int> under_constrained;  // states with no lidar factor and no IMU anchor
};

JointProblem build_problem(const SlidingWindow& window, const std::vector<FmmSet>& fmm,
                           const Vec3& gravity, const SolverConfig& cfg);

/// Total robustified cost; per_factor receives one term per factor in problem
/// order (IMU factors first).
double evaluate_cost(const JointProblem& problem, const std::vector<WindowState>& states,
                     std::vector<double>* per_factor = nullptr);

struct OptimizeReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  bool aborted_non_finite = false;
  std::vector<double> accepted_costs;
};

/// Levenberg-Marquardt on the stacked error state (15 per state). Steps that
/// do not decrease the cost are rejected and raise the damping.
OptimizeReport optimize(const JointProblem& problem, SlidingWindow& window,
                        const SolverConfig& cfg);

/// Robust-weighted Gauss-Newton Hessian at the given states, 15 columns per
/// state ordered [dtheta, dp, dv, dbg, dba].
Eigen::MatrixXd gauss_newton_hessian(const JointProblem& problem,
                                     const std::vector<WindowState>& states);

struct NearNullDirection {
  double smallest = 0.0;
  double second = 0.0;
  Vec3 direction = Vec3::Zero();  // common position motion, unit norm
};

/// Schur complement of the Hessian onto the stacked position blocks; the
/// eigenvector of the smallest eigenvalue, summed per state, exposes the
/// weakest common translation direction.
NearNullDirection position_near_null_direction(const Eigen::MatrixXd& hessian, int num_states);

/// Restriction of the Hessian to a translation shared by every state.
Mat3 common_translation_hessian(const Eigen::MatrixXd& hessian, int num_states);

/// Forward prediction from the newest optimized state across an IMU stream
/// that covers [t_latest, t_query].
PropagatedStates predict(const NavState& latest, double t_latest, double t_query,
                         const std::vector<ImuSample>& samples,
                         const Vec3& gravity = Vec3(0, 0, -9.81));

}  // namespace miliom
