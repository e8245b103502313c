#ifndef PSLAM_PHOTOMETRIC_HPP
#define PSLAM_PHOTOMETRIC_HPP

#include <Eigen/Core>

#include <optional>

#include "pslam/geometry.hpp"
#include "pslam/image.hpp"
#include "pslam/robust.hpp"

namespace pslam {

// Per-frame affine brightness transfer: exposure scale e^a and offset b.
struct AffineBrightness {
  double a = 0.0;
  double b = 0.0;
};

// One frame as the photometric residual sees it: one pyramid level image,
// the absolute pose (world from camera) and the brightness parameters.
struct FrameView {
  const GrayImage* image = nullptr;
  SE3d pose;
  AffineBrightness affine;
};

// Evaluation of a single patch-pixel residual, optionally with the
// analytic partials under left-composed pose increments.
//
// r = (I_i[u] - b_i) - e^{a_i - a_j} (I_j[u'] - b_j)
// u' = pi(T_j^{-1} T_i pi^{-1}(u, rho))
struct ResidualEval {
  bool valid = false;
  double residual = 0.0;
  double gradient_weight = 1.0;        // w_g of the host patch pixel
  Eigen::Vector2d target_pixel = Eigen::Vector2d::Zero();
  double target_intensity = 0.0;

  Eigen::Matrix<double, 1, 6> j_host_pose = Eigen::Matrix<double, 1, 6>::Zero();
  Eigen::Matrix<double, 1, 6> j_target_pose = Eigen::Matrix<double, 1, 6>::Zero();
  double j_rho = 0.0;
  // Order: d/d a_i, d/d b_i, d/d a_j, d/d b_j.
  Eigen::Matrix<double, 1, 4> j_affine = Eigen::Matrix<double, 1, 4>::Zero();
};

// w_g = c^2 / (c^2 + |grad|^2), in (0, 1].
inline double gradient_weight(const Eigen::Vector2d& grad, double c) {
  const double c2 = c * c;
  return c2 / (c2 + grad.squaredNorm());
}

// Single patch-pixel residual with precomputed T_{j,i} = T_j^{-1} T_i.
// Invalid evaluations are reported through the validity flag.
ResidualEval residual_at(const FrameView& host, const FrameView& target,
                         const SE3d& target_from_host, const Camerad& cam,
                         const Eigen::Vector2d& point_pixel, double rho,
                         const Eigen::Vector2i& offset, double grad_weight_c,
                         bool with_jacobians);

inline ResidualEval residual(const FrameView& host, const FrameView& target,
                             const Camerad& cam, const Eigen::Vector2d& point_pixel,
                             double rho, const Eigen::Vector2i& offset,
                             double grad_weight_c = 50.0) {
  return residual_at(host, target, relative(target.pose, host.pose), cam, point_pixel,
                     rho, offset, grad_weight_c, false);
}

inline ResidualEval residual_jacobian(const FrameView& host, const FrameView& target,
                                      const Camerad& cam,
                                      const Eigen::Vector2d& point_pixel, double rho,
                                      const Eigen::Vector2i& offset,
                                      double grad_weight_c = 50.0) {
  return residual_at(host, target, relative(target.pose, host.pose), cam, point_pixel,
                     rho, offset, grad_weight_c, true);
}

struct PointEnergy {
  double energy = 0.0;
  int valid_count = 0;
};

// E_p = sum over the patch of w_r(r_k) w_g(k) r_k^2. Returns nullopt when
// every patch pixel is invalid.
std::optional<PointEnergy> point_energy(const FrameView& host, const FrameView& target,
                                        const Camerad& cam,
                                        const Eigen::Vector2d& point_pixel, double rho,
                                        const ErrorModel& model, double grad_weight_c);

}  // namespace pslam

#endif
