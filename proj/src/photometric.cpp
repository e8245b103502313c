#include "pslam/photometric.hpp"

#include <cmath>

namespace pslam {

namespace {

bool in_interior(const GrayImage& img, const Eigen::Vector2d& u) {
  return u.x() >= kInteriorMargin && u.y() >= kInteriorMargin &&
         u.x() <= img.width() - 1 - kInteriorMargin &&
         u.y() <= img.height() - 1 - kInteriorMargin;
}

}  // namespace

ResidualEval residual_at(const FrameView& host, const FrameView& target,
                         const SE3d& target_from_host, const Camerad& cam,
                         const Eigen::Vector2d& point_pixel, double rho,
                         const Eigen::Vector2i& offset, double grad_weight_c,
                         bool with_jacobians) {
  ResidualEval out;

  const Eigen::Vector2d u = point_pixel + offset.cast<double>();
  if (!in_interior(*host.image, u)) return out;

  const auto x_host = backproject(cam, u, rho);
  if (!x_host) return out;

  const Eigen::Vector3d p_target = target_from_host * *x_host;
  if (!(p_target.z() > 0.0)) return out;

  const auto u_target = project(cam, p_target);
  if (!u_target || !in_interior(*target.image, *u_target)) return out;

  const auto host_sample = sample_with_gradient(*host.image, u);
  if (!host_sample) return out;
  // The target gradient is only needed for the jacobians.
  Eigen::Vector2d target_grad = Eigen::Vector2d::Zero();
  double target_value = 0.0;
  if (with_jacobians) {
    const auto ts = sample_with_gradient(*target.image, *u_target);
    if (!ts) return out;
    target_value = ts->value;
    target_grad = ts->gradient;
  } else {
    const auto tv = sample_bilinear(*target.image, *u_target);
    if (!tv) return out;
    target_value = *tv;
  }

  const double scale = std::exp(host.affine.a - target.affine.a);
  const double target_term = target_value - target.affine.b;

  out.valid = true;
  out.residual = (host_sample->value - host.affine.b) - scale * target_term;
  out.gradient_weight = gradient_weight(host_sample->gradient, grad_weight_c);
  out.target_pixel = *u_target;
  out.target_intensity = target_value;

  if (!with_jacobians) return out;

  // d r / d p_target, through the target image gradient.
  const Eigen::Matrix<double, 2, 3> proj_jac = projection_jacobian(cam, p_target);
  const Eigen::Matrix<double, 1, 3> dr_dp =
      -scale * target_grad.transpose() * proj_jac;

  // Left-composed increments: T <- exp(delta) T on the absolute poses.
  const Eigen::Vector3d p_world = target.pose * p_target;
  const Eigen::Matrix3d Rjt = target.pose.rotation().transpose();
  Eigen::Matrix<double, 3, 6> dpw;  // d(exp(delta) p_world)/d delta
  dpw.leftCols<3>() = Eigen::Matrix3d::Identity();
  dpw.rightCols<3>() = -skew(p_world);

  out.j_host_pose = dr_dp * (Rjt * dpw);
  out.j_target_pose = -out.j_host_pose;

  const Eigen::Vector3d rotated_host = target_from_host.rotation() * *x_host;
  out.j_rho = dr_dp.dot(-rotated_host / rho);

  out.j_affine(0) = -scale * target_term;      // d/d a_i
  out.j_affine(1) = -1.0;                      // d/d b_i
  out.j_affine(2) = scale * target_term;       // d/d a_j
  out.j_affine(3) = scale;                     // d/d b_j

  return out;
}

std::optional<PointEnergy> point_energy(const FrameView& host, const FrameView& target,
                                        const Camerad& cam,
                                        const Eigen::Vector2d& point_pixel, double rho,
                                        const ErrorModel& model, double grad_weight_c) {
  const SE3d rel = relative(target.pose, host.pose);
  PointEnergy acc;
  for (const auto& offset : patch_pattern()) {
    const ResidualEval ev =
        residual_at(host, target, rel, cam, point_pixel, rho, offset, grad_weight_c, false);
    if (!ev.valid) continue;
    const double w = model.weight(ev.residual) * ev.gradient_weight;
    acc.energy += w * ev.residual * ev.residual;
    ++acc.valid_count;
  }
  if (acc.valid_count == 0) return std::nullopt;
  return acc;
}

}  // namespace pslam
