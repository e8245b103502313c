#ifndef PSLAM_GEOMETRY_HPP
#define PSLAM_GEOMETRY_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <optional>
#include <stdexcept>

namespace pslam {

// se(3) twist ordering is (translational; rotational).
template <typename S>
using Twist = Eigen::Matrix<S, 6, 1>;

using Twistd = Twist<double>;

template <typename S>
Eigen::Matrix<S, 3, 3> skew(const Eigen::Matrix<S, 3, 1>& w) {
  Eigen::Matrix<S, 3, 3> W;
  W << S(0), -w.z(), w.y(), w.z(), S(0), -w.x(), -w.y(), w.x(), S(0);
  return W;
}

template <typename S>
class SE3 {
 public:
  using Mat3 = Eigen::Matrix<S, 3, 3>;
  using Vec3 = Eigen::Matrix<S, 3, 1>;

  SE3() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  SE3(const Mat3& R, const Vec3& t) : rotation_(R), translation_(t) {}

  static SE3 identity() { return SE3(); }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Mat3& rotation() { return rotation_; }
  Vec3& translation() { return translation_; }

  SE3 inverse() const {
    Mat3 Rt = rotation_.transpose();
    return SE3(Rt, -(Rt * translation_));
  }

  SE3 operator*(const SE3& rhs) const {
    return SE3(rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_);
  }

  Vec3 operator*(const Vec3& p) const { return rotation_ * p + translation_; }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

using SE3d = SE3<double>;

template <typename S>
class Sim3 {
 public:
  using Mat3 = Eigen::Matrix<S, 3, 3>;
  using Vec3 = Eigen::Matrix<S, 3, 1>;

  Sim3() : scale_(S(1)), rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Sim3(S s, const Mat3& R, const Vec3& t) : scale_(s), rotation_(R), translation_(t) {
    if (!(scale_ > S(0))) throw std::invalid_argument("Sim3: scale must be positive");
  }

  static Sim3 identity() { return Sim3(); }

  S scale() const { return scale_; }
  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Sim3 inverse() const {
    Mat3 Rt = rotation_.transpose();
    return Sim3(S(1) / scale_, Rt, -(Rt * translation_) / scale_);
  }

  Sim3 operator*(const Sim3& rhs) const {
    return Sim3(scale_ * rhs.scale_, rotation_ * rhs.rotation_,
                scale_ * (rotation_ * rhs.translation_) + translation_);
  }

  Vec3 operator*(const Vec3& p) const { return scale_ * (rotation_ * p) + translation_; }

 private:
  S scale_;
  Mat3 rotation_;
  Vec3 translation_;
};

using Sim3d = Sim3<double>;

// Pinhole camera. Principal point and pixel coordinates follow the
// convention that integer coordinates are pixel centers.
template <typename S>
struct Camera {
  S fx{0}, fy{0}, cx{0}, cy{0};
  int width{0}, height{0};

  Camera() = default;
  Camera(S fx_, S fy_, S cx_, S cy_, int w, int h)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(w), height(h) {}

  // Intrinsics of the pyramid level obtained by repeated 2x2 box
  // downsampling. The half pixel shift keeps projections aligned with
  // the coarse pixel centers.
  Camera at_level(int level) const {
    Camera c = *this;
    for (int l = 0; l < level; ++l) {
      c.fx *= S(0.5);
      c.fy *= S(0.5);
      c.cx = (c.cx + S(0.5)) * S(0.5) - S(0.5);
      c.cy = (c.cy + S(0.5)) * S(0.5) - S(0.5);
      c.width /= 2;
      c.height /= 2;
    }
    return c;
  }
};

using Camerad = Camera<double>;

template <typename S>
Eigen::Matrix<S, 3, 3> so3_exp(const Eigen::Matrix<S, 3, 1>& w) {
  using Mat3 = Eigen::Matrix<S, 3, 3>;
  const S theta = w.norm();
  const Mat3 W = skew(w);
  if (theta < S(1e-8)) {
    return Mat3::Identity() + W + S(0.5) * W * W;
  }
  const S theta2 = theta * theta;
  return Mat3::Identity() + std::sin(theta) / theta * W +
         (S(1) - std::cos(theta)) / theta2 * W * W;
}

template <typename S>
Eigen::Matrix<S, 3, 1> so3_log(const Eigen::Matrix<S, 3, 3>& R) {
  using Vec3 = Eigen::Matrix<S, 3, 1>;
  const S tr = R.trace();
  const S c = std::clamp((tr - S(1)) * S(0.5), S(-1), S(1));
  const S theta = std::acos(c);
  if (theta > S(M_PI) - S(1e-6)) {
    throw std::domain_error("so3_log: rotation angle at pi is degenerate");
  }
  Vec3 v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < S(1e-8)) {
    return S(0.5) * v + (theta * theta / S(12)) * S(0.5) * v;
  }
  return theta / (S(2) * std::sin(theta)) * v;
}

template <typename S>
SE3<S> se3_exp(const Twist<S>& xi) {
  using Mat3 = Eigen::Matrix<S, 3, 3>;
  using Vec3 = Eigen::Matrix<S, 3, 1>;
  const Vec3 v = xi.template head<3>();
  const Vec3 w = xi.template tail<3>();
  const S theta = w.norm();
  const Mat3 W = skew(w);
  Mat3 V;
  if (theta < S(1e-8)) {
    V = Mat3::Identity() + S(0.5) * W + W * W / S(6);
  } else {
    const S theta2 = theta * theta;
    V = Mat3::Identity() + (S(1) - std::cos(theta)) / theta2 * W +
        (theta - std::sin(theta)) / (theta2 * theta) * W * W;
  }
  return SE3<S>(so3_exp(w), V * v);
}

template <typename S>
Twist<S> se3_log(const SE3<S>& T) {
  using Mat3 = Eigen::Matrix<S, 3, 3>;
  using Vec3 = Eigen::Matrix<S, 3, 1>;
  const Vec3 w = so3_log(T.rotation());
  const S theta = w.norm();
  const Mat3 W = skew(w);
  Mat3 Vinv;
  if (theta < S(1e-8)) {
    Vinv = Mat3::Identity() - S(0.5) * W + W * W / S(12);
  } else {
    const S half = S(0.5) * theta;
    const S cot_half = std::cos(half) / std::sin(half);
    Vinv = Mat3::Identity() - S(0.5) * W +
           (S(1) - half * cot_half) / (theta * theta) * W * W;
  }
  Twist<S> xi;
  xi.template head<3>() = Vinv * T.translation();
  xi.template tail<3>() = w;
  return xi;
}

// T_j^{-1} * T_i: maps host camera coordinates into the target camera
// when poses are world-from-camera.
template <typename S>
SE3<S> relative(const SE3<S>& T_j, const SE3<S>& T_i) {
  return T_j.inverse() * T_i;
}

template <typename S>
std::optional<Eigen::Matrix<S, 2, 1>> project(const Camera<S>& cam,
                                              const Eigen::Matrix<S, 3, 1>& p) {
  if (!(p.z() > S(0))) return std::nullopt;
  const S inv_z = S(1) / p.z();
  return Eigen::Matrix<S, 2, 1>(cam.fx * p.x() * inv_z + cam.cx,
                                cam.fy * p.y() * inv_z + cam.cy);
}

template <typename S>
std::optional<Eigen::Matrix<S, 3, 1>> backproject(const Camera<S>& cam,
                                                  const Eigen::Matrix<S, 2, 1>& u, S rho) {
  if (!(rho > S(0))) return std::nullopt;
  const S inv_rho = S(1) / rho;
  return Eigen::Matrix<S, 3, 1>(inv_rho * (u.x() - cam.cx) / cam.fx,
                                inv_rho * (u.y() - cam.cy) / cam.fy, inv_rho);
}

// Unit ray through pixel u (z = 1 before normalization is not applied).
template <typename S>
Eigen::Matrix<S, 3, 1> pixel_ray(const Camera<S>& cam, const Eigen::Matrix<S, 2, 1>& u) {
  return Eigen::Matrix<S, 3, 1>((u.x() - cam.cx) / cam.fx, (u.y() - cam.cy) / cam.fy, S(1));
}

template <typename S>
Eigen::Matrix<S, 3, 1> sim3_apply(const Sim3<S>& s, const Eigen::Matrix<S, 3, 1>& p) {
  return s * p;
}

// d(pi(p)) / dp for the pinhole projection, 2x3.
template <typename S>
Eigen::Matrix<S, 2, 3> projection_jacobian(const Camera<S>& cam,
                                           const Eigen::Matrix<S, 3, 1>& p) {
  const S iz = S(1) / p.z();
  const S iz2 = iz * iz;
  Eigen::Matrix<S, 2, 3> J;
  J << cam.fx * iz, S(0), -cam.fx * p.x() * iz2, S(0), cam.fy * iz, -cam.fy * p.y() * iz2;
  return J;
}

}  // namespace pslam

#endif
