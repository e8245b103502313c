#ifndef PSLAM_SYNTHETIC_HPP
#define PSLAM_SYNTHETIC_HPP

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pslam/geometry.hpp"
#include "pslam/image.hpp"
#include "pslam/photometric.hpp"

namespace pslam {

// Procedural 3D texture: three sine gratings at incommensurate
// frequencies plus lattice value noise, so gradients are dense without
// image assets.
struct TextureParams {
  double base = 115.0;
  std::array<double, 3> amplitude{35.0, 20.0, 4.0};
  std::array<Eigen::Vector3d, 3> wave{Eigen::Vector3d(4.9, 1.4, 0.8),
                                      Eigen::Vector3d(-2.2, 9.6, 1.6),
                                      Eigen::Vector3d(14.7, -12.5, 7.1)};
  std::array<double, 3> phase{0.3, 1.9, 4.1};
  double noise_amplitude = 3.0;
  double noise_cell = 0.4;
  uint32_t noise_seed = 7;
};

double texture_value(const TextureParams& tex, const Eigen::Vector3d& p);

struct ScenePlane {
  Eigen::Vector3d point = Eigen::Vector3d(0, 0, 8);
  Eigen::Vector3d normal = Eigen::Vector3d(0, 0, -1);
  Eigen::Vector3d u_axis = Eigen::Vector3d(1, 0, 0);
  Eigen::Vector3d v_axis = Eigen::Vector3d(0, 1, 0);
  double half_u = 30.0;
  double half_v = 20.0;
  double albedo = 0.0;  // additive per-primitive brightness
};

struct SceneBox {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half = Eigen::Vector3d(0.5, 0.5, 0.5);
  double albedo = 0.0;
};

struct Scene {
  TextureParams texture;
  std::vector<ScenePlane> planes;
  std::vector<SceneBox> boxes;
  double scale = 1.0;
};

// Wall plus mid-depth rectangles spanning a camera path of the given
// extent along +x; with_occluders adds boxes that generate genuine
// photo-consistency violations.
Scene make_scene(double extent, bool with_occluders);

struct RenderResult {
  GrayImage image;
  Image<float> depth;  // z-depth in scene units
};

// Per-pixel ray casting with correct z-ordering. The rendered intensity is
// e^a * texture + b plus additive Gaussian noise, consistent with the
// affine residual model. Fails when the camera sits inside geometry or a
// pixel misses every primitive.
std::optional<RenderResult> render(const Scene& scene, const Camerad& cam,
                                   const SE3d& pose, const AffineBrightness& affine,
                                   double noise_sigma, uint64_t noise_seed = 0);

enum class TrajectoryKind { kLine, kOrbit, kRevisitLoop };

TrajectoryKind trajectory_kind_from_string(const std::string& s);

// Smooth pose sequences; the revisit loop returns to the start to
// exercise covisible reobservation.
std::vector<SE3d> make_trajectory(TrajectoryKind kind, int n_frames, double extent);

// Uniform samples of the scene surface (for point-to-surface evaluation).
std::vector<Eigen::Vector3d> sample_scene_surface(const Scene& scene, int count,
                                                  uint64_t seed);

struct SequenceSpec {
  TrajectoryKind kind = TrajectoryKind::kRevisitLoop;
  int frames = 100;
  double extent = 6.0;
  double noise_sigma = 1.0;
  double affine_amplitude = 0.25;
  double brightness_amplitude = 8.0;
  uint64_t seed = 1;
  int width = 376;
  int height = 240;
  double fps = 20.0;
  bool with_occluders = true;
};

Camerad default_camera(int width, int height);

struct SyntheticFrame {
  double timestamp = 0.0;
  SE3d pose;
  AffineBrightness affine;
  GrayImage image;
  Image<float> depth;
};

// Renders the whole sequence in memory (ground truth included).
std::vector<SyntheticFrame> render_sequence(const SequenceSpec& spec);

AffineBrightness affine_drift(const SequenceSpec& spec, int frame);

// Writes the sequence in the EuRoC/ASL directory layout:
// cam0/data.csv, cam0/data/*.pgm, cam0/sensor.yaml, plus groundtruth.txt
// (TUM format) and surface.ply at the sequence root.
void emit_asl_sequence(const SequenceSpec& spec, const std::string& out_dir);

}  // namespace pslam

#endif
