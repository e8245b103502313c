#ifndef PSLAM_IO_EVAL_HPP
#define PSLAM_IO_EVAL_HPP

#include <Eigen/Core>

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pslam/geometry.hpp"
#include "pslam/image.hpp"
#include "pslam/map.hpp"
#include "pslam/synthetic.hpp"

namespace pslam {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingFileError : IoError {
  using IoError::IoError;
};
struct EmptySequenceError : IoError {
  using IoError::IoError;
};
struct TimestampOrderError : IoError {
  using IoError::IoError;
};
struct CalibrationError : IoError {
  using IoError::IoError;
};
struct AlignmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Images

void write_pgm(const GrayImage& img, const std::string& path);
GrayImage read_pgm(const std::string& path);
GrayImage read_png(const std::string& path);
GrayImage read_image(const std::string& path);  // dispatches on extension

// ---------------------------------------------------------------------------
// Sequences (EuRoC/ASL layout)

struct SequenceSource {
  std::vector<std::pair<int64_t, std::string>> records;  // (ns, image path)
  Camerad camera;
  std::array<double, 4> distortion{0, 0, 0, 0};  // radial-tangential k1 k2 p1 p2
  bool undistort = false;

  int size() const { return int(records.size()); }
  double timestamp_seconds(int idx) const { return double(records[idx].first) * 1e-9; }
  GrayImage load_frame(int idx) const;
};

// dir/cam0/data.csv + dir/cam0/data/ + dir/cam0/sensor.yaml. Images are
// undistorted at load unless assume_undistorted is set or the calibration
// has zero distortion.
SequenceSource load_sequence(const std::string& dir, bool assume_undistorted = false);

// Remaps the image so a pinhole camera with the same intrinsics observes
// it (inverse lookup through the radial-tangential model).
GrayImage undistort_image(const GrayImage& img, const Camerad& cam,
                          const std::array<double, 4>& dist);

void write_asl_sequence(const std::string& dir, const Camerad& cam,
                        const std::vector<SyntheticFrame>& frames);

// ---------------------------------------------------------------------------
// Trajectories

struct Trajectory {
  std::vector<std::pair<double, SE3d>> entries;  // (seconds, world from camera)

  int size() const { return int(entries.size()); }
  void add(double t, const SE3d& pose) { entries.emplace_back(t, pose); }
};

// Text lines "timestamp tx ty tz qx qy qz qw" (unit quaternion, x y z w).
void write_trajectory(const Trajectory& traj, const std::string& path);
Trajectory read_trajectory(const std::string& path);

// ---------------------------------------------------------------------------
// Point clouds (ASCII PLY)

void write_pointcloud(const Map& map, const std::string& path);  // x y z + host_id
void write_pointcloud_xyz(const std::vector<Eigen::Vector3d>& points,
                          const std::string& path);
std::vector<Eigen::Vector3d> read_pointcloud(const std::string& path);

// ---------------------------------------------------------------------------
// Evaluation

// Nearest-timestamp association within the window (seconds).
std::vector<std::pair<int, int>> associate(const Trajectory& est, const Trajectory& gt,
                                           double window = 0.02);

// Closed-form least-squares similarity aligning estimated positions onto
// the ground truth. Throws AlignmentError for < 3 or collinear pairs.
Sim3d align_sim3(const Trajectory& est, const Trajectory& gt, double window = 0.02);

double rms_ate(const Trajectory& est, const Trajectory& gt, const Sim3d& alignment,
               double window = 0.02);

std::vector<double> per_keyframe_errors(const Trajectory& est, const Trajectory& gt,
                                        const Sim3d& alignment, double window = 0.02);

struct PseResult {
  double p50 = 0, p90 = 0, p95 = 0;
  std::vector<double> distances;
};

// Distance of each (aligned) map point to the nearest reference surface
// sample, via an exact grid-accelerated nearest-neighbor search.
PseResult pse(const std::vector<Eigen::Vector3d>& map_points,
              const std::vector<Eigen::Vector3d>& surface, const Sim3d& alignment);

struct EvalReport {
  double rms_ate = 0.0;
  std::vector<double> errors;
  Sim3d alignment;
  std::optional<PseResult> pse;
};

EvalReport evaluate(const Trajectory& est, const Trajectory& gt,
                    const std::vector<Eigen::Vector3d>* surface,
                    const std::vector<Eigen::Vector3d>* map_points,
                    double window = 0.02);

}  // namespace pslam

#endif
