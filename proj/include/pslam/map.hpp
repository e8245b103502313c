#ifndef PSLAM_MAP_HPP
#define PSLAM_MAP_HPP

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "pslam/geometry.hpp"
#include "pslam/image.hpp"
#include "pslam/photometric.hpp"
#include "pslam/robust.hpp"

namespace pslam {

enum class PointStatus { kCandidate, kActive, kMature, kRemoved };

// One reobservation of a map point in a target keyframe, with a per-pixel
// inlier mask over the 8-pixel patch.
struct Observation {
  int target_id = -1;
  uint8_t inlier_mask = 0xFF;
  bool outlier = false;

  int outlier_pixels() const {
    int n = 0;
    for (int k = 0; k < 8; ++k)
      if (!(inlier_mask & (1u << k))) ++n;
    return n;
  }
};

struct MapPoint {
  int host_id = -1;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();  // level-0 pixel in host
  double rho = 1.0;                                 // inverse depth, host frame
  PointStatus status = PointStatus::kActive;
  std::vector<Observation> observations;
  double last_energy = 0.0;

  bool alive() const {
    return status == PointStatus::kActive || status == PointStatus::kMature;
  }
  const Observation* find_observation(int target_id) const {
    for (const auto& o : observations)
      if (o.target_id == target_id) return &o;
    return nullptr;
  }
};

// Delayed-initialization candidate; inverse depth refined by epipolar
// search until the point is activated or its host leaves the window.
struct CandidatePoint {
  int host_id = -1;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double rho = 1.0;
  double rho_min = 0.05;
  double rho_max = 20.0;
  double quality = 0.0;  // best vs second-best cost separation in [0,1]
  int observation_count = 0;
  bool low_parallax = false;
  bool discarded = false;

  double interval_ratio() const { return (rho_max - rho_min) / std::max(rho, 1e-12); }
};

struct Keyframe {
  int id = -1;
  double timestamp = 0.0;
  Pyramid pyramid;
  SE3d pose;  // world from camera
  AffineBrightness affine;
  std::vector<MapPoint> points;
  std::vector<CandidatePoint> candidates;

  Eigen::Vector3d center() const { return pose.translation(); }
  FrameView view(int level) const {
    return FrameView{&pyramid.level(level), pose, affine};
  }
};

// Level-L coordinates of a level-0 pixel under 2x2 box downsampling.
inline Eigen::Vector2d level_pixel(const Eigen::Vector2d& u, int level) {
  const double s = double(1 << level);
  return Eigen::Vector2d((u.x() + 0.5) / s - 0.5, (u.y() + 0.5) / s - 0.5);
}

// Grid of exact L2 distances (in level-0 pixels) to the nearest projected
// map point, sampled at a fixed stride over the latest keyframe.
class DistanceMap {
 public:
  DistanceMap() = default;
  DistanceMap(int image_width, int image_height, int stride);

  void add_projections(const std::vector<Eigen::Vector2d>& pixels);
  void recompute();

  // Distance at a level-0 pixel position (nearest grid sample).
  double at(const Eigen::Vector2d& pixel) const;

  int grid_width() const { return gw_; }
  int grid_height() const { return gh_; }
  int stride() const { return stride_; }

  static constexpr double kMaxDistance = 1e9;

 private:
  int gw_ = 0, gh_ = 0, stride_ = 1;
  std::vector<uint8_t> seeds_;
  std::vector<double> dist_;
};

struct WindowConfig {
  int temporal_size = 4;        // N_t
  int covisible_size = 3;       // N_c
  double depletion_radius = 20.0;
  int distance_map_stride = 4;
  double max_view_angle_deg = 40.0;
};

struct Window {
  int latest_id = -1;
  std::vector<int> temporal;   // newest first, includes the latest keyframe
  std::vector<int> covisible;  // selected old keyframes
  std::vector<int> fixed;      // gauge-fixing keyframes

  std::vector<int> active_ids() const;
  bool is_active(int id) const;
  bool in_window(int id) const;  // active or fixed
};

class Map {
 public:
  int add_keyframe(Keyframe kf);  // assigns the id

  Keyframe& keyframe(int id) { return keyframes_.at(id); }
  const Keyframe& keyframe(int id) const { return keyframes_.at(id); }
  int num_keyframes() const { return int(keyframes_.size()); }

  // Deque keeps keyframe references stable across insertions, so local
  // map snapshots can point at pyramids without copying them.
  std::deque<Keyframe>& keyframes() { return keyframes_; }
  const std::deque<Keyframe>& keyframes() const { return keyframes_; }

  const std::vector<int>& temporal_ids() const { return temporal_; }
  std::vector<int>& temporal_ids() { return temporal_; }

  Eigen::Vector3d point_world(const MapPoint& p) const;

  // Counts live points hosted in a keyframe.
  int live_point_count(int kf_id) const;

 private:
  std::deque<Keyframe> keyframes_;
  std::vector<int> temporal_;  // newest first
};

// Eq.-style temporal drop: keep the two most recent keyframes, drop the
// one maximizing sqrt(d(I0, Ii)) * sum_j 1/d(Ii, Ij) over the remaining
// temporal keyframes. temporal_ids is newest first and overfull (N_t + 1).
int temporal_drop(const Map& map, const std::vector<int>& temporal_ids);

// Projections of all live points hosted in the given keyframes into the
// latest keyframe (points behind the camera or out of bounds excluded).
std::vector<Eigen::Vector2d> project_points_into(const Map& map,
                                                 const std::vector<int>& host_ids,
                                                 int target_id);

DistanceMap build_distance_map(const Map& map, int latest_id,
                               const std::vector<Eigen::Vector2d>& projections,
                               int stride);

// Greedy covisible keyframe selection over the old keyframes, maximizing
// the number of points landing in depleted pixels per round.
std::vector<int> select_covisible(const Map& map, int latest_id, DistanceMap& dmap,
                                  const WindowConfig& cfg);

// Score of one old keyframe against the current distance map; exposed for
// the step-wise selection oracle.
int covisible_score(const Map& map, int kf_id, int latest_id, const DistanceMap& dmap,
                    const WindowConfig& cfg,
                    std::vector<Eigen::Vector2d>* accepted = nullptr);

Window build_window(const Map& map, int latest_id, const WindowConfig& cfg);

struct MaskUpdateStats {
  int observations_checked = 0;
  int observations_removed = 0;
  int pixels_marked_outlier = 0;
};

// Re-evaluates per-pixel inlier masks of every window observation against
// the target keyframe's percentile threshold and removes observations with
// more than 30% outlier pixels.
MaskUpdateStats update_masks(Map& map, const Window& window,
                             const std::map<int, ErrorModel>& models,
                             double grad_weight_c, double remove_ratio = 0.30);

// Point lifecycle after a new keyframe: immature points must be observed
// in it; mature points need at least three observations.
std::vector<std::pair<int, int>> enforce_maturity(Map& map, int new_kf_id,
                                                  const std::vector<int>& active_ids);

inline constexpr int kMatureObservationCount = 3;

}  // namespace pslam

#endif
