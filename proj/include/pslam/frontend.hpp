#ifndef PSLAM_FRONTEND_HPP
#define PSLAM_FRONTEND_HPP

#include <Eigen/Core>

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <thread>
#include <vector>

#include "pslam/config.hpp"
#include "pslam/geometry.hpp"
#include "pslam/image.hpp"
#include "pslam/io_eval.hpp"
#include "pslam/map.hpp"
#include "pslam/pba.hpp"

namespace pslam {

struct TrackedFrame {
  double timestamp = 0.0;
  SE3d pose;  // world from camera
  AffineBrightness affine;
  double energy = 0.0;  // mean robust energy per valid pixel at level 0
  double inlier_ratio = 0.0;
  bool lost = false;
};

// Immutable view of the active map referenced to the latest keyframe,
// published by the mapping side at every keyframe boundary.
struct LocalMapSnapshot {
  int reference_id = -1;
  const Pyramid* reference_pyramid = nullptr;
  SE3d reference_pose;
  AffineBrightness reference_affine;

  struct Point {
    Eigen::Vector2d pixel;  // level-0 pixel in the reference keyframe
    double rho = 1.0;       // inverse depth in the reference frame
  };
  std::vector<Point> points;
  double mean_rho = 1.0;
};

LocalMapSnapshot build_snapshot(const Map& map, const Window& window);

// Coarse-to-fine inverse-compositional alignment of a frame against the
// local map; reference jacobians are computed once per pyramid level.
TrackedFrame track_frame(const Pyramid& frame, const LocalMapSnapshot& snapshot,
                         const SE3d& pose_guess, const AffineBrightness& affine_guess,
                         const Config& config);

struct KeyframeScores {
  double s_u = 1.0;  // visibility ratio, <= 1
  double s_t = 0.0;  // parallax: |t| * mean inverse depth
  double s_a = 0.0;  // brightness change |a_frame - a_ref|
  double w_u = 0.0, w_t = 0.0, w_a = 0.0;

  double combined() const { return w_u * (1.0 - s_u) + w_t * s_t + w_a * s_a; }
};

std::pair<bool, KeyframeScores> keyframe_decision(const TrackedFrame& frame,
                                                  const LocalMapSnapshot& snapshot,
                                                  const Config& config);

// Discrete search along the epipolar segment induced by the candidate's
// inverse depth interval, with parabolic subpixel refinement. Returns
// false when no update was possible. The interval never widens.
bool epipolar_search(CandidatePoint& candidate, const Keyframe& host,
                     const Pyramid& frame, const SE3d& frame_pose,
                     const AffineBrightness& frame_affine, const Config& config);

// Activates converged candidates that project into depleted areas of the
// latest keyframe; returns (host id, point index) of the new map points.
std::vector<std::pair<int, int>> activate_points(Map& map, const Window& window,
                                                 DistanceMap& dmap,
                                                 const Config& config);

struct StageTimings {
  std::vector<double> tracking_ms;
  std::vector<double> mapping_ms;      // local PBA (keyframe insertion)
  std::vector<double> keyframe_period_ms;
};

// The full tracking + mapping pipeline. process() is the deterministic
// sequential mode; start_threaded()/enqueue()/finish() run tracking and
// mapping on two streams connected by an ordered frame queue.
class Pipeline {
 public:
  enum class Status {
    kBootstrapping,
    kTracked,
    kKeyframe,
    kLost,
    kBootstrapFailed,
  };

  Pipeline(const Config& config, const Camerad& camera);
  ~Pipeline();

  Status process(double timestamp, const GrayImage& image);

  // Two-stream mode: tracking runs on the caller's thread, mapping on an
  // internal thread consuming an ordered queue.
  void start_threaded();
  Status enqueue(double timestamp, const GrayImage& image);
  void finish();

  const Map& map() const { return map_; }
  Map& map() { return map_; }
  Trajectory keyframe_trajectory() const;
  const StageTimings& timings() const { return timings_; }
  const std::vector<TrackedFrame>& frames() const { return frames_; }
  int keyframes_created() const { return map_.num_keyframes(); }
  bool bootstrapped() const { return bootstrapped_; }

  // Set of keyframe ids selected as covisible at least once (diagnostics
  // for reobservation behaviour).
  const std::vector<int>& last_covisible() const { return last_covisible_; }
  int activations_at_last_keyframe() const { return last_activation_count_; }

  // Per-keyframe-insertion history: covisible keyframe count and number of
  // activated points.
  const std::vector<int>& covisible_history() const { return covisible_history_; }
  const std::vector<int>& activation_history() const { return activation_history_; }

 private:
  struct MappingJob {
    double timestamp;
    std::shared_ptr<Pyramid> pyramid;
    TrackedFrame tracked;
    bool make_keyframe = false;
  };

  Status bootstrap_step(double timestamp, std::shared_ptr<Pyramid> pyramid);
  TrackedFrame run_tracker(double timestamp, const Pyramid& pyramid);
  void mapping_step(const MappingJob& job);
  void insert_keyframe(const MappingJob& job);
  void refresh_snapshot(const Window& window);
  void apply_scale_factor(double factor);
  std::shared_ptr<const LocalMapSnapshot> snapshot() const;

  void mapping_loop();

  Config config_;
  Camerad camera_;
  Map map_;

  bool bootstrapped_ = false;
  bool failed_ = false;
  int frame_index_ = 0;

  std::shared_ptr<const LocalMapSnapshot> snapshot_;
  mutable std::mutex snapshot_mutex_;

  std::optional<SE3d> last_pose_;
  std::optional<SE3d> velocity_;  // previous frame-to-frame motion
  AffineBrightness last_affine_;
  std::vector<TrackedFrame> frames_;
  std::vector<int> last_covisible_;
  int last_activation_count_ = 0;
  std::vector<int> covisible_history_;
  std::vector<int> activation_history_;
  double last_keyframe_time_ = -1.0;

  StageTimings timings_;

  // threaded mode
  bool threaded_ = false;
  std::thread mapping_thread_;
  std::queue<MappingJob> queue_;
  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::atomic<bool> stop_requested_{false};
};

}  // namespace pslam

#endif
