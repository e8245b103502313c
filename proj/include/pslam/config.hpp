#ifndef PSLAM_CONFIG_HPP
#define PSLAM_CONFIG_HPP

#include <string>

#include "pslam/map.hpp"
#include "pslam/pba.hpp"

namespace pslam {

// Runtime parameters, all exposed through the flat key=value config file.
struct Config {
  // local map covisibility window
  int temporal_keyframes = 4;   // N_t
  int covisible_keyframes = 3;  // N_c
  double depletion_radius = 20.0;
  int distance_map_stride = 4;
  double max_view_angle_deg = 40.0;

  // photometric bundle adjustment
  int pba_levels = 2;  // N_p
  int pba_max_iterations = 50;
  double pba_initial_lambda = 1e-4;
  double pba_lambda_up = 10.0;
  double pba_lambda_down = 0.5;
  double pba_convergence = 1e-5;
  std::string robust_model = "tdist";  // gaussian | tdist | huber
  double grad_weight_c = 50.0;
  double inlier_percentile = 0.95;
  double obs_remove_ratio = 0.30;
  double obs_discard_ratio = 0.60;
  int min_fit_samples = 50;
  bool final_global_pba = false;

  // candidate selection
  int candidate_count = 800;
  int candidate_block = 16;
  double candidate_margin = 8.0;

  // tracking front-end
  int pyramid_levels = 4;
  double kf_visibility_weight = 1.0 / 0.7;
  double kf_parallax_weight = 1.0 / 0.12;
  double kf_brightness_weight = 1.0 / 0.25;
  double track_min_inlier_ratio = 0.30;
  double track_divergence_energy = 2000.0;
  double epipolar_ambiguity_ratio = 0.25;
  double epipolar_step = 1.0;
  double activation_interval_ratio = 0.5;
  int activation_min_observations = 3;
  int bootstrap_frame_budget = 40;
  double bootstrap_min_parallax = 0.08;
  int bootstrap_min_points = 40;

  int threads = 1;

  WindowConfig window_config() const {
    WindowConfig w;
    w.temporal_size = temporal_keyframes;
    w.covisible_size = covisible_keyframes;
    w.depletion_radius = depletion_radius;
    w.distance_map_stride = distance_map_stride;
    w.max_view_angle_deg = max_view_angle_deg;
    return w;
  }

  PbaConfig pba_config() const {
    PbaConfig p;
    p.n_levels = pba_levels;
    p.max_iterations = pba_max_iterations;
    p.initial_lambda = pba_initial_lambda;
    p.lambda_up = pba_lambda_up;
    p.lambda_down = pba_lambda_down;
    p.convergence = pba_convergence;
    p.model_kind = error_model_kind_from_string(robust_model);
    p.grad_weight_c = grad_weight_c;
    p.discard_ratio = obs_discard_ratio;
    p.min_fit_samples = min_fit_samples;
    return p;
  }

  void validate() const;  // throws ConfigError on out-of-range values
};

// key = value lines, '#' comments; unknown keys are config errors.
Config load_config(const std::string& path);
Config parse_config(const std::string& text);

}  // namespace pslam

#endif
