#include "pslam/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pslam/io_eval.hpp"

namespace pslam {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Binder {
  std::map<std::string, std::function<void(const std::string&)>> setters;

  void bind(const std::string& key, int* v) {
    setters[key] = [v, key](const std::string& s) {
      try {
        *v = std::stoi(s);
      } catch (...) {
        throw ConfigError("bad integer for " + key + ": " + s);
      }
    };
  }
  void bind(const std::string& key, double* v) {
    setters[key] = [v, key](const std::string& s) {
      try {
        size_t pos = 0;
        *v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
      } catch (...) {
        throw ConfigError("bad number for " + key + ": " + s);
      }
    };
  }
  void bind(const std::string& key, bool* v) {
    setters[key] = [v, key](const std::string& s) {
      if (s == "true" || s == "1") *v = true;
      else if (s == "false" || s == "0") *v = false;
      else throw ConfigError("bad boolean for " + key + ": " + s);
    };
  }
  void bind(const std::string& key, std::string* v) {
    setters[key] = [v](const std::string& s) { *v = s; };
  }
};

Binder make_binder(Config& c) {
  Binder b;
  b.bind("temporal_keyframes", &c.temporal_keyframes);
  b.bind("covisible_keyframes", &c.covisible_keyframes);
  b.bind("depletion_radius", &c.depletion_radius);
  b.bind("distance_map_stride", &c.distance_map_stride);
  b.bind("max_view_angle_deg", &c.max_view_angle_deg);
  b.bind("pba_levels", &c.pba_levels);
  b.bind("pba_max_iterations", &c.pba_max_iterations);
  b.bind("pba_initial_lambda", &c.pba_initial_lambda);
  b.bind("pba_lambda_up", &c.pba_lambda_up);
  b.bind("pba_lambda_down", &c.pba_lambda_down);
  b.bind("pba_convergence", &c.pba_convergence);
  b.bind("robust_model", &c.robust_model);
  b.bind("grad_weight_c", &c.grad_weight_c);
  b.bind("inlier_percentile", &c.inlier_percentile);
  b.bind("obs_remove_ratio", &c.obs_remove_ratio);
  b.bind("obs_discard_ratio", &c.obs_discard_ratio);
  b.bind("min_fit_samples", &c.min_fit_samples);
  b.bind("final_global_pba", &c.final_global_pba);
  b.bind("candidate_count", &c.candidate_count);
  b.bind("candidate_block", &c.candidate_block);
  b.bind("candidate_margin", &c.candidate_margin);
  b.bind("pyramid_levels", &c.pyramid_levels);
  b.bind("kf_visibility_weight", &c.kf_visibility_weight);
  b.bind("kf_parallax_weight", &c.kf_parallax_weight);
  b.bind("kf_brightness_weight", &c.kf_brightness_weight);
  b.bind("track_min_inlier_ratio", &c.track_min_inlier_ratio);
  b.bind("track_divergence_energy", &c.track_divergence_energy);
  b.bind("epipolar_ambiguity_ratio", &c.epipolar_ambiguity_ratio);
  b.bind("epipolar_step", &c.epipolar_step);
  b.bind("activation_interval_ratio", &c.activation_interval_ratio);
  b.bind("activation_min_observations", &c.activation_min_observations);
  b.bind("bootstrap_frame_budget", &c.bootstrap_frame_budget);
  b.bind("bootstrap_min_parallax", &c.bootstrap_min_parallax);
  b.bind("bootstrap_min_points", &c.bootstrap_min_points);
  b.bind("threads", &c.threads);
  return b;
}

}  // namespace

void Config::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config out of range: " + what);
  };
  require(temporal_keyframes >= 2, "temporal_keyframes >= 2");
  require(covisible_keyframes >= 0, "covisible_keyframes >= 0");
  require(pba_levels >= 1, "pba_levels >= 1");
  require(pba_initial_lambda > 0, "pba_initial_lambda > 0");
  require(pba_lambda_up > 1, "pba_lambda_up > 1");
  require(pba_lambda_down > 0 && pba_lambda_down < 1, "pba_lambda_down in (0,1)");
  require(grad_weight_c > 0, "grad_weight_c > 0");
  require(inlier_percentile > 0 && inlier_percentile < 1, "inlier_percentile in (0,1)");
  require(obs_remove_ratio > 0 && obs_remove_ratio < 1, "obs_remove_ratio in (0,1)");
  require(obs_discard_ratio > 0 && obs_discard_ratio < 1, "obs_discard_ratio in (0,1)");
  require(distance_map_stride >= 1, "distance_map_stride >= 1");
  require(pyramid_levels >= 1, "pyramid_levels >= 1");
  require(candidate_count > 0, "candidate_count > 0");
  require(threads == 1 || threads == 2, "threads in {1, 2}");
  try {
    error_model_kind_from_string(robust_model);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

Config parse_config(const std::string& text) {
  Config config;
  Binder binder = make_binder(config);

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + " is not key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = binder.setters.find(key);
    if (it == binder.setters.end()) throw ConfigError("unknown config key: " + key);
    it->second(value);
  }
  config.validate();
  return config;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace pslam
