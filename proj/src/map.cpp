#include "pslam/map.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pslam/pba.hpp"

namespace pslam {

std::vector<int> Window::active_ids() const {
  std::vector<int> ids = temporal;
  ids.insert(ids.end(), covisible.begin(), covisible.end());
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool Window::is_active(int id) const {
  return std::find(temporal.begin(), temporal.end(), id) != temporal.end() ||
         std::find(covisible.begin(), covisible.end(), id) != covisible.end();
}

bool Window::in_window(int id) const {
  return is_active(id) || std::find(fixed.begin(), fixed.end(), id) != fixed.end();
}

int Map::add_keyframe(Keyframe kf) {
  kf.id = int(keyframes_.size());
  keyframes_.push_back(std::move(kf));
  return keyframes_.back().id;
}

Eigen::Vector3d Map::point_world(const MapPoint& p) const {
  const Keyframe& host = keyframe(p.host_id);
  const auto x = backproject(host.pyramid.camera(0), p.pixel, p.rho);
  return host.pose * x.value();
}

int Map::live_point_count(int kf_id) const {
  int n = 0;
  for (const auto& p : keyframe(kf_id).points)
    if (p.alive()) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// DistanceMap

DistanceMap::DistanceMap(int image_width, int image_height, int stride)
    : gw_((image_width + stride - 1) / stride),
      gh_((image_height + stride - 1) / stride),
      stride_(stride),
      seeds_(size_t(gw_) * gh_, 0),
      dist_(size_t(gw_) * gh_, kMaxDistance) {}

namespace {

// 1D squared distance transform (Felzenszwalb & Huttenlocher).
void dt_1d(const std::vector<double>& f, std::vector<double>& d, int n,
           std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

void DistanceMap::add_projections(const std::vector<Eigen::Vector2d>& pixels) {
  for (const auto& u : pixels) {
    const int gx = std::clamp(int(std::lround(u.x() / stride_)), 0, gw_ - 1);
    const int gy = std::clamp(int(std::lround(u.y() / stride_)), 0, gh_ - 1);
    seeds_[size_t(gy) * gw_ + gx] = 1;
  }
  recompute();
}

void DistanceMap::recompute() {
  const double inf = kMaxDistance * kMaxDistance;
  std::vector<double> grid(size_t(gw_) * gh_);
  for (size_t i = 0; i < grid.size(); ++i) grid[i] = seeds_[i] ? 0.0 : inf;

  const int n = std::max(gw_, gh_);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);

  for (int y = 0; y < gh_; ++y) {
    for (int x = 0; x < gw_; ++x) f[x] = grid[size_t(y) * gw_ + x];
    dt_1d(f, d, gw_, v, z);
    for (int x = 0; x < gw_; ++x) grid[size_t(y) * gw_ + x] = d[x];
  }
  for (int x = 0; x < gw_; ++x) {
    for (int y = 0; y < gh_; ++y) f[y] = grid[size_t(y) * gw_ + x];
    dt_1d(f, d, gh_, v, z);
    for (int y = 0; y < gh_; ++y) grid[size_t(y) * gw_ + x] = d[y];
  }
  for (size_t i = 0; i < grid.size(); ++i)
    dist_[i] = grid[i] >= inf ? kMaxDistance : stride_ * std::sqrt(grid[i]);
}

double DistanceMap::at(const Eigen::Vector2d& pixel) const {
  const int gx = std::clamp(int(std::lround(pixel.x() / stride_)), 0, gw_ - 1);
  const int gy = std::clamp(int(std::lround(pixel.y() / stride_)), 0, gh_ - 1);
  return dist_[size_t(gy) * gw_ + gx];
}

// ---------------------------------------------------------------------------
// LMCW selection

int temporal_drop(const Map& map, const std::vector<int>& temporal_ids) {
  const int n = int(temporal_ids.size());
  const Eigen::Vector3d c0 = map.keyframe(temporal_ids[0]).center();

  auto dist = [&](int a, int b) {
    const double d =
        (map.keyframe(a).center() - map.keyframe(b).center()).norm();
    return std::max(d, 1e-12);
  };

  int best_id = -1;
  double best_score = -1.0;
  for (int i = 2; i < n; ++i) {
    const int id = temporal_ids[i];
    double inv_sum = 0.0;
    for (int j = 1; j < n; ++j) {
      if (j == i) continue;
      inv_sum += 1.0 / dist(id, temporal_ids[j]);
    }
    const double score =
        std::sqrt((map.keyframe(id).center() - c0).norm()) * inv_sum;
    if (score > best_score || (score == best_score && id < best_id)) {
      best_score = score;
      best_id = id;
    }
  }
  return best_id;
}

std::vector<Eigen::Vector2d> project_points_into(const Map& map,
                                                 const std::vector<int>& host_ids,
                                                 int target_id) {
  const Keyframe& target = map.keyframe(target_id);
  const Camerad& cam = target.pyramid.camera(0);
  const SE3d world_from_target_inv = target.pose.inverse();

  std::vector<Eigen::Vector2d> out;
  for (int host_id : host_ids) {
    if (host_id == target_id) continue;
    const Keyframe& host = map.keyframe(host_id);
    const SE3d rel = world_from_target_inv * host.pose;
    for (const auto& p : host.points) {
      if (!p.alive()) continue;
      const auto x = backproject(cam, p.pixel, p.rho);
      if (!x) continue;
      const Eigen::Vector3d pt = rel * *x;
      const auto u = project(cam, pt);
      if (!u) continue;
      if (!target.pyramid.level(0).contains(u->x(), u->y())) continue;
      out.push_back(*u);
    }
  }
  return out;
}

DistanceMap build_distance_map(const Map& map, int latest_id,
                               const std::vector<Eigen::Vector2d>& projections,
                               int stride) {
  const Keyframe& latest = map.keyframe(latest_id);
  DistanceMap dmap(latest.pyramid.level(0).width(), latest.pyramid.level(0).height(),
                   stride);
  dmap.add_projections(projections);
  return dmap;
}

int covisible_score(const Map& map, int kf_id, int latest_id, const DistanceMap& dmap,
                    const WindowConfig& cfg, std::vector<Eigen::Vector2d>* accepted) {
  const Keyframe& latest = map.keyframe(latest_id);
  const Keyframe& host = map.keyframe(kf_id);
  const Camerad& cam = latest.pyramid.camera(0);
  const SE3d rel = latest.pose.inverse() * host.pose;
  const Eigen::Vector3d c_host = host.center();
  const Eigen::Vector3d c_latest = latest.center();
  const double cos_thresh = std::cos(cfg.max_view_angle_deg * M_PI / 180.0);

  int score = 0;
  for (const auto& p : host.points) {
    if (!p.alive()) continue;
    const auto x = backproject(cam, p.pixel, p.rho);
    if (!x) continue;
    const Eigen::Vector3d pt = rel * *x;
    const auto u = project(cam, pt);
    if (!u) continue;
    if (!latest.pyramid.level(0).contains(u->x(), u->y())) continue;

    const Eigen::Vector3d x_world = host.pose * *x;
    const Eigen::Vector3d to_host = (c_host - x_world).normalized();
    const Eigen::Vector3d to_latest = (c_latest - x_world).normalized();
    if (to_host.dot(to_latest) < cos_thresh) continue;

    if (accepted) accepted->push_back(*u);
    if (dmap.at(*u) > cfg.depletion_radius) ++score;
  }
  return score;
}

std::vector<int> select_covisible(const Map& map, int latest_id, DistanceMap& dmap,
                                  const WindowConfig& cfg) {
  std::vector<int> old_ids;
  for (const auto& kf : map.keyframes()) {
    if (kf.id == latest_id) continue;
    const auto& temporal = map.temporal_ids();
    if (std::find(temporal.begin(), temporal.end(), kf.id) != temporal.end()) continue;
    old_ids.push_back(kf.id);
  }

  std::vector<int> selected;
  for (int round = 0; round < cfg.covisible_size; ++round) {
    int best_id = -1;
    int best_score = 0;
    for (int id : old_ids) {
      if (std::find(selected.begin(), selected.end(), id) != selected.end()) continue;
      const int s = covisible_score(map, id, latest_id, dmap, cfg, nullptr);
      if (s > best_score || (s == best_score && s > 0 && id < best_id)) {
        best_score = s;
        best_id = id;
      }
    }
    if (best_id < 0 || best_score == 0) break;
    selected.push_back(best_id);
    std::vector<Eigen::Vector2d> accepted;
    covisible_score(map, best_id, latest_id, dmap, cfg, &accepted);
    dmap.add_projections(accepted);
  }
  return selected;
}

Window build_window(const Map& map, int latest_id, const WindowConfig& cfg) {
  Window w;
  w.latest_id = latest_id;
  w.temporal = map.temporal_ids();

  DistanceMap dmap = build_distance_map(
      map, latest_id, project_points_into(map, w.temporal, latest_id),
      cfg.distance_map_stride);
  w.covisible = select_covisible(map, latest_id, dmap, cfg);
  w.fixed = fix_gauge(map, w.active_ids());
  return w;
}

// ---------------------------------------------------------------------------
// Outlier management

namespace {

void update_point_masks(Map& map, MapPoint& point, const Window& window,
                        bool targets_active_only,
                        const std::map<int, ErrorModel>& models, double grad_weight_c,
                        double remove_ratio, MaskUpdateStats& stats) {
  const Keyframe& host = map.keyframe(point.host_id);
  const Camerad& cam = host.pyramid.camera(0);
  const FrameView host_view = host.view(0);

  auto obs_in_scope = [&](const Observation& o) {
    return targets_active_only ? window.is_active(o.target_id)
                               : window.in_window(o.target_id);
  };

  for (auto& obs : point.observations) {
    if (!obs_in_scope(obs)) continue;
    auto model_it = models.find(obs.target_id);
    if (model_it == models.end()) continue;
    const double threshold = model_it->second.percentile95;

    const Keyframe& target = map.keyframe(obs.target_id);
    const FrameView target_view = target.view(0);
    const SE3d rel = relative(target.pose, host.pose);

    ++stats.observations_checked;
    uint8_t mask = 0;
    const auto& pattern = patch_pattern();
    for (int k = 0; k < int(pattern.size()); ++k) {
      const ResidualEval ev = residual_at(host_view, target_view, rel, cam, point.pixel,
                                          point.rho, pattern[k], grad_weight_c, false);
      if (ev.valid && std::abs(ev.residual) <= threshold) mask |= uint8_t(1u << k);
    }
    obs.inlier_mask = mask;
    const int outliers = obs.outlier_pixels();
    stats.pixels_marked_outlier += outliers;
    if (double(outliers) / double(pattern.size()) > remove_ratio) obs.outlier = true;
  }

  auto removed_begin =
      std::remove_if(point.observations.begin(), point.observations.end(),
                     [](const Observation& o) { return o.outlier; });
  stats.observations_removed += int(point.observations.end() - removed_begin);
  point.observations.erase(removed_begin, point.observations.end());
}

}  // namespace

MaskUpdateStats update_masks(Map& map, const Window& window,
                             const std::map<int, ErrorModel>& models,
                             double grad_weight_c, double remove_ratio) {
  MaskUpdateStats stats;
  for (int kf_id : window.active_ids()) {
    for (auto& point : map.keyframe(kf_id).points) {
      if (!point.alive()) continue;
      update_point_masks(map, point, window, false, models, grad_weight_c, remove_ratio,
                         stats);
    }
  }
  for (int kf_id : window.fixed) {
    for (auto& point : map.keyframe(kf_id).points) {
      if (!point.alive()) continue;
      update_point_masks(map, point, window, true, models, grad_weight_c, remove_ratio,
                         stats);
    }
  }
  return stats;
}

std::vector<std::pair<int, int>> enforce_maturity(Map& map, int new_kf_id,
                                                  const std::vector<int>& active_ids) {
  std::vector<std::pair<int, int>> removed;
  for (int kf_id : active_ids) {
    auto& points = map.keyframe(kf_id).points;
    for (int idx = 0; idx < int(points.size()); ++idx) {
      MapPoint& p = points[idx];
      if (!p.alive()) continue;

      if (int(p.observations.size()) >= kMatureObservationCount)
        p.status = PointStatus::kMature;

      bool remove = false;
      if (p.status == PointStatus::kMature) {
        remove = int(p.observations.size()) < kMatureObservationCount;
      } else if (p.host_id != new_kf_id) {
        remove = p.find_observation(new_kf_id) == nullptr;
      }
      if (remove) {
        p.status = PointStatus::kRemoved;
        removed.emplace_back(kf_id, idx);
      }
    }
  }
  return removed;
}

}  // namespace pslam
