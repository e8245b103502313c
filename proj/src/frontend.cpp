#include "pslam/frontend.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "pslam/photometric.hpp"

namespace pslam {

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

bool in_margin(const GrayImage& img, const Eigen::Vector2d& u, int margin) {
  return u.x() >= margin && u.y() >= margin && u.x() <= img.width() - 1 - margin &&
         u.y() <= img.height() - 1 - margin;
}

}  // namespace

// ---------------------------------------------------------------------------
// Local map snapshot

LocalMapSnapshot build_snapshot(const Map& map, const Window& window) {
  const Keyframe& ref = map.keyframe(window.latest_id);
  LocalMapSnapshot snap;
  snap.reference_id = ref.id;
  snap.reference_pyramid = &ref.pyramid;
  snap.reference_pose = ref.pose;
  snap.reference_affine = ref.affine;

  const Camerad& cam = ref.pyramid.camera(0);
  const SE3d ref_inv = ref.pose.inverse();
  double rho_sum = 0.0;
  for (int kf_id : window.active_ids()) {
    const Keyframe& host = map.keyframe(kf_id);
    const SE3d rel = ref_inv * host.pose;
    for (const auto& p : host.points) {
      if (!p.alive()) continue;
      const auto x = backproject(cam, p.pixel, p.rho);
      if (!x) continue;
      const Eigen::Vector3d pr = rel * *x;
      if (!(pr.z() > 0.0)) continue;
      const auto u = project(cam, pr);
      if (!u || !in_margin(ref.pyramid.level(0), *u, kInteriorMargin)) continue;
      snap.points.push_back({*u, 1.0 / pr.z()});
      rho_sum += 1.0 / pr.z();
    }
  }
  snap.mean_rho = snap.points.empty() ? 1.0 : rho_sum / double(snap.points.size());
  return snap;
}

// ---------------------------------------------------------------------------
// Frame tracking (inverse compositional)

namespace {

struct TrackerPoint {
  std::array<Eigen::Vector3d, 8> x;  // backprojected pattern pixels, ref frame
  std::array<double, 8> intensity;
  std::array<double, 8> wg;
  std::array<Eigen::Matrix<double, 1, 6>, 8> j_geo;
  std::array<uint8_t, 8> valid{};
  bool usable = false;
};

struct TrackerLevel {
  Camerad cam;
  const GrayImage* ref_image = nullptr;
  std::vector<TrackerPoint> points;
};

TrackerLevel build_tracker_level(const LocalMapSnapshot& snap, int level,
                                 const Config& config) {
  TrackerLevel out;
  out.cam = snap.reference_pyramid->camera(level);
  out.ref_image = &snap.reference_pyramid->level(level);
  out.points.reserve(snap.points.size());

  const auto& pattern = patch_pattern();
  for (const auto& sp : snap.points) {
    TrackerPoint tp;
    const Eigen::Vector2d u0 = level_pixel(sp.pixel, level);
    int n_valid = 0;
    for (int k = 0; k < 8; ++k) {
      const Eigen::Vector2d u = u0 + pattern[k].cast<double>();
      if (!in_margin(*out.ref_image, u, 2)) continue;
      const auto sg = sample_with_gradient(*out.ref_image, u);
      if (!sg) continue;
      const auto x = backproject(out.cam, u, sp.rho);
      if (!x) continue;
      tp.x[k] = *x;
      tp.intensity[k] = sg->value;
      tp.wg[k] = gradient_weight(sg->gradient, config.grad_weight_c);
      Eigen::Matrix<double, 3, 6> dx;
      dx.leftCols<3>() = Eigen::Matrix3d::Identity();
      dx.rightCols<3>() = -skew(*x);
      tp.j_geo[k] = sg->gradient.transpose() * projection_jacobian(out.cam, *x) * dx;
      tp.valid[k] = 1;
      ++n_valid;
    }
    tp.usable = n_valid >= 3;
    out.points.push_back(tp);
  }
  return out;
}

struct LevelEval {
  Eigen::Matrix<double, 8, 8> h = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> b = Eigen::Matrix<double, 8, 1>::Zero();
  double energy = 0.0;
  int n_valid = 0;
};

LevelEval evaluate_tracker_level(const TrackerLevel& lvl, const GrayImage& frame_img,
                                 const SE3d& frame_from_ref,
                                 const AffineBrightness& ref_affine,
                                 const AffineBrightness& frame_affine,
                                 const ErrorModel& model, bool with_system,
                                 std::vector<double>* residuals = nullptr) {
  LevelEval out;
  const double s = std::exp(ref_affine.a - frame_affine.a);
  for (const auto& tp : lvl.points) {
    if (!tp.usable) continue;
    for (int k = 0; k < 8; ++k) {
      if (!tp.valid[k]) continue;
      const Eigen::Vector3d pf = frame_from_ref * tp.x[k];
      if (!(pf.z() > 0.0)) continue;
      const auto u = project(lvl.cam, pf);
      if (!u || !frame_img.contains(u->x(), u->y())) continue;
      const auto value = sample_bilinear(frame_img, *u);
      if (!value) continue;

      const double r = (tp.intensity[k] - ref_affine.b) - s * (*value - frame_affine.b);
      if (residuals) residuals->push_back(r);
      const double w = model.weight(r) * tp.wg[k];
      out.energy += w * r * r;
      ++out.n_valid;
      if (!with_system) continue;

      Eigen::Matrix<double, 1, 8> row;
      row << tp.j_geo[k], s * (*value - frame_affine.b), s;
      out.h.noalias() += w * row.transpose() * row;
      out.b.noalias() += w * r * row.transpose();
    }
  }
  return out;
}

ErrorModel fit_tracker_model(const std::vector<double>& residuals,
                             ErrorModelKind kind) {
  auto fitted = fit_error_model(residuals, kind);
  if (fitted) return *fitted;
  ErrorModel fallback;
  fallback.kind = kind;
  fallback.sigma = mad_scale(residuals).value_or(10.0);
  if (fallback.sigma <= 0.0) fallback.sigma = 10.0;
  fallback.lambda = 1.345 * fallback.sigma;
  fallback.percentile95 = percentile_abs(residuals, 0.95);
  return fallback;
}

}  // namespace

TrackedFrame track_frame(const Pyramid& frame, const LocalMapSnapshot& snapshot,
                         const SE3d& pose_guess, const AffineBrightness& affine_guess,
                         const Config& config) {
  TrackedFrame out;
  out.pose = pose_guess;
  out.affine = affine_guess;
  if (snapshot.points.empty() || snapshot.reference_pyramid == nullptr) {
    out.lost = true;
    return out;
  }

  const ErrorModelKind kind = error_model_kind_from_string(config.robust_model);
  const int n_levels =
      std::min(frame.num_levels(), snapshot.reference_pyramid->num_levels());

  SE3d frame_from_ref = pose_guess.inverse() * snapshot.reference_pose;
  AffineBrightness affine = affine_guess;
  ErrorModel level0_model;
  double level0_energy = 0.0;
  int level0_valid = 0;

  for (int level = n_levels - 1; level >= 0; --level) {
    const TrackerLevel lvl = build_tracker_level(snapshot, level, config);
    const GrayImage& img = frame.level(level);

    std::vector<double> residuals;
    evaluate_tracker_level(lvl, img, frame_from_ref, snapshot.reference_affine, affine,
                           ErrorModel{}, false, &residuals);
    const ErrorModel model = fit_tracker_model(residuals, kind);

    LevelEval eval = evaluate_tracker_level(lvl, img, frame_from_ref,
                                            snapshot.reference_affine, affine, model, true);
    double lambda = 1e-4;
    int small_steps = 0;
    for (int iter = 0; iter < 30; ++iter) {
      Eigen::Matrix<double, 8, 8> h = eval.h;
      h.diagonal() *= (1.0 + lambda);
      const Eigen::LLT<Eigen::Matrix<double, 8, 8>> llt(h);
      if (llt.info() != Eigen::Success) {
        lambda *= 10.0;
        if (lambda > 1e8) break;
        continue;
      }
      const Eigen::Matrix<double, 8, 1> delta = llt.solve(-eval.b);
      if (!delta.allFinite()) break;

      // Inverse-compositional update on the pose, additive on the affine.
      const SE3d cand_pose = frame_from_ref * se3_exp<double>(-delta.head<6>());
      AffineBrightness cand_affine{affine.a + delta(6), affine.b + delta(7)};
      const LevelEval cand = evaluate_tracker_level(
          lvl, img, cand_pose, snapshot.reference_affine, cand_affine, model, true);

      if (cand.n_valid > 0 && cand.energy < eval.energy) {
        const double rel = (eval.energy - cand.energy) / std::max(eval.energy, 1e-12);
        frame_from_ref = cand_pose;
        affine = cand_affine;
        eval = cand;
        lambda = std::max(lambda * 0.5, 1e-8);
        if (rel < 1e-4 || delta.lpNorm<Eigen::Infinity>() < 1e-7) {
          if (++small_steps >= 2) break;
        } else {
          small_steps = 0;
        }
      } else {
        lambda *= 10.0;
        if (lambda > 1e8) break;
      }
    }

    if (level == 0) {
      level0_model = model;
      level0_energy = eval.energy;
      level0_valid = eval.n_valid;
    }
  }

  out.pose = snapshot.reference_pose * frame_from_ref.inverse();
  out.affine = affine;
  out.energy = level0_valid > 0 ? level0_energy / double(level0_valid) : 1e18;

  // Inlier ratio over the central patch pixels at level 0.
  const TrackerLevel lvl0 = build_tracker_level(snapshot, 0, config);
  const GrayImage& img0 = frame.level(0);
  const double s = std::exp(snapshot.reference_affine.a - affine.a);
  int inliers = 0;
  for (const auto& tp : lvl0.points) {
    if (!tp.usable || !tp.valid[0]) continue;
    const Eigen::Vector3d pf = frame_from_ref * tp.x[0];
    if (!(pf.z() > 0.0)) continue;
    const auto u = project(lvl0.cam, pf);
    if (!u || !img0.contains(u->x(), u->y())) continue;
    const auto value = sample_bilinear(img0, *u);
    if (!value) continue;
    const double r =
        (tp.intensity[0] - snapshot.reference_affine.b) - s * (*value - affine.b);
    if (std::abs(r) <= level0_model.percentile95) ++inliers;
  }
  out.inlier_ratio = double(inliers) / double(snapshot.points.size());
  out.lost = out.inlier_ratio < config.track_min_inlier_ratio ||
             out.energy > config.track_divergence_energy || level0_valid == 0;
  return out;
}

// ---------------------------------------------------------------------------
// Keyframe decision

std::pair<bool, KeyframeScores> keyframe_decision(const TrackedFrame& frame,
                                                  const LocalMapSnapshot& snapshot,
                                                  const Config& config) {
  KeyframeScores scores;
  scores.w_u = config.kf_visibility_weight;
  scores.w_t = config.kf_parallax_weight;
  scores.w_a = config.kf_brightness_weight;
  if (snapshot.points.empty()) return {false, scores};

  const Camerad& cam = snapshot.reference_pyramid->camera(0);
  const SE3d rel = frame.pose.inverse() * snapshot.reference_pose;

  double acc = 0.0;
  for (const auto& sp : snapshot.points) {
    const auto x = backproject(cam, sp.pixel, sp.rho);
    if (!x) continue;
    const Eigen::Vector3d pf = rel * *x;
    if (!(pf.z() > 0.0)) continue;
    const auto u = project(cam, pf);
    if (!u || u->x() < 0 || u->y() < 0 || u->x() > cam.width - 1 || u->y() > cam.height - 1)
      continue;
    // Depth ratio below one when the camera moved closer to the point.
    acc += std::min(pf.z() * sp.rho, 1.0);
  }
  scores.s_u = acc / double(snapshot.points.size());
  scores.s_t = rel.translation().norm() * snapshot.mean_rho;
  scores.s_a = std::abs(frame.affine.a - snapshot.reference_affine.a);

  return {scores.combined() > 1.0, scores};
}

// ---------------------------------------------------------------------------
// Epipolar candidate search

namespace {

// Patch dissimilarity between the candidate's host patch and the frame
// patch at pixel u, under the affine brightness correction.
std::optional<double> patch_cost(const GrayImage& host_img, const Eigen::Vector2d& host_px,
                                 const AffineBrightness& host_affine,
                                 const GrayImage& frame_img, const Eigen::Vector2d& u,
                                 const AffineBrightness& frame_affine, double scale) {
  double cost = 0.0;
  int n = 0;
  for (const auto& offset : patch_pattern()) {
    const Eigen::Vector2d uh = host_px + offset.cast<double>();
    const Eigen::Vector2d uf = u + offset.cast<double>();
    if (!host_img.contains(uh.x(), uh.y()) || !frame_img.contains(uf.x(), uf.y()))
      continue;
    const auto ih = sample_bilinear(host_img, uh);
    const auto f = sample_bilinear(frame_img, uf);
    if (!ih || !f) continue;
    const double r = (*ih - host_affine.b) - scale * (*f - frame_affine.b);
    cost += r * r;
    ++n;
  }
  if (n < 6) return std::nullopt;
  return cost / double(n);
}

}  // namespace

bool epipolar_search(CandidatePoint& candidate, const Keyframe& host,
                     const Pyramid& frame, const SE3d& frame_pose,
                     const AffineBrightness& frame_affine, const Config& config) {
  if (candidate.discarded) return false;
  candidate.low_parallax = false;

  const Camerad& cam = host.pyramid.camera(0);
  const GrayImage& host_img = host.pyramid.level(0);
  const GrayImage& frame_img = frame.level(0);

  const SE3d rel = frame_pose.inverse() * host.pose;
  const Eigen::Vector3d a_dir = rel.rotation() * pixel_ray(cam, candidate.pixel);
  const Eigen::Vector3d t = rel.translation();

  // Clip the inverse depth interval to positive target depth.
  auto depth_at = [&](double rho) { return a_dir.z() + rho * t.z(); };
  double rho_lo = candidate.rho_min, rho_hi = candidate.rho_max;
  constexpr double kMinDepth = 1e-3;
  if (std::abs(t.z()) > 1e-15) {
    const double rho_cross = (kMinDepth - a_dir.z()) / t.z();
    if (t.z() > 0.0) rho_lo = std::max(rho_lo, rho_cross);
    else rho_hi = std::min(rho_hi, rho_cross);
  } else if (depth_at(rho_lo) < kMinDepth) {
    return false;
  }
  if (rho_lo >= rho_hi) return false;

  auto pixel_at = [&](double rho) -> Eigen::Vector2d {
    const Eigen::Vector3d p = a_dir + rho * t;
    return Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
  };
  const Eigen::Vector2d ua = pixel_at(rho_lo);
  const Eigen::Vector2d ub = pixel_at(rho_hi);
  const double seg_len = (ub - ua).norm();
  if (seg_len < 0.8) {
    candidate.low_parallax = true;
    return false;
  }

  const int n_steps = std::min(int(std::ceil(seg_len / config.epipolar_step)), 400);
  const double scale = std::exp(host.affine.a - frame_affine.a);

  std::vector<double> costs(n_steps + 1, std::numeric_limits<double>::infinity());
  bool any = false;
  for (int s = 0; s <= n_steps; ++s) {
    const Eigen::Vector2d u = ua + (double(s) / n_steps) * (ub - ua);
    if (!in_margin(frame_img, u, kInteriorMargin)) continue;
    const auto c = patch_cost(host_img, candidate.pixel, host.affine, frame_img, u,
                              frame_affine, scale);
    if (c) {
      costs[s] = *c;
      any = true;
    }
  }
  if (!any) return false;

  int best = int(std::min_element(costs.begin(), costs.end()) - costs.begin());
  if (!std::isfinite(costs[best])) return false;

  double second = std::numeric_limits<double>::infinity();
  for (int s = 0; s <= n_steps; ++s)
    if (std::abs(s - best) >= 3) second = std::min(second, costs[s]);

  if (std::isfinite(second) &&
      second < costs[best] * (1.0 + config.epipolar_ambiguity_ratio))
    return false;  // ambiguous match, interval left unchanged

  // Parabolic subpixel refinement along the segment.
  double s_refined = best;
  if (best > 0 && best < n_steps && std::isfinite(costs[best - 1]) &&
      std::isfinite(costs[best + 1])) {
    const double denom = costs[best - 1] - 2.0 * costs[best] + costs[best + 1];
    if (denom > 1e-12)
      s_refined += std::clamp(0.5 * (costs[best - 1] - costs[best + 1]) / denom, -0.5, 0.5);
  }

  auto rho_from_pixel = [&](const Eigen::Vector2d& u) -> std::optional<double> {
    const Eigen::Vector3d d = pixel_ray(cam, u);
    const Eigen::Vector3d td = t.cross(d);
    const Eigen::Vector3d ad = a_dir.cross(d);
    int i = 0;
    td.cwiseAbs().maxCoeff(&i);
    if (std::abs(td[i]) < 1e-15) return std::nullopt;
    return -ad[i] / td[i];
  };

  const Eigen::Vector2d dir = (ub - ua) / seg_len;
  const Eigen::Vector2d u_best = ua + (s_refined / n_steps) * (ub - ua);
  const auto rho_best = rho_from_pixel(u_best);
  if (!rho_best) return false;

  const auto r_minus = rho_from_pixel(u_best - dir);
  const auto r_plus = rho_from_pixel(u_best + dir);
  if (!r_minus || !r_plus) return false;

  double new_lo = std::min(*r_minus, *r_plus);
  double new_hi = std::max(*r_minus, *r_plus);
  // Never widen the interval.
  new_lo = std::max(new_lo, candidate.rho_min);
  new_hi = std::min(new_hi, candidate.rho_max);
  if (new_lo > new_hi) {
    new_lo = std::clamp(*rho_best * 0.98, candidate.rho_min, candidate.rho_max);
    new_hi = std::clamp(*rho_best * 1.02, candidate.rho_min, candidate.rho_max);
    if (new_lo > new_hi) std::swap(new_lo, new_hi);
  }
  candidate.rho_min = new_lo;
  candidate.rho_max = new_hi;
  candidate.rho = std::clamp(*rho_best, new_lo, new_hi);
  if (std::isfinite(second) && costs[best] >= 0.0)
    candidate.quality = std::min(1.0, second / (costs[best] + 1e-9) - 1.0);
  ++candidate.observation_count;
  return true;
}

// ---------------------------------------------------------------------------
// Point activation

std::vector<std::pair<int, int>> activate_points(Map& map, const Window& window,
                                                 DistanceMap& dmap,
                                                 const Config& config) {
  std::vector<std::pair<int, int>> activated;
  const Keyframe& latest = map.keyframe(window.latest_id);
  const Camerad& cam = latest.pyramid.camera(0);
  const SE3d latest_inv = latest.pose.inverse();

  std::vector<int> hosts = window.temporal;
  std::sort(hosts.begin(), hosts.end());

  for (int host_id : hosts) {
    if (host_id == window.latest_id) continue;
    Keyframe& host = map.keyframe(host_id);
    const SE3d rel = latest_inv * host.pose;
    for (auto& cand : host.candidates) {
      if (cand.discarded) continue;
      if (cand.observation_count < config.activation_min_observations) continue;
      if (cand.interval_ratio() >= config.activation_interval_ratio) continue;

      const auto x = backproject(cam, cand.pixel, cand.rho);
      if (!x) continue;
      const Eigen::Vector3d pl = rel * *x;
      if (!(pl.z() > 0.0)) continue;
      const auto u = project(cam, pl);
      if (!u || !in_margin(latest.pyramid.level(0), *u, kInteriorMargin)) continue;
      if (dmap.at(*u) <= config.depletion_radius) continue;  // not depleted, wait

      MapPoint point;
      point.host_id = host_id;
      point.pixel = cand.pixel;
      point.rho = cand.rho;
      point.status = PointStatus::kActive;
      point.observations.push_back({window.latest_id, 0xFF, false});
      for (int other : window.active_ids()) {
        if (other == host_id || other == window.latest_id) continue;
        const Keyframe& target = map.keyframe(other);
        const Eigen::Vector3d pt = target.pose.inverse() * (host.pose * *x);
        if (!(pt.z() > 0.0)) continue;
        const auto ut = project(cam, pt);
        if (!ut || !in_margin(target.pyramid.level(0), *ut, kInteriorMargin)) continue;
        point.observations.push_back({other, 0xFF, false});
      }

      host.points.push_back(point);
      cand.discarded = true;
      activated.emplace_back(host_id, int(host.points.size()) - 1);
      dmap.add_projections({*u});
    }
  }
  return activated;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(const Config& config, const Camerad& camera)
    : config_(config), camera_(camera) {}

Pipeline::~Pipeline() {
  if (threaded_) finish();
}

std::shared_ptr<const LocalMapSnapshot> Pipeline::snapshot() const {
  std::lock_guard<std::mutex> lock(snapshot_mutex_);
  return snapshot_;
}

Trajectory Pipeline::keyframe_trajectory() const {
  Trajectory traj;
  for (const auto& kf : map_.keyframes()) traj.add(kf.timestamp, kf.pose);
  return traj;
}

void Pipeline::apply_scale_factor(double factor) {
  if (last_pose_) last_pose_->translation() *= factor;
  if (velocity_) velocity_->translation() *= factor;
}

namespace {

std::vector<CandidatePoint> make_candidates(const GrayImage& img, int host_id,
                                            double rho_center, const Config& config) {
  std::vector<CandidatePoint> out;
  const auto pixels = select_candidates(img, config.candidate_count,
                                        config.candidate_block, config.candidate_margin);
  out.reserve(pixels.size());
  for (const auto& px : pixels) {
    CandidatePoint c;
    c.host_id = host_id;
    c.pixel = px.cast<double>();
    c.rho = rho_center;
    c.rho_min = rho_center / 10.0;
    c.rho_max = rho_center * 10.0;
    out.push_back(c);
  }
  return out;
}

LocalMapSnapshot candidate_snapshot(const Keyframe& kf) {
  LocalMapSnapshot snap;
  snap.reference_id = kf.id;
  snap.reference_pyramid = &kf.pyramid;
  snap.reference_pose = kf.pose;
  snap.reference_affine = kf.affine;
  double rho_sum = 0.0;
  for (const auto& c : kf.candidates) {
    if (c.discarded) continue;
    snap.points.push_back({c.pixel, c.rho});
    rho_sum += c.rho;
  }
  snap.mean_rho = snap.points.empty() ? 1.0 : rho_sum / double(snap.points.size());
  return snap;
}

}  // namespace

TrackedFrame Pipeline::run_tracker(double timestamp, const Pyramid& pyramid) {
  const auto snap = snapshot();
  SE3d guess = last_pose_.value_or(SE3d::identity());
  if (last_pose_ && velocity_) guess = *last_pose_ * *velocity_;

  TrackedFrame tracked = track_frame(pyramid, *snap, guess, last_affine_, config_);
  tracked.timestamp = timestamp;

  if (tracked.lost && last_pose_) {
    // Retry once from the identity motion model with extra coarse levels.
    const GrayImage& img = pyramid.level(0);
    int max_levels = 1;
    while ((img.width() >> max_levels) >= 32 && (img.height() >> max_levels) >= 32)
      ++max_levels;
    const int retry_levels = std::min(config_.pyramid_levels + 2, max_levels);
    const Pyramid retry_pyr = build_pyramid(img, camera_, retry_levels);
    tracked = track_frame(retry_pyr, *snap, *last_pose_, last_affine_, config_);
    tracked.timestamp = timestamp;
  }
  return tracked;
}

Pipeline::Status Pipeline::bootstrap_step(double timestamp,
                                          std::shared_ptr<Pyramid> pyramid) {
  if (map_.num_keyframes() == 0) {
    Keyframe kf;
    kf.timestamp = timestamp;
    kf.pyramid = *pyramid;
    kf.pose = SE3d::identity();
    const int id = map_.add_keyframe(std::move(kf));
    Keyframe& stored = map_.keyframe(id);
    stored.candidates = make_candidates(stored.pyramid.level(0), id, 1.0, config_);
    for (auto& c : stored.candidates) {
      c.rho_min = 0.05;
      c.rho_max = 20.0;
    }
    map_.temporal_ids() = {id};
    {
      std::lock_guard<std::mutex> lock(snapshot_mutex_);
      snapshot_ = std::make_shared<LocalMapSnapshot>(candidate_snapshot(stored));
    }
    last_pose_ = SE3d::identity();
    last_keyframe_time_ = timestamp;
    TrackedFrame tf;
    tf.timestamp = timestamp;
    frames_.push_back(tf);
    ++frame_index_;
    return Status::kBootstrapping;
  }

  TrackedFrame tracked = run_tracker(timestamp, *pyramid);
  // Depth estimates are still coarse; only a catastrophic failure aborts.
  if (tracked.inlier_ratio < 0.05) {
    ++frame_index_;
    if (frame_index_ > config_.bootstrap_frame_budget) {
      failed_ = true;
      return Status::kBootstrapFailed;
    }
    return Status::kBootstrapping;
  }
  frames_.push_back(tracked);

  Keyframe& kf0 = map_.keyframe(0);
  for (auto& cand : kf0.candidates)
    epipolar_search(cand, kf0, *pyramid, tracked.pose, tracked.affine, config_);

  if (last_pose_) velocity_ = last_pose_->inverse() * tracked.pose;
  last_pose_ = tracked.pose;
  last_affine_ = tracked.affine;

  // Promote once enough candidates converged with sufficient parallax.
  int converged = 0;
  double rho_sum = 0.0;
  int rho_n = 0;
  for (const auto& c : kf0.candidates) {
    if (c.discarded) continue;
    if (c.observation_count >= 1) {
      rho_sum += c.rho;
      ++rho_n;
    }
    if (c.observation_count >= config_.activation_min_observations &&
        c.interval_ratio() < config_.activation_interval_ratio)
      ++converged;
  }
  const double mean_rho = rho_n > 0 ? rho_sum / rho_n : 1.0;
  const SE3d rel = kf0.pose.inverse() * tracked.pose;
  const double parallax = rel.translation().norm() * mean_rho;

  {
    std::lock_guard<std::mutex> lock(snapshot_mutex_);
    snapshot_ = std::make_shared<LocalMapSnapshot>(candidate_snapshot(kf0));
  }

  if (parallax > config_.bootstrap_min_parallax &&
      converged >= config_.bootstrap_min_points) {
    MappingJob job{timestamp, pyramid, tracked, true};
    insert_keyframe(job);
    bootstrapped_ = true;
    ++frame_index_;
    return Status::kKeyframe;
  }

  ++frame_index_;
  if (frame_index_ > config_.bootstrap_frame_budget) {
    failed_ = true;
    return Status::kBootstrapFailed;
  }
  return Status::kBootstrapping;
}

Pipeline::Status Pipeline::process(double timestamp, const GrayImage& image) {
  if (failed_) return bootstrapped_ ? Status::kLost : Status::kBootstrapFailed;

  auto pyramid =
      std::make_shared<Pyramid>(build_pyramid(image, camera_, config_.pyramid_levels));

  if (!bootstrapped_) return bootstrap_step(timestamp, pyramid);

  const double t0 = now_ms();
  TrackedFrame tracked = run_tracker(timestamp, *pyramid);
  timings_.tracking_ms.push_back(now_ms() - t0);

  if (tracked.lost) {
    failed_ = true;
    return Status::kLost;
  }
  frames_.push_back(tracked);

  if (last_pose_) velocity_ = last_pose_->inverse() * tracked.pose;
  last_pose_ = tracked.pose;
  last_affine_ = tracked.affine;

  const auto [make_kf, scores] = keyframe_decision(tracked, *snapshot(), config_);
  MappingJob job{timestamp, pyramid, tracked, make_kf};
  mapping_step(job);
  ++frame_index_;
  return make_kf ? Status::kKeyframe : Status::kTracked;
}

void Pipeline::mapping_step(const MappingJob& job) {
  for (int kf_id : map_.temporal_ids()) {
    Keyframe& kf = map_.keyframe(kf_id);
    for (auto& cand : kf.candidates)
      epipolar_search(cand, kf, *job.pyramid, job.tracked.pose, job.tracked.affine,
                      config_);
  }
  if (job.make_keyframe) {
    const double t0 = now_ms();
    insert_keyframe(job);
    timings_.mapping_ms.push_back(now_ms() - t0);
    if (last_keyframe_time_ >= 0.0)
      timings_.keyframe_period_ms.push_back((job.timestamp - last_keyframe_time_) * 1e3);
    last_keyframe_time_ = job.timestamp;
  }
}

void Pipeline::insert_keyframe(const MappingJob& job) {
  Keyframe kf;
  kf.timestamp = job.timestamp;
  kf.pyramid = *job.pyramid;
  kf.pose = job.tracked.pose;
  kf.affine = job.tracked.affine;
  const int id = map_.add_keyframe(std::move(kf));
  Keyframe& latest = map_.keyframe(id);

  const auto snap = snapshot();
  const double rho_center = (snap && !snap->points.empty()) ? snap->mean_rho : 1.0;
  latest.candidates = make_candidates(latest.pyramid.level(0), id, rho_center, config_);

  // Temporal window update with the spatial-distribution drop rule.
  auto& temporal = map_.temporal_ids();
  temporal.insert(temporal.begin(), id);
  if (int(temporal.size()) > config_.temporal_keyframes) {
    const int dropped = temporal_drop(map_, temporal);
    temporal.erase(std::remove(temporal.begin(), temporal.end(), dropped),
                   temporal.end());
    map_.keyframe(dropped).candidates.clear();  // candidates live with the window
  }

  const Camerad& cam = latest.pyramid.camera(0);
  const SE3d latest_inv = latest.pose.inverse();
  auto add_observations_into_latest = [&](int host_id, bool check_angle) {
    Keyframe& host = map_.keyframe(host_id);
    const SE3d rel = latest_inv * host.pose;
    const double cos_thresh = std::cos(config_.max_view_angle_deg * M_PI / 180.0);
    for (auto& p : host.points) {
      if (!p.alive() || p.find_observation(id)) continue;
      const auto x = backproject(cam, p.pixel, p.rho);
      if (!x) continue;
      const Eigen::Vector3d pl = rel * *x;
      if (!(pl.z() > 0.0)) continue;
      const auto u = project(cam, pl);
      if (!u || !in_margin(latest.pyramid.level(0), *u, kInteriorMargin)) continue;
      if (check_angle) {
        const Eigen::Vector3d xw = host.pose * *x;
        const Eigen::Vector3d to_host = (host.center() - xw).normalized();
        const Eigen::Vector3d to_latest = (latest.center() - xw).normalized();
        if (to_host.dot(to_latest) < cos_thresh) continue;
      }
      p.observations.push_back({id, 0xFF, false});
    }
  };

  for (int host_id : temporal)
    if (host_id != id) add_observations_into_latest(host_id, false);

  // Covisible part: reincorporate already mapped areas before activating
  // new points.
  DistanceMap dmap = build_distance_map(
      map_, id, project_points_into(map_, temporal, id), config_.distance_map_stride);
  Window window;
  window.latest_id = id;
  window.temporal = temporal;
  window.covisible = select_covisible(map_, id, dmap, config_.window_config());
  for (int cov_id : window.covisible) add_observations_into_latest(cov_id, true);
  window.fixed = fix_gauge(map_, window.active_ids());

  const auto activated = activate_points(map_, window, dmap, config_);
  last_activation_count_ = int(activated.size());
  last_covisible_ = window.covisible;
  covisible_history_.push_back(int(window.covisible.size()));
  activation_history_.push_back(last_activation_count_);

  PbaProblem problem = PbaProblem::from_window(map_, window);
  const PbaReport report = solve(problem, config_.pba_config());
  if (report.scale_factor != 1.0) apply_scale_factor(report.scale_factor);
  last_pose_ = map_.keyframe(id).pose;
  last_affine_ = map_.keyframe(id).affine;

  update_masks(map_, window, report.final_models, config_.grad_weight_c,
               config_.obs_remove_ratio);
  enforce_maturity(map_, id, window.active_ids());

  refresh_snapshot(window);
}

void Pipeline::refresh_snapshot(const Window& window) {
  auto snap = std::make_shared<LocalMapSnapshot>(build_snapshot(map_, window));
  if (snap->points.empty()) {
    // Keep tracking alive on the candidate set until points activate.
    *snap = candidate_snapshot(map_.keyframe(window.latest_id));
  }
  std::lock_guard<std::mutex> lock(snapshot_mutex_);
  snapshot_ = std::move(snap);
}

// ---------------------------------------------------------------------------
// Two-stream mode

void Pipeline::start_threaded() {
  threaded_ = true;
  stop_requested_ = false;
  mapping_thread_ = std::thread([this] { mapping_loop(); });
}

Pipeline::Status Pipeline::enqueue(double timestamp, const GrayImage& image) {
  if (failed_) return bootstrapped_ ? Status::kLost : Status::kBootstrapFailed;

  auto pyramid =
      std::make_shared<Pyramid>(build_pyramid(image, camera_, config_.pyramid_levels));
  if (!bootstrapped_) {
    // Bootstrap runs synchronously; the map is not yet shared.
    return bootstrap_step(timestamp, pyramid);
  }

  const double t0 = now_ms();
  TrackedFrame tracked = run_tracker(timestamp, *pyramid);
  timings_.tracking_ms.push_back(now_ms() - t0);
  if (tracked.lost) {
    failed_ = true;
    return Status::kLost;
  }
  frames_.push_back(tracked);
  if (last_pose_) velocity_ = last_pose_->inverse() * tracked.pose;
  last_pose_ = tracked.pose;
  last_affine_ = tracked.affine;

  const auto [make_kf, scores] = keyframe_decision(tracked, *snapshot(), config_);
  {
    std::lock_guard<std::mutex> lock(queue_mutex_);
    queue_.push(MappingJob{timestamp, pyramid, tracked, make_kf});
  }
  queue_cv_.notify_one();
  ++frame_index_;
  return make_kf ? Status::kKeyframe : Status::kTracked;
}

void Pipeline::mapping_loop() {
  for (;;) {
    MappingJob job;
    {
      std::unique_lock<std::mutex> lock(queue_mutex_);
      queue_cv_.wait(lock, [this] { return !queue_.empty() || stop_requested_; });
      if (queue_.empty()) {
        if (stop_requested_) return;
        continue;
      }
      job = queue_.front();
      queue_.pop();
    }
    mapping_step(job);
  }
}

void Pipeline::finish() {
  if (!threaded_) return;
  stop_requested_ = true;
  queue_cv_.notify_all();
  if (mapping_thread_.joinable()) mapping_thread_.join();
  threaded_ = false;
}

}  // namespace pslam
