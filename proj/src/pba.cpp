#include "pslam/pba.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <set>

#include "pslam/photometric.hpp"

namespace pslam {

// ---------------------------------------------------------------------------
// Problem construction

std::vector<int> fix_gauge(const Map& map, const std::vector<int>& active_ids) {
  const std::set<int> active(active_ids.begin(), active_ids.end());
  std::set<int> fixed;

  // Keyframes observing points hosted in the active set.
  for (int a : active_ids) {
    for (const auto& p : map.keyframe(a).points) {
      if (!p.alive()) continue;
      for (const auto& o : p.observations)
        if (!active.count(o.target_id)) fixed.insert(o.target_id);
    }
  }
  // Keyframes hosting points observed by the active set.
  for (const auto& kf : map.keyframes()) {
    if (active.count(kf.id) || fixed.count(kf.id)) continue;
    for (const auto& p : kf.points) {
      if (!p.alive()) continue;
      bool seen = false;
      for (const auto& o : p.observations)
        if (active.count(o.target_id)) {
          seen = true;
          break;
        }
      if (seen) {
        fixed.insert(kf.id);
        break;
      }
    }
  }
  return std::vector<int>(fixed.begin(), fixed.end());
}

void PbaProblem::finalize() {
  std::sort(active_ids.begin(), active_ids.end());
  std::sort(fixed_ids.begin(), fixed_ids.end());

  state_kfs_.clear();
  for (int id : active_ids)
    if (id != anchor_kf) state_kfs_.push_back(id);

  const std::set<int> window_set = [this] {
    std::set<int> s(active_ids.begin(), active_ids.end());
    s.insert(fixed_ids.begin(), fixed_ids.end());
    return s;
  }();
  const std::set<int> active_set(active_ids.begin(), active_ids.end());

  points.clear();
  observations.clear();
  point_state_dim_ = 0;

  for (int host_id : active_ids) {
    const Keyframe& host = map->keyframe(host_id);
    for (int idx = 0; idx < int(host.points.size()); ++idx) {
      const MapPoint& p = host.points[idx];
      if (!p.alive()) continue;
      PbaPoint pp;
      pp.host_kf = host_id;
      pp.point_idx = idx;
      const bool pinned = (host_id == pinned_point.first && idx == pinned_point.second);
      pp.state_idx = pinned ? -1 : point_state_dim_++;
      const int problem_point = int(points.size());
      points.push_back(pp);

      for (const auto& o : p.observations) {
        if (o.target_id == host_id || !window_set.count(o.target_id)) continue;
        observations.push_back({host_id, idx, problem_point, o.target_id});
      }
    }
  }
  // Fixed-host points reobserved by active keyframes pin the gauge.
  for (int host_id : fixed_ids) {
    const Keyframe& host = map->keyframe(host_id);
    for (int idx = 0; idx < int(host.points.size()); ++idx) {
      const MapPoint& p = host.points[idx];
      if (!p.alive()) continue;
      for (const auto& o : p.observations) {
        if (!active_set.count(o.target_id)) continue;
        observations.push_back({host_id, idx, -1, o.target_id});
      }
    }
  }
}

int PbaProblem::camera_state_offset(int kf_id) const {
  auto it = std::find(state_kfs_.begin(), state_kfs_.end(), kf_id);
  if (it == state_kfs_.end()) return -1;
  return 8 * int(it - state_kfs_.begin());
}

PbaProblem PbaProblem::from_window(Map& map, const Window& window) {
  PbaProblem problem;
  problem.map = &map;
  problem.active_ids = window.active_ids();
  problem.fixed_ids = window.fixed;
  if (problem.fixed_ids.empty()) {
    // Bootstrap gauge: hold the oldest active keyframe and renormalize
    // the inverse depth scale after the solve.
    problem.anchor_kf =
        *std::min_element(problem.active_ids.begin(), problem.active_ids.end());
    problem.normalize_scale_after = true;
  }
  problem.finalize();
  return problem;
}

PbaProblem PbaProblem::global(Map& map) {
  PbaProblem problem;
  problem.map = &map;
  for (const auto& kf : map.keyframes()) problem.active_ids.push_back(kf.id);
  problem.anchor_kf = problem.active_ids.empty() ? -1 : problem.active_ids.front();
  // One pinned inverse depth serves as the scale constraint.
  for (const auto& kf : map.keyframes()) {
    for (int idx = 0; idx < int(kf.points.size()); ++idx) {
      if (kf.points[idx].alive()) {
        problem.pinned_point = {kf.id, idx};
        break;
      }
    }
    if (problem.pinned_point.first >= 0) break;
  }
  problem.finalize();
  return problem;
}

// ---------------------------------------------------------------------------
// State handling

PbaState capture_state(const PbaProblem& problem) {
  PbaState state;
  for (int id : problem.active_ids) {
    const Keyframe& kf = problem.map->keyframe(id);
    state.poses[id] = kf.pose;
    state.affines[id] = kf.affine;
  }
  state.rho.resize(problem.points.size());
  for (size_t i = 0; i < problem.points.size(); ++i) {
    const auto& pp = problem.points[i];
    state.rho[i] = problem.map->keyframe(pp.host_kf).points[pp.point_idx].rho;
  }
  return state;
}

void write_back_state(PbaProblem& problem, const PbaState& state) {
  for (int id : problem.active_ids) {
    Keyframe& kf = problem.map->keyframe(id);
    kf.pose = state.poses.at(id);
    kf.affine = state.affines.at(id);
  }
  for (size_t i = 0; i < problem.points.size(); ++i) {
    const auto& pp = problem.points[i];
    problem.map->keyframe(pp.host_kf).points[pp.point_idx].rho = state.rho[i];
  }
}

namespace {

FrameView make_view(const PbaProblem& problem, const PbaState& state, int kf_id,
                    int level) {
  const Keyframe& kf = problem.map->keyframe(kf_id);
  FrameView v;
  v.image = &kf.pyramid.level(level);
  auto pose_it = state.poses.find(kf_id);
  if (pose_it != state.poses.end()) {
    v.pose = pose_it->second;
    v.affine = state.affines.at(kf_id);
  } else {
    v.pose = kf.pose;
    v.affine = kf.affine;
  }
  return v;
}

double observation_rho(const PbaProblem& problem, const PbaState& state,
                       const PbaObservation& obs) {
  if (obs.problem_point >= 0) return state.rho[obs.problem_point];
  return problem.map->keyframe(obs.host_kf).points[obs.point_idx].rho;
}

struct PixelBuffer {
  std::vector<uint8_t> valid;
  std::vector<double> r;
  std::vector<double> w;  // frozen weights of the linearization point

  void resize(size_t n_obs) {
    valid.assign(n_obs * 8, 0);
    r.assign(n_obs * 8, 0.0);
    w.assign(n_obs * 8, 0.0);
  }
};

// Evaluates one observation's patch; returns the per-pixel evals and the
// mid-optimization discard decision against the target's 95% percentile.
struct ObsEval {
  std::array<ResidualEval, 8> pixel;
  bool discarded = false;
};

ObsEval evaluate_observation(const PbaProblem& problem, const PbaState& state, int level,
                             const PbaObservation& obs, const ErrorModel& target_model,
                             const PbaConfig& config, bool with_jacobians) {
  const Keyframe& host_kf = problem.map->keyframe(obs.host_kf);
  const FrameView host = make_view(problem, state, obs.host_kf, level);
  const FrameView target = make_view(problem, state, obs.target_kf, level);
  const SE3d rel = relative(target.pose, host.pose);
  const Camerad& cam = host_kf.pyramid.camera(level);
  const Eigen::Vector2d px = level_pixel(host_kf.points[obs.point_idx].pixel, level);
  const double rho = observation_rho(problem, state, obs);

  ObsEval out;
  int outliers = 0;
  const auto& pattern = patch_pattern();
  for (int k = 0; k < 8; ++k) {
    out.pixel[k] = residual_at(host, target, rel, cam, px, rho, pattern[k],
                               config.grad_weight_c, with_jacobians);
    if (!out.pixel[k].valid || std::abs(out.pixel[k].residual) > target_model.percentile95)
      ++outliers;
  }
  out.discarded = double(outliers) / 8.0 > config.discard_ratio;
  return out;
}

const ErrorModel& model_for(const std::map<int, ErrorModel>& models, int kf_id) {
  static const ErrorModel fallback{};
  auto it = models.find(kf_id);
  return it == models.end() ? fallback : it->second;
}

}  // namespace

std::map<int, ErrorModel> fit_window_models(const PbaProblem& problem,
                                            const PbaState& state, int level,
                                            const PbaConfig& config) {
  std::map<int, std::vector<double>> samples;
  std::vector<double> pool;

  for (const auto& obs : problem.observations) {
    if (obs.problem_point < 0) continue;  // active-point observations only
    const Keyframe& host_kf = problem.map->keyframe(obs.host_kf);
    const FrameView host = make_view(problem, state, obs.host_kf, level);
    const FrameView target = make_view(problem, state, obs.target_kf, level);
    const SE3d rel = relative(target.pose, host.pose);
    const Camerad& cam = host_kf.pyramid.camera(level);
    const Eigen::Vector2d px = level_pixel(host_kf.points[obs.point_idx].pixel, level);
    const double rho = observation_rho(problem, state, obs);
    for (const auto& offset : patch_pattern()) {
      const ResidualEval ev =
          residual_at(host, target, rel, cam, px, rho, offset, config.grad_weight_c, false);
      if (!ev.valid) continue;
      samples[obs.target_kf].push_back(ev.residual);
      pool.push_back(ev.residual);
    }
  }

  std::optional<ErrorModel> pool_model =
      fit_error_model(pool, config.model_kind, config.min_fit_samples);

  std::map<int, ErrorModel> models;
  std::vector<int> window_ids = problem.active_ids;
  window_ids.insert(window_ids.end(), problem.fixed_ids.begin(), problem.fixed_ids.end());
  for (int id : window_ids) {
    std::optional<ErrorModel> m;
    auto it = samples.find(id);
    if (it != samples.end())
      m = fit_error_model(it->second, config.model_kind, config.min_fit_samples);
    if (!m) m = pool_model;
    if (m) models[id] = *m;
  }
  return models;
}

double evaluate_energy(const PbaProblem& problem, const PbaState& state, int level,
                       const std::map<int, ErrorModel>& models, const PbaConfig& config) {
  double energy = 0.0;
  for (const auto& obs : problem.observations) {
    const ErrorModel& model = model_for(models, obs.target_kf);
    const ObsEval ev =
        evaluate_observation(problem, state, level, obs, model, config, false);
    if (ev.discarded) continue;
    for (const auto& pix : ev.pixel) {
      if (!pix.valid) continue;
      energy += model.weight(pix.residual) * pix.gradient_weight * pix.residual *
                pix.residual;
    }
  }
  return energy;
}

NormalEquations assemble_normal_equations(const PbaProblem& problem,
                                          const PbaState& state, int level,
                                          const std::map<int, ErrorModel>& models,
                                          const PbaConfig& config) {
  const int cam_dim = problem.camera_state_dim();
  const int point_dim = problem.point_state_dim();

  NormalEquations eq;
  eq.h_cc = Eigen::MatrixXd::Zero(cam_dim, cam_dim);
  eq.h_cp = Eigen::MatrixXd::Zero(point_dim, cam_dim);
  eq.h_pp = Eigen::VectorXd::Zero(point_dim);
  eq.b_c = Eigen::VectorXd::Zero(cam_dim);
  eq.b_p = Eigen::VectorXd::Zero(point_dim);

  for (const auto& obs : problem.observations) {
    const ErrorModel& model = model_for(models, obs.target_kf);
    const ObsEval ev = evaluate_observation(problem, state, level, obs, model, config, true);
    if (ev.discarded) continue;

    const int ho = problem.camera_state_offset(obs.host_kf);
    const int to = problem.camera_state_offset(obs.target_kf);
    const int ps = obs.problem_point >= 0
                       ? problem.points[obs.problem_point].state_idx
                       : -1;

    for (const auto& pix : ev.pixel) {
      if (!pix.valid) continue;
      const double w = model.weight(pix.residual) * pix.gradient_weight;
      const double r = pix.residual;
      eq.energy += w * r * r;

      Eigen::Matrix<double, 1, 8> jh, jt;
      if (ho >= 0) {
        jh << pix.j_host_pose, pix.j_affine(0), pix.j_affine(1);
        eq.h_cc.block<8, 8>(ho, ho) += w * jh.transpose() * jh;
        eq.b_c.segment<8>(ho) += w * r * jh.transpose();
      }
      if (to >= 0) {
        jt << pix.j_target_pose, pix.j_affine(2), pix.j_affine(3);
        eq.h_cc.block<8, 8>(to, to) += w * jt.transpose() * jt;
        eq.b_c.segment<8>(to) += w * r * jt.transpose();
        if (ho >= 0) {
          const Eigen::Matrix<double, 8, 8> cross = w * jh.transpose() * jt;
          eq.h_cc.block<8, 8>(ho, to) += cross;
          eq.h_cc.block<8, 8>(to, ho) += cross.transpose();
        }
      }
      if (ps >= 0) {
        eq.h_pp(ps) += w * pix.j_rho * pix.j_rho;
        eq.b_p(ps) += w * r * pix.j_rho;
        if (ho >= 0) eq.h_cp.block<1, 8>(ps, ho) += w * pix.j_rho * jh;
        if (to >= 0) eq.h_cp.block<1, 8>(ps, to) += w * pix.j_rho * jt;
      }
    }
  }
  eq.quadratic_energy = eq.energy;
  return eq;
}

SchurSystem schur_reduce(const NormalEquations& eq, double lambda) {
  SchurSystem sys;
  sys.s = eq.h_cc;
  sys.s.diagonal() *= (1.0 + lambda);
  sys.rhs = -eq.b_c;
  sys.excluded.assign(eq.h_pp.size(), 0);

  for (int p = 0; p < eq.h_pp.size(); ++p) {
    const double d = eq.h_pp(p) * (1.0 + lambda);
    if (!(d > 1e-300)) {
      sys.excluded[p] = 1;
      continue;
    }
    sys.s.noalias() -= eq.h_cp.row(p).transpose() * (eq.h_cp.row(p) / d);
    sys.rhs.noalias() += eq.h_cp.row(p).transpose() * (eq.b_p(p) / d);
  }
  return sys;
}

StepResult lm_step(const NormalEquations& eq, double lambda) {
  StepResult result;
  const SchurSystem sys = schur_reduce(eq, lambda);

  if (sys.s.size() > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(sys.s);
    if (llt.info() != Eigen::Success) return result;
    result.d_cam = llt.solve(sys.rhs);
    if (!result.d_cam.allFinite()) return result;
  } else {
    result.d_cam.resize(0);
  }

  result.d_point.resize(eq.h_pp.size());
  for (int p = 0; p < eq.h_pp.size(); ++p) {
    if (sys.excluded[p]) {
      result.d_point(p) = 0.0;
      continue;
    }
    const double d = eq.h_pp(p) * (1.0 + lambda);
    double coupling = 0.0;
    if (sys.s.size() > 0) coupling = eq.h_cp.row(p).dot(result.d_cam);
    result.d_point(p) = -(eq.b_p(p) + coupling) / d;
  }
  if (!result.d_point.allFinite()) return result;
  result.ok = true;
  return result;
}

namespace {

PbaState apply_step(const PbaProblem& problem, const PbaState& state,
                    const StepResult& step) {
  PbaState out = state;
  for (size_t i = 0; i < problem.state_kfs().size(); ++i) {
    const int id = problem.state_kfs()[i];
    const Eigen::Index off = 8 * Eigen::Index(i);
    const Twistd xi = step.d_cam.segment<6>(off);
    out.poses[id] = se3_exp(xi) * state.poses.at(id);
    out.affines[id].a = state.affines.at(id).a + step.d_cam(off + 6);
    out.affines[id].b = state.affines.at(id).b + step.d_cam(off + 7);
  }
  for (size_t i = 0; i < problem.points.size(); ++i) {
    const int ps = problem.points[i].state_idx;
    if (ps < 0) continue;
    out.rho[i] = std::clamp(state.rho[i] + step.d_point(ps), 1e-8, 1e8);
  }
  return out;
}

// Robust energy of the candidate plus the frozen-weight surrogate pair
// over pixels valid at both iterates.
struct CandidateMetrics {
  double energy = 0.0;
  double surrogate_new = 0.0;
  double surrogate_old = 0.0;
};

CandidateMetrics evaluate_candidate(const PbaProblem& problem, const PbaState& candidate,
                                    int level, const std::map<int, ErrorModel>& models,
                                    const PbaConfig& config, const PixelBuffer& frozen) {
  CandidateMetrics m;
  for (size_t oi = 0; oi < problem.observations.size(); ++oi) {
    const auto& obs = problem.observations[oi];
    const ErrorModel& model = model_for(models, obs.target_kf);
    const ObsEval ev =
        evaluate_observation(problem, candidate, level, obs, model, config, false);
    for (int k = 0; k < 8; ++k) {
      const size_t key = oi * 8 + k;
      const bool new_valid = !ev.discarded && ev.pixel[k].valid;
      if (new_valid) {
        const double r = ev.pixel[k].residual;
        m.energy += model.weight(r) * ev.pixel[k].gradient_weight * r * r;
        if (frozen.valid[key]) {
          m.surrogate_new += frozen.w[key] * r * r;
          m.surrogate_old += frozen.w[key] * frozen.r[key] * frozen.r[key];
        }
      }
    }
  }
  return m;
}

// Records the frozen weights and residuals of the linearization point so
// the surrogate comparison uses a consistent pixel set.
PixelBuffer freeze_pixels(const PbaProblem& problem, const PbaState& state, int level,
                          const std::map<int, ErrorModel>& models,
                          const PbaConfig& config) {
  PixelBuffer buf;
  buf.resize(problem.observations.size());
  for (size_t oi = 0; oi < problem.observations.size(); ++oi) {
    const auto& obs = problem.observations[oi];
    const ErrorModel& model = model_for(models, obs.target_kf);
    const ObsEval ev =
        evaluate_observation(problem, state, level, obs, model, config, false);
    if (ev.discarded) continue;
    for (int k = 0; k < 8; ++k) {
      if (!ev.pixel[k].valid) continue;
      const size_t key = oi * 8 + k;
      buf.valid[key] = 1;
      buf.r[key] = ev.pixel[k].residual;
      buf.w[key] = model.weight(ev.pixel[k].residual) * ev.pixel[k].gradient_weight;
    }
  }
  return buf;
}

void renormalize_scale(Map& map, const PbaProblem& problem, PbaReport& report) {
  double sum = 0.0;
  int n = 0;
  for (const auto& pp : problem.points) {
    sum += map.keyframe(pp.host_kf).points[pp.point_idx].rho;
    ++n;
  }
  if (n == 0 || sum <= 0.0) return;
  const double m = sum / double(n);
  for (auto& kf : map.keyframes()) {
    kf.pose.translation() *= m;
    for (auto& p : kf.points) p.rho /= m;
    for (auto& c : kf.candidates) {
      c.rho /= m;
      c.rho_min /= m;
      c.rho_max /= m;
    }
  }
  report.scale_factor = m;
}

}  // namespace

PbaReport solve(PbaProblem& problem, const PbaConfig& config) {
  PbaReport report;
  if (problem.observations.empty() || problem.active_ids.empty()) {
    report.converged = true;
    return report;
  }

  PbaState state = capture_state(problem);
  const PbaState initial_state = state;

  for (int level = config.n_levels - 1; level >= 0; --level) {
    // Error distributions are fit at the start of each level and frozen;
    // outlier decisions do not propagate across levels.
    const std::map<int, ErrorModel> models =
        fit_window_models(problem, state, level, config);

    PbaLevelReport lr;
    lr.level = level;
    double energy = evaluate_energy(problem, state, level, models, config);
    lr.initial_energy = energy;

    double lambda = config.initial_lambda;
    int consecutive_small = 0;
    bool need_assemble = true;
    NormalEquations eq;
    PixelBuffer frozen;

    while (lr.iterations < config.max_iterations) {
      if (need_assemble) {
        eq = assemble_normal_equations(problem, state, level, models, config);
        frozen = freeze_pixels(problem, state, level, models, config);
        need_assemble = false;
      }
      ++lr.iterations;

      const StepResult step = lm_step(eq, lambda);
      if (!step.ok) {
        ++lr.rejected;
        lambda *= config.lambda_up;
        if (lambda > config.lambda_max) {
          report.hit_damping_cap = true;
          break;
        }
        continue;
      }

      const PbaState candidate = apply_step(problem, state, step);
      const CandidateMetrics metrics =
          evaluate_candidate(problem, candidate, level, models, config, frozen);

      const bool accept = metrics.energy < energy &&
                          metrics.surrogate_new <= metrics.surrogate_old;
      if (!accept) {
        ++lr.rejected;
        lambda *= config.lambda_up;
        if (lambda > config.lambda_max) {
          report.hit_damping_cap = true;
          break;
        }
        continue;
      }

      const double rel_decrease = (energy - metrics.energy) / std::max(energy, 1e-12);
      double update = 0.0;
      if (step.d_cam.size() > 0) update = step.d_cam.lpNorm<Eigen::Infinity>();
      if (step.d_point.size() > 0)
        update = std::max(update, step.d_point.lpNorm<Eigen::Infinity>());
      lr.max_update = std::max(lr.max_update, update);

      state = candidate;
      energy = metrics.energy;
      ++lr.accepted;
      lambda = std::max(lambda * config.lambda_down, 1e-12);
      need_assemble = true;

      if (rel_decrease < config.convergence) {
        if (++consecutive_small >= 2) {
          report.converged = true;
          break;
        }
      } else {
        consecutive_small = 0;
      }
    }
    lr.final_energy = energy;
    report.levels.push_back(lr);
  }

  // The level-0 energy must not exceed its value at the initial estimate.
  report.final_models = fit_window_models(problem, state, 0, config);
  const double final_e0 = evaluate_energy(problem, state, 0, report.final_models, config);
  const double init_e0 =
      evaluate_energy(problem, initial_state, 0, report.final_models, config);
  if (final_e0 > init_e0) {
    state = initial_state;
    report.reverted_to_initial = true;
    report.final_models = fit_window_models(problem, state, 0, config);
  }

  write_back_state(problem, state);
  if (problem.normalize_scale_after && problem.fixed_ids.empty())
    renormalize_scale(*problem.map, problem, report);
  return report;
}

}  // namespace pslam
