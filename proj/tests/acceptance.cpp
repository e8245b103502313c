#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "pslam/config.hpp"
#include "pslam/frontend.hpp"
#include "pslam/io_eval.hpp"
#include "pslam/pba.hpp"
#include "pslam/photometric.hpp"
#include "pslam/synthetic.hpp"
#include "test_support.hpp"

using namespace pslam;
using namespace pslam::testing;
namespace fs = std::filesystem;

namespace {

void report(int n, const std::string& name, bool pass) {
  std::printf("[ACCEPTANCE] criterion %2d (%s): %s\n", n, name.c_str(),
              pass ? "PASS" : "FAIL");
  std::fflush(stdout);
  CHECK_MESSAGE(pass, "criterion " << n << " " << name);
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::mt19937 rng(2024);

GrayImage bilinear_image(int w, int h, int a, int bx, int by, int cxy) {
  GrayImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img(x, y) = float(a + bx * x + by * y + cxy * x * y);
  return img;
}

struct RunOutcome {
  bool ok = false;
  double ate = -1.0;
  double pse_median = -1.0;
  int keyframes = 0;
  std::vector<int> covisible_history;
  std::vector<int> activation_history;
  Trajectory est, gt;
};

RunOutcome run_synthetic(const SequenceSpec& spec, const Config& config,
                         bool want_pse) {
  RunOutcome out;
  const auto frames = render_sequence(spec);
  Pipeline pipeline(config, default_camera(spec.width, spec.height));
  for (const auto& f : frames) {
    const auto status = pipeline.process(f.timestamp, f.image);
    if (status == Pipeline::Status::kLost ||
        status == Pipeline::Status::kBootstrapFailed)
      return out;
    out.gt.add(f.timestamp, f.pose);
  }
  if (!pipeline.bootstrapped() || pipeline.map().num_keyframes() < 4) return out;

  out.est = pipeline.keyframe_trajectory();
  try {
    const Sim3d align = align_sim3(out.est, out.gt);
    out.ate = rms_ate(out.est, out.gt, align);
    if (want_pse) {
      std::vector<Eigen::Vector3d> points;
      for (const auto& kf : pipeline.map().keyframes())
        for (const auto& p : kf.points)
          if (p.alive()) points.push_back(pipeline.map().point_world(p));
      const Scene scene = make_scene(spec.extent, spec.with_occluders);
      const auto surface = sample_scene_surface(scene, 300000, 77);
      out.pse_median = pse(points, surface, align).p50;
    }
  } catch (const std::exception&) {
    return out;
  }
  out.keyframes = pipeline.map().num_keyframes();
  out.covisible_history = pipeline.covisible_history();
  out.activation_history = pipeline.activation_history();
  out.ok = true;
  return out;
}

}  // namespace

TEST_CASE("criterion 1: jacobian correctness") {
  const auto t0 = std::chrono::steady_clock::now();
  const double step = 1e-5, tol = 1e-3;
  const Camerad cam(90, 88, 59.5, 44.5, 120, 90);
  std::uniform_int_distribution<int> base(80, 160), slope(-4, 4), cross(-1, 1);
  std::uniform_real_distribution<double> px(12.0, 105.0), py(12.0, 75.0);
  std::uniform_real_distribution<double> rho_d(0.4, 2.0), aff_a(-0.3, 0.3),
      aff_b(-8.0, 8.0), u(-1.0, 1.0);

  int configs = 0, failures = 0;
  while (configs < 500) {
    int bx = slope(rng), by = slope(rng);
    if (bx == 0 && by == 0) bx = 3;
    GrayImage host_img = bilinear_image(120, 90, base(rng), bx, by, cross(rng));
    bx = slope(rng);
    by = slope(rng);
    if (bx == 0 && by == 0) by = -3;
    GrayImage target_img = bilinear_image(120, 90, base(rng), bx, by, cross(rng));

    Twistd xi_h, xi_rel;
    for (int i = 0; i < 3; ++i) {
      xi_h(i) = 0.3 * u(rng);
      xi_h(i + 3) = 0.1 * u(rng);
      xi_rel(i) = 0.08 * u(rng);
      xi_rel(i + 3) = 0.03 * u(rng);
    }
    FrameView host{&host_img, se3_exp(xi_h), {aff_a(rng), aff_b(rng)}};
    FrameView target{&target_img, host.pose * se3_exp(xi_rel),
                     {aff_a(rng), aff_b(rng)}};
    const Eigen::Vector2d pixel(px(rng), py(rng));
    const double rho = rho_d(rng);
    const Eigen::Vector2i offset = patch_pattern()[configs % 8];

    const auto ev = residual_jacobian(host, target, cam, pixel, rho, offset);
    if (!ev.valid) continue;
    ++configs;

    auto fd_check = [&](double analytic, double plus, double minus, bool both_valid) {
      if (!both_valid) return;
      const double fd = (plus - minus) / (2 * step);
      const double denom = std::max({std::abs(analytic), std::abs(fd), 1.0});
      if (std::abs(analytic - fd) / denom >= tol) ++failures;
    };

    for (int i = 0; i < 6; ++i) {
      Twistd xi = Twistd::Zero();
      xi(i) = step;
      FrameView hp = host, hm = host, tp = target, tm = target;
      hp.pose = se3_exp(xi) * host.pose;
      hm.pose = se3_exp<double>(-xi) * host.pose;
      tp.pose = se3_exp(xi) * target.pose;
      tm.pose = se3_exp<double>(-xi) * target.pose;
      const auto rhp = residual(hp, target, cam, pixel, rho, offset);
      const auto rhm = residual(hm, target, cam, pixel, rho, offset);
      fd_check(ev.j_host_pose(i), rhp.residual, rhm.residual, rhp.valid && rhm.valid);
      const auto rtp = residual(host, tp, cam, pixel, rho, offset);
      const auto rtm = residual(host, tm, cam, pixel, rho, offset);
      fd_check(ev.j_target_pose(i), rtp.residual, rtm.residual, rtp.valid && rtm.valid);
    }
    const auto rp = residual(host, target, cam, pixel, rho + step, offset);
    const auto rm = residual(host, target, cam, pixel, rho - step, offset);
    fd_check(ev.j_rho, rp.residual, rm.residual, rp.valid && rm.valid);

    for (int w = 0; w < 4; ++w) {
      FrameView hp = host, hm = host, tp = target, tm = target;
      double* params_p[4] = {&hp.affine.a, &hp.affine.b, &tp.affine.a, &tp.affine.b};
      double* params_m[4] = {&hm.affine.a, &hm.affine.b, &tm.affine.a, &tm.affine.b};
      *params_p[w] += step;
      *params_m[w] -= step;
      const auto a = w < 2 ? residual(hp, target, cam, pixel, rho, offset)
                           : residual(host, tp, cam, pixel, rho, offset);
      const auto b = w < 2 ? residual(hm, target, cam, pixel, rho, offset)
                           : residual(host, tm, cam, pixel, rho, offset);
      fd_check(ev.j_affine(w), a.residual, b.residual, a.valid && b.valid);
    }
  }
  const double elapsed = seconds_since(t0);
  report(1, "jacobians vs central differences", failures == 0 && elapsed < 10.0);
  MESSAGE("500 configurations in " << elapsed << " s, " << failures << " failures");
}

TEST_CASE("criterion 2: weight-function exactness") {
  bool ok = true;
  const double grid_r[] = {0.0, 0.5, -0.5, 2.0, -2.0, 7.5, -7.5, 30.0, -30.0};
  const double grid_sigma[] = {0.5, 1.0, 2.0, 5.0};
  const double grid_nu[] = {1.0, 3.0, 5.0, 20.0};
  const double grid_lambda[] = {1.0, 2.7, 5.0};
  for (double r : grid_r)
    for (double sigma : grid_sigma) {
      if (std::abs(weight_gaussian(r, sigma) - 1.0 / (sigma * sigma)) > 1e-12) ok = false;
      for (double nu : grid_nu) {
        const double z = r / sigma;
        if (std::abs(weight_tdist(r, nu, sigma) - (nu + 1.0) / (nu + z * z)) > 1e-12)
          ok = false;
      }
      for (double lambda : grid_lambda) {
        const double expect = std::abs(r) < lambda
                                  ? 1.0 / (sigma * sigma)
                                  : lambda / (sigma * sigma * std::abs(r));
        if (std::abs(weight_huber(r, sigma, lambda) - expect) > 1e-12) ok = false;
      }
    }

  // IRLS consistency via finite differences of log p.
  auto log_p = [](double r, double nu, double sigma) {
    return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
           0.5 * std::log(nu * M_PI) - std::log(sigma) -
           0.5 * (nu + 1.0) * std::log1p(r * r / (nu * sigma * sigma));
  };
  const double h = 1e-6;
  for (double nu : {2.0, 5.0, 11.0})
    for (double r : {0.3, 1.0, 2.5, 7.0})
      for (double sigma : {1.0, 0.5, 2.0}) {
        const double fd = (log_p(r + h, nu, sigma) - log_p(r - h, nu, sigma)) / (2 * h);
        const double irls = -fd / r;
        if (std::abs(irls - weight_tdist(r, nu, sigma) / (sigma * sigma)) > 1e-6)
          ok = false;
      }
  report(2, "Eq. weight closed forms + IRLS consistency", ok);
}

TEST_CASE("criterion 3: t-distribution fit recovery and MAD prefilter") {
  int good = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937 gen(1000 + trial);
    std::student_t_distribution<double> t(5.0);
    std::vector<double> samples(10000);
    for (auto& v : samples) v = 2.0 * t(gen);
    const TFit fit = fit_tdist(samples);
    if (fit.nu >= 3.5 && fit.nu <= 7.0 && fit.sigma >= 1.85 && fit.sigma <= 2.15) ++good;
  }

  // Contaminant removal: 2% of samples pushed to +-100 sigma.
  std::mt19937 gen(55);
  std::normal_distribution<double> g(0.0, 2.0);
  std::vector<double> samples(10000);
  for (auto& v : samples) v = g(gen);
  int contaminants = 0;
  for (size_t i = 0; i < samples.size(); i += 50) {
    samples[i] = (i % 100 == 0 ? 200.0 : -200.0);
    ++contaminants;
  }
  const auto filtered = prefilter(samples);
  int surviving = 0;
  if (filtered)
    for (double v : *filtered)
      if (std::abs(v) >= 200.0) ++surviving;
  const bool prefilter_ok =
      filtered && surviving <= contaminants / 100;  // >= 99% removed

  report(3, "Nelder-Mead t fit (>=95/100 trials) + MAD prefilter",
         good >= 95 && prefilter_ok);
  MESSAGE("t-fit successes: " << good << "/100, surviving contaminants: " << surviving);
}

TEST_CASE("criterion 4: coarse-to-fine necessity") {
  const auto t0 = std::chrono::steady_clock::now();
  RenderedProblemSpec spec;
  spec.n_keyframes = 5;
  spec.n_fixed = 1;
  spec.extent = 2.0;
  spec.points_per_keyframe = 60;
  spec.kind = TrajectoryKind::kRevisitLoop;

  // Perturbation beyond the single-level convergence basin.
  const double fraction = 0.035;

  auto run_with_levels = [&](int levels) {
    RenderedProblem setup = make_rendered_problem(spec);
    perturb_poses(setup, fraction, 333);
    PbaProblem problem = PbaProblem::from_window(setup.map, setup.window);
    PbaConfig config;
    config.n_levels = levels;
    solve(problem, config);

    // Common fixed yardstick: unweighted (unit gaussian) energy at level 0.
    std::map<int, ErrorModel> yardstick;
    ErrorModel unit;
    unit.kind = ErrorModelKind::kGaussian;
    unit.sigma = 1.0;
    unit.percentile95 = std::numeric_limits<double>::infinity();
    for (int id : problem.active_ids) yardstick[id] = unit;
    for (int id : problem.fixed_ids) yardstick[id] = unit;
    const PbaState state = capture_state(problem);
    const double energy = evaluate_energy(problem, state, 0, yardstick, config);
    const double ate = aligned_ate(setup.map, setup);

    // Relative pose error against ground truth.
    double max_rel = 0.0;
    for (int i = 1; i < spec.n_keyframes; ++i) {
      const SE3d rel_est =
          relative(setup.map.keyframe(i).pose, setup.map.keyframe(0).pose);
      const SE3d rel_gt = relative(setup.gt_poses[i], setup.gt_poses[0]);
      max_rel = std::max(max_rel,
                         (rel_est.translation() - rel_gt.translation()).norm());
    }
    return std::tuple<double, double, double>(energy, ate, max_rel);
  };

  const auto [e1, ate1, rel1] = run_with_levels(1);
  const auto [e2, ate2, rel2] = run_with_levels(2);
  const double elapsed = seconds_since(t0);

  const bool pass = e2 * 10.0 <= e1 && rel2 < 0.0005 * spec.extent && elapsed < 60.0;
  report(4, "2-level PBA vs 1-level on perturbed revisit loop", pass);
  MESSAGE("energy 1-level " << e1 << " vs 2-level " << e2 << " (ratio "
                            << e1 / std::max(e2, 1e-12) << "), rel pose err 2-level "
                            << rel2 << ", ate " << ate1 << " -> " << ate2 << ", "
                            << elapsed << " s");
}

TEST_CASE("criterion 5: LMCW selection exactness") {
  bool drop_ok = true;
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::uniform_int_distribution<int> size_d(4, 7);
  for (int trial = 0; trial < 1000; ++trial) {
    Map map;
    const int n = size_d(rng);
    for (int i = 0; i < n; ++i) {
      Keyframe kf;
      kf.timestamp = i;
      kf.pyramid = build_pyramid(GrayImage(16, 16, 1.f), Camerad(10, 10, 7.5, 7.5, 16, 16), 1);
      kf.pose = SE3d(Eigen::Matrix3d::Identity(), {u(rng), u(rng), u(rng)});
      map.add_keyframe(std::move(kf));
    }
    std::vector<int> temporal;
    for (int i = n - 1; i >= 0; --i) temporal.push_back(i);

    auto d = [&](int a, int b) {
      return std::max((map.keyframe(a).center() - map.keyframe(b).center()).norm(), 1e-12);
    };
    int best = -1;
    double best_score = -1.0;
    for (int i = 2; i < n; ++i) {
      double inv = 0.0;
      for (int j = 1; j < n; ++j)
        if (j != i) inv += 1.0 / d(temporal[i], temporal[j]);
      const double s = std::sqrt(d(temporal[0], temporal[i])) * inv;
      if (s > best_score || (s == best_score && temporal[i] < best)) {
        best_score = s;
        best = temporal[i];
      }
    }
    if (temporal_drop(map, temporal) != best) drop_ok = false;
  }

  // Covisible greedy vs a step-wise oracle on randomized corridor maps.
  bool covisible_ok = true;
  const WindowConfig cfg;
  std::uniform_real_distribution<double> x(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    Map map;
    for (int i = 0; i < 20; ++i) {
      Keyframe kf;
      kf.timestamp = i;
      kf.pyramid = build_pyramid(GrayImage(64, 48, 1.f), default_camera(64, 48), 1);
      kf.pose = SE3d(Eigen::Matrix3d::Identity(), {x(rng), 0, 0});
      const int id = map.add_keyframe(std::move(kf));
      for (int iy = 0; iy < 4; ++iy)
        for (int ix = 0; ix < 6; ++ix) {
          MapPoint p;
          p.host_id = id;
          p.pixel = Eigen::Vector2d(6 + ix * 10, 6 + iy * 11);
          p.rho = 0.2;
          p.status = PointStatus::kActive;
          map.keyframe(id).points.push_back(p);
        }
    }
    map.temporal_ids() = {19, 18, 17, 16};
    DistanceMap dmap = build_distance_map(
        map, 19, project_points_into(map, map.temporal_ids(), 19), cfg.distance_map_stride);

    // Oracle: recompute every score per round through covisible_score on a
    // fresh distance map maintained identically.
    DistanceMap oracle_dmap = build_distance_map(
        map, 19, project_points_into(map, map.temporal_ids(), 19), cfg.distance_map_stride);
    std::vector<int> oracle;
    for (int round = 0; round < cfg.covisible_size; ++round) {
      int best = -1, best_score = 0;
      for (int id = 0; id < 16; ++id) {
        if (std::find(oracle.begin(), oracle.end(), id) != oracle.end()) continue;
        const int s = covisible_score(map, id, 19, oracle_dmap, cfg, nullptr);
        if (s > best_score || (s == best_score && s > 0 && id < best)) {
          best_score = s;
          best = id;
        }
      }
      if (best < 0 || best_score == 0) break;
      oracle.push_back(best);
      std::vector<Eigen::Vector2d> accepted;
      covisible_score(map, best, 19, oracle_dmap, cfg, &accepted);
      oracle_dmap.add_projections(accepted);
    }
    if (select_covisible(map, 19, dmap, cfg) != oracle) covisible_ok = false;
  }
  report(5, "temporal drop + covisible greedy match oracles", drop_ok && covisible_ok);
}

TEST_CASE("criterion 6: outlier thresholds") {
  // Identical keyframes except for corrupted pattern pixels in the target.
  GrayImage img(64, 48);
  std::uniform_real_distribution<float> uf(50.f, 200.f);
  for (auto& v : img.data()) v = uf(rng);
  const Camerad cam = default_camera(64, 48);

  auto build_map = [&](int corrupt_pixels) {
    Map map;
    Keyframe a;
    a.pyramid = build_pyramid(img, cam, 1);
    a.pose = SE3d::identity();
    Keyframe b = a;
    GrayImage corrupted = img;
    for (int k = 0; k < corrupt_pixels; ++k) {
      const Eigen::Vector2i off = patch_pattern()[k];
      corrupted(32 + off.x(), 24 + off.y()) += 120.f;
    }
    b.pyramid = build_pyramid(corrupted, cam, 1);
    map.add_keyframe(std::move(a));
    map.add_keyframe(std::move(b));
    MapPoint p;
    p.host_id = 0;
    p.pixel = {32, 24};
    p.rho = 1.0;
    p.status = PointStatus::kActive;
    p.observations.push_back({1, 0xFF, false});
    map.keyframe(0).points.push_back(p);
    return map;
  };

  Window w;
  w.latest_id = 1;
  w.temporal = {1, 0};
  std::map<int, ErrorModel> models;
  ErrorModel m;
  m.percentile95 = 5.0;
  models[1] = m;

  // 3/8 outliers (37.5% > 30%): removed after the PBA.
  Map m3 = build_map(3);
  update_masks(m3, w, models, 50.0, 0.30);
  const bool removed = m3.keyframe(0).points[0].observations.empty();

  // 2/8 outliers (25% <= 30%): retained.
  Map m2 = build_map(2);
  update_masks(m2, w, models, 50.0, 0.30);
  const bool retained = m2.keyframe(0).points[0].observations.size() == 1;

  // 5/8 outliers (62.5% > 60%): discarded inside the optimization step.
  auto assembled_norm = [&](int corrupt_pixels) {
    Map map = build_map(corrupt_pixels);
    PbaProblem problem;
    problem.map = &map;
    problem.active_ids = {0, 1};
    problem.anchor_kf = 0;
    problem.finalize();
    PbaConfig config;
    const PbaState state = capture_state(problem);
    const NormalEquations eq = assemble_normal_equations(problem, state, 0, models, config);
    return eq.b_c.size() > 0 ? eq.h_cc.norm() + eq.h_pp.norm() : eq.h_pp.norm();
  };
  const bool discarded = assembled_norm(5) == 0.0 && assembled_norm(4) > 0.0;

  // Percentile threshold equals the exact sort oracle.
  std::vector<double> samples;
  std::normal_distribution<double> g(0.0, 3.0);
  for (int i = 0; i < 1777; ++i) samples.push_back(g(rng));
  std::vector<double> sorted;
  for (double v : samples) sorted.push_back(std::abs(v));
  std::sort(sorted.begin(), sorted.end());
  const double oracle = sorted[size_t(std::ceil(0.95 * sorted.size())) - 1];
  const bool percentile_ok = percentile_abs(samples, 0.95) == oracle;

  report(6, "30%/60% mask rules and exact percentile", removed && retained &&
                                                           discarded && percentile_ok);
}

TEST_CASE("criterion 7: end-to-end synthetic SLAM on the revisit loop") {
  const auto t0 = std::chrono::steady_clock::now();
  SequenceSpec spec;
  spec.kind = TrajectoryKind::kRevisitLoop;
  spec.frames = 100;
  spec.extent = 6.0;
  spec.noise_sigma = 1.0;
  spec.affine_amplitude = 0.25;
  spec.with_occluders = true;
  spec.seed = 11;

  Config config;
  config.pyramid_levels = 4;
  const RunOutcome run = run_synthetic(spec, config, true);
  const double elapsed = seconds_since(t0);

  bool revisit_covisible = false;
  double exploration_activations = 0.0, revisit_activations = 0.0;
  if (run.ok && run.keyframes >= 9) {
    const int n = int(run.activation_history.size());
    const int last_third = n - n / 3;
    int expl_n = 0, rev_n = 0;
    for (int i = 0; i < n; ++i) {
      if (i >= last_third) {
        revisit_covisible |= run.covisible_history[i] >= 1;
        revisit_activations += run.activation_history[i];
        ++rev_n;
      } else if (i >= 1) {  // skip the bootstrap insertion
        exploration_activations += run.activation_history[i];
        ++expl_n;
      }
    }
    exploration_activations /= std::max(expl_n, 1);
    revisit_activations /= std::max(rev_n, 1);
  }

  const bool ate_ok = run.ok && run.ate < 0.01 * spec.extent;
  const bool pse_ok = run.ok && run.pse_median >= 0.0 && run.pse_median < 0.01 * spec.extent;
  const bool reuse_ok = revisit_covisible &&
                        revisit_activations <= std::max(0.25 * exploration_activations, 8.0);
  const bool time_ok = elapsed < 300.0;

  report(7, "revisit-loop SLAM: ATE, PSE, covisible reuse",
         ate_ok && pse_ok && reuse_ok && time_ok);
  MESSAGE("ate " << run.ate << " (limit " << 0.01 * spec.extent << "), pse p50 "
                 << run.pse_median << ", keyframes " << run.keyframes
                 << ", activations exploration " << exploration_activations
                 << " vs revisit " << revisit_activations << ", covisible in revisit "
                 << revisit_covisible << ", " << elapsed << " s");
}

TEST_CASE("criterion 8: map reuse beats the sliding window") {
  std::vector<double> ratios;
  for (uint64_t seed : {21, 22, 23, 24, 25}) {
    SequenceSpec spec;
    spec.kind = TrajectoryKind::kRevisitLoop;
    spec.frames = 100;
    spec.extent = 6.0;
    spec.noise_sigma = 1.0;
    spec.with_occluders = true;
    spec.seed = seed;

    Config full;
    Config sliding;
    sliding.covisible_keyframes = 0;  // temporal-only window

    const RunOutcome a = run_synthetic(spec, full, false);
    const RunOutcome b = run_synthetic(spec, sliding, false);
    if (a.ok && b.ok && b.ate > 0.0) {
      ratios.push_back(a.ate / b.ate);
      MESSAGE("seed " << seed << ": full " << a.ate << " vs sliding " << b.ate
                      << " (ratio " << ratios.back() << ")");
    } else {
      ratios.push_back(1e9);  // failed run counts against the criterion
      MESSAGE("seed " << seed << ": run failure (full ok " << a.ok << ", sliding ok "
                      << b.ok << ")");
    }
  }
  std::sort(ratios.begin(), ratios.end());
  const double median = ratios[ratios.size() / 2];
  report(8, "median ATE ratio full vs sliding window <= 0.7", median <= 0.7);
  MESSAGE("median ratio " << median);
}

TEST_CASE("criterion 9: sequential determinism") {
  SequenceSpec spec;
  spec.kind = TrajectoryKind::kRevisitLoop;
  spec.frames = 60;
  spec.extent = 4.0;
  spec.noise_sigma = 1.0;
  spec.seed = 5;

  Config config;
  const fs::path dir = fs::temp_directory_path() / "pslam_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto run_and_write = [&](const std::string& name) {
    const RunOutcome run = run_synthetic(spec, config, false);
    REQUIRE(run.ok);
    write_trajectory(run.est, (dir / name).string());
    std::ifstream in(dir / name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string a = run_and_write("a.txt");
  const std::string b = run_and_write("b.txt");
  report(9, "bit-identical trajectories across reruns", !a.empty() && a == b);
}

TEST_CASE("criterion 10: optional EuRoC V1_01_easy") {
  const char* dir = std::getenv("EUROC_V101_DIR");
  if (!dir) {
    std::printf(
        "[ACCEPTANCE] criterion 10 (EuRoC V1_01_easy, optional): SKIP (set "
        "EUROC_V101_DIR to run)\n");
    return;
  }
  const SequenceSource source = load_sequence(dir);
  Config config;
  Pipeline pipeline(config, source.camera);
  for (int i = 0; i < source.size(); ++i) {
    const auto status = pipeline.process(source.timestamp_seconds(i), source.load_frame(i));
    REQUIRE(status != Pipeline::Status::kLost);
    REQUIRE(status != Pipeline::Status::kBootstrapFailed);
  }

  // EuRoC ground truth: state_groundtruth_estimate0/data.csv
  Trajectory gt;
  std::ifstream csv(std::string(dir) + "/state_groundtruth_estimate0/data.csv");
  REQUIRE(csv.good());
  std::string line;
  while (std::getline(csv, line)) {
    if (line.empty() || line[0] == '#') continue;
    for (auto& c : line)
      if (c == ',') c = ' ';
    std::istringstream ss(line);
    double ns, x, y, z, qw, qx, qy, qz;
    if (!(ss >> ns >> x >> y >> z >> qw >> qx >> qy >> qz)) continue;
    Eigen::Quaterniond q(qw, qx, qy, qz);
    gt.add(ns * 1e-9, SE3d(q.normalized().toRotationMatrix(), {x, y, z}));
  }
  const Trajectory est = pipeline.keyframe_trajectory();
  const double ate = rms_ate(est, gt, align_sim3(est, gt));
  report(10, "EuRoC V1_01_easy RMS ATE <= 0.15 m", ate <= 0.15);
  MESSAGE("EuRoC ATE " << ate);
}
