#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "pslam/config.hpp"
#include "pslam/io_eval.hpp"
#include "pslam/synthetic.hpp"

using namespace pslam;
namespace fs = std::filesystem;

namespace {

std::mt19937 rng(101);

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pslam_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SE3d random_pose() {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Twistd xi;
  xi << u(rng), u(rng), u(rng), 0.6 * u(rng), 0.6 * u(rng), 0.6 * u(rng);
  return se3_exp(xi);
}

Trajectory random_trajectory(int n) {
  Trajectory t;
  for (int i = 0; i < n; ++i) t.add(0.05 * i, random_pose());
  return t;
}

}  // namespace

TEST_CASE("pgm round trip") {
  const auto dir = temp_dir("pgm");
  GrayImage img(33, 21);
  for (size_t i = 0; i < img.data().size(); ++i) img.data()[i] = float(i % 256);
  write_pgm(img, (dir / "a.pgm").string());
  const GrayImage back = read_pgm((dir / "a.pgm").string());
  REQUIRE(back.width() == 33);
  REQUIRE(back.height() == 21);
  CHECK(back.data() == img.data());
}

TEST_CASE("asl sequence round trip with the synthetic emitter") {
  const auto dir = temp_dir("asl");
  SequenceSpec spec;
  spec.frames = 6;
  spec.width = 96;
  spec.height = 64;
  spec.noise_sigma = 0.0;
  spec.kind = TrajectoryKind::kLine;
  spec.extent = 0.5;
  emit_asl_sequence(spec, dir.string());

  const SequenceSource source = load_sequence(dir.string());
  REQUIRE(source.size() == 6);
  CHECK(!source.undistort);  // zero distortion coefficients
  CHECK(source.camera.width == 96);
  CHECK(source.camera.fx == doctest::Approx(0.78 * 96));

  // nanosecond integer timestamps divided exactly
  CHECK(source.timestamp_seconds(0) == doctest::Approx(0.0));
  CHECK(source.timestamp_seconds(1) == doctest::Approx(0.05).epsilon(1e-12));

  // frames load with PGM quantization only
  const auto frames = render_sequence(spec);
  const GrayImage loaded = source.load_frame(2);
  double max_err = 0;
  for (size_t i = 0; i < loaded.data().size(); ++i)
    max_err = std::max(max_err,
                       std::abs(double(loaded.data()[i]) -
                                std::round(std::clamp(double(frames[2].image.data()[i]),
                                                      0.0, 255.0))));
  CHECK(max_err == doctest::Approx(0.0));

  // ground truth and surface written alongside
  const Trajectory gt = read_trajectory((dir / "groundtruth.txt").string());
  CHECK(gt.size() == 6);
  const auto surface = read_pointcloud((dir / "surface.ply").string());
  CHECK(surface.size() > 100000);
}

TEST_CASE("load_sequence error cases are distinct") {
  SUBCASE("missing directory") {
    CHECK_THROWS_AS(load_sequence("/nonexistent_dir_pslam"), MissingFileError);
  }
  SUBCASE("empty data.csv") {
    const auto dir = temp_dir("empty");
    fs::create_directories(dir / "cam0" / "data");
    std::ofstream(dir / "cam0" / "data.csv") << "#timestamp [ns],filename\n";
    std::ofstream(dir / "cam0" / "sensor.yaml")
        << "intrinsics: [100, 100, 48, 32]\nresolution: [96, 64]\n";
    CHECK_THROWS_AS(load_sequence(dir.string()), EmptySequenceError);
  }
  SUBCASE("nonmonotonic timestamps") {
    const auto dir = temp_dir("order");
    fs::create_directories(dir / "cam0" / "data");
    std::ofstream(dir / "cam0" / "data.csv")
        << "#h\n100,a.pgm\n50,b.pgm\n";
    std::ofstream(dir / "cam0" / "sensor.yaml")
        << "intrinsics: [100, 100, 48, 32]\nresolution: [96, 64]\n";
    CHECK_THROWS_AS(load_sequence(dir.string()), TimestampOrderError);
  }
  SUBCASE("calibration parse failure") {
    const auto dir = temp_dir("calib");
    fs::create_directories(dir / "cam0" / "data");
    std::ofstream(dir / "cam0" / "data.csv") << "100,a.pgm\n";
    std::ofstream(dir / "cam0" / "sensor.yaml") << "intrinsics: [not, a, number]\n";
    CHECK_THROWS_AS(load_sequence(dir.string()), CalibrationError);
  }
}

TEST_CASE("undistortion") {
  SUBCASE("zero coefficients are the identity away from the border") {
    GrayImage img(64, 48);
    std::uniform_real_distribution<float> u(0.f, 255.f);
    for (auto& v : img.data()) v = u(rng);
    const Camerad cam = default_camera(64, 48);
    const GrayImage out = undistort_image(img, cam, {0, 0, 0, 0});
    for (int y = 1; y < 47; ++y)
      for (int x = 1; x < 63; ++x)
        CHECK(out(x, y) == doctest::Approx(img(x, y)).epsilon(1e-6));
  }
  SUBCASE("radial distortion moves border pixels more than the center") {
    GrayImage ramp(64, 48);
    for (int y = 0; y < 48; ++y)
      for (int x = 0; x < 64; ++x) ramp(x, y) = float(2 * x);
    const Camerad cam = default_camera(64, 48);
    const GrayImage out = undistort_image(ramp, cam, {-0.2, 0.0, 0.0, 0.0});
    // center pixel is nearly unchanged
    CHECK(std::abs(out(32, 24) - ramp(32, 24)) < 1.0);
    // off-center pixels shift according to the model
    CHECK(std::abs(out(8, 24) - ramp(8, 24)) > 1.0);
  }
}

TEST_CASE("trajectory file round trip") {
  const auto dir = temp_dir("traj");
  const Trajectory traj = random_trajectory(25);
  write_trajectory(traj, (dir / "t.txt").string());
  const Trajectory back = read_trajectory((dir / "t.txt").string());
  REQUIRE(back.size() == traj.size());
  for (int i = 0; i < traj.size(); ++i) {
    CHECK(std::abs(back.entries[i].first - traj.entries[i].first) < 1e-9);
    CHECK((back.entries[i].second.translation() - traj.entries[i].second.translation())
              .norm() < 1e-8);
    CHECK((back.entries[i].second.rotation() - traj.entries[i].second.rotation())
              .norm() < 1e-7);
  }

  SUBCASE("identity pose writes the unit quaternion") {
    Trajectory id;
    id.add(0.0, SE3d::identity());
    write_trajectory(id, (dir / "id.txt").string());
    std::ifstream in(dir / "id.txt");
    std::string line;
    std::getline(in, line);
    CHECK(line ==
          "0.000000000 0.000000000 0.000000000 0.000000000 0.000000000 0.000000000 "
          "0.000000000 1.000000000");
  }
  SUBCASE("writers are byte deterministic") {
    write_trajectory(traj, (dir / "a.txt").string());
    write_trajectory(traj, (dir / "b.txt").string());
    std::ifstream a(dir / "a.txt"), b(dir / "b.txt");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
  }
}

TEST_CASE("point cloud writer") {
  const auto dir = temp_dir("ply");
  Map map;
  Keyframe kf;
  kf.pyramid = build_pyramid(GrayImage(64, 48, 10.f), default_camera(64, 48), 1);
  kf.pose = SE3d::identity();
  map.add_keyframe(std::move(kf));
  for (int i = 0; i < 7; ++i) {
    MapPoint p;
    p.host_id = 0;
    p.pixel = Eigen::Vector2d(10 + i * 5, 20);
    p.rho = 0.5;
    p.status = i < 5 ? PointStatus::kActive : PointStatus::kRemoved;
    map.keyframe(0).points.push_back(p);
  }
  write_pointcloud(map, (dir / "m.ply").string());
  const auto pts = read_pointcloud((dir / "m.ply").string());
  CHECK(pts.size() == 5);  // removed points are not exported
  for (const auto& p : pts) CHECK(p.z() == doctest::Approx(2.0));
}

TEST_CASE("associate uses the nearest timestamp within the window") {
  Trajectory est, gt;
  est.add(0.000, SE3d::identity());
  est.add(0.050, SE3d::identity());
  est.add(0.100, SE3d::identity());
  gt.add(0.004, SE3d::identity());
  gt.add(0.055, SE3d::identity());
  gt.add(0.140, SE3d::identity());
  const auto pairs = associate(est, gt, 0.02);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0] == std::make_pair(0, 0));
  CHECK(pairs[1] == std::make_pair(1, 1));
}

TEST_CASE("align_sim3") {
  SUBCASE("identical trajectories align to the identity") {
    const Trajectory t = random_trajectory(20);
    const Sim3d s = align_sim3(t, t);
    CHECK(s.scale() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((s.rotation() - Eigen::Matrix3d::Identity()).norm() < 1e-9);
    CHECK(s.translation().norm() < 1e-9);
    CHECK(rms_ate(t, t, s) == doctest::Approx(0.0));
  }
  SUBCASE("a known similarity is recovered") {
    const Trajectory gt = random_trajectory(30);
    const Sim3d truth(1.7, se3_exp(Twistd((Twistd() << 0, 0, 0, 0.3, -0.2, 0.5).finished())).rotation(),
                      Eigen::Vector3d(2, -1, 3));
    Trajectory est = gt;
    const Sim3d inv = truth.inverse();
    for (auto& [t, pose] : est.entries)
      pose = SE3d(inv.rotation() * pose.rotation(), inv * pose.translation());
    const Sim3d s = align_sim3(est, gt);
    CHECK(s.scale() == doctest::Approx(truth.scale()).epsilon(1e-9));
    CHECK((s.rotation() - truth.rotation()).norm() < 1e-9);
    CHECK((s.translation() - truth.translation()).norm() < 1e-9);
    CHECK(rms_ate(est, gt, s) < 1e-9);
  }
  SUBCASE("isotropic noise maps to a comparable ate") {
    std::normal_distribution<double> g(0.0, 0.05);
    int in_range = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Trajectory gt = random_trajectory(60);
      Trajectory est = gt;
      for (auto& [t, pose] : est.entries)
        pose.translation() += Eigen::Vector3d(g(rng), g(rng), g(rng));
      const double ate = rms_ate(est, gt, align_sim3(est, gt));
      // 3D isotropic noise: rms of the residual norm is sqrt(3)*sigma before
      // alignment absorbs a bit of it
      if (ate > 0.8 * 0.05 && ate < 1.2 * 0.05 * std::sqrt(3.0)) ++in_range;
    }
    CHECK(in_range >= 95);
  }
  SUBCASE("failure cases") {
    Trajectory two;
    two.add(0.0, SE3d::identity());
    two.add(0.1, SE3d::identity());
    CHECK_THROWS_AS(align_sim3(two, two), AlignmentError);

    Trajectory line_est, line_gt;
    for (int i = 0; i < 10; ++i) {
      line_est.add(0.05 * i, SE3d(Eigen::Matrix3d::Identity(),
                                  Eigen::Vector3d(double(i), 0, 0)));
      line_gt.add(0.05 * i, SE3d(Eigen::Matrix3d::Identity(),
                                 Eigen::Vector3d(0, double(i), 0)));
    }
    CHECK_THROWS_AS(align_sim3(line_est, line_gt), AlignmentError);
  }
}

TEST_CASE("rms_ate") {
  SUBCASE("hand-computed single offset") {
    Trajectory gt = random_trajectory(10);
    Trajectory est = gt;
    // evaluate at a FIXED identity alignment to isolate the formula
    est.entries[3].second.translation() += Eigen::Vector3d(0.3, 0, 0);
    const double ate = rms_ate(est, gt, Sim3d::identity());
    CHECK(ate == doctest::Approx(std::sqrt(0.09 / 10.0)).epsilon(1e-12));
  }
  SUBCASE("invariant under a common similarity") {
    const Trajectory gt = random_trajectory(40);
    Trajectory est = gt;
    std::normal_distribution<double> g(0.0, 0.1);
    for (auto& [t, pose] : est.entries)
      pose.translation() += Eigen::Vector3d(g(rng), g(rng), g(rng));
    const double ate = rms_ate(est, gt, align_sim3(est, gt));

    const Sim3d common(2.3, random_pose().rotation(), Eigen::Vector3d(5, 6, -7));
    auto apply = [&](Trajectory t) {
      for (auto& [ts, pose] : t.entries)
        pose = SE3d(common.rotation() * pose.rotation(), common * pose.translation());
      return t;
    };
    const Trajectory est2 = apply(est), gt2 = apply(gt);
    const double ate2 = rms_ate(est2, gt2, align_sim3(est2, gt2));
    CHECK(ate2 == doctest::Approx(ate).epsilon(1e-9));
  }
}

TEST_CASE("point-to-surface error") {
  SUBCASE("points on the surface have zero distance") {
    std::vector<Eigen::Vector3d> surface;
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int i = 0; i < 5000; ++i) surface.emplace_back(u(rng), u(rng), 0.0);
    std::vector<Eigen::Vector3d> pts(surface.begin(), surface.begin() + 200);
    const PseResult r = pse(pts, surface, Sim3d::identity());
    CHECK(r.p50 == doctest::Approx(0.0));
    CHECK(r.p95 == doctest::Approx(0.0));
  }
  SUBCASE("normal offset of a dense plane") {
    std::vector<Eigen::Vector3d> surface;
    for (int y = 0; y <= 200; ++y)
      for (int x = 0; x <= 200; ++x)
        surface.emplace_back(x * 0.01, y * 0.01, 0.0);
    std::vector<Eigen::Vector3d> pts;
    std::uniform_real_distribution<double> u(0.3, 1.7);
    for (int i = 0; i < 300; ++i) pts.emplace_back(u(rng), u(rng), 0.05);
    const PseResult r = pse(pts, surface, Sim3d::identity());
    CHECK(r.p50 == doctest::Approx(0.05).epsilon(0.01));
  }
  SUBCASE("grid search matches brute force") {
    std::vector<Eigen::Vector3d> surface;
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int i = 0; i < 1000; ++i) surface.emplace_back(u(rng), u(rng), u(rng));
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 200; ++i)
      pts.emplace_back(1.5 * u(rng), 1.5 * u(rng), 1.5 * u(rng));
    const PseResult r = pse(pts, surface, Sim3d::identity());
    for (size_t i = 0; i < pts.size(); ++i) {
      double best = 1e18;
      for (const auto& s : surface) best = std::min(best, (pts[i] - s).norm());
      CHECK(r.distances[i] == doctest::Approx(best).epsilon(1e-12));
    }
  }
  SUBCASE("empty inputs are errors") {
    std::vector<Eigen::Vector3d> surface{{0, 0, 0}, {1, 0, 0}};
    CHECK_THROWS_AS(pse({}, surface, Sim3d::identity()), AlignmentError);
    CHECK_THROWS_AS(pse({{0, 0, 0}}, {}, Sim3d::identity()), AlignmentError);
  }
}

TEST_CASE("config parsing") {
  SUBCASE("defaults load and validate") {
    const Config c = parse_config("");
    CHECK(c.temporal_keyframes == 4);
    CHECK(c.covisible_keyframes == 3);
    CHECK(c.pba_levels == 2);
    CHECK(c.grad_weight_c == doctest::Approx(50.0));
  }
  SUBCASE("values and comments") {
    const Config c = parse_config(
        "# comment\npba_levels = 3\nrobust_model = huber  # trailing\n"
        "depletion_radius = 12.5\n");
    CHECK(c.pba_levels == 3);
    CHECK(c.robust_model == "huber");
    CHECK(c.depletion_radius == doctest::Approx(12.5));
  }
  SUBCASE("unknown keys fail") {
    CHECK_THROWS_AS(parse_config("no_such_key = 1\n"), ConfigError);
  }
  SUBCASE("malformed lines fail") {
    CHECK_THROWS_AS(parse_config("pba_levels 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("pba_levels = banana\n"), ConfigError);
  }
  SUBCASE("out-of-range values fail") {
    CHECK_THROWS_AS(parse_config("pba_levels = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("robust_model = cauchy\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("threads = 7\n"), ConfigError);
  }
}
