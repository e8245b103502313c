#include "pslam/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "pslam/io_eval.hpp"

namespace pslam {

namespace {

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double lattice_hash(int xi, int yi, int zi, uint32_t seed) {
  uint64_t h = mix64((uint64_t(uint32_t(xi)) << 40) ^ (uint64_t(uint32_t(yi)) << 20) ^
                     uint64_t(uint32_t(zi)) ^ (uint64_t(seed) << 56));
  return 2.0 * (double(h >> 11) / double(1ull << 53)) - 1.0;
}

double value_noise(const Eigen::Vector3d& p, double cell, uint32_t seed) {
  const Eigen::Vector3d q = p / cell;
  const int ix = int(std::floor(q.x()));
  const int iy = int(std::floor(q.y()));
  const int iz = int(std::floor(q.z()));
  const double fx = q.x() - ix, fy = q.y() - iy, fz = q.z() - iz;
  double acc = 0.0;
  for (int dz = 0; dz <= 1; ++dz)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dx = 0; dx <= 1; ++dx) {
        const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
        acc += w * lattice_hash(ix + dx, iy + dy, iz + dz, seed);
      }
  return acc;
}

struct Hit {
  double t = -1.0;
  bool valid() const { return t > 1e-6; }
};

Hit intersect_plane(const ScenePlane& plane, const Eigen::Vector3d& o,
                    const Eigen::Vector3d& d) {
  Hit hit;
  const double denom = d.dot(plane.normal);
  if (std::abs(denom) < 1e-12) return hit;
  const double t = (plane.point - o).dot(plane.normal) / denom;
  if (t <= 1e-6) return hit;
  if (plane.half_u > 0.0) {
    const Eigen::Vector3d rel = o + t * d - plane.point;
    if (std::abs(rel.dot(plane.u_axis)) > plane.half_u ||
        std::abs(rel.dot(plane.v_axis)) > plane.half_v)
      return hit;
  }
  hit.t = t;
  return hit;
}

Hit intersect_box(const SceneBox& box, const Eigen::Vector3d& o,
                  const Eigen::Vector3d& d) {
  Hit hit;
  double tmin = -1e30, tmax = 1e30;
  for (int axis = 0; axis < 3; ++axis) {
    const double lo = box.center[axis] - box.half[axis];
    const double hi = box.center[axis] + box.half[axis];
    if (std::abs(d[axis]) < 1e-15) {
      if (o[axis] < lo || o[axis] > hi) return hit;
      continue;
    }
    double t0 = (lo - o[axis]) / d[axis];
    double t1 = (hi - o[axis]) / d[axis];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
  }
  if (tmax < tmin || tmin <= 1e-6) return hit;
  hit.t = tmin;
  return hit;
}

bool inside_box(const SceneBox& box, const Eigen::Vector3d& p) {
  return (p - box.center).cwiseAbs().maxCoeff() <=
         box.half.maxCoeff() + 1e-12 &&
         ((p - box.center).cwiseAbs().array() <= box.half.array() + 1e-12).all();
}

}  // namespace

double texture_value(const TextureParams& tex, const Eigen::Vector3d& p) {
  double v = tex.base;
  for (int i = 0; i < 3; ++i) v += tex.amplitude[i] * std::sin(tex.wave[i].dot(p) + tex.phase[i]);
  v += tex.noise_amplitude * value_noise(p, tex.noise_cell, tex.noise_seed);
  return v;
}

Scene make_scene(double extent, bool with_occluders) {
  Scene scene;
  scene.scale = extent;

  ScenePlane wall;
  wall.point = Eigen::Vector3d(extent / 2.0, 0, 8);
  wall.normal = Eigen::Vector3d(0, 0, -1);
  wall.half_u = extent / 2.0 + 6.0;
  wall.half_v = 6.0;
  scene.planes.push_back(wall);

  for (int i = 0; i < 3; ++i) {
    ScenePlane rect;
    rect.point = Eigen::Vector3d(extent * (0.12 + 0.38 * i), (i % 2 ? 0.55 : -0.45), 5.0);
    rect.normal = Eigen::Vector3d(0, 0, -1);
    rect.half_u = 1.0;
    rect.half_v = 0.8;
    rect.albedo = (i % 2) ? 22.0 : -26.0;
    scene.planes.push_back(rect);
  }

  if (with_occluders) {
    scene.boxes.push_back(SceneBox{Eigen::Vector3d(extent * 0.22, 0.9, 5.8),
                                   Eigen::Vector3d(0.55, 0.5, 0.5), -32.0});
    scene.boxes.push_back(SceneBox{Eigen::Vector3d(extent * 0.78, -0.85, 5.9),
                                   Eigen::Vector3d(0.5, 0.55, 0.5), 28.0});
  }
  return scene;
}

std::optional<RenderResult> render(const Scene& scene, const Camerad& cam,
                                   const SE3d& pose, const AffineBrightness& affine,
                                   double noise_sigma, uint64_t noise_seed) {
  const Eigen::Vector3d origin = pose.translation();
  for (const auto& box : scene.boxes)
    if (inside_box(box, origin)) return std::nullopt;

  RenderResult out{GrayImage(cam.width, cam.height), Image<float>(cam.width, cam.height)};
  std::mt19937_64 rng(mix64(noise_seed ^ 0xabcdef12345ull));
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double exposure = std::exp(affine.a);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      // dir_cam.z == 1, so the ray parameter equals the z-depth.
      const Eigen::Vector3d dir_cam((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
      const Eigen::Vector3d dir = pose.rotation() * dir_cam;

      double t_hit = -1.0;
      double albedo = 0.0;
      for (const auto& plane : scene.planes) {
        const Hit h = intersect_plane(plane, origin, dir);
        if (h.valid() && (t_hit < 0.0 || h.t < t_hit)) {
          t_hit = h.t;
          albedo = plane.albedo;
        }
      }
      for (const auto& box : scene.boxes) {
        const Hit h = intersect_box(box, origin, dir);
        if (h.valid() && (t_hit < 0.0 || h.t < t_hit)) {
          t_hit = h.t;
          albedo = box.albedo;
        }
      }
      if (t_hit <= 0.0) return std::nullopt;  // pixel sees no geometry

      const Eigen::Vector3d p = origin + t_hit * dir;
      double value = exposure * (texture_value(scene.texture, p) + albedo) + affine.b;
      if (noise_sigma > 0.0) value += noise_sigma * gauss(rng);
      out.image(x, y) = float(std::clamp(value, 0.0, 255.0));
      out.depth(x, y) = float(t_hit);
    }
  }
  return out;
}

TrajectoryKind trajectory_kind_from_string(const std::string& s) {
  if (s == "line") return TrajectoryKind::kLine;
  if (s == "orbit") return TrajectoryKind::kOrbit;
  if (s == "revisit-loop") return TrajectoryKind::kRevisitLoop;
  throw std::invalid_argument("unknown trajectory kind: " + s);
}

std::vector<SE3d> make_trajectory(TrajectoryKind kind, int n_frames, double extent) {
  if (n_frames < 2) throw std::invalid_argument("make_trajectory: need at least 2 frames");
  std::vector<SE3d> poses;
  poses.reserve(n_frames);

  for (int i = 0; i < n_frames; ++i) {
    const double s = double(i) / double(n_frames - 1);
    switch (kind) {
      case TrajectoryKind::kLine:
        poses.emplace_back(Eigen::Matrix3d::Identity(),
                           Eigen::Vector3d(extent * s, 0, 0));
        break;
      case TrajectoryKind::kOrbit: {
        const Eigen::Vector3d target(0, 0, extent);
        const double phi = -0.7 + 1.4 * s;
        const Eigen::Vector3d pos =
            target + extent * Eigen::Vector3d(std::sin(phi), 0, -std::cos(phi));
        const Eigen::Vector3d z = (target - pos).normalized();
        const Eigen::Vector3d x = Eigen::Vector3d(0, 1, 0).cross(z).normalized();
        const Eigen::Vector3d y = z.cross(x);
        Eigen::Matrix3d R;
        R.col(0) = x;
        R.col(1) = y;
        R.col(2) = z;
        poses.emplace_back(R, pos);
        break;
      }
      case TrajectoryKind::kRevisitLoop: {
        const double x = extent * 0.5 * (1.0 - std::cos(2.0 * M_PI * s));
        const double y = 0.05 * extent * std::sin(2.0 * M_PI * s);
        poses.emplace_back(Eigen::Matrix3d::Identity(), Eigen::Vector3d(x, y, 0));
        break;
      }
    }
  }
  return poses;
}

std::vector<Eigen::Vector3d> sample_scene_surface(const Scene& scene, int count,
                                                  uint64_t seed) {
  std::vector<Eigen::Vector3d> samples;
  samples.reserve(count);
  std::mt19937_64 rng(mix64(seed ^ 0x5f5f5f5full));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  double total_area = 0.0;
  std::vector<double> areas;
  for (const auto& p : scene.planes) {
    areas.push_back(4.0 * p.half_u * p.half_v);
    total_area += areas.back();
  }
  for (const auto& b : scene.boxes) {
    const auto& h = b.half;
    areas.push_back(8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z()));
    total_area += areas.back();
  }

  for (size_t pi = 0; pi < scene.planes.size(); ++pi) {
    const auto& p = scene.planes[pi];
    const int n = int(std::lround(count * areas[pi] / total_area));
    for (int i = 0; i < n; ++i) {
      const double a = (2.0 * u01(rng) - 1.0) * p.half_u;
      const double b = (2.0 * u01(rng) - 1.0) * p.half_v;
      samples.push_back(p.point + a * p.u_axis + b * p.v_axis);
    }
  }
  for (size_t bi = 0; bi < scene.boxes.size(); ++bi) {
    const auto& box = scene.boxes[bi];
    const int n = int(std::lround(count * areas[scene.planes.size() + bi] / total_area));
    for (int i = 0; i < n; ++i) {
      const int face = int(u01(rng) * 6.0) % 6;
      Eigen::Vector3d q((2.0 * u01(rng) - 1.0) * box.half.x(),
                        (2.0 * u01(rng) - 1.0) * box.half.y(),
                        (2.0 * u01(rng) - 1.0) * box.half.z());
      q[face / 2] = (face % 2 ? 1.0 : -1.0) * box.half[face / 2];
      samples.push_back(box.center + q);
    }
  }
  return samples;
}

Camerad default_camera(int width, int height) {
  return Camerad(0.78 * width, 0.78 * width, 0.5 * (width - 1), 0.5 * (height - 1), width,
                 height);
}

AffineBrightness affine_drift(const SequenceSpec& spec, int frame) {
  const double s = double(frame) / double(std::max(spec.frames - 1, 1));
  AffineBrightness ab;
  ab.a = spec.affine_amplitude * std::sin(2.0 * M_PI * 1.7 * s + 0.4);
  ab.b = spec.brightness_amplitude * std::sin(2.0 * M_PI * 1.3 * s + 2.0);
  return ab;
}

std::vector<SyntheticFrame> render_sequence(const SequenceSpec& spec) {
  const Camerad cam = default_camera(spec.width, spec.height);
  const Scene scene = make_scene(spec.extent, spec.with_occluders);
  const auto poses = make_trajectory(spec.kind, spec.frames, spec.extent);

  std::vector<SyntheticFrame> frames;
  frames.reserve(spec.frames);
  for (int i = 0; i < spec.frames; ++i) {
    SyntheticFrame f;
    f.timestamp = double(i) / spec.fps;
    f.pose = poses[i];
    f.affine = affine_drift(spec, i);
    auto r = render(scene, cam, f.pose, f.affine, spec.noise_sigma,
                    mix64(spec.seed) + uint64_t(i));
    if (!r) throw std::runtime_error("render_sequence: render failure at frame " +
                                     std::to_string(i));
    f.image = std::move(r->image);
    f.depth = std::move(r->depth);
    frames.push_back(std::move(f));
  }
  return frames;
}

void emit_asl_sequence(const SequenceSpec& spec, const std::string& out_dir) {
  const Camerad cam = default_camera(spec.width, spec.height);
  const auto frames = render_sequence(spec);

  write_asl_sequence(out_dir, cam, frames);
  const Scene scene = make_scene(spec.extent, spec.with_occluders);
  write_pointcloud_xyz(sample_scene_surface(scene, 300000, spec.seed),
                       out_dir + "/surface.ply");
}

}  // namespace pslam
