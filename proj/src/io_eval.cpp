#include "pslam/io_eval.hpp"

#include <png.h>
#include <yaml-cpp/yaml.h>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace fs = std::filesystem;

namespace pslam {

// ---------------------------------------------------------------------------
// Images

void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P5\n" << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> row(img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double v = std::clamp(double(img(x, y)), 0.0, 255.0);
      row[x] = (unsigned char)(std::lround(v));
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw IoError("write failed: " + path);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("missing image file: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError("not a binary PGM: " + path);
  auto next_int = [&in, &path]() {
    int c = in.peek();
    while (c == '#' || std::isspace(c)) {
      if (c == '#') in.ignore(4096, '\n');
      else in.ignore(1);
      c = in.peek();
    }
    int v = 0;
    if (!(in >> v)) throw IoError("bad PGM header: " + path);
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  in.ignore(1);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw IoError("unsupported PGM: " + path);
  std::vector<unsigned char> buf(size_t(w) * h);
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!in) throw IoError("short PGM payload: " + path);
  GrayImage img(w, h);
  for (size_t i = 0; i < buf.size(); ++i) img.data()[i] = float(buf[i]);
  return img;
}

GrayImage read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw MissingFileError("missing image file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (fp) std::fclose(fp);
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failure");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("PNG decode failure: " + path);
  }

  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_COLOR || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  const int w = int(png_get_image_width(png, info));
  const int h = int(png_get_image_height(png, info));
  std::vector<unsigned char> buf(size_t(w) * h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + size_t(y) * w;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  GrayImage img(w, h);
  for (size_t i = 0; i < buf.size(); ++i) img.data()[i] = float(buf[i]);
  return img;
}

GrayImage read_image(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") return read_png(path);
  return read_pgm(path);
}

// ---------------------------------------------------------------------------
// Sequences

GrayImage undistort_image(const GrayImage& img, const Camerad& cam,
                          const std::array<double, 4>& dist) {
  const double k1 = dist[0], k2 = dist[1], p1 = dist[2], p2 = dist[3];
  GrayImage out(img.width(), img.height(), 0.f);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double nx = (x - cam.cx) / cam.fx;
      const double ny = (y - cam.cy) / cam.fy;
      const double r2 = nx * nx + ny * ny;
      const double radial = 1.0 + k1 * r2 + k2 * r2 * r2;
      const double xd = nx * radial + 2.0 * p1 * nx * ny + p2 * (r2 + 2.0 * nx * nx);
      const double yd = ny * radial + p1 * (r2 + 2.0 * ny * ny) + 2.0 * p2 * nx * ny;
      const Eigen::Vector2d src(cam.fx * xd + cam.cx, cam.fy * yd + cam.cy);
      const auto v = sample_bilinear(img, src);
      out(x, y) = v ? float(*v) : 0.f;
    }
  }
  return out;
}

namespace {

std::array<double, 4> yaml_list4(const YAML::Node& node) {
  std::array<double, 4> v{0, 0, 0, 0};
  for (int i = 0; i < 4 && i < int(node.size()); ++i) v[i] = node[i].as<double>();
  return v;
}

}  // namespace

SequenceSource load_sequence(const std::string& dir, bool assume_undistorted) {
  const std::string cam_dir = dir + "/cam0";
  const std::string csv_path = cam_dir + "/data.csv";
  const std::string yaml_path = cam_dir + "/sensor.yaml";
  if (!fs::exists(csv_path)) throw MissingFileError("missing " + csv_path);
  if (!fs::exists(yaml_path)) throw MissingFileError("missing " + yaml_path);

  SequenceSource src;
  try {
    const YAML::Node yaml = YAML::LoadFile(yaml_path);
    const auto intr = yaml_list4(yaml["intrinsics"]);
    const YAML::Node res = yaml["resolution"];
    src.camera = Camerad(intr[0], intr[1], intr[2], intr[3], res[0].as<int>(),
                         res[1].as<int>());
    if (yaml["distortion_coefficients"])
      src.distortion = yaml_list4(yaml["distortion_coefficients"]);
  } catch (const YAML::Exception& e) {
    throw CalibrationError(std::string("calibration parse failure: ") + e.what());
  }
  if (!(src.camera.fx > 0) || !(src.camera.fy > 0) || src.camera.width <= 0 ||
      src.camera.height <= 0)
    throw CalibrationError("calibration parse failure: invalid intrinsics");

  const bool has_distortion =
      std::any_of(src.distortion.begin(), src.distortion.end(),
                  [](double d) { return std::abs(d) > 1e-12; });
  src.undistort = has_distortion && !assume_undistorted;

  std::ifstream csv(csv_path);
  std::string line;
  int64_t prev = -1;
  while (std::getline(csv, line)) {
    if (line.empty() || line[0] == '#') continue;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    const int64_t ts = std::stoll(line.substr(0, comma));
    std::string name = line.substr(comma + 1);
    const auto start = name.find_first_not_of(" \t");
    if (start != std::string::npos) name = name.substr(start);
    if (ts <= prev)
      throw TimestampOrderError("timestamps not strictly increasing in " + csv_path);
    prev = ts;
    src.records.emplace_back(ts, cam_dir + "/data/" + name);
  }
  if (src.records.empty()) throw EmptySequenceError("empty sequence: " + csv_path);
  return src;
}

GrayImage SequenceSource::load_frame(int idx) const {
  GrayImage img = read_image(records[idx].second);
  if (img.width() != camera.width || img.height() != camera.height)
    throw IoError("image dimensions differ from calibration: " + records[idx].second);
  if (undistort) return undistort_image(img, camera, distortion);
  return img;
}

void write_asl_sequence(const std::string& dir, const Camerad& cam,
                        const std::vector<SyntheticFrame>& frames) {
  fs::create_directories(dir + "/cam0/data");

  std::ofstream yaml(dir + "/cam0/sensor.yaml");
  yaml << "sensor_type: camera\n"
       << "camera_model: pinhole\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "intrinsics: [%.9g, %.9g, %.9g, %.9g]\n", cam.fx, cam.fy,
                cam.cx, cam.cy);
  yaml << buf << "resolution: [" << cam.width << ", " << cam.height << "]\n"
       << "distortion_model: radial-tangential\n"
       << "distortion_coefficients: [0.0, 0.0, 0.0, 0.0]\n"
       << "rate_hz: 20\n";
  yaml.close();

  std::ofstream csv(dir + "/cam0/data.csv");
  csv << "#timestamp [ns],filename\n";
  Trajectory gt;
  for (size_t i = 0; i < frames.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%05zu.pgm", i);
    const int64_t ns = int64_t(std::llround(frames[i].timestamp * 1e9));
    csv << ns << "," << name << "\n";
    write_pgm(frames[i].image, dir + "/cam0/data/" + name);
    gt.add(frames[i].timestamp, frames[i].pose);
  }
  csv.close();
  write_trajectory(gt, dir + "/groundtruth.txt");
}

// ---------------------------------------------------------------------------
// Trajectories

void write_trajectory(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  char buf[512];
  for (const auto& [t, pose] : traj.entries) {
    Eigen::Quaterniond q(pose.rotation());
    q.normalize();
    if (q.w() < 0) q.coeffs() *= -1.0;
    const auto& p = pose.translation();
    std::snprintf(buf, sizeof(buf), "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", t, p.x(),
                  p.y(), p.z(), q.x(), q.y(), q.z(), q.w());
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

Trajectory read_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("missing trajectory file: " + path);
  Trajectory traj;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, x, y, z, qx, qy, qz, qw;
    if (!(ss >> t >> x >> y >> z >> qx >> qy >> qz >> qw)) continue;
    Eigen::Quaterniond q(qw, qx, qy, qz);
    q.normalize();
    traj.add(t, SE3d(q.toRotationMatrix(), Eigen::Vector3d(x, y, z)));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Point clouds

void write_pointcloud(const Map& map, const std::string& path) {
  std::vector<std::pair<Eigen::Vector3d, int>> points;
  for (const auto& kf : map.keyframes())
    for (const auto& p : kf.points)
      if (p.alive()) points.emplace_back(map.point_world(p), kf.id);

  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
      << "property int host_id\nend_header\n";
  char buf[256];
  for (const auto& [p, id] : points) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d\n", p.x(), p.y(), p.z(), id);
    out << buf;
  }
}

void write_pointcloud_xyz(const std::vector<Eigen::Vector3d>& points,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char buf[256];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
    out << buf;
  }
}

std::vector<Eigen::Vector3d> read_pointcloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("missing point cloud file: " + path);
  std::string line;
  int count = -1;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0) count = std::stoi(line.substr(15));
    if (line.rfind("end_header", 0) == 0) break;
  }
  if (count < 0) throw IoError("not an ascii PLY: " + path);
  std::vector<Eigen::Vector3d> points;
  points.reserve(count);
  for (int i = 0; i < count && std::getline(in, line); ++i) {
    std::istringstream ss(line);
    double x, y, z;
    if (ss >> x >> y >> z) points.emplace_back(x, y, z);
  }
  return points;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<std::pair<int, int>> associate(const Trajectory& est, const Trajectory& gt,
                                           double window) {
  std::vector<std::pair<int, int>> pairs;
  int j = 0;
  for (int i = 0; i < est.size(); ++i) {
    const double t = est.entries[i].first;
    while (j + 1 < gt.size() &&
           std::abs(gt.entries[j + 1].first - t) <= std::abs(gt.entries[j].first - t))
      ++j;
    if (gt.size() > 0 && std::abs(gt.entries[j].first - t) <= window)
      pairs.emplace_back(i, j);
  }
  return pairs;
}

Sim3d align_sim3(const Trajectory& est, const Trajectory& gt, double window) {
  const auto pairs = associate(est, gt, window);
  if (int(pairs.size()) < 3)
    throw AlignmentError("need at least 3 associated poses for Sim(3) alignment");

  Eigen::Matrix3Xd src(3, pairs.size()), dst(3, pairs.size());
  for (size_t k = 0; k < pairs.size(); ++k) {
    src.col(k) = est.entries[pairs[k].first].second.translation();
    dst.col(k) = gt.entries[pairs[k].second].second.translation();
  }

  const Eigen::Matrix3Xd centered = src.colwise() - src.rowwise().mean();
  Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(centered);
  const auto& sv = svd.singularValues();
  if (sv(1) <= 1e-9 * std::max(sv(0), 1e-300))
    throw AlignmentError("associated positions are collinear");

  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, true);
  const Eigen::Matrix3d sR = T.topLeftCorner<3, 3>();
  const double scale = std::cbrt(sR.determinant());
  return Sim3d(scale, sR / scale, T.topRightCorner<3, 1>());
}

std::vector<double> per_keyframe_errors(const Trajectory& est, const Trajectory& gt,
                                        const Sim3d& alignment, double window) {
  const auto pairs = associate(est, gt, window);
  std::vector<double> errors;
  errors.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    const Eigen::Vector3d p = alignment * est.entries[i].second.translation();
    errors.push_back((p - gt.entries[j].second.translation()).norm());
  }
  return errors;
}

double rms_ate(const Trajectory& est, const Trajectory& gt, const Sim3d& alignment,
               double window) {
  const auto errors = per_keyframe_errors(est, gt, alignment, window);
  if (errors.empty()) throw AlignmentError("no associated poses");
  double acc = 0.0;
  for (double e : errors) acc += e * e;
  return std::sqrt(acc / double(errors.size()));
}

namespace {

struct GridIndex {
  double cell = 1.0;
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  std::unordered_map<int64_t, std::vector<int>> buckets;
  const std::vector<Eigen::Vector3d>* pts = nullptr;

  static int64_t key(int x, int y, int z) {
    return (int64_t(x) & 0x1fffff) | ((int64_t(y) & 0x1fffff) << 21) |
           ((int64_t(z) & 0x1fffff) << 42);
  }

  void build(const std::vector<Eigen::Vector3d>& points) {
    pts = &points;
    Eigen::Vector3d lo = points.front(), hi = points.front();
    for (const auto& p : points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    origin = lo;
    cell = std::max((hi - lo).maxCoeff() / 256.0, 1e-9);
    for (int i = 0; i < int(points.size()); ++i) {
      const Eigen::Vector3i c = ((points[i] - origin) / cell).array().floor().cast<int>();
      buckets[key(c.x(), c.y(), c.z())].push_back(i);
    }
  }

  double nearest_distance(const Eigen::Vector3d& q) const {
    const Eigen::Vector3i base = ((q - origin) / cell).array().floor().cast<int>();
    double best = std::numeric_limits<double>::infinity();
    for (int ring = 0;; ++ring) {
      if (double(ring - 1) * cell > best) break;
      bool any_cell = false;
      for (int dz = -ring; dz <= ring; ++dz)
        for (int dy = -ring; dy <= ring; ++dy)
          for (int dx = -ring; dx <= ring; ++dx) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
            auto it = buckets.find(key(base.x() + dx, base.y() + dy, base.z() + dz));
            any_cell = true;
            if (it == buckets.end()) continue;
            for (int i : it->second) best = std::min(best, ((*pts)[i] - q).norm());
          }
      if (!any_cell) break;
      if (ring > 4096) break;
    }
    return best;
  }
};

}  // namespace

PseResult pse(const std::vector<Eigen::Vector3d>& map_points,
              const std::vector<Eigen::Vector3d>& surface, const Sim3d& alignment) {
  if (map_points.empty()) throw AlignmentError("empty map for point-to-surface error");
  if (surface.empty()) throw AlignmentError("empty reference surface");

  GridIndex index;
  index.build(surface);

  PseResult result;
  result.distances.reserve(map_points.size());
  for (const auto& p : map_points)
    result.distances.push_back(index.nearest_distance(alignment * p));

  std::vector<double> sorted = result.distances;
  std::sort(sorted.begin(), sorted.end());
  auto at = [&sorted](double q) {
    const size_t n = sorted.size();
    size_t idx = size_t(std::ceil(q * double(n)));
    idx = std::min(std::max<size_t>(idx, 1), n) - 1;
    return sorted[idx];
  };
  result.p50 = at(0.50);
  result.p90 = at(0.90);
  result.p95 = at(0.95);
  return result;
}

EvalReport evaluate(const Trajectory& est, const Trajectory& gt,
                    const std::vector<Eigen::Vector3d>* surface,
                    const std::vector<Eigen::Vector3d>* map_points, double window) {
  EvalReport report;
  report.alignment = align_sim3(est, gt, window);
  report.errors = per_keyframe_errors(est, gt, report.alignment, window);
  double acc = 0.0;
  for (double e : report.errors) acc += e * e;
  report.rms_ate = report.errors.empty() ? 0.0 : std::sqrt(acc / report.errors.size());
  if (surface && map_points && !surface->empty() && !map_points->empty())
    report.pse = pse(*map_points, *surface, report.alignment);
  return report;
}

}  // namespace pslam
