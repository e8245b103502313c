#ifndef PSLAM_IMAGE_HPP
#define PSLAM_IMAGE_HPP

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pslam/geometry.hpp"

namespace pslam {

// Row-major grayscale image. Intensities are stored in the nominal
// [0, 255] range of the 8-bit sources; sampling arithmetic is done in
// double regardless of the storage scalar.
template <typename T = float>
class Image {
 public:
  Image() : width_(0), height_(0) {}
  Image(int width, int height, T value = T(0))
      : width_(width), height_(height), data_(size_t(width) * height, value) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("Image: empty dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }

  T operator()(int x, int y) const { return data_[size_t(y) * width_ + x]; }
  T& operator()(int x, int y) { return data_[size_t(y) * width_ + x]; }

  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }

  bool contains(double x, double y) const {
    return x >= 0.0 && y >= 0.0 && x <= width_ - 1.0 && y <= height_ - 1.0;
  }

 private:
  int width_, height_;
  std::vector<T> data_;
};

using GrayImage = Image<float>;

struct SampleAndGradient {
  double value;
  Eigen::Vector2d gradient;
};

template <typename T>
std::optional<double> sample_bilinear(const Image<T>& img, const Eigen::Vector2d& u) {
  if (!img.contains(u.x(), u.y())) return std::nullopt;
  int x0 = int(std::floor(u.x()));
  int y0 = int(std::floor(u.y()));
  if (x0 == img.width() - 1) --x0;   // sampling exactly on the far border
  if (y0 == img.height() - 1) --y0;
  const double a = u.x() - x0;
  const double b = u.y() - y0;
  const double i00 = img(x0, y0), i10 = img(x0 + 1, y0);
  const double i01 = img(x0, y0 + 1), i11 = img(x0 + 1, y0 + 1);
  return (1.0 - a) * (1.0 - b) * i00 + a * (1.0 - b) * i10 + (1.0 - a) * b * i01 +
         a * b * i11;
}

// Central differences at integer coordinates, bilinearly interpolated at
// subpixel positions. Needs one pixel of margin around the 2x2 support.
template <typename T>
std::optional<Eigen::Vector2d> gradient_at(const Image<T>& img, const Eigen::Vector2d& u) {
  int x0 = int(std::floor(u.x()));
  int y0 = int(std::floor(u.y()));
  const double a = u.x() - x0;
  const double b = u.y() - y0;
  const int x1 = (a > 0.0) ? x0 + 1 : x0;
  const int y1 = (b > 0.0) ? y0 + 1 : y0;
  if (x0 < 1 || y0 < 1 || x1 > img.width() - 2 || y1 > img.height() - 2)
    return std::nullopt;

  auto cd = [&img](int x, int y) {
    return Eigen::Vector2d(0.5 * (double(img(x + 1, y)) - double(img(x - 1, y))),
                           0.5 * (double(img(x, y + 1)) - double(img(x, y - 1))));
  };
  const Eigen::Vector2d g00 = cd(x0, y0);
  const Eigen::Vector2d g10 = (a > 0.0) ? cd(x0 + 1, y0) : g00;
  const Eigen::Vector2d g01 = (b > 0.0) ? cd(x0, y0 + 1) : g00;
  const Eigen::Vector2d g11 = (a > 0.0 && b > 0.0) ? cd(x0 + 1, y0 + 1)
                              : (a > 0.0)          ? g10
                                                   : g01;
  return Eigen::Vector2d((1.0 - a) * (1.0 - b) * g00 + a * (1.0 - b) * g10 +
                         (1.0 - a) * b * g01 + a * b * g11);
}

// Fused intensity + gradient fetch for the residual loops.
template <typename T>
std::optional<SampleAndGradient> sample_with_gradient(const Image<T>& img,
                                                      const Eigen::Vector2d& u) {
  auto v = sample_bilinear(img, u);
  if (!v) return std::nullopt;
  auto g = gradient_at(img, u);
  if (!g) return std::nullopt;
  return SampleAndGradient{*v, *g};
}

// The 8-pixel residual pattern around a point, containing the central
// pixel and spread over a 5x5 neighborhood.
using PatchPattern = std::array<Eigen::Vector2i, 8>;

inline const PatchPattern& patch_pattern() {
  static const PatchPattern p = {Eigen::Vector2i(0, 0),   Eigen::Vector2i(-2, 0),
                                 Eigen::Vector2i(2, 0),   Eigen::Vector2i(0, -2),
                                 Eigen::Vector2i(0, 2),   Eigen::Vector2i(-1, -1),
                                 Eigen::Vector2i(1, -1),  Eigen::Vector2i(-1, 1)};
  return p;
}

// Patch pixels outside this margin from the image border are invalid.
inline constexpr int kInteriorMargin = 3;

struct Pyramid {
  std::vector<GrayImage> levels;   // level 0 is the finest
  std::vector<Camerad> cameras;    // matching intrinsics per level

  int num_levels() const { return int(levels.size()); }
  const GrayImage& level(int l) const { return levels[l]; }
  const Camerad& camera(int l) const { return cameras[l]; }
};

GrayImage downsample_half(const GrayImage& img);

Pyramid build_pyramid(const GrayImage& img, const Camerad& cam, int n_levels);

// Candidate pixels: per-block gradient-magnitude maxima above an adaptive
// threshold, at most one per block, spread over the image.
std::vector<Eigen::Vector2i> select_candidates(const GrayImage& img, int target_count,
                                               int block_size = 16, double margin = 8.0);

}  // namespace pslam

#endif
