#include "pslam/image.hpp"

#include <algorithm>
#include <cmath>

namespace pslam {

GrayImage downsample_half(const GrayImage& img) {
  const int w = img.width() / 2;
  const int h = img.height() / 2;
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double s = double(img(2 * x, 2 * y)) + double(img(2 * x + 1, 2 * y)) +
                       double(img(2 * x, 2 * y + 1)) + double(img(2 * x + 1, 2 * y + 1));
      out(x, y) = float(0.25 * s);
    }
  }
  return out;
}

Pyramid build_pyramid(const GrayImage& img, const Camerad& cam, int n_levels) {
  if (n_levels < 1) throw std::invalid_argument("build_pyramid: n_levels must be >= 1");
  const int min_dim = 1 << (n_levels - 1);
  if (img.width() < min_dim || img.height() < min_dim)
    throw std::invalid_argument("build_pyramid: image too small for requested levels");

  Pyramid pyr;
  pyr.levels.reserve(n_levels);
  pyr.cameras.reserve(n_levels);
  pyr.levels.push_back(img);
  pyr.cameras.push_back(cam);
  for (int l = 1; l < n_levels; ++l) {
    pyr.levels.push_back(downsample_half(pyr.levels.back()));
    Camerad c = cam.at_level(l);
    c.width = pyr.levels.back().width();
    c.height = pyr.levels.back().height();
    pyr.cameras.push_back(c);
  }
  return pyr;
}

std::vector<Eigen::Vector2i> select_candidates(const GrayImage& img, int target_count,
                                               int block_size, double margin) {
  struct Winner {
    double mag;
    Eigen::Vector2i px;
  };
  std::vector<Winner> winners;

  const int lo = kInteriorMargin;
  const int hi_x = img.width() - kInteriorMargin;
  const int hi_y = img.height() - kInteriorMargin;
  if (hi_x <= lo || hi_y <= lo) return {};

  std::vector<double> mags;
  mags.reserve(size_t(block_size) * block_size);

  for (int by = lo; by < hi_y; by += block_size) {
    for (int bx = lo; bx < hi_x; bx += block_size) {
      const int ex = std::min(bx + block_size, hi_x);
      const int ey = std::min(by + block_size, hi_y);
      mags.clear();
      double best = -1.0;
      Eigen::Vector2i best_px(0, 0);
      for (int y = by; y < ey; ++y) {
        for (int x = bx; x < ex; ++x) {
          const double gx = 0.5 * (double(img(x + 1, y)) - double(img(x - 1, y)));
          const double gy = 0.5 * (double(img(x, y + 1)) - double(img(x, y - 1)));
          const double m = std::sqrt(gx * gx + gy * gy);
          mags.push_back(m);
          if (m > best) {
            best = m;
            best_px = Eigen::Vector2i(x, y);
          }
        }
      }
      if (mags.empty()) continue;
      auto mid = mags.begin() + mags.size() / 2;
      std::nth_element(mags.begin(), mid, mags.end());
      const double median = *mid;
      if (best > median + margin) winners.push_back({best, best_px});
    }
  }

  std::stable_sort(winners.begin(), winners.end(), [](const Winner& a, const Winner& b) {
    return a.mag > b.mag;
  });
  if (int(winners.size()) > target_count) winners.resize(target_count);

  std::vector<Eigen::Vector2i> out;
  out.reserve(winners.size());
  for (const auto& w : winners) out.push_back(w.px);
  return out;
}

}  // namespace pslam
