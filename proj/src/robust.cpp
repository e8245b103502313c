#include "pslam/robust.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace pslam {

double weight_gaussian(double /*r*/, double sigma) { return 1.0 / (sigma * sigma); }

double weight_tdist(double r, double nu, double sigma) {
  const double z = r / sigma;
  return (nu + 1.0) / (nu + z * z);
}

double weight_huber(double r, double sigma, double lambda) {
  const double s2 = sigma * sigma;
  const double ar = std::abs(r);
  if (ar < lambda) return 1.0 / s2;
  return lambda / (s2 * ar);
}

namespace {

double median_inplace(std::vector<double>& v) {
  const size_t n = v.size();
  auto mid = v.begin() + n / 2;
  std::nth_element(v.begin(), mid, v.end());
  double m = *mid;
  if (n % 2 == 0) {
    auto lo = std::max_element(v.begin(), mid);
    m = 0.5 * (m + *lo);
  }
  return m;
}

}  // namespace

std::optional<double> mad_scale(const std::vector<double>& samples) {
  if (samples.size() < 2) return std::nullopt;
  std::vector<double> tmp = samples;
  const double med = median_inplace(tmp);
  for (size_t i = 0; i < samples.size(); ++i) tmp[i] = std::abs(samples[i] - med);
  return 1.4826 * median_inplace(tmp);
}

std::optional<std::vector<double>> prefilter(const std::vector<double>& samples) {
  auto scale = mad_scale(samples);
  if (!scale) return std::nullopt;
  const double bound = 3.0 * *scale;
  std::vector<double> out;
  out.reserve(samples.size());
  for (double r : samples)
    if (std::abs(r) <= bound) out.push_back(r);
  if (out.empty()) return std::nullopt;
  return out;
}

double percentile_abs(std::vector<double> samples, double q) {
  if (samples.empty()) return std::numeric_limits<double>::infinity();
  for (double& r : samples) r = std::abs(r);
  std::sort(samples.begin(), samples.end());
  const size_t n = samples.size();
  size_t idx = size_t(std::ceil(q * double(n)));
  idx = std::min(std::max<size_t>(idx, 1), n) - 1;
  return samples[idx];
}

double tdist_nll(const std::vector<double>& samples, double nu, double sigma) {
  // -log p summed; the sample-independent normalization enters once per
  // sample so that NLL values are comparable across (nu, sigma).
  const double c = -std::lgamma(0.5 * (nu + 1.0)) + std::lgamma(0.5 * nu) +
                   0.5 * std::log(nu * M_PI) + std::log(sigma);
  const double half_nu1 = 0.5 * (nu + 1.0);
  double acc = 0.0;
  for (double r : samples) {
    const double z = r / sigma;
    acc += half_nu1 * std::log1p(z * z / nu);
  }
  return acc + c * double(samples.size());
}

TFit fit_tdist(const std::vector<double>& samples) {
  TFit fallback;
  auto scale = mad_scale(samples);
  fallback.nu = 5.0;
  fallback.sigma = scale.value_or(1.0);
  if (fallback.sigma <= 0.0) fallback.sigma = 1e-6;
  if (samples.size() < 50) return fallback;

  using Vec2 = std::array<double, 2>;  // (log nu, log sigma)
  auto nll = [&samples](const Vec2& x) {
    return tdist_nll(samples, std::exp(x[0]), std::exp(x[1]));
  };

  // Nelder-Mead with standard coefficients.
  std::array<Vec2, 3> simplex = {Vec2{std::log(fallback.nu), std::log(fallback.sigma)},
                                 Vec2{std::log(fallback.nu) + 0.5, std::log(fallback.sigma)},
                                 Vec2{std::log(fallback.nu), std::log(fallback.sigma) + 0.5}};
  std::array<double, 3> value = {nll(simplex[0]), nll(simplex[1]), nll(simplex[2])};
  const double init_value = value[0];

  bool converged = false;
  for (int it = 0; it < 200; ++it) {
    std::array<int, 3> order = {0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) { return value[a] < value[b]; });
    const int best = order[0], mid = order[1], worst = order[2];

    double diameter = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j)
        diameter = std::max(diameter, std::hypot(simplex[i][0] - simplex[j][0],
                                                 simplex[i][1] - simplex[j][1]));
    if (diameter < 1e-4) {
      converged = true;
      break;
    }

    const Vec2 centroid = {0.5 * (simplex[best][0] + simplex[mid][0]),
                           0.5 * (simplex[best][1] + simplex[mid][1])};
    auto blend = [&](double t) {
      return Vec2{centroid[0] + t * (centroid[0] - simplex[worst][0]),
                  centroid[1] + t * (centroid[1] - simplex[worst][1])};
    };

    const Vec2 reflected = blend(1.0);
    const double fr = nll(reflected);
    if (fr < value[best]) {
      const Vec2 expanded = blend(2.0);
      const double fe = nll(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        value[worst] = fe;
      } else {
        simplex[worst] = reflected;
        value[worst] = fr;
      }
    } else if (fr < value[mid]) {
      simplex[worst] = reflected;
      value[worst] = fr;
    } else {
      const Vec2 contracted = blend(fr < value[worst] ? 0.5 : -0.5);
      const double fc = nll(contracted);
      if (fc < std::min(fr, value[worst])) {
        simplex[worst] = contracted;
        value[worst] = fc;
      } else {
        for (int i : {mid, worst}) {
          simplex[i] = {0.5 * (simplex[i][0] + simplex[best][0]),
                        0.5 * (simplex[i][1] + simplex[best][1])};
          value[i] = nll(simplex[i]);
        }
      }
    }
  }

  const int best = int(std::min_element(value.begin(), value.end()) - value.begin());
  if (!converged || value[best] > init_value) return fallback;

  TFit fit;
  fit.nu = std::exp(simplex[best][0]);
  fit.sigma = std::exp(simplex[best][1]);
  fit.converged = true;
  return fit;
}

std::optional<ErrorModel> fit_error_model(const std::vector<double>& samples,
                                          ErrorModelKind kind, int min_samples) {
  if (int(samples.size()) < min_samples) return std::nullopt;

  ErrorModel model;
  model.kind = kind;
  model.percentile95 = percentile_abs(samples, 0.95);

  auto filtered = prefilter(samples);
  if (!filtered) return std::nullopt;
  auto scale = mad_scale(*filtered);
  double sigma = scale.value_or(0.0);
  if (sigma <= 0.0) sigma = 1e-6;

  switch (kind) {
    case ErrorModelKind::kGaussian:
      model.sigma = sigma;
      break;
    case ErrorModelKind::kHuber:
      model.sigma = sigma;
      model.lambda = 1.345 * sigma;
      break;
    case ErrorModelKind::kTDist: {
      const TFit fit = fit_tdist(*filtered);
      model.nu = fit.nu;
      model.sigma = std::max(fit.sigma, 1e-6);
      break;
    }
  }
  return model;
}

ErrorModelKind error_model_kind_from_string(const std::string& s) {
  if (s == "gaussian") return ErrorModelKind::kGaussian;
  if (s == "tdist") return ErrorModelKind::kTDist;
  if (s == "huber") return ErrorModelKind::kHuber;
  throw std::invalid_argument("unknown error model kind: " + s);
}

}  // namespace pslam
