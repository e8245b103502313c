#ifndef PSLAM_ROBUST_HPP
#define PSLAM_ROBUST_HPP

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace pslam {

enum class ErrorModelKind { kGaussian, kTDist, kHuber };

// w_n = 1 / sigma^2
double weight_gaussian(double r, double sigma);

// w_t = (nu + 1) / (nu + (r / sigma)^2)
double weight_tdist(double r, double nu, double sigma);

// w_h = 1 / sigma^2 for |r| < lambda, lambda / (sigma^2 |r|) otherwise
double weight_huber(double r, double sigma, double lambda);

// A fitted per-keyframe residual distribution. Immutable after fitting;
// weights stay frozen until a model is explicitly refit.
struct ErrorModel {
  ErrorModelKind kind = ErrorModelKind::kTDist;
  double sigma = 10.0;
  double nu = 5.0;
  double lambda = 0.0;
  double percentile95 = std::numeric_limits<double>::infinity();

  double weight(double r) const {
    switch (kind) {
      case ErrorModelKind::kGaussian:
        return weight_gaussian(r, sigma);
      case ErrorModelKind::kTDist:
        return weight_tdist(r, nu, sigma);
      case ErrorModelKind::kHuber:
        return weight_huber(r, sigma, lambda);
    }
    return 1.0;
  }

  // Robust energy contribution of one residual: weight(r) * r^2.
  double energy(double r) const { return weight(r) * r * r; }
};

// 1.4826 * median(|r - median(r)|); nullopt for fewer than two samples.
std::optional<double> mad_scale(const std::vector<double>& samples);

// Keeps samples with |r| <= 3 * mad_scale; nullopt when everything is
// rejected or the scale is undefined.
std::optional<std::vector<double>> prefilter(const std::vector<double>& samples);

// Empirical q-percentile of |samples|, exact-sort definition:
// sorted(|r|)[ceil(q n) - 1].
double percentile_abs(std::vector<double> samples, double q);

// Negative log-likelihood of a zero-mean scaled t-distribution.
double tdist_nll(const std::vector<double>& samples, double nu, double sigma);

struct TFit {
  double nu = 5.0;
  double sigma = 1.0;
  bool converged = false;
};

// Nelder-Mead over (log nu, log sigma), initialized at (5, mad_scale),
// terminating at simplex diameter 1e-4 or 200 iterations. On failure the
// fallback (nu = 5, sigma = mad_scale) is reported with converged=false.
TFit fit_tdist(const std::vector<double>& samples);

// Fits one model on a residual sample population; nullopt when fewer than
// min_samples are available. percentile95 is taken over the raw |r|.
std::optional<ErrorModel> fit_error_model(const std::vector<double>& samples,
                                          ErrorModelKind kind, int min_samples = 50);

ErrorModelKind error_model_kind_from_string(const std::string& s);

}  // namespace pslam

#endif
