#ifndef PSLAM_PBA_HPP
#define PSLAM_PBA_HPP

#include <Eigen/Core>
#include <Eigen/Dense>

#include <map>
#include <vector>

#include "pslam/map.hpp"
#include "pslam/robust.hpp"

namespace pslam {

struct PbaConfig {
  int n_levels = 2;  // coarse-to-fine pyramid levels used by the solver
  int max_iterations = 50;
  double initial_lambda = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 0.5;
  double lambda_max = 1e10;
  double convergence = 1e-5;  // relative energy decrease, twice in a row
  ErrorModelKind model_kind = ErrorModelKind::kTDist;
  double grad_weight_c = 50.0;
  double discard_ratio = 0.60;  // mid-optimization observation discard
  int min_fit_samples = 50;
};

struct PbaLevelReport {
  int level = 0;
  int iterations = 0;
  int accepted = 0;
  int rejected = 0;
  double initial_energy = 0.0;
  double final_energy = 0.0;
  double max_update = 0.0;
};

struct PbaReport {
  std::vector<PbaLevelReport> levels;
  bool converged = false;
  bool hit_damping_cap = false;
  bool reverted_to_initial = false;
  double scale_factor = 1.0;  // bootstrap gauge renormalization
  std::map<int, ErrorModel> final_models;
};

// One (point, target keyframe) residual term of Eq.-style total energy.
struct PbaObservation {
  int host_kf = -1;
  int point_idx = -1;    // index into the host keyframe's point list
  int problem_point = -1;  // index into PbaProblem::points, -1 when fixed
  int target_kf = -1;
};

struct PbaPoint {
  int host_kf = -1;
  int point_idx = -1;
  int state_idx = -1;  // column in the point state, -1 when pinned
};

// The windowed photometric bundle adjustment problem. Active keyframes
// (pose + affine) and active point inverse depths are optimized; fixed
// keyframes pin the gauge. When no fixed keyframe exists (bootstrap or
// global adjustment) an anchor keyframe is held constant instead.
class PbaProblem {
 public:
  static PbaProblem from_window(Map& map, const Window& window);
  // All keyframes active; first keyframe anchored plus one pinned inverse
  // depth as the scale constraint.
  static PbaProblem global(Map& map);

  Map* map = nullptr;
  std::vector<int> active_ids;  // sorted
  std::vector<int> fixed_ids;   // sorted
  int anchor_kf = -1;           // active keyframe excluded from the state
  std::pair<int, int> pinned_point{-1, -1};
  bool normalize_scale_after = false;

  std::vector<PbaPoint> points;
  std::vector<PbaObservation> observations;

  int camera_state_dim() const { return 8 * int(state_kfs_.size()); }
  int point_state_dim() const { return point_state_dim_; }
  int camera_state_offset(int kf_id) const;  // -1 when not in the state
  const std::vector<int>& state_kfs() const { return state_kfs_; }

  void finalize();  // builds observation and state indexing

 private:
  std::vector<int> state_kfs_;
  int point_state_dim_ = 0;
};

// Gauge fixation: every non-active keyframe hosting points observed by an
// active keyframe, or observing an active keyframe's points.
std::vector<int> fix_gauge(const Map& map, const std::vector<int>& active_ids);

struct NormalEquations {
  Eigen::MatrixXd h_cc;
  Eigen::MatrixXd h_cp;  // camera x point (transposed storage: point rows)
  Eigen::VectorXd h_pp;  // diagonal
  Eigen::VectorXd b_c;
  Eigen::VectorXd b_p;
  double energy = 0.0;          // robust energy at the linearization point
  double quadratic_energy = 0.0;  // sum w r^2 with the frozen weights
};

struct SchurSystem {
  Eigen::MatrixXd s;      // reduced camera system
  Eigen::VectorXd rhs;    // reduced -b
  std::vector<char> excluded;  // per-point exclusion flags
};

// Forms the damped reduced camera system S = Hcc - Hcp Hpp^-1 Hcp^T with
// multiplicative diagonal damping applied to both blocks beforehand.
// Points with a vanishing damped diagonal are excluded and flagged.
SchurSystem schur_reduce(const NormalEquations& eq, double lambda);

struct StepResult {
  bool ok = false;
  Eigen::VectorXd d_cam;
  Eigen::VectorXd d_point;
};

// One Levenberg-Marquardt candidate increment (Schur reduction plus
// back-substitution). Fails when the reduced system is not positive
// definite.
StepResult lm_step(const NormalEquations& eq, double lambda);

PbaReport solve(PbaProblem& problem, const PbaConfig& config);

inline PbaReport global_pba(Map& map, const PbaConfig& config) {
  PbaProblem problem = PbaProblem::global(map);
  return solve(problem, config);
}

// Internal evaluation hooks, exposed for tests and for the model fitting
// at the start of each pyramid level.
struct PbaState {
  std::map<int, SE3d> poses;
  std::map<int, AffineBrightness> affines;
  std::vector<double> rho;
};

PbaState capture_state(const PbaProblem& problem);
void write_back_state(PbaProblem& problem, const PbaState& state);

std::map<int, ErrorModel> fit_window_models(const PbaProblem& problem,
                                            const PbaState& state, int level,
                                            const PbaConfig& config);

double evaluate_energy(const PbaProblem& problem, const PbaState& state, int level,
                       const std::map<int, ErrorModel>& models, const PbaConfig& config);

NormalEquations assemble_normal_equations(const PbaProblem& problem,
                                          const PbaState& state, int level,
                                          const std::map<int, ErrorModel>& models,
                                          const PbaConfig& config);

}  // namespace pslam

#endif
