#pragma once

#include <Eigen/Core>

#include <optional>
#include <vector>

#include "gazefit/model.hpp"
#include "gazefit/pointcloud.hpp"

namespace gazefit {

/// Robust weighting applied to the match residuals.
///   TukeyPaper:   psi(d) = 1 - (d/d_t)^2 for d <= d_t, else 0
///   TukeySquared: psi(d) = (1 - (d/d_t)^2)^2 for d <= d_t, else 0
///   None:         psi == 1 (plain least squares)
enum class RobustKernel { TukeyPaper, TukeySquared, None };

/// Adaptive = rigid-dominated stage, then a linear ramp trading rigidity
/// weight for model-subspace weight. Fixed = final weights from the start.
enum class WeightSchedule { Adaptive, Fixed };

enum class FitStage { RigidOnly, Ramp, Joint };

struct FitConfig {
    double omega1_init = 10.0;
    double omega1_final = 1.0;
    double omega2_final = 1.0;
    double tukey_threshold = 0.01; // meters
    int ramp_iters = 10;
    double stage_tol = 1e-3;
    double conv_tol = 1e-5;
    int max_iters = 200;
    int source_samples = 2000;
    RobustKernel kernel = RobustKernel::TukeyPaper;
    WeightSchedule schedule = WeightSchedule::Adaptive;

    void validate() const; // throws InvalidArgumentError
};

/// Per-source-point correspondence record against the target scan.
struct MatchRecord {
    int correspondence = -1;   // target point index
    double plane_residual = 0; // n^T (z - c), signed meters
    double point_residual = 0; // ||z - c||, meters
    double plane_weight = 0;
    double point_weight = 0;
};

struct EnergyBreakdown {
    double match = 0.0;
    double rigid = 0.0;
    double model = 0.0;
    double total = 0.0;
};

/// Evolving registration state. `source` holds the fixed surface samples X
/// (with their triangle attachments, used to interpolate the model basis);
/// `z` is the deformed cloud being aligned with the target.
struct FitState {
    std::vector<SurfaceSample> source;
    PointSet z;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    Eigen::VectorXd coeffs;
    double omega1 = 0.0;
    double omega2 = 0.0;
    FitStage stage = FitStage::RigidOnly;
    int iteration = 0;
    int ramp_step = 0;
    std::vector<double> energy_history;
};

struct FitInit {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    Eigen::VectorXd coeffs;
};

struct FitResult {
    Eigen::VectorXd coeffs;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    bool converged = false;
    int iterations = 0;
    EnergyBreakdown final_energies;
    std::vector<double> per_point_residuals;
    std::array<int, 3> stage_iterations = {0, 0, 0}; // RigidOnly, Ramp, Joint
    std::vector<double> energy_history;
};

/// psi(d) = 1 - (d/d_t)^2 for d <= d_t, else 0. Throws on negative d or
/// non-positive d_t.
double tukey_weight(double d, double d_t);

/// Kernel-dispatching variant of tukey_weight.
double robust_weight(double d, double d_t, RobustKernel kernel);

/// Correspondences, signed point-to-plane and point-to-point residuals, and
/// their robust weights for every point of z against the target scan.
/// The target must carry normals.
std::vector<MatchRecord> match_residuals(const PointSet& z,
                                         const PointSet& target,
                                         const SpatialIndex& target_index,
                                         double tukey_threshold,
                                         RobustKernel kernel = RobustKernel::TukeyPaper);

/// The three energy terms and the weighted total
///   total = E_match + omega1 * E_rigid + omega2 * E_model
/// at the state's current weights. E_match is the robust two-part match
/// energy; E_rigid penalizes z deviating from the rigidly posed source;
/// E_model penalizes z deviating from the posed model reconstruction at the
/// state's coefficients. When `frozen` is supplied those correspondences and
/// weights are used instead of being recomputed.
EnergyBreakdown energy(const FitState& state,
                       const MorphableModel& model,
                       const PointSet& target,
                       const SpatialIndex& target_index,
                       const FitConfig& config,
                       const std::vector<MatchRecord>* frozen = nullptr);

/// First-order rotation update: all cosines 1, sines their angles:
///   [[1, a, b], [-a, 1, c], [-b, -c, 1]]
Eigen::Matrix3d small_angle_rotation(double a, double b, double c);

/// Nearest rotation in Frobenius norm (SVD polar projection), det +1.
/// Throws DegenerateGeometryError for singular input.
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m);

/// One outer iteration: recompute correspondences and robust weights, then a
/// block-coordinate sweep with both frozen:
///   (a) rigid update by small-angle linear least squares, orthonormalized,
///       accepted only if it does not increase the frozen-weight energy;
///   (b) coefficients by linear least squares of E_model (skipped at
///       omega2 == 0, where it has no effect on the energy);
///   (c) per-point closed-form z update (3x3 SPD solve per point).
/// Appends the post-sweep frozen-weight total energy to the history.
/// Throws NoCorrespondenceError when every robust weight is zero.
FitState solve_iteration(const FitState& state,
                         const MorphableModel& model,
                         const PointSet& target,
                         const SpatialIndex& target_index,
                         const FitConfig& config);

/// True iff the history holds at least `window` entries and the relative
/// energy decrease over the tail of the window is below `tol`:
///   (H[L-window+1] - H[L-1]) / H[L-window+1] < tol   (L = history length)
bool detect_stage_transition(const std::vector<double>& energy_history,
                             double tol,
                             int window = 5);

/// Scheduled weights for the state's current stage: (omega1_init, 0) in
/// RigidOnly; the linear interpolation at ramp step j in Ramp; the final
/// weights in Joint.
std::pair<double, double> update_weights(const FitState& state, const FitConfig& config);

/// Full registration: samples the source surface at init.coeffs, poses it at
/// the initial pose, then iterates solve_iteration under the stage machine
/// (RigidOnly -> Ramp on stagnation -> Joint) until the Joint-stage energy
/// converges or max_iters is reached. Targets without normals get them
/// estimated internally (k = 12, viewpoint at the origin).
FitResult fit(const MorphableModel& model,
              const PointSet& target,
              const FitInit& init,
              const FitConfig& config);

/// Serialization of FitResult (rotation row-major, translation, coefficients,
/// per-stage iteration counts, energy history, converged flag).
std::string fit_result_to_json(const FitResult& result);
FitResult fit_result_from_json(const std::string& text);

namespace detail {

/// Frozen view of one outer iteration's correspondences.
struct FrozenMatches {
    std::vector<MatchRecord> records;
};

/// Energy with explicitly frozen correspondences/weights and explicit pose /
/// coefficients (used by the sweep and by tests).
EnergyBreakdown energy_frozen(const std::vector<SurfaceSample>& source,
                              const PointSet& z,
                              const PointSet& target,
                              const std::vector<MatchRecord>& matches,
                              const MorphableModel& model,
                              const Eigen::Matrix3d& rotation,
                              const Eigen::Vector3d& translation,
                              const Eigen::VectorXd& coeffs,
                              double omega1,
                              double omega2);

/// One block sweep (rigid, coefficients, z) over a state with frozen
/// correspondences and weights. Exposed for the monotonicity tests.
FitState sweep(const FitState& state,
               const MorphableModel& model,
               const PointSet& target,
               const std::vector<MatchRecord>& matches,
               const FitConfig& config);

} // namespace detail

} // namespace gazefit
