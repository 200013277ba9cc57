#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <vector>

#include "gazefit/render.hpp"

namespace gazefit {

/// Unit gaze direction in the canonical camera frame (camera looks along +z,
/// a face in front of it gazes roughly along -z). Yaw and pitch are the
/// screen-plane angles about the -z forward axis:
///   yaw = atan2(x, -z), pitch = atan2(y, -z).
class GazeDirection {
public:
    GazeDirection() : v_(0, 0, -1) {}
    /// Normalizes the input; throws InvalidArgumentError for near-zero or
    /// non-finite vectors.
    explicit GazeDirection(const Eigen::Vector3d& v);

    static GazeDirection from_yaw_pitch(double yaw_rad, double pitch_rad);

    const Eigen::Vector3d& vector() const { return v_; }
    double yaw() const { return std::atan2(v_.x(), -v_.z()); }
    double pitch() const { return std::atan2(v_.y(), -v_.z()); }

private:
    Eigen::Vector3d v_;
};

struct TrainingSet {
    std::vector<EyeFeature> features;
    std::vector<GazeDirection> targets;
    std::vector<Eigen::Vector2d> screen_points; // optional, normalized [0,1]^2

    int size() const { return static_cast<int>(features.size()); }
    bool has_screen_points() const { return !screen_points.empty(); }
    void validate() const; // equal lengths, nonempty
};

/// Distance-weighted k-nearest-neighbor regression. Neighbors are found by
/// Euclidean feature distance (ties by lowest index); weights are inverse
/// distances normalized to sum 1, and the blended target is re-normalized to
/// unit length. A training feature within 1e-12 of the query short-circuits
/// to that sample's target.
GazeDirection knn_predict(const TrainingSet& train, const EyeFeature& x, int k);

/// The unnormalized weighted sum (weights are raw inverse distances, output
/// not re-normalized). Kept for fidelity experiments against the normalized
/// default above.
Eigen::Vector3d knn_predict_raw(const TrainingSet& train, const EyeFeature& x, int k);

/// min ||w||_1 subject to ||x - F w||_2 <= eps, where F stacks the columns
/// feature-wise. Solved by lasso homotopy; the returned w is feasible within
/// 1e-10. Throws InfeasibleError when eps is below the distance from x to the
/// column space, NumericalFailureError when the path exceeds its step cap.
Eigen::VectorXd sparse_l1_reconstruct(const Eigen::MatrixXd& features,
                                      const Eigen::VectorXd& x,
                                      double eps);

/// Adaptive linear regression: sparse l1 reconstruction of the query feature
/// from the training features, with the same weights applied to the targets.
GazeDirection alr_predict(const TrainingSet& train, const EyeFeature& x, double eps);

/// Sparse training selection: a G x G grid of cell centers over the unit
/// screen square; each node picks the track sample with the nearest screen
/// point (ties by lowest index); duplicates collapse. Returns the selected
/// track indices in ascending order.
std::vector<int> select_sparse_indices(const std::vector<Eigen::Vector2d>& screen_points,
                                       int grid);

/// The induced feature/target subset for select_sparse_indices.
TrainingSet select_sparse_training(const TrainingSet& track, int grid);

/// arccos of the clamped dot product, in degrees, [0, 180]. Inputs must be
/// unit within 1e-6.
double angular_error_deg(const GazeDirection& estimate, const GazeDirection& truth);

/// JSON persistence: {"samples": [{"feature": [15], "gaze": [3], "screen": [2]}]}.
void save_training_set(const TrainingSet& set, const std::filesystem::path& path);
TrainingSet load_training_set(const std::filesystem::path& path);

} // namespace gazefit
