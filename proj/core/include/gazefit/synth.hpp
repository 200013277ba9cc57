#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

#include "gazefit/model.hpp"
#include "gazefit/pointcloud.hpp"
#include "gazefit/regress.hpp"
#include "gazefit/render.hpp"

namespace gazefit {

/// Half-space occlusion predicate: points with normal . p >= offset are removed.
struct HalfSpace {
    Eigen::Vector3d normal = Eigen::Vector3d::UnitX();
    double offset = 0.0;

    bool contains(const Eigen::Vector3d& p) const { return normal.dot(p) >= offset; }
};

/// Ground-truth bundle for one synthetic scan (plus the frame gaze sequence of
/// the suite it belongs to). Stands in for dataset ground truth.
struct Scenario {
    Eigen::VectorXd coeffs_true;
    Eigen::Matrix3d rotation_true = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation_true = Eigen::Vector3d(0, 0, 0.6);
    std::vector<GazeDirection> gaze_true;
    double noise_sigma = 0.0;       // meters
    double outlier_fraction = 0.0;  // [0, 1)
    std::optional<HalfSpace> occlusion;
    int scan_size = 5000;
    std::uint64_t seed = 0;

    void validate() const; // throws InvalidArgumentError
};

/// Procedural test model: a triangulated half-ellipsoid face shell (facing -z,
/// centered near the origin) with a nose ridge and two annotated concave eye
/// regions, plus K random smooth displacement fields orthonormalized into the
/// shape basis. Deterministic per seed. `n_vertices` is a target count; the
/// realized count is the nearby number of grid nodes inside the face outline.
MorphableModel make_test_model(int n_vertices, int coeff_count, std::uint64_t seed);

/// Samples scan_size points on the surface at coeffs_true, poses them at the
/// true pose, adds isotropic Gaussian noise, deletes points inside the
/// occlusion half-space, then replaces outlier_fraction of the survivors with
/// uniform points in the scan's bounding box inflated 50%. Deterministic per
/// seed. Throws DegenerateScenarioError when the occlusion removes everything.
PointSet generate_scan(const MorphableModel& model, const Scenario& scenario);

/// Parametric eye appearance: bright sclera (0.9), dark pupil disc (0.1)
/// whose center offset from the patch center is linear in (yaw, pitch) --
/// (yaw/30deg, pitch/30deg) x 40% of the patch half-extent per axis -- with a
/// one-pixel anti-aliased rim and optional additive Gaussian intensity noise
/// clamped to [0, 1]. Deterministic per seed. Gaze beyond +-30 degrees is an
/// InvalidArgumentError.
Image generate_eye_appearance(const GazeDirection& gaze,
                              int patch_width,
                              int patch_height,
                              double noise_sigma_intensity,
                              std::uint64_t seed);

struct TrackPoint {
    Eigen::Vector2d screen = Eigen::Vector2d(0.5, 0.5); // normalized [0,1]^2
    GazeDirection gaze;
};

struct TrackSpec {
    enum class Kind { Lissajous, GridSweep };
    Kind kind = Kind::Lissajous;
    double margin = 0.05;   // screen border kept clear
    double phase = 0.0;     // Lissajous phase offset
};

/// Screen geometry shared by gaze synthesis: a 0.5 m square screen in the
/// camera plane (z = 0), viewed from the canonical eye position (0, 0, 0.6).
GazeDirection gaze_from_screen_point(const Eigen::Vector2d& screen);

/// Smooth screen-space trajectory with the per-frame gaze directions implied
/// by the fixed screen geometry.
std::vector<TrackPoint> generate_gaze_track(const TrackSpec& spec, int frames);

} // namespace gazefit
