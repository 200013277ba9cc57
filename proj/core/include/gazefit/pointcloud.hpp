#pragma once

#include <Eigen/Core>

#include <vector>

#include "gazefit/error.hpp"

namespace gazefit {

/// A 3D point set in meters, optionally with unit normals (one per point).
struct PointSet {
    std::vector<Eigen::Vector3d> points;
    std::vector<Eigen::Vector3d> normals;

    int size() const { return static_cast<int>(points.size()); }
    bool empty() const { return points.empty(); }
    bool has_normals() const { return !normals.empty(); }

    /// Checks finiteness, normal count and unit length (1e-6). Throws ValidationError.
    void validate() const;
};

struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    void validate() const;
};

/// Exact nearest-neighbor structure over an immutable point set (kd-tree).
/// Query results are identical to a brute-force scan; ties are broken by the
/// lowest point index so results are reproducible across platforms.
class SpatialIndex {
public:
    explicit SpatialIndex(const PointSet& cloud);

    struct Hit {
        Eigen::Vector3d point;
        int index = -1;
        double distance = 0.0;
    };

    Hit nearest(const Eigen::Vector3d& query) const;

    /// Indices of the k nearest points ordered by (distance, index) ascending.
    std::vector<int> knearest(const Eigen::Vector3d& query, int k) const;

    int size() const { return static_cast<int>(points_.size()); }
    const Eigen::Vector3d& point(int i) const { return points_[static_cast<size_t>(i)]; }

private:
    struct Node {
        int axis = -1;       // -1 marks a leaf
        double split = 0.0;
        int left = -1;
        int right = -1;
        int begin = 0;
        int end = 0;
    };

    int build(int begin, int end);
    void search_nearest(int node, const Eigen::Vector3d& q, double& best_d2, int& best_idx) const;

    std::vector<Eigen::Vector3d> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

SpatialIndex build_index(const PointSet& cloud);

/// (point, index, distance) of the cloud point nearest to q; ties by lowest index.
SpatialIndex::Hit nearest(const SpatialIndex& index, const Eigen::Vector3d& q);

/// Per-point normals from the covariance of the k nearest neighbors (the point
/// itself counts as its own neighbor). Normals are the smallest-eigenvalue
/// eigenvector, flipped so dot(normal, viewpoint - point) >= 0, unit length.
/// For a rank-deficient neighborhood (e.g. collinear points) the normal is an
/// arbitrary unit vector orthogonal to the dominant direction.
PointSet estimate_normals(const PointSet& cloud, int k, const Eigen::Vector3d& viewpoint);

/// Back-projects a depth map (rows = height, cols = width, meters) through a
/// pinhole camera. Pixels with NaN or non-positive depth are skipped.
PointSet depth_to_points(const Eigen::MatrixXd& depth, const CameraIntrinsics& intr);

} // namespace gazefit
