#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gazefit/pointcloud.hpp"

namespace gazefit {

using Triangle = std::array<int, 3>;

/// A synthesized face shape: one 3D vertex per model vertex, meters.
/// Triangulation is shared with the generating model and passed alongside
/// where needed.
struct Shape {
    Eigen::Matrix3Xd vertices;

    int vertex_count() const { return static_cast<int>(vertices.cols()); }
};

/// Linear statistical shape model: mean plus an orthonormal basis of vertex
/// displacement fields, with a triangulation and named vertex annotations
/// (at minimum "left_eye", "right_eye" and "landmarks").
///
/// Immutable after construction; safe to share across concurrent fits.
class MorphableModel {
public:
    /// Validates all invariants (orthonormal basis within 1e-9, index ranges,
    /// positive scales, n >= 4, K >= 1, nonempty triangles) and throws
    /// ValidationError naming the violated invariant.
    MorphableModel(Eigen::VectorXd mean_shape,
                   Eigen::MatrixXd basis,
                   Eigen::VectorXd basis_scales,
                   std::vector<Triangle> triangles,
                   std::map<std::string, std::vector<int>> annotations);

    int vertex_count() const { return static_cast<int>(mean_shape_.size() / 3); }
    int coeff_count() const { return static_cast<int>(basis_.cols()); }

    const Eigen::VectorXd& mean_shape() const { return mean_shape_; }
    const Eigen::MatrixXd& basis() const { return basis_; }
    const Eigen::VectorXd& basis_scales() const { return basis_scales_; }
    const std::vector<Triangle>& triangles() const { return triangles_; }
    const std::map<std::string, std::vector<int>>& annotations() const { return annotations_; }

    /// Throws InvalidArgumentError when the annotation does not exist.
    const std::vector<int>& annotation(const std::string& name) const;

private:
    Eigen::VectorXd mean_shape_;
    Eigen::MatrixXd basis_;
    Eigen::VectorXd basis_scales_;
    std::vector<Triangle> triangles_;
    std::map<std::string, std::vector<int>> annotations_;
};

/// vertices = mean + basis * coeffs, reshaped to n 3D points.
Shape synthesize(const MorphableModel& model, const Eigen::VectorXd& coeffs);

/// Least-squares coefficients of a shape in the model subspace:
/// basis^T * (shape - mean). Inverts synthesize exactly for in-subspace shapes.
Eigen::VectorXd project_to_subspace(const MorphableModel& model, const Shape& shape);

/// One surface point drawn on a triangle of a synthesized shape. Barycentric
/// weights are (1-u-v, u, v) on the triangle's three vertices.
struct SurfaceSample {
    int triangle = -1;
    double u = 0.0;
    double v = 0.0;
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

/// Draws `count` points by area-weighted triangle selection and uniform
/// barycentric sampling on synthesize(model, coeffs). Deterministic per seed.
/// Throws DegenerateGeometryError when the mesh has zero total area.
std::vector<SurfaceSample> sample_surface_detail(const MorphableModel& model,
                                                 const Eigen::VectorXd& coeffs,
                                                 int count,
                                                 std::uint64_t seed);

/// Positions-only variant of sample_surface_detail.
PointSet sample_surface(const MorphableModel& model,
                        const Eigen::VectorXd& coeffs,
                        int count,
                        std::uint64_t seed);

/// JSON model file with fields n, k, mean_shape, basis (row-major 3n x K),
/// basis_scales, triangles, annotations. Numeric round-trip within 1e-12
/// (in practice exact).
MorphableModel load_model(const std::filesystem::path& path);
void save_model(const MorphableModel& model, const std::filesystem::path& path);

} // namespace gazefit
