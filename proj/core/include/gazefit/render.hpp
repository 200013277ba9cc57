#pragma once

#include <Eigen/Core>

#include <array>
#include <vector>

#include "gazefit/fitting.hpp"
#include "gazefit/model.hpp"
#include "gazefit/pointcloud.hpp"

namespace gazefit {

/// Row-major grayscale image. Rendered intensities lie in [0, 1]; pixels never
/// touched by a triangle keep the background sentinel (-1).
struct Image {
    static constexpr double kBackground = -1.0;

    int width = 0;
    int height = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, double fill = kBackground)
        : width(w), height(h), data(static_cast<size_t>(w) * static_cast<size_t>(h), fill) {}

    double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

/// 15 downsampled eye-appearance values, row-major 3 rows x 5 columns.
struct EyeFeature {
    std::array<double, 15> values{};

    double& at(int row, int col) { return values[static_cast<size_t>(row) * 5 + col]; }
    double at(int row, int col) const { return values[static_cast<size_t>(row) * 5 + col]; }
};

struct Projection {
    double u = 0.0;
    double v = 0.0;
    double depth = 0.0;
    bool behind = false; // z <= 0
};

/// Pinhole projection u = fx*x/z + cx, v = fy*y/z + cy. Points with z <= 0 are
/// flagged behind-camera, not errors.
std::vector<Projection> project(const Eigen::Matrix3Xd& points, const CameraIntrinsics& intr);
Projection project_point(const Eigen::Vector3d& p, const CameraIntrinsics& intr);

/// Bilinear sample with pixel centers at integer coordinates; interpolable
/// domain [0, width-1] x [0, height-1]. Outside it returns the background
/// sentinel.
double sample_bilinear(const Image& image, double u, double v);

/// Per-vertex intensity transfer: each vertex of the posed shape samples the
/// image at its projection. Vertices behind the camera or projecting outside
/// the image get the sentinel intensity (excluded from downstream rendering).
std::vector<double> sample_texture(const Shape& posed_shape,
                                   const Image& image,
                                   const CameraIntrinsics& intr);

/// Canonical re-posing of a converged fit: synthesize(model, fit.coeffs)
/// placed at identity rotation and translation (0, 0, z0).
/// Throws PreconditionError when the fit did not converge.
Shape normalize_pose(const FitResult& fit, const MorphableModel& model, double z0 = 0.6);

/// Z-buffered rasterization with screen-space barycentric interpolation of
/// vertex intensities. Depth ties go to the earlier triangle; triangles with
/// any behind-camera or sentinel-intensity vertex are skipped. Deterministic.
Image render_mesh(const Shape& shape,
                  const std::vector<Triangle>& triangles,
                  const std::vector<double>& vertex_intensities,
                  const CameraIntrinsics& intr,
                  int out_width,
                  int out_height);

/// Integer pixel rectangle, both corners inclusive.
struct PixelRect {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
};

/// Bounding box of the projected eye-annotation vertices expanded by `margin`
/// per side (fraction of the box extent), rounded to pixels. Throws
/// ExtractionError when the unexpanded box leaves the image.
PixelRect eye_patch_rect(const Shape& shape_canonical,
                         const std::vector<int>& eye_vertices,
                         const CameraIntrinsics& intr,
                         const Image& image,
                         double margin = 0.25);

/// Crops the expanded eye box from the image (the expanded box is clamped to
/// the image bounds).
Image extract_eye_patch(const Image& image,
                        const Shape& shape_canonical,
                        const std::vector<int>& eye_vertices,
                        const CameraIntrinsics& intr,
                        double margin = 0.25);

/// Partitions the patch into a 3x5 grid of near-equal cells and takes each
/// cell's mean intensity (background-sentinel pixels are excluded from the
/// mean; an all-sentinel cell contributes 0). With `normalize` the 15 values
/// are affinely rescaled to span [0, 1]; constant patches map to all zeros.
/// Throws InvalidArgumentError for patches smaller than 3x5.
EyeFeature downsample_to_feature(const Image& patch, bool normalize = true);

} // namespace gazefit
