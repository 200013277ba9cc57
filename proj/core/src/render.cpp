#include "gazefit/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gazefit/error.hpp"

namespace gazefit {

Projection project_point(const Eigen::Vector3d& p, const CameraIntrinsics& intr) {
    Projection proj;
    proj.depth = p.z();
    if (p.z() <= 0.0) {
        proj.behind = true;
        return proj;
    }
    proj.u = intr.fx * p.x() / p.z() + intr.cx;
    proj.v = intr.fy * p.y() / p.z() + intr.cy;
    return proj;
}

std::vector<Projection> project(const Eigen::Matrix3Xd& points, const CameraIntrinsics& intr) {
    std::vector<Projection> out(static_cast<size_t>(points.cols()));
    for (int i = 0; i < points.cols(); ++i) {
        out[static_cast<size_t>(i)] = project_point(points.col(i), intr);
    }
    return out;
}

double sample_bilinear(const Image& image, double u, double v) {
    if (!(u >= 0.0) || !(v >= 0.0) || !(u <= image.width - 1) || !(v <= image.height - 1)) {
        return Image::kBackground;
    }
    const int x0 = std::min(static_cast<int>(std::floor(u)), image.width - 2 >= 0 ? image.width - 2 : 0);
    const int y0 = std::min(static_cast<int>(std::floor(v)), image.height - 2 >= 0 ? image.height - 2 : 0);
    const int x1 = std::min(x0 + 1, image.width - 1);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double fx = u - x0;
    const double fy = v - y0;
    const double top = (1.0 - fx) * image.at(x0, y0) + fx * image.at(x1, y0);
    const double bottom = (1.0 - fx) * image.at(x0, y1) + fx * image.at(x1, y1);
    return (1.0 - fy) * top + fy * bottom;
}

std::vector<double> sample_texture(const Shape& posed_shape,
                                   const Image& image,
                                   const CameraIntrinsics& intr) {
    std::vector<double> intensities(static_cast<size_t>(posed_shape.vertex_count()),
                                    Image::kBackground);
    for (int i = 0; i < posed_shape.vertex_count(); ++i) {
        const Projection proj = project_point(posed_shape.vertices.col(i), intr);
        if (proj.behind) {
            continue;
        }
        intensities[static_cast<size_t>(i)] = sample_bilinear(image, proj.u, proj.v);
    }
    return intensities;
}

Shape normalize_pose(const FitResult& fit, const MorphableModel& model, double z0) {
    if (!fit.converged) {
        throw PreconditionError("pose normalization requires a converged fit");
    }
    Shape shape = synthesize(model, fit.coeffs);
    shape.vertices.row(2).array() += z0;
    return shape;
}

Image render_mesh(const Shape& shape,
                  const std::vector<Triangle>& triangles,
                  const std::vector<double>& vertex_intensities,
                  const CameraIntrinsics& intr,
                  int out_width,
                  int out_height) {
    if (vertex_intensities.size() != static_cast<size_t>(shape.vertex_count())) {
        throw InvalidArgumentError("render_mesh requires one intensity per vertex");
    }
    if (out_width <= 0 || out_height <= 0) {
        throw InvalidArgumentError("render size must be positive");
    }
    Image image(out_width, out_height, Image::kBackground);
    std::vector<double> zbuffer(static_cast<size_t>(out_width) * out_height,
                                std::numeric_limits<double>::infinity());

    const auto projections = project(shape.vertices, intr);
    for (const Triangle& tri : triangles) {
        const Projection& pa = projections[static_cast<size_t>(tri[0])];
        const Projection& pb = projections[static_cast<size_t>(tri[1])];
        const Projection& pc = projections[static_cast<size_t>(tri[2])];
        if (pa.behind || pb.behind || pc.behind) {
            continue;
        }
        const double ia = vertex_intensities[static_cast<size_t>(tri[0])];
        const double ib = vertex_intensities[static_cast<size_t>(tri[1])];
        const double ic = vertex_intensities[static_cast<size_t>(tri[2])];
        if (ia == Image::kBackground || ib == Image::kBackground || ic == Image::kBackground) {
            continue; // untextured corner: leave these pixels to other triangles
        }

        const double area2 =
            (pb.u - pa.u) * (pc.v - pa.v) - (pc.u - pa.u) * (pb.v - pa.v);
        if (area2 == 0.0) {
            continue;
        }
        const int min_x = std::max(0, static_cast<int>(std::ceil(std::min({pa.u, pb.u, pc.u}))));
        const int max_x = std::min(out_width - 1,
                                   static_cast<int>(std::floor(std::max({pa.u, pb.u, pc.u}))));
        const int min_y = std::max(0, static_cast<int>(std::ceil(std::min({pa.v, pb.v, pc.v}))));
        const int max_y = std::min(out_height - 1,
                                   static_cast<int>(std::floor(std::max({pa.v, pb.v, pc.v}))));
        for (int y = min_y; y <= max_y; ++y) {
            for (int x = min_x; x <= max_x; ++x) {
                // Pixel centers sit at integer coordinates.
                const double l1 = ((x - pa.u) * (pc.v - pa.v) - (pc.u - pa.u) * (y - pa.v)) /
                                  area2;
                const double l2 = ((pb.u - pa.u) * (y - pa.v) - (x - pa.u) * (pb.v - pa.v)) /
                                  area2;
                const double l0 = 1.0 - l1 - l2;
                if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) {
                    continue;
                }
                const double depth = l0 * pa.depth + l1 * pb.depth + l2 * pc.depth;
                double& zref = zbuffer[static_cast<size_t>(y) * out_width + x];
                if (depth < zref) { // ties keep the earlier triangle
                    zref = depth;
                    const double value = l0 * ia + l1 * ib + l2 * ic;
                    image.at(x, y) = std::clamp(value, 0.0, 1.0);
                }
            }
        }
    }
    return image;
}

PixelRect eye_patch_rect(const Shape& shape_canonical,
                         const std::vector<int>& eye_vertices,
                         const CameraIntrinsics& intr,
                         const Image& image,
                         double margin) {
    if (eye_vertices.empty()) {
        throw InvalidArgumentError("eye annotation is empty");
    }
    double min_u = std::numeric_limits<double>::infinity();
    double max_u = -std::numeric_limits<double>::infinity();
    double min_v = std::numeric_limits<double>::infinity();
    double max_v = -std::numeric_limits<double>::infinity();
    for (int idx : eye_vertices) {
        if (idx < 0 || idx >= shape_canonical.vertex_count()) {
            throw InvalidArgumentError("eye annotation index out of range");
        }
        const Projection proj = project_point(shape_canonical.vertices.col(idx), intr);
        if (proj.behind) {
            throw ExtractionError("eye vertex projects behind the camera");
        }
        min_u = std::min(min_u, proj.u);
        max_u = std::max(max_u, proj.u);
        min_v = std::min(min_v, proj.v);
        max_v = std::max(max_v, proj.v);
    }
    if (min_u < 0.0 || min_v < 0.0 || max_u > image.width - 1 || max_v > image.height - 1) {
        throw ExtractionError("eye region projects outside the image");
    }
    const double expand_u = margin * (max_u - min_u);
    const double expand_v = margin * (max_v - min_v);
    PixelRect rect;
    rect.x0 = std::max(0, static_cast<int>(std::lround(min_u - expand_u)));
    rect.y0 = std::max(0, static_cast<int>(std::lround(min_v - expand_v)));
    rect.x1 = std::min(image.width - 1, static_cast<int>(std::lround(max_u + expand_u)));
    rect.y1 = std::min(image.height - 1, static_cast<int>(std::lround(max_v + expand_v)));
    return rect;
}

Image extract_eye_patch(const Image& image,
                        const Shape& shape_canonical,
                        const std::vector<int>& eye_vertices,
                        const CameraIntrinsics& intr,
                        double margin) {
    const PixelRect rect = eye_patch_rect(shape_canonical, eye_vertices, intr, image, margin);
    Image patch(rect.width(), rect.height());
    for (int y = 0; y < patch.height; ++y) {
        for (int x = 0; x < patch.width; ++x) {
            patch.at(x, y) = image.at(rect.x0 + x, rect.y0 + y);
        }
    }
    return patch;
}

EyeFeature downsample_to_feature(const Image& patch, bool normalize) {
    if (patch.width < 5 || patch.height < 3) {
        throw InvalidArgumentError("eye patch must be at least 3x5 pixels");
    }
    EyeFeature feature;
    for (int row = 0; row < 3; ++row) {
        const int y0 = row * patch.height / 3;
        const int y1 = (row + 1) * patch.height / 3;
        for (int col = 0; col < 5; ++col) {
            const int x0 = col * patch.width / 5;
            const int x1 = (col + 1) * patch.width / 5;
            double sum = 0.0;
            int count = 0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    const double value = patch.at(x, y);
                    if (value != Image::kBackground) {
                        sum += value;
                        ++count;
                    }
                }
            }
            feature.at(row, col) = count > 0 ? sum / count : 0.0;
        }
    }
    if (normalize) {
        const auto [min_it, max_it] =
            std::minmax_element(feature.values.begin(), feature.values.end());
        const double span = *max_it - *min_it;
        if (span < 1e-12) {
            feature.values.fill(0.0);
        } else {
            for (double& v : feature.values) {
                v = (v - *min_it) / span;
            }
        }
    }
    return feature;
}

} // namespace gazefit
