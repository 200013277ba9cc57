#include "gazefit/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include <Eigen/Eigenvalues>

namespace gazefit {

void PointSet::validate() const {
    for (const auto& p : points) {
        if (!p.allFinite()) {
            throw ValidationError("point set contains non-finite coordinates");
        }
    }
    if (!normals.empty()) {
        if (normals.size() != points.size()) {
            throw ValidationError("normal count must equal point count");
        }
        for (const auto& n : normals) {
            if (!n.allFinite() || std::abs(n.norm() - 1.0) > 1e-6) {
                throw ValidationError("normals must be unit length within 1e-6");
            }
        }
    }
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw ValidationError("focal lengths must be positive");
    }
    if (width <= 0 || height <= 0) {
        throw ValidationError("image size must be positive");
    }
    if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
        throw ValidationError("principal point must lie inside the image");
    }
}

namespace {
constexpr int kLeafSize = 8;
}

SpatialIndex::SpatialIndex(const PointSet& cloud) : points_(cloud.points) {
    if (points_.empty()) {
        throw InvalidArgumentError("cannot build a spatial index over an empty cloud");
    }
    for (const auto& p : points_) {
        if (!p.allFinite()) {
            throw InvalidArgumentError("cannot index non-finite points");
        }
    }
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    root_ = build(0, static_cast<int>(points_.size()));
}

int SpatialIndex::build(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    const int count = end - begin;
    if (count <= kLeafSize) {
        nodes_.push_back(node);
        return static_cast<int>(nodes_.size()) - 1;
    }

    Eigen::Vector3d lo = points_[order_[begin]];
    Eigen::Vector3d hi = lo;
    for (int i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (!((hi - lo)[axis] > 0.0)) {
        // All points coincide on every axis; keep them in one leaf.
        nodes_.push_back(node);
        return static_cast<int>(nodes_.size()) - 1;
    }

    const int mid = begin + count / 2;
    // (coordinate, index) comparator keeps the layout deterministic under ties.
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         const double ca = points_[a][axis];
                         const double cb = points_[b][axis];
                         return ca < cb || (ca == cb && a < b);
                     });
    node.axis = axis;
    node.split = points_[order_[mid]][axis];

    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
}

void SpatialIndex::search_nearest(int node_id,
                                  const Eigen::Vector3d& q,
                                  double& best_d2,
                                  int& best_idx) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0 || node.left < 0) {
        for (int i = node.begin; i < node.end; ++i) {
            const int idx = order_[i];
            const double d2 = (points_[idx] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
                best_d2 = d2;
                best_idx = idx;
            }
        }
        return;
    }
    const double diff = q[node.axis] - node.split;
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    search_nearest(near, q, best_d2, best_idx);
    // The far side may still hold an equal-distance point with a lower index.
    if (diff * diff <= best_d2) {
        search_nearest(far, q, best_d2, best_idx);
    }
}

SpatialIndex::Hit SpatialIndex::nearest(const Eigen::Vector3d& query) const {
    if (!query.allFinite()) {
        throw InvalidArgumentError("nearest-neighbor query must be finite");
    }
    double best_d2 = std::numeric_limits<double>::infinity();
    int best_idx = static_cast<int>(points_.size());
    search_nearest(root_, query, best_d2, best_idx);
    Hit hit;
    hit.index = best_idx;
    hit.point = points_[best_idx];
    hit.distance = std::sqrt(best_d2);
    return hit;
}

std::vector<int> SpatialIndex::knearest(const Eigen::Vector3d& query, int k) const {
    if (!query.allFinite()) {
        throw InvalidArgumentError("nearest-neighbor query must be finite");
    }
    if (k < 1 || k > size()) {
        throw InvalidArgumentError("knearest requires 1 <= k <= cloud size");
    }

    using Entry = std::pair<double, int>; // (squared distance, index)
    const auto worse = [](const Entry& a, const Entry& b) {
        return a.first < b.first || (a.first == b.first && a.second < b.second);
    };
    // Max-heap on (distance, index): top() is the current worst of the k best.
    std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);

    // Iterative traversal, near side first.
    std::vector<int> stack;
    stack.push_back(root_);
    while (!stack.empty()) {
        const int node_id = stack.back();
        stack.pop_back();
        const Node& node = nodes_[node_id];
        if (node.axis >= 0 && node.left >= 0) {
            const double diff = query[node.axis] - node.split;
            const int near = diff < 0.0 ? node.left : node.right;
            const int far = diff < 0.0 ? node.right : node.left;
            if (static_cast<int>(heap.size()) < k || diff * diff <= heap.top().first) {
                stack.push_back(far);
            }
            stack.push_back(near);
            continue;
        }
        for (int i = node.begin; i < node.end; ++i) {
            const int idx = order_[i];
            const Entry entry{(points_[idx] - query).squaredNorm(), idx};
            if (static_cast<int>(heap.size()) < k) {
                heap.push(entry);
            } else if (worse(entry, heap.top())) {
                heap.pop();
                heap.push(entry);
            }
        }
    }

    std::vector<Entry> entries;
    entries.reserve(heap.size());
    while (!heap.empty()) {
        entries.push_back(heap.top());
        heap.pop();
    }
    std::sort(entries.begin(), entries.end());
    std::vector<int> result;
    result.reserve(entries.size());
    for (const auto& e : entries) {
        result.push_back(e.second);
    }
    return result;
}

SpatialIndex build_index(const PointSet& cloud) {
    return SpatialIndex(cloud);
}

SpatialIndex::Hit nearest(const SpatialIndex& index, const Eigen::Vector3d& q) {
    return index.nearest(q);
}

PointSet estimate_normals(const PointSet& cloud, int k, const Eigen::Vector3d& viewpoint) {
    if (k < 3) {
        throw InvalidArgumentError("normal estimation requires k >= 3 neighbors");
    }
    if (k > cloud.size()) {
        throw InvalidArgumentError("normal estimation requires k <= cloud size");
    }
    const SpatialIndex index(cloud);
    PointSet out;
    out.points = cloud.points;
    out.normals.resize(cloud.points.size());
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        const auto neighbors = index.knearest(cloud.points[i], k);
        Eigen::Vector3d mean = Eigen::Vector3d::Zero();
        for (int idx : neighbors) {
            mean += cloud.points[idx];
        }
        mean /= static_cast<double>(neighbors.size());
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (int idx : neighbors) {
            const Eigen::Vector3d d = cloud.points[idx] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
        Eigen::Vector3d normal = solver.eigenvectors().col(0);
        const double nn = normal.norm();
        if (!(nn > 0.0) || !normal.allFinite()) {
            normal = Eigen::Vector3d::UnitZ();
        } else {
            normal /= nn;
        }
        if (normal.dot(viewpoint - cloud.points[i]) < 0.0) {
            normal = -normal;
        }
        out.normals[i] = normal;
    }
    return out;
}

PointSet depth_to_points(const Eigen::MatrixXd& depth, const CameraIntrinsics& intr) {
    intr.validate();
    if (depth.rows() != intr.height || depth.cols() != intr.width) {
        throw InvalidArgumentError("depth map dimensions do not match the intrinsics");
    }
    PointSet cloud;
    for (int v = 0; v < intr.height; ++v) {
        for (int u = 0; u < intr.width; ++u) {
            const double z = depth(v, u);
            if (!std::isfinite(z) || z <= 0.0) {
                continue;
            }
            cloud.points.emplace_back((u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z);
        }
    }
    return cloud;
}

} // namespace gazefit
