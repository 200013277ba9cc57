#include "gazefit/regress.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "gazefit/error.hpp"

namespace gazefit {

GazeDirection::GazeDirection(const Eigen::Vector3d& v) {
    if (!v.allFinite()) {
        throw InvalidArgumentError("gaze direction must be finite");
    }
    const double norm = v.norm();
    if (norm < 1e-12) {
        throw InvalidArgumentError("gaze direction must be nonzero");
    }
    v_ = v / norm;
}

GazeDirection GazeDirection::from_yaw_pitch(double yaw_rad, double pitch_rad) {
    return GazeDirection(Eigen::Vector3d(std::tan(yaw_rad), std::tan(pitch_rad), -1.0));
}

void TrainingSet::validate() const {
    if (features.empty()) {
        throw InvalidArgumentError("training set is empty");
    }
    if (targets.size() != features.size()) {
        throw InvalidArgumentError("training set feature/target lengths differ");
    }
    if (!screen_points.empty() && screen_points.size() != features.size()) {
        throw InvalidArgumentError("training set screen-point length differs");
    }
}

namespace {

double feature_distance2(const EyeFeature& a, const EyeFeature& b) {
    double sum = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        sum += d * d;
    }
    return sum;
}

std::vector<int> knn_indices(const TrainingSet& train, const EyeFeature& x, int k) {
    train.validate();
    if (k < 1 || k > train.size()) {
        throw InvalidArgumentError("knn requires 1 <= k <= training size");
    }
    std::vector<std::pair<double, int>> dist(static_cast<size_t>(train.size()));
    for (int i = 0; i < train.size(); ++i) {
        dist[static_cast<size_t>(i)] = {feature_distance2(train.features[i], x), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    std::vector<int> out(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
        out[static_cast<size_t>(i)] = dist[static_cast<size_t>(i)].second;
    }
    return out;
}

} // namespace

GazeDirection knn_predict(const TrainingSet& train, const EyeFeature& x, int k) {
    const auto neighbors = knn_indices(train, x, k);
    // Exact-match guard: a zero distance would blow up the inverse weights.
    for (int idx : neighbors) {
        if (std::sqrt(feature_distance2(train.features[idx], x)) < 1e-12) {
            return train.targets[idx];
        }
    }
    double weight_sum = 0.0;
    std::vector<double> weights(neighbors.size());
    for (size_t j = 0; j < neighbors.size(); ++j) {
        weights[j] = 1.0 / std::sqrt(feature_distance2(train.features[neighbors[j]], x));
        weight_sum += weights[j];
    }
    Eigen::Vector3d blended = Eigen::Vector3d::Zero();
    for (size_t j = 0; j < neighbors.size(); ++j) {
        blended += (weights[j] / weight_sum) * train.targets[neighbors[j]].vector();
    }
    return GazeDirection(blended);
}

Eigen::Vector3d knn_predict_raw(const TrainingSet& train, const EyeFeature& x, int k) {
    const auto neighbors = knn_indices(train, x, k);
    for (int idx : neighbors) {
        if (std::sqrt(feature_distance2(train.features[idx], x)) < 1e-12) {
            return train.targets[idx].vector();
        }
    }
    Eigen::Vector3d blended = Eigen::Vector3d::Zero();
    for (int idx : neighbors) {
        blended += train.targets[idx].vector() /
                   std::sqrt(feature_distance2(train.features[idx], x));
    }
    return blended;
}

namespace {

/// One homotopy segment's candidate event.
struct PathEvent {
    enum class Kind { None, Target, Drop, Join };
    Kind kind = Kind::None;
    double lambda = -1.0;
    int index = -1;
    int sign = 0;
};

} // namespace

Eigen::VectorXd sparse_l1_reconstruct(const Eigen::MatrixXd& features,
                                      const Eigen::VectorXd& x,
                                      double eps) {
    const int dim = static_cast<int>(features.rows());
    const int count = static_cast<int>(features.cols());
    if (count < 1) {
        throw InvalidArgumentError("sparse reconstruction needs at least one feature column");
    }
    if (x.size() != dim) {
        throw InvalidArgumentError("query dimension does not match the feature columns");
    }
    if (!(eps >= 0.0)) {
        throw InvalidArgumentError("eps must be non-negative");
    }

    // Feasibility: eps may not undercut the distance from x to the column space.
    {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(features,
                                              Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd projected = svd.matrixU() * (svd.matrixU().transpose() * x);
        const double min_residual = (x - projected).norm();
        if (min_residual > eps + 1e-9) {
            throw InfeasibleError(
                "eps is below the attainable reconstruction residual (" +
                std::to_string(min_residual) + "); increase eps");
        }
    }

    if (x.norm() <= eps) {
        return Eigen::VectorXd::Zero(count); // zero weights already feasible
    }

    // Lasso homotopy on 0.5*||F w - x||^2 + lambda*||w||_1, walked down in
    // lambda until the residual hits eps; the stopping point solves the
    // constrained problem by the KKT correspondence.
    std::vector<int> active;
    std::vector<double> signs;
    double lambda = 0.0;
    int first = -1;
    for (int j = 0; j < count; ++j) {
        const double corr = features.col(j).dot(x);
        if (std::abs(corr) > lambda + 1e-15 * (1.0 + lambda)) {
            lambda = std::abs(corr);
            first = j;
        }
    }
    if (first < 0) {
        return Eigen::VectorXd::Zero(count);
    }
    active.push_back(first);
    signs.push_back(features.col(first).dot(x) >= 0.0 ? 1.0 : -1.0);

    const int max_steps = 20 * count + 200;
    const double lambda_scale = lambda;
    for (int step = 0; step < max_steps; ++step) {
        const int a = static_cast<int>(active.size());
        Eigen::MatrixXd sub(dim, a);
        Eigen::VectorXd sign_vec(a);
        for (int i = 0; i < a; ++i) {
            sub.col(i) = features.col(active[static_cast<size_t>(i)]);
            sign_vec[i] = signs[static_cast<size_t>(i)];
        }
        Eigen::MatrixXd gram = sub.transpose() * sub;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        Eigen::VectorXd ls = ldlt.solve(sub.transpose() * x); // c_A
        Eigen::VectorXd gdir = ldlt.solve(sign_vec);          // G^-1 s
        if (!ls.allFinite() || !gdir.allFinite()) {
            // Rank-deficient active set: nudge the Gram matrix.
            gram.diagonal().array() += 1e-12 * (1.0 + gram.diagonal().maxCoeff());
            Eigen::LDLT<Eigen::MatrixXd> reg(gram);
            ls = reg.solve(sub.transpose() * x);
            gdir = reg.solve(sign_vec);
            if (!ls.allFinite() || !gdir.allFinite()) {
                throw NumericalFailureError("sparse reconstruction path broke down", step);
            }
        }
        const Eigen::VectorXd residual_ls = x - sub * ls;   // r_c
        const Eigen::VectorXd h = sub * gdir;

        const double guard = lambda * (1.0 - 1e-12) - 1e-15 * lambda_scale;
        PathEvent best;

        // Target event: ||r_c + lambda h||^2 = eps^2 with the cross term
        // vanishing by the normal equations.
        const double rc2 = residual_ls.squaredNorm();
        const double h2 = h.squaredNorm();
        if (rc2 <= eps * eps + 1e-24) {
            const double lt = h2 > 0.0 ? std::sqrt(std::max(0.0, eps * eps - rc2) / h2) : 0.0;
            best.kind = PathEvent::Kind::Target;
            best.lambda = std::min(lt, lambda);
        }

        // Drop events: an active weight crossing zero.
        for (int i = 0; i < a; ++i) {
            if (gdir[i] == 0.0) {
                continue;
            }
            const double lz = ls[i] / gdir[i];
            if (lz > 0.0 && lz <= guard && lz > best.lambda) {
                best.kind = PathEvent::Kind::Drop;
                best.lambda = lz;
                best.index = i;
            }
        }

        // Join events: an inactive correlation reaching the lambda envelope.
        for (int j = 0; j < count; ++j) {
            if (std::find(active.begin(), active.end(), j) != active.end()) {
                continue;
            }
            const double alpha = features.col(j).dot(residual_ls);
            const double beta = features.col(j).dot(h);
            for (const double target_sign : {1.0, -1.0}) {
                const double denom = target_sign - beta;
                if (std::abs(denom) < 1e-15) {
                    continue;
                }
                const double lj = alpha / denom;
                if (lj > 0.0 && lj <= guard && lj > best.lambda) {
                    best.kind = PathEvent::Kind::Join;
                    best.lambda = lj;
                    best.index = j;
                    best.sign = target_sign > 0.0 ? 1 : -1;
                }
            }
        }

        if (best.kind == PathEvent::Kind::None) {
            // No event below the current lambda: the path ends at lambda -> 0.
            if (rc2 <= eps * eps + 1e-18) {
                Eigen::VectorXd w = Eigen::VectorXd::Zero(count);
                for (int i = 0; i < a; ++i) {
                    w[active[static_cast<size_t>(i)]] = ls[i];
                }
                return w;
            }
            throw NumericalFailureError("sparse reconstruction path stalled", step);
        }

        if (best.kind == PathEvent::Kind::Target) {
            Eigen::VectorXd w = Eigen::VectorXd::Zero(count);
            for (int i = 0; i < a; ++i) {
                w[active[static_cast<size_t>(i)]] = ls[i] - best.lambda * gdir[i];
            }
            return w;
        }

        lambda = best.lambda;
        if (best.kind == PathEvent::Kind::Drop) {
            active.erase(active.begin() + best.index);
            signs.erase(signs.begin() + best.index);
        } else {
            active.push_back(best.index);
            signs.push_back(static_cast<double>(best.sign));
        }
    }
    throw NumericalFailureError("sparse reconstruction exceeded its step cap", -1);
}

GazeDirection alr_predict(const TrainingSet& train, const EyeFeature& x, double eps) {
    train.validate();
    const int count = train.size();
    Eigen::MatrixXd features(15, count);
    Eigen::Matrix3Xd targets(3, count);
    for (int i = 0; i < count; ++i) {
        for (int d = 0; d < 15; ++d) {
            features(d, i) = train.features[i].values[static_cast<size_t>(d)];
        }
        targets.col(i) = train.targets[i].vector();
    }
    Eigen::VectorXd query(15);
    for (int d = 0; d < 15; ++d) {
        query[d] = x.values[static_cast<size_t>(d)];
    }
    const Eigen::VectorXd w = sparse_l1_reconstruct(features, query, eps);
    const Eigen::Vector3d blended = targets * w;
    if (blended.norm() < 1e-12) {
        throw NumericalFailureError("sparse weights blend to a zero gaze vector", -1);
    }
    return GazeDirection(blended);
}

std::vector<int> select_sparse_indices(const std::vector<Eigen::Vector2d>& screen_points,
                                       int grid) {
    if (screen_points.empty()) {
        throw InvalidArgumentError("sparse selection needs a nonempty track");
    }
    if (grid < 1) {
        throw InvalidArgumentError("grid must be >= 1");
    }
    std::vector<int> picked;
    picked.reserve(static_cast<size_t>(grid) * grid);
    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            const Eigen::Vector2d node((gx + 0.5) / grid, (gy + 0.5) / grid);
            int best = 0;
            double best_d2 = std::numeric_limits<double>::infinity();
            for (size_t i = 0; i < screen_points.size(); ++i) {
                const double d2 = (screen_points[i] - node).squaredNorm();
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = static_cast<int>(i);
                }
            }
            picked.push_back(best);
        }
    }
    std::sort(picked.begin(), picked.end());
    picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
    return picked;
}

TrainingSet select_sparse_training(const TrainingSet& track, int grid) {
    track.validate();
    if (!track.has_screen_points()) {
        throw InvalidArgumentError("sparse selection needs track screen points");
    }
    const auto indices = select_sparse_indices(track.screen_points, grid);
    TrainingSet subset;
    subset.features.reserve(indices.size());
    subset.targets.reserve(indices.size());
    subset.screen_points.reserve(indices.size());
    for (int idx : indices) {
        subset.features.push_back(track.features[idx]);
        subset.targets.push_back(track.targets[idx]);
        subset.screen_points.push_back(track.screen_points[idx]);
    }
    return subset;
}

double angular_error_deg(const GazeDirection& estimate, const GazeDirection& truth) {
    const Eigen::Vector3d a = estimate.vector();
    const Eigen::Vector3d b = truth.vector();
    if (std::abs(a.norm() - 1.0) > 1e-6 || std::abs(b.norm() - 1.0) > 1e-6) {
        throw InvalidArgumentError("angular error requires unit vectors");
    }
    const double dot = std::clamp(a.dot(b), -1.0, 1.0);
    return std::acos(dot) * 180.0 / M_PI;
}

void save_training_set(const TrainingSet& set, const std::filesystem::path& path) {
    nlohmann::json samples = nlohmann::json::array();
    for (int i = 0; i < set.size(); ++i) {
        nlohmann::json sample;
        sample["feature"] = set.features[i].values;
        const Eigen::Vector3d g = set.targets[i].vector();
        sample["gaze"] = {g.x(), g.y(), g.z()};
        if (set.has_screen_points()) {
            sample["screen"] = {set.screen_points[i].x(), set.screen_points[i].y()};
        }
        samples.push_back(std::move(sample));
    }
    nlohmann::json j;
    j["samples"] = std::move(samples);
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write training set: " + path.string());
    }
    out << j.dump() << "\n";
}

TrainingSet load_training_set(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open training set: " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("training set " + path.string() + ": " + e.what());
    }
    TrainingSet set;
    try {
        for (const auto& sample : j.at("samples")) {
            const auto feature = sample.at("feature").get<std::vector<double>>();
            if (feature.size() != 15) {
                throw ParseError("training sample feature must hold 15 values");
            }
            EyeFeature f;
            std::copy(feature.begin(), feature.end(), f.values.begin());
            set.features.push_back(f);
            const auto gaze = sample.at("gaze").get<std::vector<double>>();
            if (gaze.size() != 3) {
                throw ParseError("training sample gaze must hold 3 values");
            }
            set.targets.emplace_back(Eigen::Vector3d(gaze[0], gaze[1], gaze[2]));
            if (sample.contains("screen")) {
                const auto screen = sample.at("screen").get<std::vector<double>>();
                if (screen.size() != 2) {
                    throw ParseError("training sample screen must hold 2 values");
                }
                set.screen_points.emplace_back(screen[0], screen[1]);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("training set " + path.string() + ": " + e.what());
    }
    return set;
}

} // namespace gazefit
