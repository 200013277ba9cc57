#include "gazefit/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "gazefit/error.hpp"

namespace gazefit {

void FitConfig::validate() const {
    if (!(omega1_init >= 0.0) || !(omega1_final >= 0.0) || !(omega2_final >= 0.0)) {
        throw InvalidArgumentError("energy weights must be non-negative");
    }
    if (omega1_final > omega1_init) {
        throw InvalidArgumentError("omega1_final must not exceed omega1_init");
    }
    if (!(tukey_threshold > 0.0)) {
        throw InvalidArgumentError("tukey_threshold must be positive");
    }
    if (ramp_iters < 1) {
        throw InvalidArgumentError("ramp_iters must be positive");
    }
    if (!(stage_tol > 0.0) || !(conv_tol > 0.0)) {
        throw InvalidArgumentError("stage_tol and conv_tol must be positive");
    }
    if (max_iters < 1) {
        throw InvalidArgumentError("max_iters must be positive");
    }
    if (source_samples < 1) {
        throw InvalidArgumentError("source_samples must be positive");
    }
}

double tukey_weight(double d, double d_t) {
    if (!(d_t > 0.0)) {
        throw InvalidArgumentError("tukey threshold must be positive");
    }
    if (d < 0.0 || !std::isfinite(d)) {
        throw InvalidArgumentError("tukey distance must be non-negative and finite");
    }
    if (d > d_t) {
        return 0.0;
    }
    const double ratio = d / d_t;
    return 1.0 - ratio * ratio;
}

double robust_weight(double d, double d_t, RobustKernel kernel) {
    switch (kernel) {
    case RobustKernel::None:
        if (d < 0.0 || !std::isfinite(d)) {
            throw InvalidArgumentError("robust distance must be non-negative and finite");
        }
        return 1.0;
    case RobustKernel::TukeySquared: {
        const double w = tukey_weight(d, d_t);
        return w * w;
    }
    case RobustKernel::TukeyPaper:
    default:
        return tukey_weight(d, d_t);
    }
}

std::vector<MatchRecord> match_residuals(const PointSet& z,
                                         const PointSet& target,
                                         const SpatialIndex& target_index,
                                         double tukey_threshold,
                                         RobustKernel kernel) {
    if (!target.has_normals()) {
        throw InvalidArgumentError("match_residuals requires target normals");
    }
    std::vector<MatchRecord> records(z.points.size());
    for (size_t i = 0; i < z.points.size(); ++i) {
        const auto hit = target_index.nearest(z.points[i]);
        const Eigen::Vector3d& c = target.points[hit.index];
        const Eigen::Vector3d& n = target.normals[hit.index];
        MatchRecord& rec = records[i];
        rec.correspondence = hit.index;
        rec.plane_residual = n.dot(z.points[i] - c);
        rec.point_residual = (z.points[i] - c).norm();
        rec.plane_weight = robust_weight(std::abs(rec.plane_residual), tukey_threshold, kernel);
        rec.point_weight = robust_weight(rec.point_residual, tukey_threshold, kernel);
    }
    return records;
}

Eigen::Matrix3d small_angle_rotation(double a, double b, double c) {
    Eigen::Matrix3d m;
    m << 1.0, a, b,
        -a, 1.0, c,
        -b, -c, 1.0;
    return m;
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m) {
    if (!m.allFinite()) {
        throw DegenerateGeometryError("cannot orthonormalize a non-finite matrix");
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const double smallest = svd.singularValues()(2);
    const double largest = svd.singularValues()(0);
    if (!(smallest > largest * 1e-12)) {
        throw DegenerateGeometryError("cannot orthonormalize a (near-)singular matrix");
    }
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1.0;
        r = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return r;
}

namespace detail {

namespace {

/// Barycentric interpolation of the model mean and basis rows at one sample.
void interpolate_sample(const MorphableModel& model,
                        const SurfaceSample& sample,
                        Eigen::Vector3d& mean_out,
                        Eigen::Matrix<double, 3, Eigen::Dynamic>& basis_out) {
    const Triangle& tri = model.triangles()[sample.triangle];
    const double w0 = 1.0 - sample.u - sample.v;
    const double w1 = sample.u;
    const double w2 = sample.v;
    const int k = model.coeff_count();
    basis_out.resize(3, k);
    for (int axis = 0; axis < 3; ++axis) {
        const int r0 = 3 * tri[0] + axis;
        const int r1 = 3 * tri[1] + axis;
        const int r2 = 3 * tri[2] + axis;
        mean_out[axis] = w0 * model.mean_shape()[r0] + w1 * model.mean_shape()[r1] +
                         w2 * model.mean_shape()[r2];
        basis_out.row(axis) = w0 * model.basis().row(r0) + w1 * model.basis().row(r1) +
                              w2 * model.basis().row(r2);
    }
}

struct InterpolatedSource {
    std::vector<Eigen::Vector3d> mean;                              // m_i
    std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> basis;    // B_i (3 x K)

    explicit InterpolatedSource(const MorphableModel& model,
                                const std::vector<SurfaceSample>& source) {
        mean.resize(source.size());
        basis.resize(source.size());
        for (size_t i = 0; i < source.size(); ++i) {
            interpolate_sample(model, source[i], mean[i], basis[i]);
        }
    }

    /// Model surface point at coefficients d, canonical frame.
    Eigen::Vector3d reconstruct(size_t i, const Eigen::VectorXd& d) const {
        return mean[i] + basis[i] * d;
    }
};

EnergyBreakdown energy_terms(const std::vector<SurfaceSample>& source,
                             const InterpolatedSource& interp,
                             const PointSet& z,
                             const PointSet& target,
                             const std::vector<MatchRecord>& matches,
                             const Eigen::Matrix3d& rotation,
                             const Eigen::Vector3d& translation,
                             const Eigen::VectorXd& coeffs,
                             double omega1,
                             double omega2) {
    EnergyBreakdown e;
    for (size_t i = 0; i < source.size(); ++i) {
        const Eigen::Vector3d& zi = z.points[i];
        const MatchRecord& rec = matches[i];
        const Eigen::Vector3d& c = target.points[rec.correspondence];
        const Eigen::Vector3d& n = target.normals[rec.correspondence];
        const double plane = n.dot(zi - c);
        e.match += rec.plane_weight * plane * plane +
                   rec.point_weight * (zi - c).squaredNorm();
        e.rigid += (zi - (rotation * source[i].position + translation)).squaredNorm();
        const Eigen::Vector3d recon = rotation * interp.reconstruct(i, coeffs) + translation;
        e.model += (zi - recon).squaredNorm();
    }
    e.total = e.match + omega1 * e.rigid + omega2 * e.model;
    return e;
}

} // namespace

EnergyBreakdown energy_frozen(const std::vector<SurfaceSample>& source,
                              const PointSet& z,
                              const PointSet& target,
                              const std::vector<MatchRecord>& matches,
                              const MorphableModel& model,
                              const Eigen::Matrix3d& rotation,
                              const Eigen::Vector3d& translation,
                              const Eigen::VectorXd& coeffs,
                              double omega1,
                              double omega2) {
    if (matches.size() != source.size() || z.points.size() != source.size()) {
        throw InvalidArgumentError("energy_frozen requires one match per source sample");
    }
    const InterpolatedSource interp(model, source);
    return energy_terms(source, interp, z, target, matches, rotation, translation, coeffs,
                        omega1, omega2);
}

FitState sweep(const FitState& state,
               const MorphableModel& model,
               const PointSet& target,
               const std::vector<MatchRecord>& matches,
               const FitConfig& config) {
    (void)config;
    FitState next = state;
    const size_t n = state.source.size();
    const InterpolatedSource interp(model, state.source);
    const double omega1 = state.omega1;
    const double omega2 = state.omega2;

    // Pose-dependent part of the energy, used by the rigid acceptance guard.
    const auto pose_energy = [&](const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
        double value = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const Eigen::Vector3d& zi = next.z.points[i];
            if (omega1 > 0.0) {
                value += omega1 * (zi - (r * state.source[i].position + t)).squaredNorm();
            }
            if (omega2 > 0.0) {
                value +=
                    omega2 * (zi - (r * interp.reconstruct(i, next.coeffs) + t)).squaredNorm();
            }
        }
        return value;
    };

    // (a) Rigid block: linearized least squares over the small-angle update
    // (a, b, c, t~) of the pose-anchored terms, then orthonormalization. The
    // candidate is accepted only if it does not increase the pose energy; the
    // previous pose corresponds to a zero update and stays available, which
    // keeps the sweep monotone even where the linearization is poor.
    if (omega1 > 0.0 || omega2 > 0.0) {
        Eigen::Matrix<double, 6, 6> normal = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> rhs = Eigen::Matrix<double, 6, 1>::Zero();
        const auto accumulate = [&](const Eigen::Vector3d& anchor, const Eigen::Vector3d& zi,
                                    double weight) {
            Eigen::Matrix<double, 3, 6> jac;
            jac << anchor.y(), anchor.z(), 0.0, 1.0, 0.0, 0.0,
                -anchor.x(), 0.0, anchor.z(), 0.0, 1.0, 0.0,
                0.0, -anchor.x(), -anchor.y(), 0.0, 0.0, 1.0;
            const Eigen::Vector3d residual = zi - anchor;
            normal.noalias() += weight * jac.transpose() * jac;
            rhs.noalias() += weight * jac.transpose() * residual;
        };
        for (size_t i = 0; i < n; ++i) {
            const Eigen::Vector3d& zi = next.z.points[i];
            if (omega1 > 0.0) {
                accumulate(next.rotation * state.source[i].position + next.translation, zi,
                           omega1);
            }
            if (omega2 > 0.0) {
                accumulate(next.rotation * interp.reconstruct(i, next.coeffs) +
                               next.translation,
                           zi, omega2);
            }
        }
        const Eigen::Matrix<double, 6, 1> update = normal.ldlt().solve(rhs);
        if (update.allFinite()) {
            const Eigen::Matrix3d incr =
                small_angle_rotation(update[0], update[1], update[2]);
            const Eigen::Vector3d t_incr(update[3], update[4], update[5]);
            Eigen::Matrix3d r_candidate;
            try {
                r_candidate = orthonormalize(incr * next.rotation);
            } catch (const DegenerateGeometryError&) {
                r_candidate = next.rotation;
            }
            const Eigen::Vector3d t_composed = incr * next.translation + t_incr;
            // Exact optimal translation for the candidate rotation.
            Eigen::Vector3d t_exact = t_composed;
            if (omega1 + omega2 > 0.0) {
                Eigen::Vector3d acc = Eigen::Vector3d::Zero();
                for (size_t i = 0; i < n; ++i) {
                    const Eigen::Vector3d& zi = next.z.points[i];
                    if (omega1 > 0.0) {
                        acc += omega1 * (zi - r_candidate * state.source[i].position);
                    }
                    if (omega2 > 0.0) {
                        acc += omega2 * (zi - r_candidate * interp.reconstruct(i, next.coeffs));
                    }
                }
                t_exact = acc / (static_cast<double>(n) * (omega1 + omega2));
            }

            const double current = pose_energy(next.rotation, next.translation);
            double best = current;
            Eigen::Matrix3d best_r = next.rotation;
            Eigen::Vector3d best_t = next.translation;
            for (const auto& [r, t] : {std::pair{r_candidate, t_exact},
                                       std::pair{r_candidate, t_composed}}) {
                const double value = pose_energy(r, t);
                if (std::isfinite(value) && value < best) {
                    best = value;
                    best_r = r;
                    best_t = t;
                }
            }
            next.rotation = best_r;
            next.translation = best_t;
        }
    }

    // (b) Coefficient block: linear least squares of E_model against the
    // current z. Skipped at omega2 == 0 where it cannot change the energy
    // (this also keeps the coefficients untouched through the rigid stage).
    if (omega2 > 0.0 && model.coeff_count() > 0) {
        const int k = model.coeff_count();
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(k, k);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
        for (size_t i = 0; i < n; ++i) {
            const Eigen::Vector3d y =
                next.rotation.transpose() * (next.z.points[i] - next.translation) -
                interp.mean[i];
            gram.noalias() += interp.basis[i].transpose() * interp.basis[i];
            rhs.noalias() += interp.basis[i].transpose() * y;
        }
        const Eigen::VectorXd d = gram.ldlt().solve(rhs);
        if (d.allFinite()) {
            next.coeffs = d;
        }
    }

    // (c) Z block: per-point closed-form minimizer of the four quadratic
    // terms. A = w_pl n n^T + (w_pt + omega1 + omega2) I is solved by
    // Sherman-Morrison; the rank-deficient w_pt + omega1 + omega2 == 0 case
    // reduces to the minimum-change projection onto the correspondence plane.
    for (size_t i = 0; i < n; ++i) {
        const MatchRecord& rec = matches[i];
        const Eigen::Vector3d& c = target.points[rec.correspondence];
        const Eigen::Vector3d& normal = target.normals[rec.correspondence];
        const double w_pl = rec.plane_weight;
        const double w_pt = rec.point_weight;
        const double s = w_pt + omega1 + omega2;

        if (s <= 0.0) {
            if (w_pl > 0.0) {
                const Eigen::Vector3d& zi = next.z.points[i];
                next.z.points[i] = zi - normal * normal.dot(zi - c);
            }
            continue;
        }

        Eigen::Vector3d b = w_pl * normal * normal.dot(c) + w_pt * c;
        if (omega1 > 0.0) {
            b += omega1 * (next.rotation * state.source[i].position + next.translation);
        }
        if (omega2 > 0.0) {
            b += omega2 *
                 (next.rotation * interp.reconstruct(i, next.coeffs) + next.translation);
        }
        const double nb = normal.dot(b);
        next.z.points[i] = b / s - normal * (w_pl * nb / (s * (s + w_pl)));
    }

    return next;
}

} // namespace detail

EnergyBreakdown energy(const FitState& state,
                       const MorphableModel& model,
                       const PointSet& target,
                       const SpatialIndex& target_index,
                       const FitConfig& config,
                       const std::vector<MatchRecord>* frozen) {
    std::vector<MatchRecord> computed;
    if (frozen == nullptr) {
        computed = match_residuals(state.z, target, target_index, config.tukey_threshold,
                                   config.kernel);
        frozen = &computed;
    }
    return detail::energy_frozen(state.source, state.z, target, *frozen, model, state.rotation,
                                 state.translation, state.coeffs, state.omega1, state.omega2);
}

FitState solve_iteration(const FitState& state,
                         const MorphableModel& model,
                         const PointSet& target,
                         const SpatialIndex& target_index,
                         const FitConfig& config) {
    const auto matches = match_residuals(state.z, target, target_index, config.tukey_threshold,
                                         config.kernel);
    bool any_weight = false;
    for (const auto& rec : matches) {
        if (rec.plane_weight > 0.0 || rec.point_weight > 0.0) {
            any_weight = true;
            break;
        }
    }
    if (!any_weight) {
        throw NoCorrespondenceError(
            "every robust weight is zero; no usable correspondences remain");
    }

    FitState next = detail::sweep(state, model, target, matches, config);
    next.iteration = state.iteration + 1;
    const EnergyBreakdown e =
        detail::energy_frozen(next.source, next.z, target, matches, model, next.rotation,
                              next.translation, next.coeffs, next.omega1, next.omega2);
    if (!std::isfinite(e.total)) {
        throw NumericalFailureError("non-finite fitting energy", next.iteration);
    }
    next.energy_history.push_back(e.total);
    return next;
}

bool detect_stage_transition(const std::vector<double>& energy_history, double tol, int window) {
    const int length = static_cast<int>(energy_history.size());
    if (window < 2 || length < window) {
        return false;
    }
    const double first = energy_history[static_cast<size_t>(length - window + 1)];
    const double last = energy_history[static_cast<size_t>(length - 1)];
    if (first <= 0.0) {
        return true; // energy already at its floor
    }
    return (first - last) / first < tol;
}

std::pair<double, double> update_weights(const FitState& state, const FitConfig& config) {
    switch (state.stage) {
    case FitStage::RigidOnly:
        return {config.omega1_init, 0.0};
    case FitStage::Ramp: {
        const double f = std::clamp(
            static_cast<double>(state.ramp_step) / static_cast<double>(config.ramp_iters), 0.0,
            1.0);
        return {config.omega1_init + f * (config.omega1_final - config.omega1_init),
                f * config.omega2_final};
    }
    case FitStage::Joint:
    default:
        return {config.omega1_final, config.omega2_final};
    }
}

namespace {

// Source-surface sampling seed. A fixed constant keeps fits deterministic
// without threading a seed through the fitting interface.
constexpr std::uint64_t kSourceSeed = 0x9b97f4a7c15ULL;

std::vector<double> tail(const std::vector<double>& values, int count) {
    const int length = static_cast<int>(values.size());
    const int take = std::min(count, length);
    return std::vector<double>(values.end() - take, values.end());
}

} // namespace

FitResult fit(const MorphableModel& model,
              const PointSet& target,
              const FitInit& init,
              const FitConfig& config) {
    config.validate();
    if (target.empty()) {
        throw InvalidArgumentError("target scan is empty");
    }
    if ((init.rotation.transpose() * init.rotation - Eigen::Matrix3d::Identity()).norm() > 1e-6 ||
        init.rotation.determinant() < 0.0) {
        throw InvalidArgumentError("initial rotation must be orthonormal with det +1");
    }
    Eigen::VectorXd coeffs0 = init.coeffs;
    if (coeffs0.size() == 0) {
        coeffs0 = Eigen::VectorXd::Zero(model.coeff_count());
    } else if (coeffs0.size() != model.coeff_count()) {
        throw InvalidArgumentError("initial coefficient length does not match K");
    }

    PointSet prepared;
    const PointSet* target_ptr = &target;
    if (!target.has_normals()) {
        prepared = estimate_normals(target, std::min(12, target.size()), Eigen::Vector3d::Zero());
        target_ptr = &prepared;
    }
    const SpatialIndex index(*target_ptr);

    FitState state;
    state.source = sample_surface_detail(model, coeffs0, config.source_samples, kSourceSeed);
    state.z.points.reserve(state.source.size());
    for (const auto& s : state.source) {
        state.z.points.push_back(init.rotation * s.position + init.translation);
    }
    state.rotation = init.rotation;
    state.translation = init.translation;
    state.coeffs = coeffs0;
    state.stage =
        config.schedule == WeightSchedule::Fixed ? FitStage::Joint : FitStage::RigidOnly;

    bool converged = false;
    std::array<int, 3> stage_iters = {0, 0, 0};
    int iters_in_stage = 0;
    const int window = 5;

    while (state.iteration < config.max_iters) {
        if (state.stage == FitStage::Ramp) {
            ++state.ramp_step;
        }
        std::tie(state.omega1, state.omega2) = update_weights(state, config);
        state = solve_iteration(state, model, *target_ptr, index, config);
        ++iters_in_stage;
        ++stage_iters[static_cast<size_t>(state.stage)];

        if (state.stage == FitStage::RigidOnly) {
            if (iters_in_stage >= window &&
                detect_stage_transition(tail(state.energy_history, iters_in_stage),
                                        config.stage_tol, window)) {
                state.stage = FitStage::Ramp;
                state.ramp_step = 0;
                iters_in_stage = 0;
            }
        } else if (state.stage == FitStage::Ramp) {
            if (state.ramp_step >= config.ramp_iters) {
                state.stage = FitStage::Joint;
                iters_in_stage = 0;
            }
        } else { // Joint
            if (iters_in_stage >= window &&
                detect_stage_transition(tail(state.energy_history, iters_in_stage),
                                        config.conv_tol, window)) {
                converged = true;
                break;
            }
        }
    }

    const auto final_matches = match_residuals(state.z, *target_ptr, index,
                                               config.tukey_threshold, config.kernel);
    FitResult result;
    result.coeffs = state.coeffs;
    result.rotation = state.rotation;
    result.translation = state.translation;
    result.converged = converged;
    result.iterations = state.iteration;
    result.final_energies =
        detail::energy_frozen(state.source, state.z, *target_ptr, final_matches, model,
                              state.rotation, state.translation, state.coeffs, state.omega1,
                              state.omega2);
    result.per_point_residuals.reserve(final_matches.size());
    for (const auto& rec : final_matches) {
        result.per_point_residuals.push_back(rec.point_residual);
    }
    result.stage_iterations = stage_iters;
    result.energy_history = state.energy_history;
    return result;
}

std::string fit_result_to_json(const FitResult& result) {
    nlohmann::json j;
    std::vector<double> rot(9);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            rot[static_cast<size_t>(3 * r + c)] = result.rotation(r, c);
        }
    }
    j["rotation"] = rot;
    j["translation"] = {result.translation.x(), result.translation.y(), result.translation.z()};
    j["coefficients"] =
        std::vector<double>(result.coeffs.data(), result.coeffs.data() + result.coeffs.size());
    j["converged"] = result.converged;
    j["iterations"] = result.iterations;
    j["stage_iterations"] = {result.stage_iterations[0], result.stage_iterations[1],
                             result.stage_iterations[2]};
    j["final_energies"] = {{"match", result.final_energies.match},
                           {"rigid", result.final_energies.rigid},
                           {"model", result.final_energies.model},
                           {"total", result.final_energies.total}};
    j["energy_history"] = result.energy_history;
    j["per_point_residuals"] = result.per_point_residuals;
    return j.dump();
}

FitResult fit_result_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("fit result JSON: ") + e.what());
    }
    FitResult result;
    try {
        const auto rot = j.at("rotation").get<std::vector<double>>();
        if (rot.size() != 9) {
            throw ParseError("fit result field 'rotation' must hold 9 values");
        }
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                result.rotation(r, c) = rot[static_cast<size_t>(3 * r + c)];
            }
        }
        const auto tr = j.at("translation").get<std::vector<double>>();
        if (tr.size() != 3) {
            throw ParseError("fit result field 'translation' must hold 3 values");
        }
        result.translation = Eigen::Vector3d(tr[0], tr[1], tr[2]);
        const auto coeffs = j.at("coefficients").get<std::vector<double>>();
        result.coeffs = Eigen::Map<const Eigen::VectorXd>(coeffs.data(),
                                                          static_cast<int>(coeffs.size()));
        result.converged = j.at("converged").get<bool>();
        result.iterations = j.at("iterations").get<int>();
        const auto stages = j.at("stage_iterations").get<std::vector<int>>();
        if (stages.size() != 3) {
            throw ParseError("fit result field 'stage_iterations' must hold 3 values");
        }
        result.stage_iterations = {stages[0], stages[1], stages[2]};
        const auto& fe = j.at("final_energies");
        result.final_energies.match = fe.at("match").get<double>();
        result.final_energies.rigid = fe.at("rigid").get<double>();
        result.final_energies.model = fe.at("model").get<double>();
        result.final_energies.total = fe.at("total").get<double>();
        result.energy_history = j.at("energy_history").get<std::vector<double>>();
        result.per_point_residuals = j.at("per_point_residuals").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("fit result JSON: ") + e.what());
    }
    return result;
}

} // namespace gazefit
