#include "gazefit/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gazefit/error.hpp"
#include "gazefit/random.hpp"

namespace gazefit {

namespace {

using nlohmann::json;

void check_finite(const Eigen::VectorXd& v, const char* name) {
    if (!v.allFinite()) {
        throw ValidationError(std::string(name) + " contains non-finite values");
    }
}

} // namespace

MorphableModel::MorphableModel(Eigen::VectorXd mean_shape,
                               Eigen::MatrixXd basis,
                               Eigen::VectorXd basis_scales,
                               std::vector<Triangle> triangles,
                               std::map<std::string, std::vector<int>> annotations)
    : mean_shape_(std::move(mean_shape)),
      basis_(std::move(basis)),
      basis_scales_(std::move(basis_scales)),
      triangles_(std::move(triangles)),
      annotations_(std::move(annotations)) {
    if (mean_shape_.size() % 3 != 0) {
        throw ValidationError("mean_shape length must be a multiple of 3");
    }
    const int n = vertex_count();
    const int k = static_cast<int>(basis_.cols());
    if (n < 4) {
        throw ValidationError("model must have n >= 4 vertices");
    }
    if (k < 1) {
        throw ValidationError("model must have K >= 1 basis components");
    }
    if (basis_.rows() != mean_shape_.size()) {
        throw ValidationError("basis row count must equal mean_shape length");
    }
    if (basis_scales_.size() != k) {
        throw ValidationError("basis_scales length must equal K");
    }
    check_finite(mean_shape_, "mean_shape");
    if (!basis_.allFinite()) {
        throw ValidationError("basis contains non-finite values");
    }
    for (int i = 0; i < k; ++i) {
        if (!(basis_scales_[i] > 0.0)) {
            throw ValidationError("basis_scales must be strictly positive");
        }
    }
    if (triangles_.empty()) {
        throw ValidationError("triangles must be nonempty");
    }
    for (const Triangle& t : triangles_) {
        for (int idx : t) {
            if (idx < 0 || idx >= n) {
                throw ValidationError("triangle index out of range [0, n)");
            }
        }
    }
    for (const auto& [name, indices] : annotations_) {
        for (int idx : indices) {
            if (idx < 0 || idx >= n) {
                throw ValidationError("annotation '" + name + "' index out of range [0, n)");
            }
        }
    }
    // Orthonormality: basis^T basis must match the identity within 1e-9.
    const Eigen::MatrixXd gram = basis_.transpose() * basis_;
    const double residual = (gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff();
    if (residual > 1e-9) {
        std::ostringstream msg;
        msg << "basis columns are not orthonormal (max Gram deviation " << residual << ")";
        throw ValidationError(msg.str());
    }
}

const std::vector<int>& MorphableModel::annotation(const std::string& name) const {
    const auto it = annotations_.find(name);
    if (it == annotations_.end()) {
        throw InvalidArgumentError("unknown annotation '" + name + "'");
    }
    return it->second;
}

Shape synthesize(const MorphableModel& model, const Eigen::VectorXd& coeffs) {
    if (coeffs.size() != model.coeff_count()) {
        throw InvalidArgumentError("coefficient vector length does not match K");
    }
    if (!coeffs.allFinite()) {
        throw InvalidArgumentError("coefficients must be finite");
    }
    const Eigen::VectorXd flat = model.mean_shape() + model.basis() * coeffs;
    Shape shape;
    shape.vertices = Eigen::Map<const Eigen::Matrix3Xd>(flat.data(), 3, model.vertex_count());
    return shape;
}

Eigen::VectorXd project_to_subspace(const MorphableModel& model, const Shape& shape) {
    if (shape.vertex_count() != model.vertex_count()) {
        throw InvalidArgumentError("shape vertex count does not match the model");
    }
    const Eigen::Map<const Eigen::VectorXd> flat(shape.vertices.data(), shape.vertices.size());
    return model.basis().transpose() * (flat - model.mean_shape());
}

std::vector<SurfaceSample> sample_surface_detail(const MorphableModel& model,
                                                 const Eigen::VectorXd& coeffs,
                                                 int count,
                                                 std::uint64_t seed) {
    if (count < 1) {
        throw InvalidArgumentError("sample count must be >= 1");
    }
    const Shape shape = synthesize(model, coeffs);
    const auto& tris = model.triangles();

    std::vector<double> cumulative(tris.size());
    double total = 0.0;
    for (size_t i = 0; i < tris.size(); ++i) {
        const Eigen::Vector3d a = shape.vertices.col(tris[i][0]);
        const Eigen::Vector3d b = shape.vertices.col(tris[i][1]);
        const Eigen::Vector3d c = shape.vertices.col(tris[i][2]);
        total += 0.5 * (b - a).cross(c - a).norm();
        cumulative[i] = total;
    }
    if (!(total > 0.0)) {
        throw DegenerateGeometryError("mesh has zero total surface area");
    }

    Rng rng(seed);
    std::vector<SurfaceSample> samples(static_cast<size_t>(count));
    for (auto& sample : samples) {
        const double pick = rng.uniform() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        const int tri = static_cast<int>(std::min<std::ptrdiff_t>(
            it - cumulative.begin(), static_cast<std::ptrdiff_t>(tris.size()) - 1));
        double u = rng.uniform();
        double v = rng.uniform();
        if (u + v > 1.0) { // fold into the lower-left half
            u = 1.0 - u;
            v = 1.0 - v;
        }
        const Eigen::Vector3d a = shape.vertices.col(tris[tri][0]);
        const Eigen::Vector3d b = shape.vertices.col(tris[tri][1]);
        const Eigen::Vector3d c = shape.vertices.col(tris[tri][2]);
        sample.triangle = tri;
        sample.u = u;
        sample.v = v;
        sample.position = a + u * (b - a) + v * (c - a);
    }
    return samples;
}

PointSet sample_surface(const MorphableModel& model,
                        const Eigen::VectorXd& coeffs,
                        int count,
                        std::uint64_t seed) {
    const auto samples = sample_surface_detail(model, coeffs, count, seed);
    PointSet cloud;
    cloud.points.reserve(samples.size());
    for (const auto& s : samples) {
        cloud.points.push_back(s.position);
    }
    return cloud;
}

namespace {

json model_to_json(const MorphableModel& model) {
    const int n = model.vertex_count();
    const int k = model.coeff_count();
    json j;
    j["n"] = n;
    j["k"] = k;
    j["mean_shape"] = std::vector<double>(model.mean_shape().data(),
                                          model.mean_shape().data() + model.mean_shape().size());
    // Row-major 3n x K.
    std::vector<double> basis;
    basis.reserve(static_cast<size_t>(3 * n) * k);
    for (int r = 0; r < 3 * n; ++r) {
        for (int c = 0; c < k; ++c) {
            basis.push_back(model.basis()(r, c));
        }
    }
    j["basis"] = std::move(basis);
    j["basis_scales"] = std::vector<double>(model.basis_scales().data(),
                                            model.basis_scales().data() + k);
    json tris = json::array();
    for (const Triangle& t : model.triangles()) {
        tris.push_back({t[0], t[1], t[2]});
    }
    j["triangles"] = std::move(tris);
    json ann = json::object();
    for (const auto& [name, indices] : model.annotations()) {
        ann[name] = indices;
    }
    j["annotations"] = std::move(ann);
    return j;
}

MorphableModel model_from_json(const json& j) {
    for (const char* field : {"n", "k", "mean_shape", "basis", "basis_scales", "triangles",
                              "annotations"}) {
        if (!j.contains(field)) {
            throw ParseError(std::string("model file is missing field '") + field + "'");
        }
    }
    const int n = j.at("n").get<int>();
    const int k = j.at("k").get<int>();
    if (n <= 0 || k <= 0) {
        throw ParseError("model fields n and k must be positive");
    }

    const auto mean_vals = j.at("mean_shape").get<std::vector<double>>();
    if (static_cast<int>(mean_vals.size()) != 3 * n) {
        throw ParseError("field 'mean_shape' must hold 3n values");
    }
    Eigen::VectorXd mean = Eigen::Map<const Eigen::VectorXd>(mean_vals.data(), 3 * n);

    const auto basis_vals = j.at("basis").get<std::vector<double>>();
    if (basis_vals.size() != static_cast<size_t>(3 * n) * k) {
        throw ParseError("field 'basis' must hold 3n*K row-major values");
    }
    Eigen::MatrixXd basis(3 * n, k);
    for (int r = 0; r < 3 * n; ++r) {
        for (int c = 0; c < k; ++c) {
            basis(r, c) = basis_vals[static_cast<size_t>(r) * k + c];
        }
    }

    const auto scale_vals = j.at("basis_scales").get<std::vector<double>>();
    if (static_cast<int>(scale_vals.size()) != k) {
        throw ParseError("field 'basis_scales' must hold K values");
    }
    Eigen::VectorXd scales = Eigen::Map<const Eigen::VectorXd>(scale_vals.data(), k);

    std::vector<Triangle> triangles;
    for (const auto& t : j.at("triangles")) {
        if (!t.is_array() || t.size() != 3) {
            throw ParseError("field 'triangles' entries must be index triples");
        }
        triangles.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
    }

    std::map<std::string, std::vector<int>> annotations;
    for (const auto& [name, indices] : j.at("annotations").items()) {
        annotations[name] = indices.get<std::vector<int>>();
    }

    return MorphableModel(std::move(mean), std::move(basis), std::move(scales),
                          std::move(triangles), std::move(annotations));
}

} // namespace

MorphableModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open model file: " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ParseError("model file " + path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

void save_model(const MorphableModel& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write model file: " + path.string());
    }
    out << model_to_json(model).dump() << "\n";
    if (!out) {
        throw IoError("failed while writing model file: " + path.string());
    }
}

} // namespace gazefit
