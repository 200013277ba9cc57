#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gazefit/fitting.hpp"
#include "gazefit/pointcloud.hpp"
#include "gazefit/regress.hpp"
#include "gazefit/synth.hpp"

namespace gazefit {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kReportVersion = 1;

/// Stable process exit codes for harnesses.
enum ExitCode : int {
    kExitOk = 0,
    kExitValidation = 1,
    kExitIo = 2,
    kExitNumerical = 3,
};

/// Maps a thrown gazefit error to its exit code (validation-class errors 1,
/// filesystem errors 2, numerical/geometric failures 3).
int exit_code_for(const std::exception& e);

struct ModelSettings {
    int vertices = 2500;
    int coeffs = 6;
};

struct RenderSettings {
    double z0 = 0.6;
    int image_size = 320;
    double focal = 700.0;
    double patch_margin = 0.25;

    CameraIntrinsics virtual_intrinsics() const;
};

struct RegressSettings {
    int knn_k = 3;
    double alr_eps = 0.05;
    int grid = 12;
};

struct AppearanceSettings {
    int patch_width = 40;
    int patch_height = 24;
};

/// How a fit is initialized inside the pipeline. The paper-style detector is
/// out of scope, so the stand-ins are centroid alignment or the ground-truth
/// pose perturbed by a configured detector-like error.
struct InitSettings {
    enum class Mode { Centroid, TruthPerturbed };
    Mode mode = Mode::TruthPerturbed;
    double angle_deg = 5.0;
    double offset_m = 0.02;
};

struct SuiteSettings {
    std::string name = "static";
    bool moving_head = false;
    int frames = 120;
    int scan_size = 4000;
    double noise_sigma = 0.0;
    double outlier_fraction = 0.0;
    double appearance_noise = 0.0;
    double yaw_range_deg = 20.0;   // moving-head pose range
    double pitch_range_deg = 20.0;
    double track_phase = 0.0;
    std::optional<HalfSpace> occlusion;
};

struct PipelineConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "gazefit_out";
    bool quiet = false;
    ModelSettings model;
    CameraIntrinsics sensor{525.0, 525.0, 319.5, 239.5, 640, 480};
    FitConfig fit;
    InitSettings init;
    RenderSettings render;
    RegressSettings regress;
    AppearanceSettings appearance;
    std::vector<SuiteSettings> suites;

    PipelineConfig();

    void validate() const;
};

/// Effective-config echo, defaults included.
std::string config_to_json(const PipelineConfig& config);
PipelineConfig config_from_json(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Applies one `--set section.key=value` override (value parsed as a JSON
/// literal, falling back to a string).
void apply_config_override(PipelineConfig& config, const std::string& assignment);

struct FrameRecord {
    int index = 0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    Eigen::Vector3d gaze = Eigen::Vector3d(0, 0, -1);
    Eigen::Vector2d screen = Eigen::Vector2d(0.5, 0.5);
    std::uint64_t seed = 0;
    std::string scan_file;
    std::string sensed_file;
    std::string left_patch_file;
    std::string right_patch_file;
};

struct SuiteRecord {
    SuiteSettings settings;
    std::vector<FrameRecord> frames;
};

struct Manifest {
    std::uint64_t seed = 0;
    std::string model_file;
    std::vector<SuiteRecord> suites;
};

void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

/// Scenario JSON (the synth module's external ground-truth format).
std::string scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const std::string& text);

struct ErrorStats {
    double mean = 0.0;
    double median = 0.0;
    double p90 = 0.0;
    int count = 0;
};

ErrorStats compute_error_stats(std::vector<double> values);

struct RegressorResult {
    ErrorStats left;
    ErrorStats right;
    double mean_deg = 0.0; // arithmetic mean of the left/right mean columns
};

struct SuiteResult {
    std::string name;
    bool moving_head = false;
    int frames = 0;
    int train_count = 0;
    int test_count = 0;
    int failures = 0;
    int fits_converged = 0;
    double mean_fit_iterations = 0.0;
    double median_rotation_error_deg = 0.0;
    std::map<std::string, RegressorResult> regressors; // "knn", "alr"
    std::vector<std::string> failure_messages;
};

struct EvaluationReport {
    int report_version = kReportVersion;
    std::string tool_version = kToolVersion;
    std::string config_echo; // JSON text of the effective config
    std::vector<SuiteResult> suites;
};

std::string report_to_json(const EvaluationReport& report);

/// Generates the full synthetic ground-truth bundle for every configured
/// suite: model JSON, per-frame scan PLYs, eye-appearance PGMs, composited
/// sensed-image PGMs, and the manifest binding files to ground truth.
/// Returns the manifest (also written to <out_dir>/manifest.json).
Manifest run_gen(const PipelineConfig& config);

/// Fits one scan with the configured initialization (centroid by default for
/// explicit scan/model paths) and writes the FitResult JSON; optionally dumps
/// the fitted, posed mesh as PLY.
FitResult run_fit(const PipelineConfig& config,
                  const std::filesystem::path& scan_path,
                  const std::filesystem::path& model_path,
                  const std::filesystem::path& result_path,
                  const std::optional<std::filesystem::path>& mesh_path = std::nullopt);

/// Canonical re-render of a fit result. When a sensed image is given, the
/// fitted mesh is textured from it; otherwise a flat mid-gray is used.
/// Writes the canonical render PGM and returns it.
Image run_normalize(const PipelineConfig& config,
                    const std::filesystem::path& fit_result_path,
                    const std::filesystem::path& model_path,
                    const std::optional<std::filesystem::path>& sensed_image_path,
                    const std::filesystem::path& out_image_path);

/// Per-frame eye features for a whole generated suite (fit + normalize +
/// render + extract for every frame). Writes a features JSON file and returns
/// its path contents; failed frames carry an error string instead of features.
struct FrameFeatures {
    int index = 0;
    bool ok = false;
    std::string error;
    EyeFeature left;
    EyeFeature right;
    Eigen::Vector2d screen = Eigen::Vector2d(0.5, 0.5);
    Eigen::Vector3d gaze = Eigen::Vector3d(0, 0, -1);
    bool converged = false;
    int fit_iterations = 0;
    double rotation_error_deg = 0.0;
};

std::vector<FrameFeatures> run_features(const PipelineConfig& config,
                                        const std::filesystem::path& manifest_path,
                                        const std::string& suite_name,
                                        const std::filesystem::path& out_path);

void save_frame_features(const std::vector<FrameFeatures>& frames,
                         const std::filesystem::path& path);
std::vector<FrameFeatures> load_frame_features(const std::filesystem::path& path);

/// Sparse-grid split of a features file into per-eye training sets and the
/// remaining test frames.
void run_train(const PipelineConfig& config,
               const std::filesystem::path& features_path,
               const std::filesystem::path& out_train_left,
               const std::filesystem::path& out_train_right,
               const std::filesystem::path& out_test_features);

/// Predictions for every frame of a features file, one method at a time
/// ("knn" or "alr"). Writes [{index, left: [3], right: [3]}].
void run_predict(const PipelineConfig& config,
                 const std::filesystem::path& train_left,
                 const std::filesystem::path& train_right,
                 const std::filesystem::path& test_features,
                 const std::string& method,
                 const std::filesystem::path& out_predictions);

/// Angular-error statistics of a predictions file against the ground truth in
/// the test features file. Writes a small report JSON and returns the
/// per-regressor result.
RegressorResult run_eval(const std::filesystem::path& predictions_path,
                         const std::filesystem::path& test_features_path,
                         const std::filesystem::path& out_report);

/// End-to-end: for every configured suite of a generated bundle, runs
/// fit -> normalize -> render -> extract -> features, splits per the sparse
/// grid, trains and evaluates both regressors, and writes
/// <out_dir>/report.json. Individual frame failures are recorded, not fatal.
EvaluationReport run_pipeline(const PipelineConfig& config,
                              const std::filesystem::path& manifest_path);

} // namespace gazefit
