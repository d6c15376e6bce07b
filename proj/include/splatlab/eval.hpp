#pragma once

// Per-view metric rows, the elevation sweep, and benchmark report tables.

#include "splatlab/camera.hpp"
#include "splatlab/net.hpp"
#include "splatlab/refine.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace splatlab {

struct MetricRow {
    std::string scene;
    std::string method;
    ViewTag tag = ViewTag::ood;
    int view = 0;
    double psnr = 0.0;  // +inf for identical images
    double ssim = 0.0;
};

/// One row per view of `pair`, comparing renders of `cloud` with the stored images.
std::vector<MetricRow> evaluate_cloud(const ScenePair& pair, const std::string& method, const SplatCloud& cloud,
                                      const Vec3& background = Vec3::Ones());

void save_metric_rows(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> load_metric_rows(const std::filesystem::path& path);

struct SweepPoint {
    double elevation = 0.0;
    double psnr_3dgs = 0.0;
    std::optional<double> psnr_refined;
};

/// Cameras at one elevation: `azimuths` evenly spaced, offset like the OOD views.
std::vector<Camera> sweep_cameras(double elevation_deg, int azimuths, const TrajectoryConfig& traj);

/// Mean PSNR against ground-truth renders per elevation, for the fitted cloud
/// and (when a network is given) its refinement.
std::vector<SweepPoint> elevation_sweep(const SplatCloud& gt, const SplatCloud& fitted, const SplatFormer<float>* net,
                                        const std::vector<double>& elevations, const TrajectoryConfig& traj,
                                        int azimuths = 3, const Vec3& background = Vec3::Ones());

/// True when the 3DGS curve never rises between consecutive elevations above `from_deg`.
bool non_increasing_beyond(const std::vector<SweepPoint>& curve, double from_deg);

void save_sweep(const std::filesystem::path& path, const std::string& scene, const std::vector<SweepPoint>& curve,
                bool append = false);

struct ReportLine {
    std::string method;
    // Means per view tag; nullopt when the method has no rows of that tag.
    std::optional<double> ood_psnr, ood_ssim, input_psnr, input_ssim, heldout_psnr, heldout_ssim;
    int scenes = 0;
};

/// Per-method means (f64 accumulation, methods sorted by name).
std::vector<ReportLine> summarize(const std::vector<MetricRow>& rows);

std::string report_csv(const std::vector<ReportLine>& lines);
std::string report_text(const std::vector<ReportLine>& lines);

/// Writes report.csv and report.txt into `dir`.
void write_report(const std::filesystem::path& dir, const std::vector<MetricRow>& rows);

}  // namespace splatlab
