#pragma once

// Per-scene Gaussian fitting: photometric loss, Adam over attribute groups,
// and the densify / prune schedule.

#include "splatlab/camera.hpp"
#include "splatlab/image.hpp"
#include "splatlab/optim.hpp"
#include "splatlab/render.hpp"
#include "splatlab/rng.hpp"
#include "splatlab/splat.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace splatlab {

struct Box {
    Vec3 lo = Vec3::Constant(-0.5);
    Vec3 hi = Vec3::Constant(0.5);
};

struct FitConfig {
    int iterations = 4000;
    double lambda_dssim = 0.2;

    double lr_position_init = 1.6e-4;
    double lr_position_final = 1.6e-6;
    double lr_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_opacity = 5e-2;
    double lr_sh_dc = 2.5e-3;
    double lr_sh_rest = 2.5e-3 / 20.0;
    /// Multiplies the position rates (3DGS scales them by the scene extent).
    double spatial_lr_scale = 1.0;

    int warmup_steps = 200;
    int densify_interval = 200;
    int densify_stop_step = 2000;
    double grad_threshold = 2e-4;
    double scale_split_threshold = 0.01;
    double opacity_prune_threshold = 0.005;
    int max_splats = 8000;

    bool random_background = false;
    Vec3 background = Vec3::Ones();

    int init_count = 2000;
    Box init_box{Vec3::Constant(-0.45), Vec3::Constant(0.45)};
    int sh_degree = 0;

    int report_interval = 500;
    std::uint64_t seed = 0;

    void validate() const;
    static FitConfig desk();
    static FitConfig paper();
};

struct FitCheckpoint {
    int iteration = 0;
    double loss = 0.0;        // mean training loss since the previous checkpoint
    double input_psnr = 0.0;  // mean over every input view
    int splat_count = 0;
    double seconds = 0.0;
};

struct FitReport {
    std::vector<FitCheckpoint> checkpoints;
    double wall_seconds = 0.0;
    int final_count = 0;
    double final_input_psnr = 0.0;
};

void save_fit_report(const std::filesystem::path& path, const FitReport& report);

struct View {
    Camera camera;
    ImageBuffer image;  // alpha is used by the random-background option
};

/// n splats uniform in the box; isotropic scale = mean nearest-neighbour
/// distance; opacity 0.1; gray color.
SplatCloud init_cloud(const Box& box, int n, std::uint64_t seed, int sh_degree = 0);

/// (1 - lambda) * L1 + lambda * (1 - SSIM) / 2, gradient w.r.t. `rendered`.
double fit_loss(const ImageBuffer& rendered, const ImageBuffer& target, double lambda, std::vector<double>* grad);

/// Gradient statistics gathered between densification calls.
struct DensifyStats {
    std::vector<double> grad_accum;       // summed screen-space gradient norms
    std::vector<int> visible_count;
    std::vector<Vec3> position_grad;      // summed position gradients
    void reset(std::size_t n);
    void add(const RenderGrads& g);
};

/// Survivor mapping returned alongside the new cloud: origin[i] is the old
/// index splat i came from, or -1 for a freshly created splat.
struct DensifyResult {
    SplatCloud cloud;
    std::vector<int> origin;
    int cloned = 0;
    int split = 0;
    int pruned = 0;
};

DensifyResult densify_and_prune(const SplatCloud& cloud, const DensifyStats& stats, const FitConfig& cfg, Rng& rng);

/// Adam moments per raw splat field, aligned with a cloud.
struct SplatAdam {
    std::int64_t step = 0;
    std::vector<GaussianSplat> m, v;
    void resize(std::size_t n);
    /// Keeps moments of survivors, zeros for new splats.
    void remap(const std::vector<int>& origin);
    /// One step with per-group learning rates.
    void update(SplatCloud& cloud, const std::vector<GaussianSplat>& grads, const FitConfig& cfg, double position_lr);
};

double position_lr_at(const FitConfig& cfg, int iteration);

struct FitResult {
    SplatCloud cloud;
    FitReport report;
};

/// Called after every iteration with (iteration, cloud).
using FitObserver = std::function<void(int, const SplatCloud&)>;

/// Fits from an explicit start cloud (init_cloud when omitted).
FitResult fit_scene(const std::vector<View>& views, const FitConfig& cfg);
FitResult fit_scene(const std::vector<View>& views, const FitConfig& cfg, SplatCloud start,
                    const FitObserver& observer = {});

/// Mean PSNR of the cloud over the views.
double mean_psnr(const SplatCloud& cloud, const std::vector<View>& views, const Vec3& background = Vec3::Ones());

}  // namespace splatlab
