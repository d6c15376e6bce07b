#pragma once

// Dataset curation (fitted cloud + multi-view ground truth per scene),
// refiner training, inference-time refinement and the direct-prediction
// ablation.

#include "splatlab/camera.hpp"
#include "splatlab/fit.hpp"
#include "splatlab/image.hpp"
#include "splatlab/net.hpp"
#include "splatlab/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace splatlab {

struct SceneView {
    Camera camera;
    ViewTag tag = ViewTag::input;
    ImageBuffer image;
};

struct ScenePair {
    std::string id;
    SceneSpec spec;
    SplatCloud gt;
    SplatCloud fitted;
    std::vector<SceneView> views;
    FitReport fit_report;

    std::vector<const SceneView*> views_with(ViewTag tag) const;
    void validate() const;
};

struct CurateConfig {
    TrajectoryConfig trajectory;
    FitConfig fit;
    Vec3 background = Vec3::Ones();
    /// Scenes fitted concurrently; results do not depend on it.
    int jobs = 1;
    /// Load a scene already on disk when its recorded configuration matches.
    bool reuse_existing = true;
};

/// Stable scene directory name.
std::string scene_id(const SceneSpec& spec);

/// Specs of `count` random scenes drawn from stream `first`, `first + 1`, ...
std::vector<SceneSpec> make_scene_specs(std::uint64_t seed, int first, int count, int splat_budget,
                                        int sh_degree = 0);

struct CurateResult {
    std::vector<ScenePair> pairs;
    std::vector<std::string> diagnostics;  // one line per skipped scene
};

/// Fits every spec from its input views. When `dir` is given each pair is
/// written to dir/<scene id>/. Fit divergence skips the scene.
CurateResult curate(const std::vector<SceneSpec>& specs, const CurateConfig& cfg,
                    const std::optional<std::filesystem::path>& dir = std::nullopt);

/// cameras.json, views.json, spec.json, gt.splt, fitted.splt, fit.json,
/// images/<index>_<tag>.raw and .ppm.
void save_scene_pair(const std::filesystem::path& dir, const ScenePair& pair);
ScenePair load_scene_pair(const std::filesystem::path& dir);
/// Every scene directory under `dir`, sorted by name.
std::vector<ScenePair> load_dataset(const std::filesystem::path& dir);

// ---- losses -------------------------------------------------------------------

/// Pluggable perceptual term of the refiner loss.
class PerceptualLoss {
public:
    virtual ~PerceptualLoss() = default;
    virtual std::string name() const = 0;
    /// Loss value; adds nothing to `grad` when it is null.
    virtual double operator()(const ImageBuffer& rendered, const ImageBuffer& target, std::vector<double>* grad) const = 0;
};

/// (1 - SSIM) / 2.
class DssimLoss final : public PerceptualLoss {
public:
    std::string name() const override { return "dssim"; }
    double operator()(const ImageBuffer& rendered, const ImageBuffer& target, std::vector<double>* grad) const override;
};

/// L1 + weight * perceptual (D-SSIM unless another term is supplied).
double refiner_loss(const ImageBuffer& rendered, const ImageBuffer& target, double weight, std::vector<double>* grad,
                    const PerceptualLoss* perceptual = nullptr);

// ---- training -------------------------------------------------------------------

struct TrainConfig {
    int steps = 2000;
    int views_per_step = 4;
    double ood_fraction = 0.7;
    double lr = 3e-5;
    int grad_accumulation = 4;
    int splat_cap = 8000;
    double perceptual_weight = 0.5;
    int checkpoint_interval = 500;
    int log_interval = 10;
    /// Steps between OOD-PSNR probes on the snapshot scenes (0 disables).
    int snapshot_interval = 250;
    Vec3 background = Vec3::Ones();
    std::uint64_t seed = 0;

    void validate() const;
    static TrainConfig desk();
    static TrainConfig paper();
};

/// Training target draw: OOD with probability ood_fraction, else input.
ViewTag draw_target_tag(Rng& rng, double ood_fraction);

/// Uniform random subset of `cap` splats without replacement, original order kept.
SplatCloud subsample_cloud(const SplatCloud& cloud, int cap, Rng& rng);

struct TrainLogEntry {
    int step = 0;
    double loss = 0.0;
    std::optional<double> ood_psnr_snapshot;
};

struct TrainOptions {
    /// Receives log.jsonl and checkpoints (step_<n>.spck, last.spck).
    std::optional<std::filesystem::path> out_dir;
    /// Scenes whose mean OOD PSNR is logged every snapshot_interval steps.
    std::vector<const ScenePair*> snapshot_scenes;
    const PerceptualLoss* perceptual = nullptr;
    std::function<void(const TrainLogEntry&)> on_log;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;  // every step
    double seconds = 0.0;
};

/// Trains `net` in place. Throws NonFiniteError after restoring the last good
/// weights (written to last.spck when out_dir is set).
TrainResult train(SplatFormer<float>& net, const std::vector<ScenePair>& dataset, const TrainConfig& cfg,
                  const TrainOptions& options = {});

/// One forward pass: normalize, predict, apply residuals, un-normalize.
/// Every splat is processed; the count is preserved.
SplatCloud refine(const SplatCloud& cloud, const SplatFormer<float>& net);

/// The same training with heads predicting absolute attributes.
NetConfig direct_variant(NetConfig cfg);
TrainResult ablate_direct(SplatFormer<float>& net, const std::vector<ScenePair>& dataset, const TrainConfig& cfg,
                          const TrainOptions& options = {});

/// Mean refiner loss of `cloud` over the views of one tag.
double views_loss(const SplatCloud& cloud, const ScenePair& pair, ViewTag tag, double perceptual_weight,
                  const Vec3& background = Vec3::Ones());

/// A trained refiner on disk: model.json (net config + SH degree) and
/// weights.spck.
void save_model(const std::filesystem::path& dir, const SplatFormer<float>& net);
std::unique_ptr<SplatFormer<float>> load_model(const std::filesystem::path& dir);

}  // namespace splatlab
