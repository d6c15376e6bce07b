#include "splatlab/refine.hpp"

#include "splatlab/config.hpp"
#include "splatlab/metrics.hpp"
#include "splatlab/optim.hpp"
#include "splatlab/splat_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace splatlab {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- dataset -------------------------------------------------------------------

std::vector<const SceneView*> ScenePair::views_with(ViewTag tag) const {
    std::vector<const SceneView*> out;
    for (const auto& v : views) {
        if (v.tag == tag) out.push_back(&v);
    }
    return out;
}

void ScenePair::validate() const {
    if (views_with(ViewTag::input).empty() || views_with(ViewTag::ood).empty()) {
        throw std::invalid_argument("scene " + id + ": needs at least one input and one ood view");
    }
    validate_cloud(fitted);
}

std::string scene_id(const SceneSpec& spec) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%016llx", static_cast<unsigned long long>(spec.seed));
    return buf;
}

std::vector<SceneSpec> make_scene_specs(std::uint64_t seed, int first, int count, int splat_budget, int sh_degree) {
    std::vector<SceneSpec> specs;
    for (int i = first; i < first + count; ++i) {
        specs.push_back(random_scene_spec(Rng::mix(seed, 1000 + static_cast<std::uint64_t>(i)), splat_budget, 0.4, sh_degree));
    }
    return specs;
}

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return {};
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    out << text;
}

// Everything a scene's content depends on.
std::string curation_key(const SceneSpec& spec, const CurateConfig& cfg) {
    json j;
    j["spec"] = json::parse(scene_spec_text(spec));
    j["trajectory"] = to_json(cfg.trajectory);
    j["fit"] = to_json(cfg.fit);
    j["background"] = {cfg.background.x(), cfg.background.y(), cfg.background.z()};
    return j.dump(2) + "\n";
}

void flat_round(GaussianSplat& s, int sh_degree, std::vector<double>& flat) {
    flatten_splat(s, sh_degree, flat);
    for (double& x : flat) x = static_cast<float>(x);
    s = unflatten_splat(flat, sh_degree);
}

ScenePair curate_one(const SceneSpec& spec, const CurateConfig& cfg) {
    ScenePair pair;
    pair.id = scene_id(spec);
    pair.spec = spec;
    pair.gt = generate_scene(spec);

    auto add_views = [&](const std::vector<Camera>& cams, ViewTag tag) {
        for (const Camera& c : cams) {
            RenderResult r = render_forward(c, pair.gt, cfg.background);
            pair.views.push_back({c, tag, std::move(r.image)});
        }
    };
    add_views(make_input_trajectory(cfg.trajectory), ViewTag::input);
    add_views(make_ood_views(cfg.trajectory), ViewTag::ood);
    add_views(make_heldout_views(cfg.trajectory), ViewTag::heldout);

    std::vector<View> inputs;
    for (const SceneView* v : pair.views_with(ViewTag::input)) inputs.push_back({v->camera, v->image});
    FitConfig fit = cfg.fit;
    fit.seed = Rng::mix(cfg.fit.seed, spec.seed);
    fit.background = cfg.background;
    FitResult r = fit_scene(inputs, fit);
    pair.fitted = std::move(r.cloud);
    pair.fit_report = std::move(r.report);

    // Match what the f32 files hold so a reloaded scene is identical to a fresh one.
    auto round_cloud = [](SplatCloud& c) {
        std::vector<double> flat(c.params_per_splat());
        for (auto& s : c.splats) {
            flat_round(s, c.sh_degree, flat);
        }
    };
    round_cloud(pair.gt);
    round_cloud(pair.fitted);
    for (auto& v : pair.views) {
        for (double& x : v.image.pixels) x = static_cast<float>(x);
        v.image.alpha.clear();
    }
    return pair;
}

}  // namespace

CurateResult curate(const std::vector<SceneSpec>& specs, const CurateConfig& cfg, const std::optional<fs::path>& dir) {
    if (specs.empty()) throw std::invalid_argument("curate: no scene specs");
    cfg.trajectory.validate();
    cfg.fit.validate();
    std::vector<std::optional<ScenePair>> slots(specs.size());
    std::vector<std::string> notes(specs.size());
    std::atomic<std::size_t> next{0};
    std::mutex io;

    auto worker = [&] {
        for (std::size_t i = next++; i < specs.size(); i = next++) {
            const SceneSpec& spec = specs[i];
            const std::string id = scene_id(spec);
            const std::string key = curation_key(spec, cfg);
            if (dir && cfg.reuse_existing && read_text(*dir / id / "key.json") == key) {
                try {
                    slots[i] = load_scene_pair(*dir / id);
                    continue;
                } catch (const std::exception&) {
                    // fall through and rebuild
                }
            }
            try {
                ScenePair pair = curate_one(spec, cfg);
                if (dir) {
                    std::lock_guard<std::mutex> lock(io);
                    fs::remove_all(*dir / id);
                    save_scene_pair(*dir / id, pair);
                    write_text(*dir / id / "key.json", key);
                }
                slots[i] = std::move(pair);
            } catch (const NonFiniteError& e) {
                notes[i] = id + ": skipped, fit diverged (" + e.what() + ")";
            }
        }
    };
    const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(specs.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    CurateResult out;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (slots[i]) out.pairs.push_back(std::move(*slots[i]));
        if (!notes[i].empty()) out.diagnostics.push_back(notes[i]);
    }
    return out;
}

void save_scene_pair(const fs::path& dir, const ScenePair& pair) {
    fs::create_directories(dir / "images");
    std::vector<TaggedCamera> cams;
    json views = json::array();
    for (std::size_t i = 0; i < pair.views.size(); ++i) {
        const SceneView& v = pair.views[i];
        cams.push_back({v.camera, v.tag});
        char stem[64];
        std::snprintf(stem, sizeof stem, "%03zu_%s", i, to_string(v.tag).c_str());
        save_raw(dir / "images" / (std::string(stem) + ".raw"), v.image);
        save_ppm(dir / "images" / (std::string(stem) + ".ppm"), v.image);
        views.push_back({{"index", i},
                         {"tag", to_string(v.tag)},
                         {"raw", "images/" + std::string(stem) + ".raw"},
                         {"ppm", "images/" + std::string(stem) + ".ppm"}});
    }
    save_camera_manifest(dir / "cameras.json", cams);
    json j;
    j["id"] = pair.id;
    j["views"] = views;
    write_text(dir / "views.json", j.dump(2) + "\n");
    save_scene_spec(dir / "spec.json", pair.spec);
    save_splt(dir / "gt.splt", pair.gt);
    save_splt(dir / "fitted.splt", pair.fitted);
    save_fit_report(dir / "fit.json", pair.fit_report);
}

ScenePair load_scene_pair(const fs::path& dir) {
    if (!fs::exists(dir / "views.json")) throw std::runtime_error("not a scene directory: " + dir.string());
    ScenePair pair;
    const json j = json::parse(read_text(dir / "views.json"));
    pair.id = j.at("id").get<std::string>();
    const auto cams = load_camera_manifest(dir / "cameras.json");
    const json& views = j.at("views");
    if (views.size() != cams.size()) throw std::runtime_error(dir.string() + ": views.json and cameras.json disagree");
    for (std::size_t i = 0; i < cams.size(); ++i) {
        SceneView v;
        v.camera = cams[i].camera;
        v.tag = view_tag_from_string(views[i].at("tag").get<std::string>());
        if (v.tag != cams[i].tag) throw std::runtime_error(dir.string() + ": view tags disagree");
        v.image = load_raw(dir / views[i].at("raw").get<std::string>());
        pair.views.push_back(std::move(v));
    }
    pair.spec = load_scene_spec(dir / "spec.json");
    pair.gt = load_splt(dir / "gt.splt");
    pair.fitted = load_splt(dir / "fitted.splt");
    if (fs::exists(dir / "fit.json")) {
        const json f = json::parse(read_text(dir / "fit.json"));
        pair.fit_report.wall_seconds = f.value("wall_seconds", 0.0);
        pair.fit_report.final_count = f.value("final_count", 0);
        pair.fit_report.final_input_psnr = f.value("final_input_psnr", 0.0);
    }
    return pair;
}

std::vector<ScenePair> load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
    std::vector<fs::path> scenes;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory() && fs::exists(e.path() / "views.json")) scenes.push_back(e.path());
    }
    std::sort(scenes.begin(), scenes.end());
    std::vector<ScenePair> out;
    for (const auto& p : scenes) out.push_back(load_scene_pair(p));
    return out;
}

// ---- losses -------------------------------------------------------------------

double DssimLoss::operator()(const ImageBuffer& rendered, const ImageBuffer& target, std::vector<double>* grad) const {
    if (!grad) return dssim_from_ssim(ssim(rendered, target));
    std::vector<double> g;
    const double s = ssim_with_grad(rendered, target, g);
    for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] -= 0.5 * g[i];
    return dssim_from_ssim(s);
}

double refiner_loss(const ImageBuffer& rendered, const ImageBuffer& target, double weight, std::vector<double>* grad,
                    const PerceptualLoss* perceptual) {
    if (!rendered.same_shape(target)) throw std::invalid_argument("refiner_loss: image shapes differ");
    static const DssimLoss dssim;
    const PerceptualLoss& p = perceptual ? *perceptual : dssim;
    const double l1 = l1_loss(rendered, target, grad);
    if (grad) {
        std::vector<double> pg(rendered.size(), 0.0);
        const double pv = p(rendered, target, &pg);
        for (std::size_t i = 0; i < pg.size(); ++i) (*grad)[i] += weight * pg[i];
        return l1 + weight * pv;
    }
    return l1 + weight * p(rendered, target, nullptr);
}

// ---- training -------------------------------------------------------------------

void TrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("train config: steps must be >= 0");
    if (views_per_step < 1 || grad_accumulation < 1) throw std::invalid_argument("train config: counts must be positive");
    if (!(ood_fraction >= 0.0 && ood_fraction <= 1.0)) throw std::invalid_argument("train config: ood_fraction in [0, 1]");
    if (splat_cap <= 0) throw std::invalid_argument("train config: splat_cap must be positive");
    if (!(lr > 0.0 && std::isfinite(lr)) || !(perceptual_weight >= 0.0 && std::isfinite(perceptual_weight))) throw std::invalid_argument("train config: bad lr or loss weight");
    if (checkpoint_interval < 1 || log_interval < 1 || snapshot_interval < 0) {
        throw std::invalid_argument("train config: intervals must be positive");
    }
}

TrainConfig TrainConfig::desk() {
    TrainConfig c;
    c.lr = 1e-3;
    return c;
}

TrainConfig TrainConfig::paper() {
    TrainConfig c;
    c.steps = 150000;
    c.splat_cap = 100000;
    c.lr = 3e-5;
    c.checkpoint_interval = 5000;
    c.snapshot_interval = 5000;
    return c;
}

ViewTag draw_target_tag(Rng& rng, double ood_fraction) {
    return rng.bernoulli(ood_fraction) ? ViewTag::ood : ViewTag::input;
}

SplatCloud subsample_cloud(const SplatCloud& cloud, int cap, Rng& rng) {
    if (cap <= 0) throw std::invalid_argument("subsample_cloud: cap must be positive");
    if (static_cast<int>(cloud.size()) <= cap) return cloud;
    std::vector<std::size_t> idx(cloud.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int i = 0; i < cap; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    SplatCloud out;
    out.sh_degree = cloud.sh_degree;
    for (std::size_t i : idx) out.splats.push_back(cloud.splats[i]);
    return out;
}

namespace {

struct Prediction {
    NormalizedCloud nc;
    ResidualSet residuals;
    SplatCloud refined;
};

Prediction predict(ad::Tape<float>& tape, ad::Tensor<float>& out, const SplatFormer<float>& net, const SplatCloud& cloud) {
    Prediction p;
    p.nc = normalize_cloud(cloud);
    out = net.forward(tape, p.nc);
    p.residuals = to_residuals<float>(out.value(), static_cast<int>(cloud.size()), cloud.sh_degree);
    p.refined = apply_residuals(p.nc, p.residuals, net.config().residual);
    return p;
}

double mean_ood_psnr(const SplatFormer<float>& net, const std::vector<const ScenePair*>& scenes, const Vec3& bg) {
    double sum = 0.0;
    int n = 0;
    for (const ScenePair* s : scenes) {
        const SplatCloud refined = refine(s->fitted, net);
        for (const SceneView* v : s->views_with(ViewTag::ood)) {
            sum += std::min(psnr(render_tiled(v->camera, refined, bg), v->image), 100.0);
            ++n;
        }
    }
    return n ? sum / n : 0.0;
}

std::vector<std::vector<float>> snapshot(const std::vector<ad::Parameter<float>*>& params) {
    std::vector<std::vector<float>> out;
    for (const auto* p : params) out.push_back(p->value);
    return out;
}

void restore(const std::vector<ad::Parameter<float>*>& params, const std::vector<std::vector<float>>& values) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

std::vector<const ad::Parameter<float>*> as_const(const std::vector<ad::Parameter<float>*>& params) {
    return {params.begin(), params.end()};
}

}  // namespace

TrainResult train(SplatFormer<float>& net, const std::vector<ScenePair>& dataset, const TrainConfig& cfg,
                  const TrainOptions& options) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    for (const auto& p : dataset) p.validate();
    for (const auto& p : dataset) {
        if (p.fitted.sh_degree != net.sh_degree()) throw std::invalid_argument("train: scene " + p.id + " has a different SH degree");
    }
    const auto start = std::chrono::steady_clock::now();
    std::ofstream log_file;
    if (options.out_dir) {
        fs::create_directories(*options.out_dir);
        log_file.open(*options.out_dir / "log.jsonl");
        if (!log_file) throw std::runtime_error("train: cannot write the training log");
    }

    Rng rng(Rng::mix(cfg.seed, 0x7261696eULL));
    const auto params = net.parameters();
    AdamState<float> adam;
    adam.config.lr = cfg.lr;
    auto last_good = snapshot(params);
    const bool residual = net.config().residual;
    const double micro_weight = 1.0 / (static_cast<double>(cfg.views_per_step) * cfg.grad_accumulation);

    auto abort_with = [&](int step, const std::string& why) {
        restore(params, last_good);
        if (options.out_dir) save_checkpoint(*options.out_dir / "last.spck", as_const(params));
        throw NonFiniteError("train: " + why + " at step " + std::to_string(step) + "; restored the last good weights");
    };

    TrainResult result;
    for (int step = 0; step < cfg.steps; ++step) {
        net.zero_grad();
        double loss_sum = 0.0;
        for (int micro = 0; micro < cfg.grad_accumulation; ++micro) {
            const ScenePair& pair = dataset[rng.below(dataset.size())];
            const SplatCloud cloud = subsample_cloud(pair.fitted, cfg.splat_cap, rng);
            ad::Tape<float> tape;
            ad::Tensor<float> out;
            const Prediction pred = predict(tape, out, net, cloud);

            std::vector<GaussianSplat> grads(cloud.size(), GaussianSplat::zeros());
            const auto inputs = pair.views_with(ViewTag::input);
            const auto oods = pair.views_with(ViewTag::ood);
            double loss = 0.0;
            for (int v = 0; v < cfg.views_per_step; ++v) {
                const auto& pool = draw_target_tag(rng, cfg.ood_fraction) == ViewTag::ood ? oods : inputs;
                const SceneView& view = *pool[rng.below(pool.size())];
                const RenderResult fwd = render_forward(view.camera, pred.refined, cfg.background);
                std::vector<double> dimg;
                loss += refiner_loss(fwd.image, view.image, cfg.perceptual_weight, &dimg, options.perceptual);
                const RenderGrads g = render_backward(fwd, view.camera, pred.refined, cfg.background, dimg);
                for (std::size_t k = 0; k < grads.size(); ++k) {
                    const GaussianSplat& s = g.splats[k];
                    grads[k].position += s.position;
                    grads[k].log_scale += s.log_scale;
                    grads[k].rotation += s.rotation;
                    grads[k].opacity_logit += s.opacity_logit;
                    for (int c = 0; c < kMaxShCoeffs; ++c) grads[k].sh[c] += s.sh[c];
                }
            }
            loss /= cfg.views_per_step;
            if (!std::isfinite(loss)) abort_with(step, "non-finite loss");
            loss_sum += loss;
            const std::vector<double> head_grad = residual_gradient(pred.nc, pred.residuals, grads, residual);
            std::vector<float> seed(head_grad.size());
            for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = static_cast<float>(head_grad[i] * micro_weight);
            tape.backward(out, seed);
        }
        try {
            adam_step(params, adam);
        } catch (const NonFiniteError&) {
            abort_with(step, "non-finite gradient");
        }
        for (const auto* p : params) {
            for (float w : p->value) {
                if (!std::isfinite(w)) abort_with(step, "non-finite weights after the update");
            }
        }
        last_good = snapshot(params);

        TrainLogEntry entry;
        entry.step = step;
        entry.loss = loss_sum / cfg.grad_accumulation;
        if (cfg.snapshot_interval > 0 && !options.snapshot_scenes.empty() &&
            ((step + 1) % cfg.snapshot_interval == 0 || step + 1 == cfg.steps)) {
            entry.ood_psnr_snapshot = mean_ood_psnr(net, options.snapshot_scenes, cfg.background);
        }
        if (log_file) {
            json j;
            j["step"] = entry.step;
            j["loss"] = entry.loss;
            j["ood_psnr_snapshot"] = entry.ood_psnr_snapshot ? json(*entry.ood_psnr_snapshot) : json(nullptr);
            log_file << j.dump() << "\n";
            log_file.flush();
        }
        if (options.on_log) options.on_log(entry);
        result.log.push_back(entry);
        if (options.out_dir && ((step + 1) % cfg.checkpoint_interval == 0 || step + 1 == cfg.steps)) {
            save_checkpoint(*options.out_dir / ("step_" + std::to_string(step + 1) + ".spck"), as_const(params));
            save_checkpoint(*options.out_dir / "last.spck", as_const(params));
        }
    }
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

SplatCloud refine(const SplatCloud& cloud, const SplatFormer<float>& net) {
    if (cloud.empty()) throw std::invalid_argument("refine: empty cloud");
    if (cloud.sh_degree != net.sh_degree()) throw std::invalid_argument("refine: SH degree differs from the network's");
    ad::Tape<float> tape;
    ad::Tensor<float> out;
    return predict(tape, out, net, cloud).refined;
}

NetConfig direct_variant(NetConfig cfg) {
    cfg.residual = false;
    return cfg;
}

TrainResult ablate_direct(SplatFormer<float>& net, const std::vector<ScenePair>& dataset, const TrainConfig& cfg,
                          const TrainOptions& options) {
    if (net.config().residual) throw std::invalid_argument("ablate_direct: expects a network built from direct_variant()");
    return train(net, dataset, cfg, options);
}

double views_loss(const SplatCloud& cloud, const ScenePair& pair, ViewTag tag, double perceptual_weight, const Vec3& background) {
    double sum = 0.0;
    int n = 0;
    for (const SceneView* v : pair.views_with(tag)) {
        sum += refiner_loss(render_tiled(v->camera, cloud, background), v->image, perceptual_weight, nullptr);
        ++n;
    }
    return n ? sum / n : 0.0;
}

void save_model(const fs::path& dir, const SplatFormer<float>& net) {
    fs::create_directories(dir);
    json j;
    j["net"] = to_json(net.config());
    j["sh_degree"] = net.sh_degree();
    write_text(dir / "model.json", j.dump(2) + "\n");
    save_checkpoint(dir / "weights.spck", net.parameters());
}

std::unique_ptr<SplatFormer<float>> load_model(const fs::path& dir) {
    const json j = json::parse(read_text(dir / "model.json"));
    NetConfig cfg;
    apply_json(cfg, j.at("net"));
    auto net = std::make_unique<SplatFormer<float>>(cfg, j.at("sh_degree").get<int>());
    load_checkpoint(dir / "weights.spck", net->parameters());
    return net;
}

}  // namespace splatlab
