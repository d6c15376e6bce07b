// splatlab: command-line surface for the scene -> fit -> curate -> train ->
// refine -> eval pipeline. Every command reads and writes under --out.

#include "splatlab/config.hpp"
#include "splatlab/eval.hpp"
#include "splatlab/optim.hpp"
#include "splatlab/refine.hpp"
#include "splatlab/render.hpp"
#include "splatlab/splat_io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace splatlab;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2, kMissing = 3 };

struct MissingInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const fs::path& need(const fs::path& p) {
    if (!fs::exists(p)) throw MissingInput("missing input: " + p.string());
    return p;
}

struct Globals {
    std::string config;
    std::string preset = "desk";
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::string out;
};

RunConfig resolve(const Globals& g) {
    RunConfig cfg = g.config.empty() ? RunConfig::preset_named(g.preset) : load_run_config(need(g.config), g.preset);
    if (g.seed) cfg.set_seed(*g.seed);
    if (g.deterministic) cfg.deterministic = true;
    if (!g.out.empty()) cfg.out = g.out;
    cfg.validate();
    return cfg;
}

void note(const std::string& s) { std::cerr << s << "\n"; }

struct Layout {
    fs::path root;
    fs::path specs(const std::string& split) const { return root / "specs" / (split + ".json"); }
    fs::path dataset(const std::string& split) const { return root / "dataset" / split; }
    fs::path model(const std::string& variant) const { return root / "models" / variant; }
    fs::path metrics() const { return root / "eval" / "metrics.csv"; }
    fs::path sweep() const { return root / "eval" / "sweep.csv"; }
    fs::path report() const { return root / "report"; }
};

std::vector<std::string> splits(const std::string& which) {
    if (which == "all") return {"train", "eval"};
    return {which};
}

// ---- commands ----------------------------------------------------------------

void gen_scenes(const RunConfig& cfg) {
    const Layout L{cfg.out};
    const auto& s = cfg.scenes;
    fs::create_directories(L.root / "specs");
    save_scene_specs(L.specs("train"), make_scene_specs(cfg.seed, 0, s.train_count, s.splat_budget, s.sh_degree));
    save_scene_specs(L.specs("eval"),
                     make_scene_specs(cfg.seed, s.train_count, s.eval_count, s.splat_budget, s.sh_degree));
    std::ofstream(L.root / "config.json") << to_json(cfg).dump(2) << "\n";
    note("wrote " + std::to_string(s.train_count) + " train and " + std::to_string(s.eval_count) + " eval specs");
}

void curate_cmd(const RunConfig& cfg, const std::string& which) {
    const Layout L{cfg.out};
    for (const auto& split : splits(which)) {
        const auto specs = load_scene_specs(need(L.specs(split)));
        if (specs.empty()) continue;
        const CurateResult r = curate(specs, cfg.curate_config(), L.dataset(split));
        for (const auto& d : r.diagnostics) note(d);
        note(split + ": " + std::to_string(r.pairs.size()) + " scenes curated");
    }
}

void fit_cmd(const RunConfig& cfg, const fs::path& spec_path, fs::path output) {
    const SceneSpec spec = load_scene_spec(need(spec_path));
    if (output.empty()) output = fs::path(cfg.out) / "fit" / scene_id(spec);
    const SplatCloud gt = generate_scene(spec);
    std::vector<View> views;
    for (const Camera& c : make_input_trajectory(cfg.trajectory)) {
        views.push_back({c, render_forward(c, gt, cfg.fit.background).image});
    }
    FitConfig fit = cfg.fit;
    fit.seed = Rng::mix(cfg.fit.seed, spec.seed);
    const FitResult r = fit_scene(views, fit);
    fs::create_directories(output);
    save_splt(output / "fitted.splt", r.cloud);
    save_fit_report(output / "fit.json", r.report);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu splats, input PSNR %.2f dB", r.cloud.size(), r.report.final_input_psnr);
    note(buf);
}

void render_cmd(const RunConfig& cfg, const fs::path& cloud_path, const std::string& cameras,
                std::optional<double> elevation, double azimuth, const fs::path& output) {
    const SplatCloud cloud = load_splt(need(cloud_path));
    std::vector<TaggedCamera> cams;
    if (elevation) {
        cams.push_back({orbit_camera(*elevation, azimuth, cfg.trajectory.radius, cfg.trajectory.intrinsics), ViewTag::ood});
    } else if (!cameras.empty()) {
        cams = load_camera_manifest(need(cameras));
    } else {
        for (const Camera& c : make_input_trajectory(cfg.trajectory)) cams.push_back({c, ViewTag::input});
        for (const Camera& c : make_ood_views(cfg.trajectory)) cams.push_back({c, ViewTag::ood});
        for (const Camera& c : make_heldout_views(cfg.trajectory)) cams.push_back({c, ViewTag::heldout});
    }
    fs::create_directories(output);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "%03zu_%s", i, to_string(cams[i].tag).c_str());
        const ImageBuffer img = render_tiled(cams[i].camera, cloud, cfg.fit.background);
        save_ppm(output / (std::string(name) + ".ppm"), img);
        save_raw(output / (std::string(name) + ".raw"), img);
    }
    save_camera_manifest(output / "cameras.json", cams);
    note("rendered " + std::to_string(cams.size()) + " views");
}

void train_cmd(const RunConfig& cfg, const std::string& variant) {
    const Layout L{cfg.out};
    const auto data = load_dataset(need(L.dataset("train")));
    if (data.empty()) throw MissingInput("missing input: no curated scenes in " + L.dataset("train").string());
    std::vector<ScenePair> eval_data;
    if (fs::exists(L.dataset("eval"))) eval_data = load_dataset(L.dataset("eval"));

    const NetConfig net_cfg = variant == "direct" ? direct_variant(cfg.net) : cfg.net;
    SplatFormer<float> net(net_cfg, data.front().fitted.sh_degree);
    TrainOptions opts;
    opts.out_dir = L.model(variant);
    fs::create_directories(*opts.out_dir);
    for (const auto& p : eval_data) opts.snapshot_scenes.push_back(&p);
    opts.on_log = [&](const TrainLogEntry& e) {
        if (cfg.train.log_interval > 0 && (e.step % cfg.train.log_interval == 0 || e.ood_psnr_snapshot)) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "step %d loss %.5f", e.step, e.loss);
            std::string line = buf;
            if (e.ood_psnr_snapshot) {
                std::snprintf(buf, sizeof buf, "  eval ood psnr %.3f", *e.ood_psnr_snapshot);
                line += buf;
            }
            note(line);
        }
    };
    const TrainResult r = variant == "direct" ? ablate_direct(net, data, cfg.train, opts) : train(net, data, cfg.train, opts);
    save_model(L.model(variant), net);
    note("trained " + variant + " refiner in " + std::to_string(static_cast<int>(r.seconds)) + " s");
}

void refine_cmd(const fs::path& model, const fs::path& in, const fs::path& out) {
    const auto net = load_model(need(model));
    const SplatCloud cloud = refine(load_splt(need(in)), *net);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_splt(out, cloud);
}

// "name=dir" or a bare dir (named after its last component).
std::pair<std::string, fs::path> method_spec(const std::string& s) {
    const auto eq = s.find('=');
    if (eq != std::string::npos) return {s.substr(0, eq), s.substr(eq + 1)};
    fs::path p(s);
    return {p.filename().empty() ? p.parent_path().filename().string() : p.filename().string(), p};
}

std::vector<std::pair<std::string, fs::path>> models_for(const Layout& L, const std::vector<std::string>& given) {
    std::vector<std::pair<std::string, fs::path>> out;
    for (const auto& s : given) out.push_back(method_spec(s));
    if (given.empty()) {
        for (const std::string v : {"residual", "direct"}) {
            if (fs::exists(L.model(v) / "model.json")) out.push_back({"splatformer_" + v, L.model(v)});
        }
    }
    return out;
}

void eval_cmd(const RunConfig& cfg, const std::vector<std::string>& models) {
    const Layout L{cfg.out};
    const auto data = load_dataset(need(L.dataset("eval")));
    std::vector<MetricRow> rows;
    for (const auto& p : data) {
        const auto r = evaluate_cloud(p, "3dgs", p.fitted, cfg.fit.background);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    for (const auto& [name, dir] : models_for(L, models)) {
        const auto net = load_model(need(dir));
        for (const auto& p : data) {
            const auto r = evaluate_cloud(p, name, refine(p.fitted, *net), cfg.fit.background);
            rows.insert(rows.end(), r.begin(), r.end());
        }
    }
    fs::create_directories(L.metrics().parent_path());
    save_metric_rows(L.metrics(), rows);
    note("wrote " + std::to_string(rows.size()) + " metric rows");
}

void sweep_cmd(const RunConfig& cfg, const std::string& model) {
    const Layout L{cfg.out};
    const auto data = load_dataset(need(L.dataset("eval")));
    std::unique_ptr<SplatFormer<float>> net;
    if (!model.empty()) net = load_model(need(method_spec(model).second));
    fs::create_directories(L.sweep().parent_path());
    bool first = true;
    int falling = 0;
    for (const auto& p : data) {
        const auto curve = elevation_sweep(p.gt, p.fitted, net.get(), cfg.sweep.elevations, cfg.trajectory,
                                           cfg.sweep.azimuths, cfg.fit.background);
        save_sweep(L.sweep(), p.id, curve, !first);
        falling += non_increasing_beyond(curve, cfg.trajectory.phi_max);
        first = false;
    }
    note(std::to_string(falling) + "/" + std::to_string(data.size()) +
         " scenes with a non-increasing 3DGS curve beyond the input elevations");
}

void report_cmd(const RunConfig& cfg, const std::string& metrics) {
    const Layout L{cfg.out};
    const fs::path src = metrics.empty() ? L.metrics() : fs::path(metrics);
    const auto rows = load_metric_rows(need(src));
    if (rows.empty()) throw MissingInput("missing input: no metric rows in " + src.string());
    write_report(L.report(), rows);
    std::cout << report_text(summarize(rows));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"splatlab: Gaussian-splat fitting, learned refinement and OOD view evaluation"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "TOML config with paper.* and desk.* tables");
    app.add_option("--preset", g.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--seed", g.seed, "seed for every stage");
    app.add_flag("--deterministic", g.deterministic, "single-threaded, byte-reproducible outputs");
    app.add_option("--out", g.out, "run directory");

    std::function<void(const RunConfig&)> action;
    auto* gen = app.add_subcommand("gen-scenes", "write train/eval scene specs");
    gen->callback([&] { action = gen_scenes; });

    std::string split = "all";
    auto* cur = app.add_subcommand("curate", "render views and fit 3DGS for every spec");
    cur->add_option("--split", split)->check(CLI::IsMember({"train", "eval", "all"}));
    cur->callback([&] { action = [&](const RunConfig& c) { curate_cmd(c, split); }; });

    std::string spec, fit_out;
    auto* fit = app.add_subcommand("fit", "fit one scene from its input views");
    fit->add_option("--spec", spec, "scene spec JSON")->required();
    fit->add_option("--output", fit_out, "output directory");
    fit->callback([&] { action = [&](const RunConfig& c) { fit_cmd(c, spec, fit_out); }; });

    std::string cloud, cameras, render_out;
    std::optional<double> elevation;
    double azimuth = 0.0;
    auto* ren = app.add_subcommand("render", "render a splat cloud");
    ren->add_option("--cloud", cloud, "SPLT file")->required();
    ren->add_option("--cameras", cameras, "camera manifest (default: the protocol views)");
    ren->add_option("--elevation", elevation, "single orbit view, degrees");
    ren->add_option("--azimuth", azimuth, "azimuth for --elevation, degrees");
    ren->add_option("--output", render_out, "output directory")->required();
    ren->callback([&] {
        action = [&](const RunConfig& c) { render_cmd(c, cloud, cameras, elevation, azimuth, render_out); };
    });

    std::string variant = "residual";
    auto* tr = app.add_subcommand("train-refiner", "train the refiner on the curated train split");
    tr->add_option("--variant", variant)->check(CLI::IsMember({"residual", "direct"}));
    tr->callback([&] { action = [&](const RunConfig& c) { train_cmd(c, variant); }; });

    std::string model, refine_in, refine_out;
    auto* ref = app.add_subcommand("refine", "apply a trained refiner to a splat cloud");
    ref->add_option("--model", model, "model directory")->required();
    ref->add_option("--cloud", refine_in, "input SPLT")->required();
    ref->add_option("--output", refine_out, "output SPLT")->required();
    ref->callback([&] { action = [&](const RunConfig&) { refine_cmd(model, refine_in, refine_out); }; });

    std::vector<std::string> models;
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM of 3DGS and refined clouds on the eval split");
    ev->add_option("--model", models, "[name=]model_dir (default: every trained model under --out)");
    ev->callback([&] { action = [&](const RunConfig& c) { eval_cmd(c, models); }; });

    std::string sweep_model;
    auto* sw = app.add_subcommand("sweep", "PSNR against camera elevation on the eval split");
    sw->add_option("--model", sweep_model, "model directory for the refined curve");
    sw->callback([&] { action = [&](const RunConfig& c) { sweep_cmd(c, sweep_model); }; });

    std::string metrics;
    auto* rep = app.add_subcommand("report", "per-method mean table from eval metrics");
    rep->add_option("--metrics", metrics, "metrics CSV (default: <out>/eval/metrics.csv)");
    rep->callback([&] { action = [&](const RunConfig& c) { report_cmd(c, metrics); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }
    try {
        action(resolve(g));
        return kOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const NonFiniteError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const MissingInput& e) {
        std::cerr << e.what() << "\n";
        return kMissing;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
}
