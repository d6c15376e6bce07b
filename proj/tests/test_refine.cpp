#include <doctest.h>

#include "splatlab/metrics.hpp"
#include "splatlab/optim.hpp"
#include "splatlab/refine.hpp"
#include "splatlab/splat_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace splatlab;
namespace fs = std::filesystem;

namespace {

CurateConfig tiny_curate() {
    CurateConfig c;
    c.trajectory.intrinsics = Intrinsics{32, 32, 32.0};
    c.fit.iterations = 300;
    c.fit.init_count = 300;
    c.fit.warmup_steps = 50;
    c.fit.densify_interval = 50;
    c.fit.densify_stop_step = 200;
    c.fit.max_splats = 1000;
    return c;
}

const std::vector<ScenePair>& tiny_dataset() {
    static const std::vector<ScenePair> data = curate(make_scene_specs(5, 0, 2, 300), tiny_curate()).pairs;
    return data;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("splatlab_test_refine_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// Every file under `dir`, relative path -> bytes. Wall-clock timings in the
// fit reports are the one thing allowed to differ between runs.
std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string bytes = slurp(e.path());
        if (e.path().filename() == "fit.json") {
            auto j = nlohmann::json::parse(bytes);
            j.erase("wall_seconds");
            for (auto& c : j["checkpoints"]) c.erase("seconds");
            bytes = j.dump();
        }
        out[fs::relative(e.path(), dir).string()] = bytes;
    }
    return out;
}

ImageBuffer random_image(Rng& rng, int w, int h) {
    ImageBuffer img(w, h);
    for (double& v : img.pixels) v = rng.uniform();
    return img;
}

TrainConfig quick_train(int steps) {
    TrainConfig t = TrainConfig::desk();
    t.steps = steps;
    t.grad_accumulation = 1;
    t.snapshot_interval = 0;
    return t;
}

std::vector<std::vector<float>> weights(SplatFormer<float>& net) {
    std::vector<std::vector<float>> out;
    for (auto* p : net.parameters()) out.push_back(p->value);
    return out;
}

}  // namespace

TEST_CASE("curate packages every protocol view") {
    const auto& data = tiny_dataset();
    REQUIRE(data.size() == 2);
    for (const auto& p : data) {
        CHECK(p.views_with(ViewTag::input).size() == 32);
        CHECK(p.views_with(ViewTag::ood).size() == 9);
        CHECK(p.views_with(ViewTag::heldout).size() == 8);
        CHECK(p.fitted.size() > 0);
        CHECK(p.gt.size() == 300);
        for (const auto& v : p.views) CHECK(v.image.width == 32);
    }
    CHECK(data[0].id != data[1].id);
    CHECK_THROWS(curate({}, tiny_curate()));
}

TEST_CASE("curation is deterministic and survives a disk round trip") {
    const auto specs = make_scene_specs(6, 0, 1, 200);
    CurateConfig cfg = tiny_curate();
    cfg.fit.iterations = 100;
    const fs::path a = scratch("curate_a"), b = scratch("curate_b");
    const auto ra = curate(specs, cfg, a);
    cfg.jobs = 2;
    const auto rb = curate(specs, cfg, b);
    CHECK(tree(a) == tree(b));
    CHECK(tree(a).count(ra.pairs[0].id + "/fitted.splt") == 1);
    CHECK(tree(a).count(ra.pairs[0].id + "/images/000_input.ppm") == 1);
    CHECK(tree(a).count(ra.pairs[0].id + "/images/040_ood.raw") == 1);

    // In-memory scenes equal what the files hold.
    const ScenePair loaded = load_scene_pair(a / ra.pairs[0].id);
    CHECK(to_text(loaded.fitted) == to_text(ra.pairs[0].fitted));
    CHECK(to_text(loaded.gt) == to_text(ra.pairs[0].gt));
    REQUIRE(loaded.views.size() == ra.pairs[0].views.size());
    for (std::size_t i = 0; i < loaded.views.size(); ++i) {
        CHECK(loaded.views[i].image.pixels == ra.pairs[0].views[i].image.pixels);
        CHECK(loaded.views[i].tag == ra.pairs[0].views[i].tag);
    }

    // Matching recorded configuration: the scene is reused, not refitted.
    fs::last_write_time(a / ra.pairs[0].id / "fitted.splt", fs::file_time_type::clock::now() - std::chrono::hours(1));
    const auto stamp = fs::last_write_time(a / ra.pairs[0].id / "fitted.splt");
    curate(specs, cfg, a);
    CHECK(fs::last_write_time(a / ra.pairs[0].id / "fitted.splt") == stamp);
    cfg.fit.iterations = 101;
    curate(specs, cfg, a);
    CHECK(fs::last_write_time(a / ra.pairs[0].id / "fitted.splt") != stamp);

    CHECK(load_dataset(a).size() == 1);
    CHECK_THROWS(load_dataset(a / "missing"));
}

TEST_CASE("a diverging fit skips its scene") {
    CurateConfig cfg = tiny_curate();
    cfg.fit.iterations = 50;
    cfg.fit.lr_sh_dc = 1e300;  // colours overflow, the loss goes non-finite
    const auto r = curate(make_scene_specs(7, 0, 1, 200), cfg);
    CHECK(r.pairs.empty());
    REQUIRE(r.diagnostics.size() == 1);
    CHECK(r.diagnostics[0].find("skipped") != std::string::npos);
}

TEST_CASE("refiner_loss") {
    Rng rng(1);
    const ImageBuffer a = random_image(rng, 16, 16), b = random_image(rng, 16, 16);
    CHECK(refiner_loss(a, a, 0.5, nullptr) == doctest::Approx(0.0).epsilon(1e-12));
    const double expect = l1_loss(a, b) + 0.5 * dssim_from_ssim(ssim(a, b));
    CHECK(refiner_loss(a, b, 0.5, nullptr) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(0.1 + 0.5 * 0.2 == doctest::Approx(0.2));
    CHECK_THROWS(refiner_loss(a, ImageBuffer(16, 12), 0.5, nullptr));

    std::vector<double> grad;
    refiner_loss(a, b, 0.5, &grad);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ImageBuffer p = a, m = a;
        p.pixels[i] += 1e-6;
        m.pixels[i] -= 1e-6;
        const double numeric = (refiner_loss(p, b, 0.5, nullptr) - refiner_loss(m, b, 0.5, nullptr)) / 2e-6;
        worst = std::max(worst, std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), 1e-9}));
    }
    CHECK(worst < 1e-3);

    // A plug-in perceptual term replaces D-SSIM.
    struct MeanShift final : PerceptualLoss {
        std::string name() const override { return "mean_shift"; }
        double operator()(const ImageBuffer& r, const ImageBuffer& t, std::vector<double>* g) const override {
            double s = 0.0;
            for (std::size_t i = 0; i < r.size(); ++i) s += r.pixels[i] - t.pixels[i];
            if (g) {
                for (double& x : *g) x += 1.0 / r.size();
            }
            return s / r.size();
        }
    } shift;
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += (a.pixels[i] - b.pixels[i]) / a.size();
    CHECK(refiner_loss(a, b, 2.0, nullptr, &shift) == doctest::Approx(l1_loss(a, b) + 2.0 * mean));
}

TEST_CASE("target draws are 70/30 OOD/input") {
    Rng rng(12);
    int ood = 0;
    for (int i = 0; i < 10000; ++i) ood += draw_target_tag(rng, 0.7) == ViewTag::ood;
    CHECK(ood / 10000.0 >= 0.68);
    CHECK(ood / 10000.0 <= 0.72);
}

TEST_CASE("subsample_cloud") {
    Rng rng(2);
    SplatCloud c;
    for (int i = 0; i < 100; ++i) {
        GaussianSplat s;
        s.position.x() = i;
        c.splats.push_back(s);
    }
    CHECK(subsample_cloud(c, 100, rng).size() == 100);
    CHECK(subsample_cloud(c, 500, rng).size() == 100);
    const SplatCloud s = subsample_cloud(c, 30, rng);
    REQUIRE(s.size() == 30);
    std::set<double> seen;
    for (std::size_t i = 0; i < s.size(); ++i) {
        seen.insert(s.splats[i].position.x());
        if (i) CHECK(s.splats[i].position.x() > s.splats[i - 1].position.x());
    }
    CHECK(seen.size() == 30);
    // Uniform: each splat kept about 30% of the time.
    std::vector<int> kept(100, 0);
    for (int t = 0; t < 2000; ++t) {
        for (const auto& k : subsample_cloud(c, 30, rng).splats) ++kept[static_cast<int>(k.position.x())];
    }
    for (int k : kept) CHECK(std::abs(k / 2000.0 - 0.3) < 0.06);
    CHECK_THROWS(subsample_cloud(c, 0, rng));
}

TEST_CASE("refine") {
    const auto& data = tiny_dataset();
    SplatFormer<float> net(NetConfig::desk(), 0);
    const SplatCloud& fitted = data[0].fitted;
    const SplatCloud refined = refine(fitted, net);
    CHECK(refined.size() == fitted.size());
    double worst = 0.0;
    for (const auto& v : data[0].views) {
        const ImageBuffer a = render_tiled(v.camera, fitted, Vec3::Ones());
        const ImageBuffer b = render_tiled(v.camera, refined, Vec3::Ones());
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.pixels[i] - b.pixels[i]));
    }
    CHECK(worst < 1e-5);
    CHECK_THROWS(refine(SplatCloud{}, net));

    // No subsampling at inference, even above the training cap.
    SplatCloud big = fitted;
    while (big.size() < 9000) big.splats.insert(big.splats.end(), fitted.splats.begin(), fitted.splats.end());
    CHECK(refine(big, net).size() == big.size());
}

TEST_CASE("training step 0 sees the unrefined cloud") {
    // One OOD view and one input view; every draw hits the OOD view.
    ScenePair pair = tiny_dataset()[0];
    std::vector<SceneView> views;
    views.push_back(*pair.views_with(ViewTag::input)[0]);
    views.push_back(*pair.views_with(ViewTag::ood)[4]);
    pair.views = views;
    TrainConfig cfg = quick_train(1);
    cfg.ood_fraction = 1.0;
    SplatFormer<float> net(NetConfig::desk(), 0);
    const TrainResult r = train(net, {pair}, cfg);
    REQUIRE(r.log.size() == 1);
    const double unrefined = refiner_loss(render_tiled(views[1].camera, pair.fitted, Vec3::Ones()), views[1].image, 0.5, nullptr);
    CHECK(r.log[0].loss == doctest::Approx(unrefined).epsilon(1e-9));
}

TEST_CASE("overfitting one scene halves its OOD loss") {
    const ScenePair& pair = tiny_dataset()[0];
    SplatFormer<float> net(NetConfig::desk(), 0);
    const double before = views_loss(refine(pair.fitted, net), pair, ViewTag::ood, 0.5);
    train(net, {pair}, quick_train(500));
    const double after = views_loss(refine(pair.fitted, net), pair, ViewTag::ood, 0.5);
    INFO("ood loss " << before << " -> " << after);
    CHECK(after <= 0.5 * before);
}

TEST_CASE("training log, checkpoints, determinism") {
    const auto& data = tiny_dataset();
    const fs::path dir = scratch("train");
    TrainConfig cfg = quick_train(6);
    cfg.checkpoint_interval = 4;
    cfg.snapshot_interval = 3;
    TrainOptions opts;
    opts.out_dir = dir;
    opts.snapshot_scenes = {&data[1]};
    SplatFormer<float> a(NetConfig::desk(), 0), b(NetConfig::desk(), 0);
    train(a, data, cfg, opts);
    train(b, data, cfg);
    CHECK(weights(a) == weights(b));

    std::ifstream log(dir / "log.jsonl");
    std::string line;
    int n = 0;
    while (std::getline(log, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("step").get<int>() == n);
        CHECK(std::isfinite(j.at("loss").get<double>()));
        CHECK(j.at("ood_psnr_snapshot").is_null() == ((n + 1) % 3 != 0));
        ++n;
    }
    CHECK(n == 6);
    CHECK(fs::exists(dir / "step_4.spck"));
    CHECK(fs::exists(dir / "step_6.spck"));
    NetConfig other = NetConfig::desk();
    other.seed = 1;
    SplatFormer<float> c(other, 0);
    std::vector<ad::Parameter<float>*> cp = c.parameters();
    load_checkpoint(dir / "last.spck", cp);
    CHECK(weights(c) == weights(a));

    CHECK_THROWS(train(a, {}, cfg));
}

TEST_CASE("a non-finite loss aborts with the last good weights") {
    std::vector<ScenePair> data{tiny_dataset()[0]};
    for (auto& v : data[0].views) v.image.pixels[0] = std::nan("");
    const fs::path dir = scratch("abort");
    SplatFormer<float> net(NetConfig::desk(), 0);
    const auto before = weights(net);
    TrainOptions opts;
    opts.out_dir = dir;
    CHECK_THROWS_AS(train(net, data, quick_train(3), opts), NonFiniteError);
    CHECK(weights(net) == before);
    CHECK(fs::exists(dir / "last.spck"));
}

TEST_CASE("direct prediction variant") {
    const auto& data = tiny_dataset();
    SplatFormer<float> direct(direct_variant(NetConfig::desk()), 0);
    const ScenePair& pair = data[0];
    const SplatCloud out = refine(pair.fitted, direct);
    CHECK(out.size() == pair.fitted.size());
    const SceneView& v = *pair.views_with(ViewTag::input)[0];
    CHECK(psnr(render_tiled(v.camera, out, Vec3::Ones()), render_tiled(v.camera, pair.fitted, Vec3::Ones())) < 40.0);

    SplatFormer<float> residual(NetConfig::desk(), 0);
    CHECK_THROWS(ablate_direct(residual, data, quick_train(1)));
    const TrainResult rd = ablate_direct(direct, data, quick_train(5));
    const TrainResult rr = train(residual, data, quick_train(5));
    for (const auto& e : rd.log) CHECK(std::isfinite(e.loss));
    for (const auto& e : rr.log) CHECK(std::isfinite(e.loss));
}
