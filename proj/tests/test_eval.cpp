#include <doctest.h>

#include "splatlab/config.hpp"
#include "splatlab/eval.hpp"
#include "splatlab/metrics.hpp"
#include "splatlab/rng.hpp"
#include "splatlab/scene.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace splatlab;
namespace fs = std::filesystem;

namespace {

ImageBuffer random_image(Rng& rng, int w, int h) {
    ImageBuffer img(w, h);
    for (double& v : img.pixels) v = rng.uniform();
    return img;
}

// Textbook SSIM: for every window position, weighted moments straight from
// the 2D Gaussian weights, no separable filtering.
double brute_force_ssim(const ImageBuffer& a, const ImageBuffer& b) {
    const int win = 11;
    const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    std::vector<double> w(win * win);
    double total = 0.0;
    for (int y = 0; y < win; ++y) {
        for (int x = 0; x < win; ++x) {
            const double dx = x - 5, dy = y - 5;
            w[y * win + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            total += w[y * win + x];
        }
    }
    for (double& v : w) v /= total;
    double sum = 0.0;
    int count = 0;
    for (int c = 0; c < 3; ++c) {
        for (int oy = 0; oy + win <= a.height; ++oy) {
            for (int ox = 0; ox + win <= a.width; ++ox) {
                double ma = 0, mb = 0;
                for (int y = 0; y < win; ++y) {
                    for (int x = 0; x < win; ++x) {
                        ma += w[y * win + x] * a.at(ox + x, oy + y, c);
                        mb += w[y * win + x] * b.at(ox + x, oy + y, c);
                    }
                }
                double va = 0, vb = 0, cov = 0;
                for (int y = 0; y < win; ++y) {
                    for (int x = 0; x < win; ++x) {
                        const double da = a.at(ox + x, oy + y, c) - ma, db = b.at(ox + x, oy + y, c) - mb;
                        va += w[y * win + x] * da * da;
                        vb += w[y * win + x] * db * db;
                        cov += w[y * win + x] * da * db;
                    }
                }
                sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        }
    }
    return sum / count;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("splatlab_test_eval_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("psnr") {
    ImageBuffer zero(8, 8, 0.0), half(8, 8, 0.5);
    CHECK(psnr(zero, zero) == kPsnrInfinite);
    CHECK(psnr(zero, half) == doctest::Approx(10.0 * std::log10(4.0)));
    CHECK(psnr(zero, half) == doctest::Approx(6.0206).epsilon(1e-4));
    ImageBuffer tenth(8, 8, 0.1);
    CHECK(psnr(zero, tenth) == doctest::Approx(20.0));
    Rng rng(3);
    const ImageBuffer a = random_image(rng, 8, 8), b = random_image(rng, 8, 8);
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK_THROWS(psnr(a, ImageBuffer(8, 7)));
}

TEST_CASE("ssim") {
    Rng rng(4);
    const ImageBuffer x = random_image(rng, 16, 16);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-9));

    ImageBuffer bin(16, 16), inv(16, 16);
    for (std::size_t i = 0; i < bin.size(); ++i) {
        bin.pixels[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        inv.pixels[i] = 1.0 - bin.pixels[i];
    }
    CHECK(ssim(bin, inv) < 0.0);

    for (int trial = 0; trial < 5; ++trial) {
        const ImageBuffer a = random_image(rng, 16, 16), b = random_image(rng, 16, 16);
        CHECK(std::abs(ssim(a, b) - brute_force_ssim(a, b)) < 1e-6);
        CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-9);
        CHECK(ssim(a, b) <= 1.0);
    }
    CHECK_THROWS(ssim(ImageBuffer(10, 16), ImageBuffer(10, 16)));
}

TEST_CASE("metric rows csv round trip is exact") {
    std::vector<MetricRow> rows{{"s1", "3dgs", ViewTag::ood, 3, 27.123456789012345, 0.91234567890123},
                                {"s1", "3dgs", ViewTag::input, 0, kPsnrInfinite, 1.0},
                                {"s2", "splatformer", ViewTag::heldout, 7, 1.0 / 3.0, -0.25}};
    const fs::path dir = scratch("rows");
    save_metric_rows(dir / "m.csv", rows);
    const auto back = load_metric_rows(dir / "m.csv");
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].scene == rows[i].scene);
        CHECK(back[i].method == rows[i].method);
        CHECK(back[i].tag == rows[i].tag);
        CHECK(back[i].view == rows[i].view);
        CHECK(back[i].psnr == rows[i].psnr);
        CHECK(back[i].ssim == rows[i].ssim);
    }
}

TEST_CASE("report") {
    const fs::path dir = scratch("report");
    SUBCASE("one row gives one line with its values") {
        write_report(dir, {{"s1", "3dgs", ViewTag::ood, 0, 25.5, 0.9}});
        const std::string csv = slurp(dir / "report.csv");
        CHECK(csv == "method,ood_psnr,ood_ssim,input_psnr,input_ssim,heldout_psnr,heldout_ssim,lpips,scenes\n"
                     "3dgs,25.500000,0.900000,n/a,n/a,n/a,n/a,n/a,1\n");
        const std::string txt = slurp(dir / "report.txt");
        CHECK(txt.find("25.5000") != std::string::npos);
        CHECK(std::count(txt.begin(), txt.end(), '\n') == 2);
    }
    SUBCASE("two methods over two scenes") {
        std::vector<MetricRow> rows{{"a", "splatformer", ViewTag::ood, 0, 30.0, 0.95}, {"a", "3dgs", ViewTag::ood, 0, 20.0, 0.8},
                                    {"b", "splatformer", ViewTag::ood, 0, 31.0, 0.97}, {"b", "3dgs", ViewTag::ood, 0, 23.0, 0.7},
                                    {"a", "3dgs", ViewTag::input, 1, 40.0, 0.99}};
        const auto lines = summarize(rows);
        REQUIRE(lines.size() == 2);
        CHECK(lines[0].method == "3dgs");
        CHECK(*lines[0].ood_psnr == (20.0 + 23.0) / 2.0);
        CHECK(*lines[0].ood_ssim == (0.8 + 0.7) / 2.0);
        CHECK(*lines[0].input_psnr == 40.0);
        CHECK(lines[0].scenes == 2);
        CHECK(*lines[1].ood_psnr == (30.0 + 31.0) / 2.0);
        CHECK_FALSE(lines[1].input_psnr.has_value());

        write_report(dir, rows);
        const std::string csv = slurp(dir / "report.csv"), txt = slurp(dir / "report.txt");
        write_report(dir, rows);
        CHECK(slurp(dir / "report.csv") == csv);
        CHECK(slurp(dir / "report.txt") == txt);
        // Aligned: every line of the text table has the same column starts.
        std::istringstream t(txt);
        std::string header, l1, l2;
        std::getline(t, header);
        std::getline(t, l1);
        std::getline(t, l2);
        CHECK(header.size() == l1.size());
        CHECK(l1.size() == l2.size());
        CHECK(header.find("lpips") != std::string::npos);
        CHECK(l1.find("n/a") != std::string::npos);
    }
}

TEST_CASE("report means equal hand-computed means exactly") {
    Rng rng(9);
    std::vector<MetricRow> rows;
    double sum = 0.0;
    for (int i = 0; i < 37; ++i) {
        rows.push_back({"s" + std::to_string(i % 5), "m", ViewTag::input, i, rng.uniform(10, 40), rng.uniform()});
        sum += rows.back().psnr;
    }
    CHECK(*summarize(rows)[0].input_psnr == sum / 37.0);
}

TEST_CASE("elevation sweep") {
    // A one-blob scene fitted from elevation-0 views.
    SceneSpec spec = random_scene_spec(11, 300);
    const SplatCloud gt = generate_scene(spec);
    TrajectoryConfig traj;
    traj.phi_max = 0.0;
    traj.intrinsics = Intrinsics{32, 32, 32.0};
    std::vector<View> views;
    for (const Camera& c : make_input_trajectory(traj)) views.push_back({c, render_tiled(c, gt, Vec3::Ones())});
    FitConfig fit;
    fit.iterations = 600;
    fit.init_count = 300;
    const SplatCloud fitted = fit_scene(views, fit).cloud;

    const auto curve = elevation_sweep(gt, fitted, nullptr, {0.0}, traj);
    REQUIRE(curve.size() == 1);
    CHECK_FALSE(curve[0].psnr_refined.has_value());
    const double input_psnr = mean_psnr(fitted, views);
    INFO("sweep " << curve[0].psnr_3dgs << " input " << input_psnr);
    CHECK(std::abs(curve[0].psnr_3dgs - input_psnr) < 1.5);

    SplatFormer<float> net(NetConfig::desk(), 0);
    const auto both = elevation_sweep(gt, fitted, &net, {0.0, 45.0, 90.0}, traj);
    REQUIRE(both.size() == 3);
    for (const auto& p : both) CHECK(*p.psnr_refined == doctest::Approx(p.psnr_3dgs).epsilon(1e-6));

    CHECK(sweep_cameras(50.0, 3, traj).size() == 3);
}

TEST_CASE("non_increasing_beyond") {
    std::vector<SweepPoint> c{{0, 30, {}}, {10, 31, {}}, {20, 29, {}}, {30, 29, {}}, {40, 25, {}}};
    CHECK(non_increasing_beyond(c, 10));
    CHECK_FALSE(non_increasing_beyond(c, 0));
    c[3].psnr_3dgs = 29.5;
    CHECK_FALSE(non_increasing_beyond(c, 10));
}

TEST_CASE("run config") {
    const std::string text = R"(
[paper]
seed = 5
[paper.fit]
iterations = 10000
lambda_dssim = 0.2
[paper.train]
lr = 3e-5
splat_cap = 100000
[desk.fit]
iterations = 4000
[desk.train]
lr = 1e-3
splat_cap = 8000
[desk.trajectory.intrinsics]
width = 64
)";
    const RunConfig paper = parse_run_config(text, "paper");
    CHECK(paper.preset == "paper");
    CHECK(paper.seed == 5);
    CHECK(paper.fit.iterations == 10000);
    CHECK(paper.train.lr == 3e-5);
    CHECK(paper.train.splat_cap == 100000);
    CHECK(paper.net.feature_dim == 96);
    CHECK(paper.trajectory.intrinsics.width == 256);

    const RunConfig desk = parse_run_config(text, "desk");
    CHECK(desk.fit.iterations == 4000);
    CHECK(desk.train.lr == 1e-3);
    CHECK(desk.train.splat_cap == 8000);
    CHECK(desk.net.feature_dim == 16);
    CHECK(desk.seed == 5);  // inherited from paper.*

    CHECK_THROWS_AS(parse_run_config("[paper.fit]\niterationz = 3\n", "desk"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[paper.fit]\niterations = 3.5\n", "desk"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[other]\nx = 1\n", "desk"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[paper.fit\n", "desk"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("", "huge"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("[desk.train]\nood_fraction = 1.5\n", "desk"), ConfigError);

    // JSON view round trip.
    RunConfig a = RunConfig::desk();
    a.set_seed(77);
    a.sweep.elevations = {10, 20};
    a.fit.background = Vec3(0.1, 0.2, 0.3);
    RunConfig b = RunConfig::paper();
    apply_json(b, to_json(a));
    CHECK(to_json(b) != to_json(a));  // preset name is not part of the body
    b.preset = a.preset;
    CHECK(to_json(b) == to_json(a));
    CHECK(b.train.seed == 77);
    CHECK(b.net.seed == 77);
}

TEST_CASE("shipped configuration file parses for both presets") {
    const fs::path file = fs::path(SPLATLAB_SOURCE_DIR) / "configs" / "default.toml";
    const RunConfig desk = load_run_config(file, "desk");
    const RunConfig paper = load_run_config(file, "paper");
    CHECK(to_json(desk.fit) == to_json(RunConfig::desk().fit));
    CHECK(to_json(desk.net) == to_json(RunConfig::desk().net));
    CHECK(to_json(desk.train) == to_json(RunConfig::desk().train));
    CHECK(to_json(desk.trajectory) == to_json(RunConfig::desk().trajectory));
    CHECK(to_json(paper.fit) == to_json(RunConfig::paper().fit));
    CHECK(to_json(paper.net) == to_json(RunConfig::paper().net));
    CHECK(to_json(paper.train) == to_json(RunConfig::paper().train));
    CHECK(to_json(paper.trajectory) == to_json(RunConfig::paper().trajectory));
}
