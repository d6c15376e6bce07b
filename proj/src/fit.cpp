#include "splatlab/fit.hpp"

#include "splatlab/metrics.hpp"
#include "splatlab/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace splatlab {

void FitConfig::validate() const {
    if (iterations < 0) throw std::invalid_argument("fit config: iterations must be >= 0");
    if (!(lambda_dssim >= 0.0 && lambda_dssim <= 1.0)) throw std::invalid_argument("fit config: lambda_dssim in [0, 1]");
    if (!(grad_threshold > 0.0 && scale_split_threshold > 0.0 && opacity_prune_threshold > 0.0)) {
        throw std::invalid_argument("fit config: thresholds must be positive");
    }
    if (densify_interval < 1 || max_splats < 1 || init_count < 1 || report_interval < 1) {
        throw std::invalid_argument("fit config: counts must be positive");
    }
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw std::invalid_argument("fit config: unsupported sh degree");
}

FitConfig FitConfig::desk() { return {}; }

FitConfig FitConfig::paper() {
    FitConfig c;
    c.iterations = 30000;
    c.warmup_steps = 500;
    c.densify_interval = 500;
    c.densify_stop_step = 15000;
    c.max_splats = 1000000;
    c.init_count = 50000;
    return c;
}

void save_fit_report(const std::filesystem::path& path, const FitReport& report) {
    nlohmann::json j;
    j["wall_seconds"] = report.wall_seconds;
    j["final_count"] = report.final_count;
    j["final_input_psnr"] = report.final_input_psnr;
    for (const auto& c : report.checkpoints) {
        j["checkpoints"].push_back({{"iteration", c.iteration},
                                    {"loss", c.loss},
                                    {"input_psnr", c.input_psnr},
                                    {"splat_count", c.splat_count},
                                    {"seconds", c.seconds}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
}

// ---- initialization --------------------------------------------------------

namespace {

// Nearest-neighbour distances by an x-sorted sweep.
std::vector<double> nearest_neighbour_distances(const std::vector<Vec3>& pts) {
    const std::size_t n = pts.size();
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pts[a].x() < pts[b].x(); });
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& p = pts[order[i]];
        double b2 = std::numeric_limits<double>::infinity();
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = pts[order[j]].x() - p.x();
            if (dx * dx >= b2) break;
            b2 = std::min(b2, (pts[order[j]] - p).squaredNorm());
        }
        for (std::size_t j = i; j-- > 0;) {
            const double dx = p.x() - pts[order[j]].x();
            if (dx * dx >= b2) break;
            b2 = std::min(b2, (pts[order[j]] - p).squaredNorm());
        }
        best[order[i]] = std::sqrt(b2);
    }
    return best;
}

}  // namespace

SplatCloud init_cloud(const Box& box, int n, std::uint64_t seed, int sh_degree) {
    if (n <= 0) throw std::invalid_argument("init_cloud: n must be positive");
    if (!((box.hi - box.lo).array() > 0.0).all()) throw std::invalid_argument("init_cloud: degenerate bounding box");
    Rng rng(seed);
    std::vector<Vec3> pts(n);
    for (auto& p : pts) {
        for (int k = 0; k < 3; ++k) p[k] = rng.uniform(box.lo[k], box.hi[k]);
    }
    double scale = 0.1 * (box.hi - box.lo).minCoeff();
    if (n > 1) {
        const auto d = nearest_neighbour_distances(pts);
        scale = std::accumulate(d.begin(), d.end(), 0.0) / n;
    }
    SplatCloud cloud;
    cloud.sh_degree = sh_degree;
    for (const auto& p : pts) {
        GaussianSplat s;
        s.position = p;
        s.log_scale = Vec3::Constant(std::log(std::max(scale, 1e-7)));
        s.opacity_logit = logit(0.1);
        cloud.splats.push_back(s);
    }
    return cloud;
}

double fit_loss(const ImageBuffer& rendered, const ImageBuffer& target, double lambda, std::vector<double>* grad) {
    if (!rendered.same_shape(target)) throw std::invalid_argument("fit_loss: shape mismatch");
    if (grad == nullptr) {
        return (1.0 - lambda) * l1_loss(rendered, target) + lambda * dssim_from_ssim(ssim(rendered, target));
    }
    std::vector<double> g_l1, g_ssim;
    const double l1 = l1_loss(rendered, target, &g_l1);
    const double s = ssim_with_grad(rendered, target, g_ssim);
    grad->resize(g_l1.size());
    for (std::size_t i = 0; i < g_l1.size(); ++i) (*grad)[i] = (1.0 - lambda) * g_l1[i] - 0.5 * lambda * g_ssim[i];
    return (1.0 - lambda) * l1 + lambda * dssim_from_ssim(s);
}

// ---- densification ---------------------------------------------------------

void DensifyStats::reset(std::size_t n) {
    grad_accum.assign(n, 0.0);
    visible_count.assign(n, 0);
    position_grad.assign(n, Vec3::Zero());
}

void DensifyStats::add(const RenderGrads& g) {
    for (std::size_t k = 0; k < g.visible.size(); ++k) {
        if (!g.visible[k]) continue;
        grad_accum[k] += g.mean2d_ndc[k];
        ++visible_count[k];
        position_grad[k] += g.splats[k].position;
    }
}

DensifyResult densify_and_prune(const SplatCloud& cloud, const DensifyStats& stats, const FitConfig& cfg, Rng& rng) {
    DensifyResult r;
    r.cloud.sh_degree = cloud.sh_degree;
    std::vector<GaussianSplat> fresh;
    std::vector<char> keep(cloud.size(), 1);
    for (std::size_t k = 0; k < cloud.size(); ++k) {
        if (stats.visible_count[k] == 0) continue;
        const double avg = stats.grad_accum[k] / stats.visible_count[k];
        if (avg < cfg.grad_threshold) continue;
        const GaussianSplat& s = cloud.splats[k];
        const Vec3 sd = s.log_scale.array().exp();
        if (sd.maxCoeff() <= cfg.scale_split_threshold) {
            // Clone: the copy steps against the accumulated position gradient.
            GaussianSplat c = s;
            const double gn = stats.position_grad[k].norm();
            if (gn > 0.0) c.position -= 0.5 * sd.maxCoeff() * stats.position_grad[k] / gn;
            fresh.push_back(c);
            ++r.cloned;
        } else {
            const Mat3 rot = quat_to_rotation(s.rotation);
            for (int child = 0; child < 2; ++child) {
                GaussianSplat c = s;
                const Vec3 local(rng.normal() * sd.x(), rng.normal() * sd.y(), rng.normal() * sd.z());
                c.position = s.position + rot * local;
                c.log_scale = (sd / 1.6).array().log();
                fresh.push_back(c);
            }
            keep[k] = 0;
            ++r.split;
        }
    }
    for (std::size_t k = 0; k < cloud.size(); ++k) {
        if (!keep[k]) continue;
        if (sigmoid(cloud.splats[k].opacity_logit) < cfg.opacity_prune_threshold) {
            ++r.pruned;
            continue;
        }
        r.cloud.splats.push_back(cloud.splats[k]);
        r.origin.push_back(static_cast<int>(k));
    }
    for (const auto& s : fresh) {
        if (sigmoid(s.opacity_logit) < cfg.opacity_prune_threshold) continue;
        r.cloud.splats.push_back(s);
        r.origin.push_back(-1);
    }
    if (static_cast<int>(r.cloud.size()) > cfg.max_splats) {
        // Drop the lowest-opacity splats; ties keep the earlier index.
        std::vector<std::size_t> idx(r.cloud.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return r.cloud.splats[a].opacity_logit > r.cloud.splats[b].opacity_logit;
        });
        idx.resize(cfg.max_splats);
        std::sort(idx.begin(), idx.end());
        SplatCloud capped;
        capped.sh_degree = r.cloud.sh_degree;
        std::vector<int> origin;
        for (std::size_t i : idx) {
            capped.splats.push_back(r.cloud.splats[i]);
            origin.push_back(r.origin[i]);
        }
        r.pruned += static_cast<int>(r.cloud.size()) - cfg.max_splats;
        r.cloud = std::move(capped);
        r.origin = std::move(origin);
    }
    return r;
}

// ---- optimizer ---------------------------------------------------------------

void SplatAdam::resize(std::size_t n) {
    m.assign(n, GaussianSplat::zeros());
    v.assign(n, GaussianSplat::zeros());
}

void SplatAdam::remap(const std::vector<int>& origin) {
    std::vector<GaussianSplat> m2, v2;
    for (int o : origin) {
        m2.push_back(o >= 0 ? m[o] : GaussianSplat::zeros());
        v2.push_back(o >= 0 ? v[o] : GaussianSplat::zeros());
    }
    m = std::move(m2);
    v = std::move(v2);
}

namespace {

struct AdamCoeffs {
    double b1, b2, c1, c2, eps;
};

template <class V>
void adam_field(V& x, const V& g, V& m, V& v, double lr, const AdamCoeffs& a) {
    for (int i = 0; i < x.size(); ++i) {
        m[i] = a.b1 * m[i] + (1.0 - a.b1) * g[i];
        v[i] = a.b2 * v[i] + (1.0 - a.b2) * g[i] * g[i];
        x[i] -= lr * (m[i] / a.c1) / (std::sqrt(v[i] / a.c2) + a.eps);
    }
}

}  // namespace

void SplatAdam::update(SplatCloud& cloud, const std::vector<GaussianSplat>& grads, const FitConfig& cfg,
                       double position_lr) {
    if (m.size() != cloud.size() || grads.size() != cloud.size()) throw std::invalid_argument("SplatAdam: size mismatch");
    ++step;
    const AdamConfig base;
    const AdamCoeffs a{base.beta1, base.beta2, 1.0 - std::pow(base.beta1, double(step)),
                       1.0 - std::pow(base.beta2, double(step)), base.eps};
    const int d = cloud.coeff_count();
    for (std::size_t k = 0; k < cloud.size(); ++k) {
        GaussianSplat& s = cloud.splats[k];
        const GaussianSplat& g = grads[k];
        adam_field(s.position, g.position, m[k].position, v[k].position, position_lr, a);
        adam_field(s.log_scale, g.log_scale, m[k].log_scale, v[k].log_scale, cfg.lr_scale, a);
        adam_field(s.rotation, g.rotation, m[k].rotation, v[k].rotation, cfg.lr_rotation, a);
        Eigen::Matrix<double, 1, 1> o(s.opacity_logit), go(g.opacity_logit), mo(m[k].opacity_logit),
            vo(v[k].opacity_logit);
        adam_field(o, go, mo, vo, cfg.lr_opacity, a);
        s.opacity_logit = o[0];
        m[k].opacity_logit = mo[0];
        v[k].opacity_logit = vo[0];
        for (int i = 0; i < d; ++i) {
            adam_field(s.sh[i], g.sh[i], m[k].sh[i], v[k].sh[i], i == 0 ? cfg.lr_sh_dc : cfg.lr_sh_rest, a);
        }
    }
}

double position_lr_at(const FitConfig& cfg, int iteration) {
    const double t = cfg.iterations > 0 ? std::clamp(double(iteration) / cfg.iterations, 0.0, 1.0) : 0.0;
    const double lr = std::exp(std::log(cfg.lr_position_init) * (1.0 - t) + std::log(cfg.lr_position_final) * t);
    return lr * cfg.spatial_lr_scale;
}

// ---- fitting loop ------------------------------------------------------------

double mean_psnr(const SplatCloud& cloud, const std::vector<View>& views, const Vec3& background) {
    if (views.empty()) return 0.0;
    double total = 0.0;
    for (const auto& v : views) total += std::min(psnr(render_tiled(v.camera, cloud, background), v.image), 100.0);
    return total / static_cast<double>(views.size());
}

FitResult fit_scene(const std::vector<View>& views, const FitConfig& cfg) {
    return fit_scene(views, cfg, init_cloud(cfg.init_box, cfg.init_count, Rng::mix(cfg.seed, 1), cfg.sh_degree));
}

FitResult fit_scene(const std::vector<View>& views, const FitConfig& cfg, SplatCloud start,
                    const FitObserver& observer) {
    cfg.validate();
    if (views.empty()) throw std::invalid_argument("fit_scene: need at least one view");
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    FitResult result;
    result.cloud = std::move(start);
    SplatCloud& cloud = result.cloud;
    Rng rng(Rng::mix(cfg.seed, 2));
    SplatAdam adam;
    adam.resize(cloud.size());
    DensifyStats stats;
    stats.reset(cloud.size());
    std::vector<double> grad;
    double loss_sum = 0.0;
    int loss_n = 0;

    for (int it = 1; it <= cfg.iterations; ++it) {
        const View& view = views[rng.below(views.size())];
        Vec3 bg = cfg.background;
        const ImageBuffer* target = &view.image;
        ImageBuffer recomposited;
        if (cfg.random_background) {
            if (view.image.alpha.size() != static_cast<std::size_t>(view.image.width) * view.image.height) {
                throw std::invalid_argument("fit_scene: random_background needs target alpha");
            }
            bg = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
            recomposited = view.image;
            for (std::size_t p = 0; p < view.image.alpha.size(); ++p) {
                for (int c = 0; c < 3; ++c) {
                    recomposited.pixels[3 * p + c] += (bg[c] - cfg.background[c]) * (1.0 - view.image.alpha[p]);
                }
            }
            target = &recomposited;
        }
        const RenderResult fwd = render_forward(view.camera, cloud, bg);
        const double loss = fit_loss(fwd.image, *target, cfg.lambda_dssim, &grad);
        if (!std::isfinite(loss)) throw NonFiniteError("fit_scene: non-finite loss at iteration " + std::to_string(it));
        loss_sum += loss;
        ++loss_n;
        const RenderGrads g = render_backward(fwd, view.camera, cloud, bg, grad);
        if (it <= cfg.densify_stop_step) stats.add(g);
        adam.update(cloud, g.splats, cfg, position_lr_at(cfg, it));

        if (it > cfg.warmup_steps && it <= cfg.densify_stop_step && it % cfg.densify_interval == 0) {
            DensifyResult d = densify_and_prune(cloud, stats, cfg, rng);
            adam.remap(d.origin);
            cloud = std::move(d.cloud);
            stats.reset(cloud.size());
        }
        if (observer) observer(it, cloud);
        if (it % cfg.report_interval == 0 || it == cfg.iterations) {
            result.report.checkpoints.push_back(
                {it, loss_sum / loss_n, mean_psnr(cloud, views, cfg.background), static_cast<int>(cloud.size()), elapsed()});
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    result.report.wall_seconds = elapsed();
    result.report.final_count = static_cast<int>(cloud.size());
    result.report.final_input_psnr = result.report.checkpoints.empty() ? mean_psnr(cloud, views, cfg.background)
                                                                      : result.report.checkpoints.back().input_psnr;
    return result;
}

}  // namespace splatlab
