#include "splatlab/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace splatlab {

namespace {

struct Geometry {
    Vec4 unit_q;
    double q_norm;
    Mat3 rot;
    Vec3 scale;
    Mat3 n;       // rot * diag(scale)
    Mat3 cov3;
    Vec3 p_cam;
    Eigen::Matrix<double, 2, 3> jac;
    Mat3 m;       // W cov3 W^T
};

Geometry splat_geometry(const Camera& cam, const GaussianSplat& s) {
    Geometry g;
    g.q_norm = s.rotation.norm();
    g.unit_q = normalize_quat(s.rotation);
    g.rot = quat_to_rotation(g.unit_q);
    g.scale = s.log_scale.array().exp().matrix();
    g.n = g.rot * g.scale.asDiagonal();
    g.cov3 = g.n * g.n.transpose();
    g.p_cam = cam.to_camera(s.position);
    const double z = g.p_cam.z();
    const double iz = 1.0 / z;
    const double iz2 = iz * iz;
    g.jac << cam.fx * iz, 0.0, -cam.fx * g.p_cam.x() * iz2, 0.0, cam.fy * iz, -cam.fy * g.p_cam.y() * iz2;
    g.m = cam.rotation * g.cov3 * cam.rotation.transpose();
    return g;
}

/// Compact record read in the per-pixel loop.
struct PixelSplat {
    double mx, my;
    double a, b, c;
    double opacity;
    double r, g, bl;
};

PixelSplat pack(const ProjectedSplat& p) {
    return {p.center2d.x(), p.center2d.y(), p.conic.x(), p.conic.y(), p.conic.z(), p.opacity,
            p.color.x(), p.color.y(), p.color.z()};
}

// Squared Mahalanobis distance of pixel center (px, py) from the splat.
inline double mahalanobis2(const PixelSplat& s, double px, double py) {
    const double dx = px - s.mx;
    const double dy = py - s.my;
    return s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy;
}

std::vector<int> depth_order(const std::vector<ProjectedSplat>& proj, const std::vector<int>& cloud_index) {
    std::vector<int> order(proj.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int l, int r) {
        if (proj[l].depth != proj[r].depth) return proj[l].depth < proj[r].depth;
        return cloud_index[l] < cloud_index[r];
    });
    return order;
}

struct Visible {
    std::vector<int> cloud_index;
    std::vector<ProjectedSplat> projected;
};

Visible project_all(const Camera& cam, const SplatCloud& cloud, const RenderOptions& opts) {
    Visible v;
    for (std::size_t k = 0; k < cloud.size(); ++k) {
        if (auto p = project_splat(cam, cloud.splats[k], cloud.sh_degree, opts)) {
            v.cloud_index.push_back(static_cast<int>(k));
            v.projected.push_back(*p);
        }
    }
    return v;
}

// Composites the listed splats at one pixel. Returns entries consumed.
int composite_pixel(const std::vector<PixelSplat>& packed, const std::vector<int>& list, double px, double py,
                    double cut2, double t_floor, const Vec3& bg, double* out_rgb, double* out_alpha) {
    double t = 1.0;
    double cr = 0.0, cg = 0.0, cb = 0.0;
    int n = 0;
    const int count = static_cast<int>(list.size());
    while (n < count) {
        const PixelSplat& s = packed[list[n]];
        ++n;
        const double m2 = mahalanobis2(s, px, py);
        if (m2 > cut2) continue;
        const double alpha = s.opacity * std::exp(-0.5 * m2);
        const double w = t * alpha;
        cr += w * s.r;
        cg += w * s.g;
        cb += w * s.bl;
        t *= (1.0 - alpha);
        if (t < t_floor) break;
    }
    out_rgb[0] = cr + t * bg.x();
    out_rgb[1] = cg + t * bg.y();
    out_rgb[2] = cb + t * bg.z();
    *out_alpha = 1.0 - t;
    return n;
}

}  // namespace

std::optional<ProjectedSplat> project_splat(const Camera& cam, const GaussianSplat& splat, int sh_degree,
                                            const RenderOptions& opts) {
    const Vec3 p_cam = cam.to_camera(splat.position);
    if (!(p_cam.z() > opts.near)) {
        return std::nullopt;
    }
    const Geometry g = splat_geometry(cam, splat);
    ProjectedSplat out;
    out.depth = p_cam.z();
    out.center2d = Vec2(cam.fx * p_cam.x() / p_cam.z() + cam.cx, cam.fy * p_cam.y() / p_cam.z() + cam.cy);
    out.cov2d = g.jac * g.m * g.jac.transpose();
    out.cov2d(0, 0) += opts.dilation;
    out.cov2d(1, 1) += opts.dilation;
    out.cov2d(0, 1) = out.cov2d(1, 0) = 0.5 * (out.cov2d(0, 1) + out.cov2d(1, 0));
    const double a = out.cov2d(0, 0), b = out.cov2d(0, 1), c = out.cov2d(1, 1);
    const double det = a * c - b * b;
    if (!(det > 0.0) || !std::isfinite(det)) {
        return std::nullopt;
    }
    out.conic = Vec3(c / det, -b / det, a / det);
    const double mid = 0.5 * (a + c);
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    out.radius = opts.cutoff_sigma * std::sqrt(lambda_max);
    const double x = out.center2d.x(), y = out.center2d.y();
    if (x + out.radius < 0.5 || x - out.radius > cam.width - 0.5 || y + out.radius < 0.5 ||
        y - out.radius > cam.height - 0.5) {
        return std::nullopt;
    }
    const Vec3 dir = (splat.position - cam.center()).normalized();
    out.raw_color = sh_to_color(std::span<const Vec3>(splat.sh.data(), sh_coeff_count(sh_degree)), dir, sh_degree);
    out.color = out.raw_color.cwiseMax(0.0);
    out.opacity = sigmoid(splat.opacity_logit);
    return out;
}

ImageBuffer render_naive(const Camera& cam, const SplatCloud& cloud, const Vec3& background,
                         const RenderOptions& opts) {
    const Visible vis = project_all(cam, cloud, opts);
    const std::vector<int> order = depth_order(vis.projected, vis.cloud_index);
    std::vector<PixelSplat> packed;
    packed.reserve(vis.projected.size());
    for (const auto& p : vis.projected) packed.push_back(pack(p));

    ImageBuffer img(cam.width, cam.height);
    img.alpha.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0);
    const double cut2 = opts.cutoff_sigma * opts.cutoff_sigma;
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            composite_pixel(packed, order, x + 0.5, y + 0.5, cut2, opts.transmittance_floor, background,
                            &img.pixels[img.index(x, y, 0)], &img.alpha[static_cast<std::size_t>(y) * cam.width + x]);
        }
    }
    return img;
}

RenderResult render_forward(const Camera& cam, const SplatCloud& cloud, const Vec3& background,
                            const RenderOptions& opts) {
    if (opts.tile_size < 1) throw std::invalid_argument("render: tile_size must be positive");
    RenderResult res;
    ForwardRecord& rec = res.record;
    Visible vis = project_all(cam, cloud, opts);
    const std::vector<int> order = depth_order(vis.projected, vis.cloud_index);
    rec.cloud_index = std::move(vis.cloud_index);
    rec.projected = std::move(vis.projected);

    const int ts = opts.tile_size;
    rec.tiles_x = (cam.width + ts - 1) / ts;
    rec.tiles_y = (cam.height + ts - 1) / ts;
    rec.tiles.assign(static_cast<std::size_t>(rec.tiles_x) * rec.tiles_y, {});
    for (int id : order) {
        const ProjectedSplat& p = rec.projected[id];
        // Slightly inflated so rounding in the cutoff test can never reach outside the bins.
        const double r = p.radius * (1.0 + 1e-9) + 1e-6;
        const int tx0 = std::max(0, static_cast<int>(std::floor((p.center2d.x() - r - 0.5) / ts)));
        const int tx1 = std::min(rec.tiles_x - 1, static_cast<int>(std::floor((p.center2d.x() + r - 0.5) / ts)));
        const int ty0 = std::max(0, static_cast<int>(std::floor((p.center2d.y() - r - 0.5) / ts)));
        const int ty1 = std::min(rec.tiles_y - 1, static_cast<int>(std::floor((p.center2d.y() + r - 0.5) / ts)));
        for (int ty = ty0; ty <= ty1; ++ty) {
            for (int tx = tx0; tx <= tx1; ++tx) {
                rec.tiles[static_cast<std::size_t>(ty) * rec.tiles_x + tx].push_back(id);
            }
        }
    }

    std::vector<PixelSplat> packed;
    packed.reserve(rec.projected.size());
    for (const auto& p : rec.projected) packed.push_back(pack(p));

    ImageBuffer& img = res.image;
    img = ImageBuffer(cam.width, cam.height);
    img.alpha.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0);
    rec.processed.assign(static_cast<std::size_t>(cam.width) * cam.height, 0);
    const double cut2 = opts.cutoff_sigma * opts.cutoff_sigma;
    for (int ty = 0; ty < rec.tiles_y; ++ty) {
        for (int tx = 0; tx < rec.tiles_x; ++tx) {
            const auto& list = rec.tiles[static_cast<std::size_t>(ty) * rec.tiles_x + tx];
            const int y_end = std::min(cam.height, (ty + 1) * ts);
            const int x_end = std::min(cam.width, (tx + 1) * ts);
            for (int y = ty * ts; y < y_end; ++y) {
                for (int x = tx * ts; x < x_end; ++x) {
                    const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
                    rec.processed[pix] = composite_pixel(packed, list, x + 0.5, y + 0.5, cut2,
                                                         opts.transmittance_floor, background,
                                                         &img.pixels[img.index(x, y, 0)], &img.alpha[pix]);
                }
            }
        }
    }
    return res;
}

ImageBuffer render_tiled(const Camera& cam, const SplatCloud& cloud, const Vec3& background,
                         const RenderOptions& opts) {
    return render_forward(cam, cloud, background, opts).image;
}

GaussianSplat project_backward(const Camera& cam, const GaussianSplat& splat, int sh_degree,
                               const ProjectedSplat& proj, const Vec2& d_center, const Vec3& d_conic,
                               const Vec3& d_color, double d_opacity, const RenderOptions& opts) {
    (void)opts;
    GaussianSplat grad = GaussianSplat::zeros();
    const Geometry g = splat_geometry(cam, splat);
    const double x = g.p_cam.x(), y = g.p_cam.y(), z = g.p_cam.z();
    const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;

    // Conic -> 2D covariance.
    Mat2 conic;
    conic << proj.conic.x(), proj.conic.y(), proj.conic.y(), proj.conic.z();
    Mat2 g_conic;
    g_conic << d_conic.x(), 0.5 * d_conic.y(), 0.5 * d_conic.y(), d_conic.z();
    const Mat2 g_cov2 = -conic * g_conic * conic;

    // cov2d = J M J^T + dilation I
    const Mat3 g_m = g.jac.transpose() * g_cov2 * g.jac;
    const Eigen::Matrix<double, 2, 3> g_jac = 2.0 * g_cov2 * g.jac * g.m;
    const Mat3 g_cov3 = cam.rotation.transpose() * g_m * cam.rotation;

    // cov3 = N N^T, N = R diag(s)
    const Mat3 g_n = 2.0 * g_cov3 * g.n;
    const Mat3 g_rot = g_n * g.scale.asDiagonal();
    for (int j = 0; j < 3; ++j) {
        const double g_s = g.rot.col(j).dot(g_n.col(j));
        grad.log_scale[j] = g_s * g.scale[j];
    }

    // Rotation matrix -> unit quaternion -> raw quaternion.
    const double w = g.unit_q[0], qx = g.unit_q[1], qy = g.unit_q[2], qz = g.unit_q[3];
    const Mat3& R = g_rot;
    Vec4 g_unit;
    g_unit[0] = 2.0 * (-qz * R(0, 1) + qy * R(0, 2) + qz * R(1, 0) - qx * R(1, 2) - qy * R(2, 0) + qx * R(2, 1));
    g_unit[1] = 2.0 * (qy * R(0, 1) + qz * R(0, 2) + qy * R(1, 0) - 2.0 * qx * R(1, 1) - w * R(1, 2) +
                       qz * R(2, 0) + w * R(2, 1) - 2.0 * qx * R(2, 2));
    g_unit[2] = 2.0 * (-2.0 * qy * R(0, 0) + qx * R(0, 1) + w * R(0, 2) + qx * R(1, 0) + qz * R(1, 2) -
                       w * R(2, 0) + qz * R(2, 1) - 2.0 * qy * R(2, 2));
    g_unit[3] = 2.0 * (-2.0 * qz * R(0, 0) - w * R(0, 1) + qx * R(0, 2) + w * R(1, 0) - 2.0 * qz * R(1, 1) +
                       qy * R(1, 2) + qx * R(2, 0) + qy * R(2, 1));
    grad.rotation = (g_unit - g.unit_q * g.unit_q.dot(g_unit)) / g.q_norm;

    // Center and Jacobian -> camera-space position.
    Vec3 g_pc;
    g_pc.x() = d_center.x() * cam.fx * iz - g_jac(0, 2) * cam.fx * iz2;
    g_pc.y() = d_center.y() * cam.fy * iz - g_jac(1, 2) * cam.fy * iz2;
    g_pc.z() = -d_center.x() * cam.fx * x * iz2 - d_center.y() * cam.fy * y * iz2 - g_jac(0, 0) * cam.fx * iz2 -
               g_jac(1, 1) * cam.fy * iz2 + g_jac(0, 2) * 2.0 * cam.fx * x * iz3 +
               g_jac(1, 2) * 2.0 * cam.fy * y * iz3;
    grad.position = cam.rotation.transpose() * g_pc;

    // Color (clamped at zero) -> SH coefficients and, for degree 1, view direction.
    Vec3 g_col = d_color;
    for (int ch = 0; ch < 3; ++ch) {
        if (!(proj.raw_color[ch] > 0.0)) g_col[ch] = 0.0;
    }
    const Vec3 v = splat.position - cam.center();
    const double vn = v.norm();
    const Vec3 dir = v / vn;
    const auto basis = sh_basis(dir, sh_degree);
    for (int i = 0; i < sh_coeff_count(sh_degree); ++i) {
        grad.sh[i] = basis[i] * g_col;
    }
    if (sh_degree >= 1) {
        const Vec3 g_dir(-kShC1 * g_col.dot(splat.sh[3]), -kShC1 * g_col.dot(splat.sh[1]),
                         kShC1 * g_col.dot(splat.sh[2]));
        grad.position += (g_dir - dir * dir.dot(g_dir)) / vn;
    }

    grad.opacity_logit = d_opacity * proj.opacity * (1.0 - proj.opacity);
    return grad;
}

RenderGrads render_backward(const RenderResult& forward, const Camera& cam, const SplatCloud& cloud,
                            const Vec3& background, std::span<const double> dl_dpixels, const RenderOptions& opts) {
    const ForwardRecord& rec = forward.record;
    const std::size_t n_pix = static_cast<std::size_t>(cam.width) * cam.height;
    if (dl_dpixels.size() != n_pix * 3) {
        throw std::invalid_argument("render_backward: gradient image has the wrong size");
    }
    const std::size_t n_vis = rec.projected.size();
    std::vector<Vec2> g_center(n_vis, Vec2::Zero());
    std::vector<Vec3> g_conic(n_vis, Vec3::Zero());
    std::vector<Vec3> g_color(n_vis, Vec3::Zero());
    std::vector<double> g_opacity(n_vis, 0.0);

    struct Entry {
        int id;
        double gauss;
        double alpha;
        double t;
        double dx, dy;
    };
    std::vector<Entry> entries;
    const double cut2 = opts.cutoff_sigma * opts.cutoff_sigma;
    const int ts = opts.tile_size;

    // Tiles, pixels and entries are visited in a fixed order, so accumulation is deterministic.
    for (int ty = 0; ty < rec.tiles_y; ++ty) {
        for (int tx = 0; tx < rec.tiles_x; ++tx) {
            const auto& list = rec.tiles[static_cast<std::size_t>(ty) * rec.tiles_x + tx];
            const int y_end = std::min(cam.height, (ty + 1) * ts);
            const int x_end = std::min(cam.width, (tx + 1) * ts);
            for (int y = ty * ts; y < y_end; ++y) {
                for (int x = tx * ts; x < x_end; ++x) {
                    const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
                    const Vec3 g_pix(dl_dpixels[3 * pix], dl_dpixels[3 * pix + 1], dl_dpixels[3 * pix + 2]);
                    if (g_pix.isZero(0.0)) continue;
                    const double px = x + 0.5, py = y + 0.5;
                    entries.clear();
                    double t = 1.0;
                    for (int n = 0; n < rec.processed[pix]; ++n) {
                        const int id = list[n];
                        const ProjectedSplat& p = rec.projected[id];
                        const double dx = px - p.center2d.x();
                        const double dy = py - p.center2d.y();
                        const double m2 = p.conic.x() * dx * dx + 2.0 * p.conic.y() * dx * dy + p.conic.z() * dy * dy;
                        if (m2 > cut2) continue;
                        const double gauss = std::exp(-0.5 * m2);
                        const double alpha = p.opacity * gauss;
                        entries.push_back({id, gauss, alpha, t, dx, dy});
                        t *= (1.0 - alpha);
                    }
                    Vec3 behind = background;
                    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
                        const ProjectedSplat& p = rec.projected[it->id];
                        g_color[it->id] += (it->alpha * it->t) * g_pix;
                        const double g_alpha = it->t * g_pix.dot(p.color - behind);
                        behind = it->alpha * p.color + (1.0 - it->alpha) * behind;
                        g_opacity[it->id] += g_alpha * it->gauss;
                        const double g_power = g_alpha * p.opacity * it->gauss;
                        const double A = p.conic.x(), B = p.conic.y(), C = p.conic.z();
                        g_center[it->id] += g_power * Vec2(A * it->dx + B * it->dy, B * it->dx + C * it->dy);
                        g_conic[it->id] += g_power * Vec3(-0.5 * it->dx * it->dx, -it->dx * it->dy, -0.5 * it->dy * it->dy);
                    }
                }
            }
        }
    }

    RenderGrads grads;
    grads.splats.assign(cloud.size(), GaussianSplat::zeros());
    grads.mean2d_ndc.assign(cloud.size(), 0.0);
    grads.visible.assign(cloud.size(), 0);
    for (std::size_t id = 0; id < n_vis; ++id) {
        const int k = rec.cloud_index[id];
        grads.visible[k] = 1;
        grads.splats[k] = project_backward(cam, cloud.splats[k], cloud.sh_degree, rec.projected[id], g_center[id],
                                           g_conic[id], g_color[id], g_opacity[id], opts);
        grads.mean2d_ndc[k] = std::hypot(g_center[id].x() * 0.5 * cam.width, g_center[id].y() * 0.5 * cam.height);
    }
    return grads;
}

RenderGrads render_backward(const Camera& cam, const SplatCloud& cloud, const Vec3& background,
                            const ImageBuffer& dl_dimage, const RenderOptions& opts) {
    if (dl_dimage.width != cam.width || dl_dimage.height != cam.height) {
        throw std::invalid_argument("render_backward: gradient image shape differs from camera");
    }
    const RenderResult fwd = render_forward(cam, cloud, background, opts);
    return render_backward(fwd, cam, cloud, background, dl_dimage.pixels, opts);
}

}  // namespace splatlab
