#pragma once

#include "splatlab/camera.hpp"
#include "splatlab/image.hpp"
#include "splatlab/splat.hpp"

#include <optional>
#include <span>
#include <vector>

namespace splatlab {

struct RenderOptions {
    /// Gaussians are evaluated only inside this Mahalanobis radius.
    double cutoff_sigma = 3.0;
    /// Added to the projected 2D covariance (pixels^2).
    double dilation = 0.3;
    /// Compositing stops once transmittance falls below this.
    double transmittance_floor = 1e-4;
    double near = kNearPlane;
    int tile_size = 16;
};

/// Screen-space Gaussian. `conic` holds the inverse covariance as (A, B, C)
/// for the quadratic form A dx^2 + 2 B dx dy + C dy^2.
struct ProjectedSplat {
    Vec2 center2d;
    Mat2 cov2d;
    Vec3 conic;
    double depth;
    Vec3 color;      // clamped to >= 0
    Vec3 raw_color;  // SH + 0.5 before clamping
    double opacity;
    double radius;   // cutoff footprint radius in pixels
};

/// Projects one splat; std::nullopt when it is behind the near plane or its
/// cutoff footprint misses every pixel center.
std::optional<ProjectedSplat> project_splat(const Camera& cam, const GaussianSplat& splat, int sh_degree,
                                            const RenderOptions& opts = {});

/// Per-pixel reference: global front-to-back sort, every visible splat
/// tested at every pixel.
ImageBuffer render_naive(const Camera& cam, const SplatCloud& cloud, const Vec3& background,
                         const RenderOptions& opts = {});

/// Forward state kept for the backward pass.
struct ForwardRecord {
    std::vector<int> cloud_index;             // visible id -> splat index
    std::vector<ProjectedSplat> projected;    // per visible id
    std::vector<std::vector<int>> tiles;      // visible ids in depth order, per tile
    std::vector<int> processed;               // per pixel: tile-list entries consumed
    int tiles_x = 0;
    int tiles_y = 0;
};

struct RenderResult {
    ImageBuffer image;
    ForwardRecord record;
};

/// Tiled rasterizer: same arithmetic as render_naive, with splats binned into
/// tiles by their cutoff footprint.
RenderResult render_forward(const Camera& cam, const SplatCloud& cloud, const Vec3& background,
                            const RenderOptions& opts = {});

ImageBuffer render_tiled(const Camera& cam, const SplatCloud& cloud, const Vec3& background,
                         const RenderOptions& opts = {});

/// Partials of a scalar image loss with respect to every raw splat field.
struct RenderGrads {
    std::vector<GaussianSplat> splats;   // zero-filled for culled splats
    std::vector<double> mean2d_ndc;      // |dL/d center2d| in NDC units, per splat
    std::vector<char> visible;
};

RenderGrads render_backward(const RenderResult& forward, const Camera& cam, const SplatCloud& cloud,
                            const Vec3& background, std::span<const double> dl_dpixels,
                            const RenderOptions& opts = {});

/// Convenience form that recomputes the forward pass.
RenderGrads render_backward(const Camera& cam, const SplatCloud& cloud, const Vec3& background,
                            const ImageBuffer& dl_dimage, const RenderOptions& opts = {});

/// Adjoint of project_splat: maps screen-space partials back to the raw splat fields.
GaussianSplat project_backward(const Camera& cam, const GaussianSplat& splat, int sh_degree,
                               const ProjectedSplat& proj, const Vec2& d_center, const Vec3& d_conic,
                               const Vec3& d_color, double d_opacity, const RenderOptions& opts = {});

}  // namespace splatlab
