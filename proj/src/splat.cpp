#include "splatlab/splat.hpp"

#include <cmath>
#include <string>

namespace splatlab {

GaussianSplat GaussianSplat::zeros() {
    GaussianSplat s;
    s.rotation = Vec4::Zero();
    return s;
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

Vec4 normalize_quat(const Vec4& q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw SplatError("degenerate rotation");
    }
    return q / n;
}

Mat3 quat_to_rotation(const Vec4& q_raw) {
    const Vec4 q = normalize_quat(q_raw);
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Mat3 build_covariance(const Vec3& s, const Vec4& q) {
    if (!(s.array() > 0.0).all()) {
        throw SplatError("build_covariance: scales must be positive");
    }
    const Mat3 m = quat_to_rotation(q) * s.asDiagonal();
    return m * m.transpose();
}

std::array<double, kMaxShCoeffs> sh_basis(const Vec3& dir, int degree) {
    if (degree < 0 || degree > kMaxShDegree) {
        throw SplatError("sh degree " + std::to_string(degree) + " unsupported (expected 0 or 1)");
    }
    std::array<double, kMaxShCoeffs> y{kShC0, 0.0, 0.0, 0.0};
    if (degree >= 1) {
        y[1] = -kShC1 * dir.y();
        y[2] = kShC1 * dir.z();
        y[3] = -kShC1 * dir.x();
    }
    return y;
}

Vec3 sh_to_color(std::span<const Vec3> coeffs, const Vec3& view_dir, int degree) {
    const auto basis = sh_basis(view_dir, degree);
    const int n = sh_coeff_count(degree);
    if (static_cast<int>(coeffs.size()) < n) {
        throw SplatError("sh_to_color: coefficient count does not match degree");
    }
    Vec3 c = Vec3::Constant(0.5);
    for (int i = 0; i < n; ++i) {
        c += basis[i] * coeffs[i];
    }
    return c;
}

ActivatedSplat activate(const GaussianSplat& s) {
    return ActivatedSplat{s.position, s.log_scale.array().exp().matrix(), normalize_quat(s.rotation),
                          sigmoid(s.opacity_logit), s.sh};
}

void validate_cloud(const SplatCloud& cloud) {
    if (cloud.sh_degree < 0 || cloud.sh_degree > kMaxShDegree) {
        throw SplatError("cloud sh degree " + std::to_string(cloud.sh_degree) + " unsupported");
    }
    const int n = cloud.coeff_count();
    for (std::size_t k = 0; k < cloud.size(); ++k) {
        const auto& s = cloud.splats[k];
        bool ok = s.position.allFinite() && s.log_scale.allFinite() && s.rotation.allFinite() &&
                  std::isfinite(s.opacity_logit) && s.rotation.squaredNorm() > 0.0;
        for (int i = 0; i < n; ++i) {
            ok = ok && s.sh[i].allFinite();
        }
        if (!ok) {
            throw SplatError("splat " + std::to_string(k) + " is not finite or has a zero quaternion");
        }
    }
}

void flatten_splat(const GaussianSplat& s, int sh_degree, std::span<double> out) {
    std::size_t i = 0;
    for (int a = 0; a < 3; ++a) out[i++] = s.position[a];
    for (int a = 0; a < 3; ++a) out[i++] = s.log_scale[a];
    for (int a = 0; a < 4; ++a) out[i++] = s.rotation[a];
    out[i++] = s.opacity_logit;
    for (int c = 0; c < sh_coeff_count(sh_degree); ++c) {
        for (int a = 0; a < 3; ++a) out[i++] = s.sh[c][a];
    }
}

GaussianSplat unflatten_splat(std::span<const double> in, int sh_degree) {
    GaussianSplat s;
    std::size_t i = 0;
    for (int a = 0; a < 3; ++a) s.position[a] = in[i++];
    for (int a = 0; a < 3; ++a) s.log_scale[a] = in[i++];
    for (int a = 0; a < 4; ++a) s.rotation[a] = in[i++];
    s.opacity_logit = in[i++];
    for (int c = 0; c < sh_coeff_count(sh_degree); ++c) {
        for (int a = 0; a < 3; ++a) s.sh[c][a] = in[i++];
    }
    return s;
}

}  // namespace splatlab
