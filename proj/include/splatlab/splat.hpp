#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace splatlab {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Real SH normalisation constants (degree 0 and 1).
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

/// Maximum supported SH degree. Degree 0 uses one coefficient row, degree 1 uses four.
inline constexpr int kMaxShDegree = 1;
inline constexpr int kMaxShCoeffs = 4;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// One Gaussian primitive in its unconstrained storage form.
///
/// Scales are stored as logs and opacity as a logit so that unconstrained
/// gradient steps keep them valid. The quaternion (w, x, y, z) is stored
/// unnormalized; every consumer normalizes it. Only the first
/// sh_coeff_count(degree) rows of `sh` are meaningful; the owning cloud
/// carries the degree.
///
/// The same layout doubles as a per-splat gradient or optimizer-moment record.
struct GaussianSplat {
    Vec3 position = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    double opacity_logit = 0.0;
    std::array<Vec3, kMaxShCoeffs> sh{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};

    static GaussianSplat zeros();
};

/// Ordered splat collection. Splat k keeps its identity across refinement.
struct SplatCloud {
    int sh_degree = 0;
    std::vector<GaussianSplat> splats;

    std::size_t size() const { return splats.size(); }
    bool empty() const { return splats.empty(); }
    int coeff_count() const { return sh_coeff_count(sh_degree); }

    /// Number of scalar parameters per splat: 3 + 3 + 4 + 1 + 3 * D.
    int params_per_splat() const { return 11 + 3 * coeff_count(); }
};

/// Activated view of a splat, the quantities the renderer consumes.
struct ActivatedSplat {
    Vec3 position;
    Vec3 std_devs;
    Vec4 unit_quat;
    double opacity;
    std::array<Vec3, kMaxShCoeffs> coeffs;
};

class SplatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

double sigmoid(double x);
double logit(double p);

/// Normalizes q; throws SplatError("degenerate rotation") for a zero quaternion.
Vec4 normalize_quat(const Vec4& q);

/// Rotation matrix of the (normalized) quaternion (w, x, y, z).
Mat3 quat_to_rotation(const Vec4& q);

/// Sigma = R diag(s)^2 R^T. Requires s > 0 componentwise.
Mat3 build_covariance(const Vec3& std_devs, const Vec4& q);

/// Evaluates degree-0/1 real SH along `view_dir` and adds the +0.5 offset.
/// The result is not clamped; the renderer clamps at use.
Vec3 sh_to_color(std::span<const Vec3> coeffs, const Vec3& view_dir, int degree);

/// SH basis values for `degree` along `dir` (first sh_coeff_count(degree) entries used).
std::array<double, kMaxShCoeffs> sh_basis(const Vec3& dir, int degree);

ActivatedSplat activate(const GaussianSplat& splat);

/// Throws SplatError if a splat has non-finite fields or the cloud degree is unsupported.
void validate_cloud(const SplatCloud& cloud);

/// Flattens one splat into params_per_splat() scalars in the order
/// position, log_scale, rotation, opacity_logit, sh (row-major D x 3).
void flatten_splat(const GaussianSplat& s, int sh_degree, std::span<double> out);
GaussianSplat unflatten_splat(std::span<const double> in, int sh_degree);

}  // namespace splatlab
