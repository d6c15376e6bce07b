#include <doctest.h>

#include "splatlab/rng.hpp"
#include "splatlab/splat.hpp"
#include "splatlab/splat_io.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

using namespace splatlab;

namespace {

Vec4 random_quat(Rng& rng) { return Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal()); }

// Plain triple loop, independent of Eigen's product kernels.
Mat3 naive_triple_product(const Mat3& r, const Vec3& d) {
    Mat3 out;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += r(i, k) * d[k] * r(j, k);
            out(i, j) = s;
        }
    }
    return out;
}

// Degree-1 real SH from spherical angles, written out basis function by basis function.
std::array<double, 4> sh_oracle(const Vec3& dir) {
    const double theta = std::acos(std::clamp(dir.z(), -1.0, 1.0));
    const double phi = std::atan2(dir.y(), dir.x());
    const double k0 = 0.5 * std::sqrt(1.0 / std::numbers::pi);
    const double k1 = std::sqrt(3.0 / (4.0 * std::numbers::pi));
    return {k0, -k1 * std::sin(theta) * std::sin(phi), k1 * std::cos(theta), -k1 * std::sin(theta) * std::cos(phi)};
}

}  // namespace

TEST_CASE("quat_to_rotation examples") {
    CHECK(quat_to_rotation(Vec4(1, 0, 0, 0)).isApprox(Mat3::Identity()));
    CHECK(quat_to_rotation(Vec4(2, 0, 0, 0)).isApprox(Mat3::Identity()));
    const Mat3 r = quat_to_rotation(Vec4(0, 0, 0, 1));
    CHECK(r.isApprox(Vec3(-1, -1, 1).asDiagonal().toDenseMatrix()));
    CHECK_THROWS_WITH_AS(quat_to_rotation(Vec4::Zero()), "degenerate rotation", SplatError);
}

TEST_CASE("quat_to_rotation is orthonormal and double-covered") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const Vec4 q = random_quat(rng);
        const Mat3 r = quat_to_rotation(q);
        CHECK((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(quat_to_rotation(-q) == r);
    }
}

TEST_CASE("build_covariance examples") {
    CHECK(build_covariance(Vec3(1, 1, 1), Vec4(1, 0, 0, 0)).isApprox(Mat3::Identity()));
    CHECK(build_covariance(Vec3(2, 1, 1), Vec4(1, 0, 0, 0)).isApprox(Vec3(4, 1, 1).asDiagonal().toDenseMatrix()));
    const double h = std::sqrt(0.5);
    const Vec4 q90z(h, 0, 0, h);
    const Mat3 expected = naive_triple_product(quat_to_rotation(q90z), Vec3(1, 4, 9));
    CHECK((build_covariance(Vec3(1, 2, 3), q90z) - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(build_covariance(Vec3(1, 0, 1), q90z), SplatError);
    CHECK_THROWS_AS(build_covariance(Vec3(1, -1, 1), q90z), SplatError);
}

TEST_CASE("covariance eigenvalues equal squared scales") {
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        const Vec3 s(rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0));
        const Mat3 cov = build_covariance(s, random_quat(rng));
        CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
        std::array<double, 3> ev{es.eigenvalues()[0], es.eigenvalues()[1], es.eigenvalues()[2]};
        std::array<double, 3> sq{s[0] * s[0], s[1] * s[1], s[2] * s[2]};
        std::sort(ev.begin(), ev.end());
        std::sort(sq.begin(), sq.end());
        for (int k = 0; k < 3; ++k) CHECK(std::abs(ev[k] - sq[k]) < 1e-9);
    }
}

TEST_CASE("sh_to_color") {
    const std::array<Vec3, 4> zero{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
    CHECK(sh_to_color(zero, Vec3::UnitX(), 0).isApprox(Vec3::Constant(0.5)));

    std::array<Vec3, 1> c0{Vec3::Constant(1.0 / 0.28209479177)};
    const Vec3 col = sh_to_color(c0, Vec3::UnitY(), 0);
    for (int ch = 0; ch < 3; ++ch) CHECK(col[ch] == doctest::Approx(1.5).epsilon(1e-10));

    CHECK_THROWS_AS(sh_to_color(zero, Vec3::UnitX(), 2), SplatError);
    CHECK_THROWS_AS(sh_to_color(c0, Vec3::UnitX(), 1), SplatError);

    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        std::array<Vec3, 4> coeffs;
        for (auto& c : coeffs) c = Vec3(rng.normal(), rng.normal(), rng.normal());
        const Vec3 dir = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
        const auto y = sh_oracle(dir);
        Vec3 expected = Vec3::Constant(0.5);
        for (int k = 0; k < 4; ++k) expected += y[k] * coeffs[k];
        CHECK((sh_to_color(coeffs, dir, 1) - expected).cwiseAbs().maxCoeff() < 1e-12);

        // Degree 0 ignores the direction entirely.
        const Vec3 other = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
        CHECK(sh_to_color(coeffs, dir, 0) == sh_to_color(coeffs, other, 0));
    }
}

TEST_CASE("activate") {
    GaussianSplat s;
    CHECK(activate(s).opacity == 0.5);
    CHECK(activate(s).std_devs == Vec3::Ones());
    s.opacity_logit = 20.0;
    CHECK(std::abs(activate(s).opacity - 1.0) < 1e-8);
    s.rotation = Vec4(0, 3, 0, 4);
    CHECK(activate(s).unit_quat.isApprox(Vec4(0, 0.6, 0, 0.8)));

    for (double x = -10.0; x <= 10.0; x += 0.25) {
        CHECK(std::abs(logit(sigmoid(x)) - x) < 1e-9);
        CHECK(std::abs(std::log(std::exp(x)) - x) < 1e-12);
        CHECK(sigmoid(x) > 0.0);
        CHECK(sigmoid(x) < 1.0);
    }
}

TEST_CASE("SPLT1 binary layout and round trip") {
    Rng rng(5);
    for (int degree : {0, 1}) {
        SplatCloud cloud;
        cloud.sh_degree = degree;
        for (int k = 0; k < 17; ++k) {
            GaussianSplat s;
            s.position = Vec3(rng.normal(), rng.normal(), rng.normal());
            s.log_scale = Vec3(rng.normal(), rng.normal(), rng.normal());
            s.rotation = random_quat(rng);
            s.opacity_logit = rng.normal();
            for (auto& c : s.sh) c = Vec3(rng.normal(), rng.normal(), rng.normal());
            cloud.splats.push_back(s);
        }
        std::stringstream buf;
        write_splt(buf, cloud);
        const std::string bytes = buf.str();
        CHECK(bytes.substr(0, 4) == "SPLT");
        CHECK(bytes.size() == 4 + 4 + 4 + 1 + cloud.size() * 4 * static_cast<std::size_t>(cloud.params_per_splat()));
        const SplatCloud back = read_splt(buf);
        REQUIRE(back.size() == cloud.size());
        CHECK(back.sh_degree == degree);
        for (std::size_t k = 0; k < cloud.size(); ++k) {
            CHECK(back.splats[k].position.x() == static_cast<float>(cloud.splats[k].position.x()));
            CHECK(back.splats[k].opacity_logit == static_cast<float>(cloud.splats[k].opacity_logit));
        }

        // Text form is lossless on doubles.
        const SplatCloud text = from_text(to_text(cloud));
        for (std::size_t k = 0; k < cloud.size(); ++k) {
            CHECK(text.splats[k].position == cloud.splats[k].position);
            CHECK(text.splats[k].rotation == cloud.splats[k].rotation);
            for (int i = 0; i < cloud.coeff_count(); ++i) CHECK(text.splats[k].sh[i] == cloud.splats[k].sh[i]);
        }
    }
    std::stringstream bad("XXXX");
    CHECK_THROWS(read_splt(bad));
}
