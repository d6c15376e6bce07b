#include "splatlab/camera.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace splatlab {

namespace {

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

Projection project_point(const Camera& cam, const Vec3& p, double near) {
    const Vec3 pc = cam.to_camera(p);
    Projection out{Vec2::Zero(), pc.z(), pc.z() <= near};
    if (!out.behind) {
        out.pixel = Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
    }
    return out;
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height, double fx, double fy) {
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right_raw = forward.cross(up);
    if (right_raw.norm() < 1e-12) {
        throw std::invalid_argument("look_at: up vector parallel to viewing direction");
    }
    const Vec3 right = right_raw.normalized();
    const Vec3 down = forward.cross(right);
    Camera cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -cam.rotation * eye;
    cam.fx = fx;
    cam.fy = fy;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    return cam;
}

Camera orbit_camera(double elevation_deg, double azimuth_deg, double radius, const Intrinsics& intr) {
    const double el = deg2rad(elevation_deg);
    const double az = deg2rad(azimuth_deg);
    const bool top = elevation_deg >= 90.0;
    const double ce = top ? 0.0 : std::cos(el);
    const double se = top ? 1.0 : std::sin(el);
    const Vec3 eye = radius * Vec3(ce * std::cos(az), ce * std::sin(az), se);
    Vec3 up = Vec3::UnitZ();
    if (top) {
        up = Vec3(std::cos(az), std::sin(az), 0.0);
    }
    return look_at(eye, Vec3::Zero(), up, intr.width, intr.height, intr.focal, intr.focal);
}

void TrajectoryConfig::validate() const {
    if (n_in < 1) throw std::invalid_argument("trajectory: n_in must be >= 1");
    if (!(radius > 0.0)) throw std::invalid_argument("trajectory: radius must be positive");
    if (phi_max < 0.0 || phi_min > phi_max) throw std::invalid_argument("trajectory: need phi_min <= phi_max, phi_max >= 0");
    if (ood_azimuths_per_elevation < 1) throw std::invalid_argument("trajectory: ood azimuth count must be >= 1");
    if (!ood_elevations.empty() && phi_max >= *std::min_element(ood_elevations.begin(), ood_elevations.end())) {
        throw std::invalid_argument("trajectory: phi_max must be below every OOD elevation");
    }
    for (double e : ood_elevations) {
        if (e > 90.0) throw std::invalid_argument("trajectory: OOD elevation above 90 degrees");
    }
    if (intrinsics.width < 1 || intrinsics.height < 1 || !(intrinsics.focal > 0.0)) {
        throw std::invalid_argument("trajectory: bad intrinsics");
    }
}

double input_elevation(const TrajectoryConfig& cfg, double t) {
    const double phase = 2.0 * std::numbers::pi * cfg.freq * t / cfg.n_in;
    return cfg.phi_min + 0.5 * (cfg.phi_max - cfg.phi_min) * (1.0 - std::cos(phase));
}

std::vector<Camera> make_input_trajectory(const TrajectoryConfig& cfg) {
    cfg.validate();
    std::vector<Camera> cams;
    cams.reserve(cfg.n_in);
    for (int i = 0; i < cfg.n_in; ++i) {
        const double az = 360.0 * i / cfg.n_in;
        cams.push_back(orbit_camera(input_elevation(cfg, i), az, cfg.radius, cfg.intrinsics));
    }
    return cams;
}

std::vector<Camera> make_ood_views(const TrajectoryConfig& cfg) {
    cfg.validate();
    std::vector<Camera> cams;
    const int m = cfg.ood_azimuths_per_elevation;
    for (double el : cfg.ood_elevations) {
        for (int j = 0; j < m; ++j) {
            const double az = cfg.ood_azimuth_offset + 360.0 * j / m;
            cams.push_back(orbit_camera(el, az, cfg.radius, cfg.intrinsics));
        }
    }
    return cams;
}

std::vector<Camera> make_heldout_views(const TrajectoryConfig& cfg) {
    cfg.validate();
    std::vector<Camera> cams;
    for (int j = 0; j < cfg.n_heldout; ++j) {
        const double t = (j + 0.5) * cfg.n_in / cfg.n_heldout;
        const double az = 360.0 * t / cfg.n_in;
        cams.push_back(orbit_camera(input_elevation(cfg, t), az, cfg.radius, cfg.intrinsics));
    }
    return cams;
}

std::string to_string(ViewTag tag) {
    switch (tag) {
        case ViewTag::input: return "input";
        case ViewTag::ood: return "ood";
        case ViewTag::heldout: return "heldout";
    }
    return "input";
}

ViewTag view_tag_from_string(const std::string& s) {
    if (s == "input") return ViewTag::input;
    if (s == "ood") return ViewTag::ood;
    if (s == "heldout") return ViewTag::heldout;
    throw std::invalid_argument("unknown view tag '" + s + "'");
}

void save_camera_manifest(const std::filesystem::path& path, const std::vector<TaggedCamera>& cams) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& tc : cams) {
        const Camera& c = tc.camera;
        std::vector<double> w2c;
        for (int r = 0; r < 3; ++r) {
            for (int k = 0; k < 3; ++k) w2c.push_back(c.rotation(r, k));
            w2c.push_back(c.translation[r]);
        }
        list.push_back({{"world_to_cam", w2c},
                        {"fx", c.fx},
                        {"fy", c.fy},
                        {"cx", c.cx},
                        {"cy", c.cy},
                        {"width", c.width},
                        {"height", c.height},
                        {"tag", to_string(tc.tag)}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << list.dump(1) << '\n';
}

std::vector<TaggedCamera> load_camera_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const nlohmann::json list = nlohmann::json::parse(in);
    std::vector<TaggedCamera> cams;
    for (const auto& rec : list) {
        const auto w2c = rec.at("world_to_cam").get<std::vector<double>>();
        if (w2c.size() != 12) throw std::runtime_error("camera manifest: world_to_cam needs 12 values");
        Camera c;
        for (int r = 0; r < 3; ++r) {
            for (int k = 0; k < 3; ++k) c.rotation(r, k) = w2c[4 * r + k];
            c.translation[r] = w2c[4 * r + 3];
        }
        c.fx = rec.at("fx").get<double>();
        c.fy = rec.at("fy").get<double>();
        c.cx = rec.at("cx").get<double>();
        c.cy = rec.at("cy").get<double>();
        c.width = rec.at("width").get<int>();
        c.height = rec.at("height").get<int>();
        cams.push_back({c, view_tag_from_string(rec.at("tag").get<std::string>())});
    }
    return cams;
}

}  // namespace splatlab
