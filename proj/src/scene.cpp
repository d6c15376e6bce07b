#include "splatlab/scene.hpp"

#include "splatlab/rng.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace splatlab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSurfaceOpacity = 0.95;
constexpr double kTangentSpread = 0.8;  // std dev relative to mean splat spacing
constexpr double kThickness = 0.15;     // normal std dev relative to tangent std dev

Mat3 yaw_matrix(double yaw_deg) {
    return Eigen::AngleAxisd(yaw_deg * kPi / 180.0, Vec3::UnitZ()).toRotationMatrix();
}

struct SurfacePoint {
    Vec3 position;
    Vec3 normal;
    bool cap;
};

Vec3 unit_sphere_point(Rng& rng) {
    const double z = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(phi), r * std::sin(phi), z};
}

SurfacePoint sample_surface(const Primitive& p, Rng& rng) {
    switch (p.kind) {
        case PrimitiveKind::sphere: {
            const Vec3 n = unit_sphere_point(rng);
            return {p.center + p.size.x() * n, n, n.z() > p.cap_threshold};
        }
        case PrimitiveKind::box: {
            const Vec3 h = p.size;
            const std::array<double, 3> face_area{4.0 * h.y() * h.z(), 4.0 * h.x() * h.z(), 4.0 * h.x() * h.y()};
            const double total = 2.0 * (face_area[0] + face_area[1] + face_area[2]);
            double pick = rng.uniform() * total;
            int axis = 0;
            double sign = 1.0;
            for (int f = 0; f < 6; ++f) {
                const double a = face_area[f / 2];
                if (pick < a || f == 5) {
                    axis = f / 2;
                    sign = (f % 2 == 0) ? 1.0 : -1.0;
                    break;
                }
                pick -= a;
            }
            Vec3 local;
            for (int k = 0; k < 3; ++k) {
                local[k] = (k == axis) ? sign * h[k] : rng.uniform(-h[k], h[k]);
            }
            Vec3 n = Vec3::Zero();
            n[axis] = sign;
            const Mat3 yaw = yaw_matrix(p.yaw_deg);
            return {p.center + yaw * local, yaw * n, axis == 2 && sign > 0.0};
        }
        case PrimitiveKind::capsule: {
            const double r = p.size.x();
            const double half = p.size.z();
            const double cyl = 4.0 * kPi * r * half;
            const double caps = 4.0 * kPi * r * r;
            if (rng.uniform() * (cyl + caps) < cyl) {
                const double phi = rng.uniform(0.0, 2.0 * kPi);
                const Vec3 n(std::cos(phi), std::sin(phi), 0.0);
                const double z = rng.uniform(-half, half);
                return {p.center + r * n + Vec3(0.0, 0.0, z), n, false};
            }
            Vec3 n = unit_sphere_point(rng);
            const double offset = n.z() >= 0.0 ? half : -half;
            return {p.center + Vec3(0.0, 0.0, offset) + r * n, n, n.z() > p.cap_threshold};
        }
    }
    throw std::logic_error("unknown primitive kind");
}

Vec3 sh_dc_for(const Vec3& color) { return (color.array() - 0.5).matrix() / kShC0; }

}  // namespace

double Primitive::bounding_radius() const {
    switch (kind) {
        case PrimitiveKind::sphere: return center.norm() + size.x();
        case PrimitiveKind::box: return center.norm() + size.norm();
        case PrimitiveKind::capsule: return center.norm() + size.x() + size.z();
    }
    return 0.0;
}

double Primitive::surface_area() const {
    switch (kind) {
        case PrimitiveKind::sphere: return 4.0 * kPi * size.x() * size.x();
        case PrimitiveKind::box: return 8.0 * (size.x() * size.y() + size.y() * size.z() + size.x() * size.z());
        case PrimitiveKind::capsule: return 4.0 * kPi * size.x() * (size.x() + size.z());
    }
    return 0.0;
}

void SceneSpec::validate() const {
    if (primitives.empty()) throw std::invalid_argument("scene spec has no primitives");
    if (splat_budget <= 0) throw std::invalid_argument("scene spec: splat_budget must be positive");
    if (sh_degree < 0 || sh_degree > kMaxShDegree) throw std::invalid_argument("scene spec: unsupported sh degree");
    for (const auto& p : primitives) {
        if (!(p.size.array() > 0.0).all() && p.kind == PrimitiveKind::box) {
            throw std::invalid_argument("scene spec: box extents must be positive");
        }
        if (!(p.size.x() > 0.0)) throw std::invalid_argument("scene spec: primitive size must be positive");
        if (p.kind == PrimitiveKind::capsule && !(p.size.z() >= 0.0)) {
            throw std::invalid_argument("scene spec: capsule half length must be non-negative");
        }
        if (p.bounding_radius() > 1.0 + 1e-12) {
            throw std::invalid_argument("scene spec: primitive leaves the unit ball");
        }
    }
}

SplatCloud generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    // Split the budget by surface area with largest-remainder rounding.
    std::vector<double> area;
    for (const auto& p : spec.primitives) area.push_back(p.surface_area());
    const double total_area = std::accumulate(area.begin(), area.end(), 0.0);
    std::vector<int> counts(area.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t i = 0; i < area.size(); ++i) {
        const double exact = spec.splat_budget * area[i] / total_area;
        counts[i] = static_cast<int>(std::floor(exact));
        assigned += counts[i];
        remainders.emplace_back(exact - counts[i], i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < spec.splat_budget; ++r, ++assigned) {
        ++counts[remainders[r % remainders.size()].second];
    }

    SplatCloud cloud;
    cloud.sh_degree = spec.sh_degree;
    cloud.splats.reserve(spec.splat_budget);
    const double opacity_logit = logit(kSurfaceOpacity);
    for (std::size_t i = 0; i < spec.primitives.size(); ++i) {
        const Primitive& prim = spec.primitives[i];
        if (counts[i] == 0) continue;
        const double spacing = std::sqrt(area[i] / counts[i]);
        const double tangent = kTangentSpread * spacing;
        const Vec3 log_scale(std::log(tangent), std::log(tangent), std::log(kThickness * tangent));
        for (int k = 0; k < counts[i]; ++k) {
            const SurfacePoint sp = sample_surface(prim, rng);
            const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), sp.normal);
            GaussianSplat s;
            s.position = sp.position;
            s.log_scale = log_scale;
            s.rotation = Vec4(q.w(), q.x(), q.y(), q.z());
            s.opacity_logit = opacity_logit;
            s.sh[0] = sh_dc_for(sp.cap ? prim.cap_color : prim.base_color);
            cloud.splats.push_back(s);
        }
    }
    return cloud;
}

SceneSpec random_scene_spec(std::uint64_t seed, int splat_budget, double max_radius, int sh_degree) {
    Rng rng(Rng::mix(seed, 0x5ce7e));
    SceneSpec spec;
    spec.seed = seed;
    spec.splat_budget = splat_budget;
    spec.sh_degree = sh_degree;
    const int n = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < n; ++i) {
        Primitive p;
        p.kind = static_cast<PrimitiveKind>(rng.below(3));
        switch (p.kind) {
            case PrimitiveKind::sphere: p.size = Vec3::Constant(rng.uniform(0.12, 0.22)); break;
            case PrimitiveKind::box:
                p.size = Vec3(rng.uniform(0.07, 0.18), rng.uniform(0.07, 0.18), rng.uniform(0.06, 0.16));
                p.yaw_deg = rng.uniform(0.0, 90.0);
                break;
            case PrimitiveKind::capsule:
                p.size = Vec3(rng.uniform(0.06, 0.12), 0.0, rng.uniform(0.04, 0.12));
                p.size.y() = p.size.x();
                break;
        }
        const double extent = Primitive{p.kind, Vec3::Zero(), p.size}.bounding_radius();
        const double room = std::max(0.0, max_radius - extent);
        const double r = room * std::sqrt(rng.uniform());
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        const double z = rng.uniform(-0.4, 0.4) * std::max(0.0, room - r);
        p.center = Vec3(r * std::cos(phi), r * std::sin(phi), z);
        p.base_color = Vec3(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
        do {
            p.cap_color = Vec3(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95));
        } while ((p.cap_color - p.base_color).norm() < 0.35);
        spec.primitives.push_back(p);
    }
    return spec;
}

std::string to_string(PrimitiveKind k) {
    switch (k) {
        case PrimitiveKind::sphere: return "sphere";
        case PrimitiveKind::box: return "box";
        case PrimitiveKind::capsule: return "capsule";
    }
    return "sphere";
}

PrimitiveKind primitive_kind_from_string(const std::string& s) {
    if (s == "sphere") return PrimitiveKind::sphere;
    if (s == "box") return PrimitiveKind::box;
    if (s == "capsule") return PrimitiveKind::capsule;
    throw std::invalid_argument("unknown primitive kind '" + s + "'");
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 json_vec(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 3) throw std::runtime_error("expected a 3-vector");
    return {v[0], v[1], v[2]};
}

nlohmann::json spec_json(const SceneSpec& spec) {
    nlohmann::json prims = nlohmann::json::array();
    for (const auto& p : spec.primitives) {
        prims.push_back({{"kind", to_string(p.kind)},
                         {"center", vec_json(p.center)},
                         {"size", vec_json(p.size)},
                         {"yaw_deg", p.yaw_deg},
                         {"base_color", vec_json(p.base_color)},
                         {"cap_color", vec_json(p.cap_color)},
                         {"cap_threshold", p.cap_threshold}});
    }
    return {{"seed", spec.seed},
            {"splat_budget", spec.splat_budget},
            {"sh_degree", spec.sh_degree},
            {"primitives", prims}};
}

SceneSpec json_spec(const nlohmann::json& j) {
    SceneSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.splat_budget = j.value("splat_budget", 2000);
    spec.sh_degree = j.value("sh_degree", 0);
    for (const auto& pj : j.at("primitives")) {
        Primitive p;
        p.kind = primitive_kind_from_string(pj.at("kind").get<std::string>());
        p.center = json_vec(pj.at("center"));
        p.size = json_vec(pj.at("size"));
        p.yaw_deg = pj.value("yaw_deg", 0.0);
        p.base_color = json_vec(pj.at("base_color"));
        p.cap_color = json_vec(pj.at("cap_color"));
        p.cap_threshold = pj.value("cap_threshold", 0.5);
        spec.primitives.push_back(p);
    }
    spec.validate();
    return spec;
}

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return nlohmann::json::parse(in);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(1) << '\n';
}

}  // namespace

std::string scene_spec_text(const SceneSpec& spec) { return spec_json(spec).dump(1) + "\n"; }

void save_scene_spec(const std::filesystem::path& path, const SceneSpec& spec) { write_json(path, spec_json(spec)); }

SceneSpec load_scene_spec(const std::filesystem::path& path) { return json_spec(read_json(path)); }

std::vector<SceneSpec> load_scene_specs(const std::filesystem::path& path) {
    const auto j = read_json(path);
    std::vector<SceneSpec> specs;
    if (j.is_array()) {
        for (const auto& e : j) specs.push_back(json_spec(e));
    } else {
        specs.push_back(json_spec(j));
    }
    return specs;
}

void save_scene_specs(const std::filesystem::path& path, const std::vector<SceneSpec>& specs) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& s : specs) list.push_back(spec_json(s));
    write_json(path, list);
}

}  // namespace splatlab
