#pragma once

#include "splatlab/splat.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace splatlab {

enum class PrimitiveKind { sphere, box, capsule };

/// A procedural solid. `size` is interpreted per kind:
///   sphere  - size.x() is the radius
///   box     - half extents (axis aligned after a yaw rotation about z)
///   capsule - size.x() radius, size.z() half length of the vertical cylinder
/// Surface points whose outward normal has z-component above `cap_threshold`
/// (boxes: the top face) take `cap_color`; everything else takes `base_color`.
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::sphere;
    Vec3 center = Vec3::Zero();
    Vec3 size = Vec3::Constant(0.25);
    double yaw_deg = 0.0;
    Vec3 base_color = Vec3::Constant(0.5);
    Vec3 cap_color = Vec3::Constant(0.9);
    double cap_threshold = 0.5;

    /// Radius of the smallest origin-centred ball containing the primitive.
    double bounding_radius() const;
    double surface_area() const;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    std::vector<Primitive> primitives;
    int splat_budget = 2000;
    int sh_degree = 0;

    void validate() const;
};

/// Surface-samples the primitives. Deterministic in spec.seed; the splat
/// budget is shared by surface area and spent exactly.
SplatCloud generate_scene(const SceneSpec& spec);

/// Draws a random object-centric scene of 1-3 primitives inside a ball of
/// radius `max_radius` (well inside the unit ball).
SceneSpec random_scene_spec(std::uint64_t seed, int splat_budget, double max_radius = 0.4, int sh_degree = 0);

std::string to_string(PrimitiveKind k);
PrimitiveKind primitive_kind_from_string(const std::string& s);

/// The JSON text save_scene_spec writes.
std::string scene_spec_text(const SceneSpec& spec);
void save_scene_spec(const std::filesystem::path& path, const SceneSpec& spec);
SceneSpec load_scene_spec(const std::filesystem::path& path);
std::vector<SceneSpec> load_scene_specs(const std::filesystem::path& path);
void save_scene_specs(const std::filesystem::path& path, const std::vector<SceneSpec>& specs);

}  // namespace splatlab
