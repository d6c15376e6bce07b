#pragma once

#include "splatlab/splat.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace splatlab {

/// Pinhole camera, OpenCV convention: camera looks along +z, image x to the
/// right, image y down. Pixel (i, j) covers [i, i+1) x [j, j+1); its center is
/// at (i + 0.5, j + 0.5).
struct Camera {
    Mat3 rotation = Mat3::Identity();  // world -> camera
    Vec3 translation = Vec3::Zero();
    double fx = 64.0;
    double fy = 64.0;
    double cx = 32.0;
    double cy = 32.0;
    int width = 64;
    int height = 64;

    Vec3 center() const { return -rotation.transpose() * translation; }
    Vec3 to_camera(const Vec3& p) const { return rotation * p + translation; }
};

inline constexpr double kNearPlane = 0.01;

struct Projection {
    Vec2 pixel;
    double depth;
    bool behind;  // depth <= near; pixel is meaningless then
};

Projection project_point(const Camera& cam, const Vec3& p, double near = kNearPlane);

/// Builds a camera at `eye` looking at `target`. `up` must not be parallel
/// to the viewing direction.
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, int width, int height, double fx, double fy);

struct Intrinsics {
    int width = 64;
    int height = 64;
    double focal = 64.0;
};

/// Camera on a sphere of radius `radius` around the origin at the given
/// elevation/azimuth (degrees), looking at the origin with world +z as up.
/// At exactly 90 degrees the up vector falls back to world +x rotated by the
/// azimuth, so distinct azimuths give distinct in-plane rolls.
Camera orbit_camera(double elevation_deg, double azimuth_deg, double radius, const Intrinsics& intr);

struct TrajectoryConfig {
    int n_in = 32;
    double phi_max = 10.0;           // degrees
    double phi_min = 0.0;            // elevation floor of the sinusoid, degrees
    double freq = 2.0;               // cycles per loop
    double radius = 1.0;
    std::vector<double> ood_elevations{70.0, 80.0, 90.0};
    int ood_azimuths_per_elevation = 3;
    double ood_azimuth_offset = 15.0;  // degrees
    int n_heldout = 8;                 // in-distribution held-out views
    Intrinsics intrinsics;

    void validate() const;
};

/// Elevation (degrees) of the input sinusoid at fractional index t in [0, n_in).
double input_elevation(const TrajectoryConfig& cfg, double t);

std::vector<Camera> make_input_trajectory(const TrajectoryConfig& cfg);
std::vector<Camera> make_ood_views(const TrajectoryConfig& cfg);

/// In-distribution views interleaved between the input azimuths, sampled
/// from the same elevation sinusoid.
std::vector<Camera> make_heldout_views(const TrajectoryConfig& cfg);

enum class ViewTag { input, ood, heldout };

std::string to_string(ViewTag tag);
ViewTag view_tag_from_string(const std::string& s);

struct TaggedCamera {
    Camera camera;
    ViewTag tag;
};

/// Camera manifest: JSON list of {world_to_cam: 12 row-major floats, fx, fy,
/// cx, cy, width, height, tag}.
void save_camera_manifest(const std::filesystem::path& path, const std::vector<TaggedCamera>& cams);
std::vector<TaggedCamera> load_camera_manifest(const std::filesystem::path& path);

}  // namespace splatlab
