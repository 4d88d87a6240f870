#pragma once

#include "tg3d/common.hpp"
#include "tg3d/rng.hpp"

#include <cmath>

namespace tg3d {

using Vec3 = Eigen::Vector3d;

constexpr double kPi = 3.14159265358979323846;
constexpr double kYawMaxDeg = 45.0;
constexpr double kPitchMaxDeg = 20.0;
constexpr double kCameraRadius = 2.6;
constexpr double kFovDeg = 30.0;

inline double deg2rad(double d) { return d * kPi / 180.0; }

// Orbit camera looking at the origin. Yaw about +y, pitch about the camera's
// right axis; yaw=pitch=0 places the camera on the +z axis.
struct CameraPose {
    double yaw_deg = 0.0;
    double pitch_deg = 0.0;
    double radius = kCameraRadius;

    bool in_range() const {
        return std::abs(yaw_deg) <= kYawMaxDeg && std::abs(pitch_deg) <= kPitchMaxDeg &&
               radius > 0.0;
    }

    Vec3 position() const {
        double yaw = deg2rad(yaw_deg), pitch = deg2rad(pitch_deg);
        return radius * Vec3(-std::sin(yaw) * std::cos(pitch), std::sin(pitch),
                             std::cos(yaw) * std::cos(pitch));
    }

    // camera-to-world rotation columns [right, up, -forward] plus position;
    // bijective in (yaw, pitch) over the valid box.
    Eigen::Matrix<double, 3, 4> extrinsic() const {
        Vec3 pos = position();
        Vec3 fwd = (-pos).normalized();
        Vec3 right = fwd.cross(Vec3(0, 1, 0)).normalized();
        Vec3 up = right.cross(fwd);
        Eigen::Matrix<double, 3, 4> m;
        m.col(0) = right;
        m.col(1) = up;
        m.col(2) = -fwd;
        m.col(3) = pos;
        return m;
    }

    static CameraPose sample(Rng& rng) {
        CameraPose c;
        c.yaw_deg = rng.uniform(-kYawMaxDeg, kYawMaxDeg);
        c.pitch_deg = rng.uniform(-kPitchMaxDeg, kPitchMaxDeg);
        return c;
    }
};

struct Ray {
    Vec3 origin;
    Vec3 dir; // unit
};

// Pixel-center ray through (x, y) of a w*h image.
inline Ray pixel_ray(const CameraPose& cam, int x, int y, int w, int h) {
    Vec3 pos = cam.position();
    Vec3 fwd = (-pos).normalized();
    Vec3 right = fwd.cross(Vec3(0, 1, 0)).normalized();
    Vec3 up = right.cross(fwd);
    double t = std::tan(deg2rad(kFovDeg) / 2.0);
    double u = (2.0 * (x + 0.5) / w - 1.0) * t * (static_cast<double>(w) / h);
    double v = (1.0 - 2.0 * (y + 0.5) / h) * t;
    return Ray{pos, (fwd + u * right + v * up).normalized()};
}

} // namespace tg3d
