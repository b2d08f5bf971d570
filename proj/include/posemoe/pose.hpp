// SPDX-License-Identifier: Apache-2.0
// Pick-and-place pose plans and their normalised form.
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace posemoe {

inline constexpr std::size_t kPoseDims = 6;
inline constexpr std::size_t kRoles = 2;
inline constexpr std::size_t kPick = 0;
inline constexpr std::size_t kPlace = 1;

/// Wraps to (−π, π].
double wrap_angle(double a);

struct Pose6D {
    double x = 0.0, y = 0.0, z = 0.0;
    double roll = 0.0, pitch = 0.0, yaw = 0.0;

    std::array<double, kPoseDims> to_array() const { return {x, y, z, roll, pitch, yaw}; }
    static Pose6D from_array(std::span<const double> v);
    bool operator==(const Pose6D&) const = default;
};

/// Axis-aligned positional bounds; angles always span [−π, π].
struct Workspace {
    std::array<double, 3> lo{0.0, 0.0, 0.0};
    std::array<double, 3> hi{1.0, 1.0, 0.3};

    void validate() const;
    bool operator==(const Workspace&) const = default;
};

/// poses[t][role], role 0 = pick, 1 = place.
struct PoseTrajectory {
    std::vector<std::array<Pose6D, kRoles>> steps;

    std::size_t horizon() const { return steps.size(); }
    bool operator==(const PoseTrajectory&) const = default;
};

const char* pose_dim_name(std::size_t d);

/// Flat [T·2·6]; positions map affinely onto [−1, 1], angles by a/π.
/// Throws Error naming the first out-of-range dimension.
std::vector<double> normalize(const PoseTrajectory& traj, const Workspace& ws);
/// Inverse of normalize without range checks; yaw is not wrapped.
PoseTrajectory denormalize(std::span<const double> flat, std::size_t horizon, const Workspace& ws);

}  // namespace posemoe
