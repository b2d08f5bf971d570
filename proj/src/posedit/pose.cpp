// SPDX-License-Identifier: Apache-2.0

#include "posemoe/pose.hpp"

#include <cmath>
#include <numbers>

#include "posemoe/errors.hpp"

namespace posemoe {

double wrap_angle(double a) {
    constexpr double pi = std::numbers::pi, two_pi = 2.0 * std::numbers::pi;
    double r = std::fmod(a, two_pi);
    if (r > pi) r -= two_pi;
    if (r <= -pi) r += two_pi;
    return r;
}

Pose6D Pose6D::from_array(std::span<const double> v) {
    if (v.size() != kPoseDims) throw ShapeError("pose: expected 6 values, got " + std::to_string(v.size()));
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

void Workspace::validate() const {
    for (std::size_t d = 0; d < 3; ++d) {
        if (!(hi[d] > lo[d])) throw ConfigError(std::string("workspace: empty extent in ") + pose_dim_name(d));
    }
}

const char* pose_dim_name(std::size_t d) {
    static const char* names[] = {"x", "y", "z", "roll", "pitch", "yaw"};
    return d < kPoseDims ? names[d] : "?";
}

std::vector<double> normalize(const PoseTrajectory& traj, const Workspace& ws) {
    ws.validate();
    std::vector<double> out;
    out.reserve(traj.horizon() * kRoles * kPoseDims);
    for (std::size_t t = 0; t < traj.horizon(); ++t) {
        for (std::size_t r = 0; r < kRoles; ++r) {
            const auto v = traj.steps[t][r].to_array();
            for (std::size_t d = 0; d < kPoseDims; ++d) {
                double n;
                if (d < 3) {
                    n = 2.0 * (v[d] - ws.lo[d]) / (ws.hi[d] - ws.lo[d]) - 1.0;
                } else {
                    n = v[d] / std::numbers::pi;
                }
                if (!std::isfinite(n) || n < -1.0 || n > 1.0) {
                    throw Error("normalize: step " + std::to_string(t) + (r == kPick ? " pick " : " place ") +
                                pose_dim_name(d) + " = " + std::to_string(v[d]) + " outside the workspace");
                }
                out.push_back(n);
            }
        }
    }
    return out;
}

PoseTrajectory denormalize(std::span<const double> flat, std::size_t horizon, const Workspace& ws) {
    if (flat.size() != horizon * kRoles * kPoseDims) {
        throw ShapeError("denormalize: expected " + std::to_string(horizon * kRoles * kPoseDims) + " values, got " +
                         std::to_string(flat.size()));
    }
    PoseTrajectory traj;
    traj.steps.resize(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
        for (std::size_t r = 0; r < kRoles; ++r) {
            std::array<double, kPoseDims> v{};
            for (std::size_t d = 0; d < kPoseDims; ++d) {
                const double n = flat[(t * kRoles + r) * kPoseDims + d];
                v[d] = d < 3 ? ws.lo[d] + (n + 1.0) * 0.5 * (ws.hi[d] - ws.lo[d]) : n * std::numbers::pi;
            }
            traj.steps[t][r] = Pose6D::from_array(v);
        }
    }
    return traj;
}

}  // namespace posemoe
