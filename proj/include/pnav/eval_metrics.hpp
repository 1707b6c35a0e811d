#pragma once

// Episode error metrics and summary statistics shared by training and evaluation.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "pnav/generator.hpp"
#include "pnav/geometry.hpp"

namespace pnav {

struct EpisodeError {
    double rotation = 0.0;     // radians
    double translation = 0.0;  // normalized units
};

/// Rotation error (symmetric when an axis is given) and translation error of a final state.
inline EpisodeError episode_error(const PoseState& final_state, const PoseState& goal,
                                  const std::optional<Vec3>& symmetry_axis = std::nullopt) {
    const RotationMatrix a = euler_to_matrix(final_state.theta);
    const RotationMatrix b = euler_to_matrix(goal.theta);
    return {symmetry_axis ? symmetric_rotation_error(a, b, *symmetry_axis) : rotation_error(a, b),
            translation_error(final_state.t, goal.t)};
}

/// Fraction of errors strictly below the threshold.
inline double compute_ap(std::span<const double> errors, double threshold) {
    if (errors.empty()) throw std::invalid_argument("compute_ap: empty error list");
    if (!(threshold > 0.0)) throw std::invalid_argument("compute_ap: threshold must be positive");
    const auto hits = std::count_if(errors.begin(), errors.end(), [&](double e) { return e < threshold; });
    return static_cast<double>(hits) / static_cast<double>(errors.size());
}

/// Median; the mean of the two middle values for even counts.
inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median: empty input");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Sample standard deviation (n - 1); zero for fewer than two values.
inline double stddev(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline double deg(double rad) { return rad * 180.0 / kPi; }
inline double rad(double degrees) { return degrees * kPi / 180.0; }

}  // namespace pnav
