#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace deepcae {

struct GradcheckOptions {
    std::size_t input_dim = 6;
    std::size_t num_layers = 2;
    std::uint64_t seed = 0;
    std::size_t cases = 20;
    /// Multiplies the analytic penalty before comparison; 1 leaves it intact.
    double penalty_corruption = 1.0;
};

struct GradcheckReport {
    double penalty_max_rel_error = 0.0;   // vs finite-difference Jacobian norm
    double gradient_max_rel_error = 0.0;  // loss gradient vs finite differences
    double single_layer_max_diff = 0.0;   // |deep - stacked| on one-layer encoders
    bool passed = false;
    std::vector<std::string> lines;
};

inline constexpr double kPenaltyTolerance = 1e-5;
inline constexpr double kGradientTolerance = 1e-4;
inline constexpr double kSingleLayerTolerance = 1e-12;

/// Checks the analytic penalty, its gradient and the one-layer equivalence on
/// random models against finite differences.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace deepcae
