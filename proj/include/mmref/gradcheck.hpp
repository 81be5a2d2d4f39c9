#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmref/graph.hpp"

namespace mmref {

struct GradCheckResult {
    double max_relative_error = 0.0;
    /// Which input / parameter and flat index produced the maximum.
    std::string worst_input;
    std::size_t worst_index = 0;
    std::size_t coordinates_checked = 0;
};

/// Builds a scalar from leaves holding the given inputs.
using LeafFunction = std::function<Var(Graph&, std::span<const Var>)>;

/// Compares analytic gradients against central differences,
/// |analytic - numeric| / max(1, |numeric|), maximized over coordinates.
///
/// Only inputs flagged in `live` are compared (all when empty); use this for
/// functions where an input also reaches the output through stop_gradient.
GradCheckResult finite_difference_check(const LeafFunction& f, std::span<const Tensor> point, double step = 1e-4,
                                        std::span<const bool> live = {});

/// Convenience overload for a single input.
GradCheckResult finite_difference_check(const std::function<Var(Graph&, Var)>& f, const Tensor& point,
                                        double step = 1e-4);

/// Same check against bound parameters. `build` must bind the parameters it
/// uses with Graph::parameter. At most `max_coords_per_param` coordinates of
/// each parameter are probed (chosen deterministically from `seed`); 0 probes all.
GradCheckResult parameter_gradient_check(const std::function<Var(Graph&)>& build, const ParameterList& params,
                                         double step = 1e-4, std::size_t max_coords_per_param = 0,
                                         std::uint64_t seed = 0);

}  // namespace mmref
