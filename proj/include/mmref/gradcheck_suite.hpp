#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmref/gradcheck.hpp"

namespace mmref {

struct GradCheckItem {
    std::string name;
    /// One trial; the argument seeds that trial's random point.
    std::function<GradCheckResult(std::uint64_t trial)> run;
    /// Relative-error bound; 0 for stop-gradient checks, which report the
    /// largest gradient magnitude and must be exactly zero.
    double tolerance = 1e-4;
};

struct GradCheckLine {
    std::string name;
    double error = 0.0;
    double tolerance = 0.0;
    std::size_t coordinates = 0;  ///< summed over trials
    std::size_t trials = 0;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckLine> lines;
    double seconds = 0.0;
    bool passed() const;
};

/// Every operator, loss and module, plus the stop-gradient checks of L_Fuse and L_Guide.
std::vector<GradCheckItem> default_gradcheck_items();

/// Runs `trials` random trials per item; a line reports the worst one.
GradCheckReport run_gradchecks(std::span<const GradCheckItem> items, std::size_t trials = 20);

std::string format_gradcheck(const GradCheckReport& report);

}  // namespace mmref
