#pragma once

// Finite-difference sweep over every loss term and encoder path, on random
// windows and randomly initialised models.

#include <cstdint>
#include <string>
#include <vector>

namespace mkd {

struct GradSuiteOptions {
    std::vector<std::size_t> widths{6, 12};
    std::size_t seeds = 20;
    std::size_t window = 4;
    double h = 1e-5;
    double tol = 1e-4;
};

struct GradSuiteEntry {
    std::string name;       // "loss/coral", "encoder/snn", ...
    double max_rel_error = 0.0;
    std::size_t checks = 0; // (width, seed) cases run
    bool passed = true;
};

std::vector<GradSuiteEntry> run_gradcheck_suite(const GradSuiteOptions& opts = {});

} // namespace mkd
