#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mkd/tensor.hpp"

namespace mkd {

/// Builds a scalar loss on a fresh graph. Must be deterministic.
using LossBuilder = std::function<Tensor(Graph&)>;

struct GradCheckReport {
    std::vector<double> max_rel_error; // one per leaf
    double worst = 0.0;
    bool passed = true;
};

/// |a-b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

/// Compares backward() gradients against central differences
/// (f(x+h) - f(x-h)) / 2h for every coordinate of every leaf. Leaf values
/// are restored afterwards; leaf gradients are left holding the analytic
/// gradient.
GradCheckReport grad_check(const LossBuilder& f, std::span<Tensor> leaves, double h = 1e-5,
                           double tol = 1e-4);

} // namespace mkd
