#include "mkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mkd {

double relative_error(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
    return std::fabs(a - b) / denom;
}

GradCheckReport grad_check(const LossBuilder& f, std::span<Tensor> leaves, double h, double tol) {
    GradCheckReport report;
    for (auto& leaf : leaves) {
        if (!leaf.requires_grad()) leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    {
        Graph g;
        Tensor loss = f(g);
        g.backward(loss);
    }
    auto eval = [&f] {
        Graph g;
        return f(g).item();
    };
    for (auto& leaf : leaves) {
        double worst = 0.0;
        auto x = leaf.data();
        auto analytic = leaf.grad();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + h;
            const double up = eval();
            x[i] = saved - h;
            const double down = eval();
            x[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            worst = std::max(worst, relative_error(analytic[i], numeric));
        }
        report.max_rel_error.push_back(worst);
        report.worst = std::max(report.worst, worst);
    }
    report.passed = report.worst <= tol;
    return report;
}

} // namespace mkd
