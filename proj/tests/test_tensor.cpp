#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mkd/errors.hpp"
#include "mkd/gradcheck.hpp"
#include "mkd/tensor.hpp"
#include "test_util.hpp"

using namespace mkd;
using mkd::testing::randn;

namespace {

// Weighted sum keeps the loss linear in the op output, so any FD error is
// attributable to the op under test.
Tensor weighted(Graph& g, const Tensor& x, const Tensor& w) { return g.sum(g.mul(x, w)); }

} // namespace

TEST(Matmul, IdentityAndHandArithmetic) {
    Graph g;
    auto c = g.matmul(Tensor::from_rows({{1, 0}, {0, 1}}), Tensor::from_rows({{3, 4}, {5, 6}}));
    EXPECT_EQ(c(0, 0), 3);
    EXPECT_EQ(c(0, 1), 4);
    EXPECT_EQ(c(1, 0), 5);
    EXPECT_EQ(c(1, 1), 6);
    auto d = g.matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}}));
    EXPECT_EQ(d.item(), 11);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
    Graph g;
    try {
        g.matmul(Tensor(2, 3), Tensor(2, 3));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("(2x3)"), std::string::npos);
        EXPECT_NE(msg.find(" x (2x3)"), std::string::npos);
    }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    Tensor a = randn(4, 3, rng, 1.0, true);
    Tensor b = randn(3, 2, rng, 1.0, true);
    Tensor w = randn(4, 2, rng);
    std::vector<Tensor> leaves{a, b};
    auto r = grad_check([&](Graph& g) { return weighted(g, g.matmul(a, b), w); }, leaves, 1e-5, 1e-6);
    EXPECT_TRUE(r.passed) << r.worst;
}

TEST(Elementwise, PointValues) {
    Graph g;
    EXPECT_DOUBLE_EQ(g.sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    EXPECT_DOUBLE_EQ(g.tanh(Tensor::scalar(0.0)).item(), 0.0);
    Tensor x = Tensor::scalar(-2.0, true);
    Graph h;
    h.backward(h.abs(x));
    EXPECT_DOUBLE_EQ(x.grad()[0], -1.0);
    Tensor z = Tensor::scalar(0.0, true);
    Graph k;
    k.backward(k.abs(z));
    EXPECT_DOUBLE_EQ(z.grad()[0], 0.0);
}

TEST(Elementwise, LogOfNonPositiveIsDomainError) {
    Graph g;
    EXPECT_THROW(g.log(Tensor::from_rows({{1.0, 0.0}})), std::domain_error);
    EXPECT_THROW(g.log(Tensor::scalar(-3.0)), std::domain_error);
}

TEST(Elementwise, BinaryOpsRequireEqualShapes) {
    Graph g;
    EXPECT_THROW(g.add(Tensor(1, 2), Tensor(2, 1)), ShapeError);
    EXPECT_THROW(g.mul(Tensor(1, 2), Tensor(1, 3)), ShapeError);
    EXPECT_THROW(g.sub(Tensor(3, 2), Tensor(2, 3)), ShapeError);
}

TEST(Reduce, PointValues) {
    Graph g;
    auto n = g.row_l2_normalize(Tensor::from_rows({{3, 4}}));
    EXPECT_NEAR(n[0], 0.6, 1e-15);
    EXPECT_NEAR(n[1], 0.8, 1e-15);
    auto s = g.softmax_row(Tensor::from_rows({{0, 0, 0}}));
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(s[i], 1.0 / 3.0, 1e-15);
}

TEST(Reduce, FrobeniusMatchesDirectSum) {
    std::mt19937_64 rng(3);
    Tensor x = randn(3, 3, rng);
    double brute = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) brute += x(i, j) * x(i, j);
    Graph g;
    EXPECT_NEAR(g.frobenius_sq(x).item(), brute, 1e-12);
}

TEST(Reduce, ZeroRowIsGuardedAndCounted) {
    Graph g;
    Tensor x = Tensor::from_rows({{0, 0}, {3, 4}}, true);
    auto y = g.row_l2_normalize(x);
    EXPECT_EQ(g.normalize_warnings(), 1u);
    EXPECT_EQ(y(0, 0), 0.0);
    EXPECT_EQ(y(0, 1), 0.0);
    EXPECT_NEAR(y(1, 0), 0.6, 1e-15);
    g.backward(g.sum(y));
    for (double v : x.grad()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Reduce, SoftmaxRowsAreDistributions) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = randn(4, 5, rng, 10.0);
        Graph g;
        auto s = g.softmax_row(x);
        for (std::size_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                EXPECT_GE(s(i, j), 0.0);
                sum += s(i, j);
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
    }
}

TEST(Reduce, SoftmaxIsShiftStabilized) {
    Graph g;
    auto s = g.softmax_row(Tensor::from_rows({{1000.0, 1000.0}}));
    EXPECT_DOUBLE_EQ(s[0], 0.5);
    auto ls = g.log_softmax_row(Tensor::from_rows({{1000.0, 0.0}}));
    EXPECT_TRUE(std::isfinite(ls[1]));
    EXPECT_NEAR(ls[1], -1000.0, 1e-9);
}

TEST(Kron, UnitAndScalarCases) {
    Graph g;
    auto k = g.kron(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{2.5, -1.5}}));
    ASSERT_EQ(k.cols(), 4u);
    EXPECT_EQ(k[0], 2.5);
    EXPECT_EQ(k[1], -1.5);
    EXPECT_EQ(k[2], 0.0);
    EXPECT_EQ(k[3], 0.0);
    auto s = g.kron(Tensor::from_rows({{2, 3}}), Tensor::from_rows({{5}}));
    EXPECT_EQ(s[0], 10);
    EXPECT_EQ(s[1], 15);
}

TEST(Kron, RejectsNonRowVectors) {
    Graph g;
    EXPECT_THROW(g.kron(Tensor(2, 2), Tensor(1, 2)), ShapeError);
    EXPECT_THROW(g.kron(Tensor(1, 2), Tensor(3, 1)), ShapeError);
}

TEST(Kron, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(5);
    Tensor a = randn(1, 4, rng, 1.0, true);
    Tensor b = randn(1, 3, rng, 1.0, true);
    Tensor w = randn(1, 12, rng);
    std::vector<Tensor> leaves{a, b};
    auto r = grad_check([&](Graph& g) { return weighted(g, g.kron(a, b), w); }, leaves, 1e-5, 1e-6);
    EXPECT_TRUE(r.passed) << r.worst;
}

TEST(Backward, SumAndFrobenius) {
    std::mt19937_64 rng(1);
    Tensor x = randn(3, 4, rng, 1.0, true);
    {
        Graph g;
        g.backward(g.sum(x));
        for (double v : x.grad()) EXPECT_EQ(v, 1.0);
    }
    x.zero_grad();
    {
        Graph g;
        g.backward(g.frobenius_sq(x));
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
    }
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
    std::mt19937_64 rng(9);
    Tensor a = randn(3, 4, rng, 0.5, true);
    Tensor b = randn(4, 2, rng, 0.5, true);
    std::vector<Tensor> leaves{a, b};
    auto r = grad_check([&](Graph& g) { return g.sum(g.tanh(g.matmul(a, b))); }, leaves, 1e-5, 1e-6);
    EXPECT_TRUE(r.passed) << r.worst;
}

TEST(Backward, NonScalarLossIsContractError) {
    Graph g;
    Tensor x(2, 2, true);
    auto y = g.tanh(x);
    EXPECT_THROW(g.backward(y), ContractError);
}

TEST(Backward, RepeatedCallsAccumulateIntoLeaves) {
    std::mt19937_64 rng(2);
    Tensor x = randn(2, 3, rng, 1.0, true);
    Graph g;
    auto loss = g.frobenius_sq(g.tanh(x));
    g.backward(loss);
    auto once = mkd::testing::copy_grad(x);
    g.backward(loss);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * once[i]);
}

TEST(Backward, IsLinearInTheLoss) {
    std::mt19937_64 rng(4);
    Tensor x = randn(3, 3, rng, 1.0, true);
    auto grad_of = [&](double a, double b) {
        x.zero_grad();
        Graph g;
        auto f = g.sum(g.tanh(x));
        auto h = g.frobenius_sq(g.sigmoid(x));
        g.backward(g.add(g.scale(f, a), g.scale(h, b)));
        return mkd::testing::copy_grad(x);
    };
    auto gf = grad_of(1.0, 0.0);
    auto gh = grad_of(0.0, 1.0);
    auto combo = grad_of(2.5, -0.75);
    for (std::size_t i = 0; i < combo.size(); ++i)
        EXPECT_NEAR(combo[i], 2.5 * gf[i] - 0.75 * gh[i], 1e-10);
}

TEST(Backward, ReplayIsBitIdentical) {
    auto run = [] {
        std::mt19937_64 rng(123);
        Tensor a = randn(5, 4, rng);
        Tensor b = randn(4, 3, rng);
        Graph g;
        auto y = g.softmax_row(g.tanh(g.matmul(a, b)));
        return std::vector<double>(y.data().begin(), y.data().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(GradCheck, LinearFunctionIsExact) {
    std::mt19937_64 rng(8);
    Tensor x = randn(3, 4, rng, 1.0, true);
    Tensor w = randn(3, 4, rng);
    std::vector<Tensor> leaves{x};
    auto r = grad_check([&](Graph& g) { return weighted(g, x, w); }, leaves, 1e-3, 1e-10);
    EXPECT_TRUE(r.passed) << r.worst;
}

TEST(GradCheck, CorruptedBackwardIsDetected) {
    std::mt19937_64 rng(8);
    Tensor x = randn(2, 3, rng, 1.0, true);
    std::vector<Tensor> leaves{x};
    // Square op whose backward forgets the factor of two.
    auto bad_square = [](Graph& g, const Tensor& a) {
        Tensor out(a.rows(), a.cols());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * a[i];
        return g.record("bad_square", out, {a}, [](const Tensor& o, std::span<Tensor> in) {
            const Tensor& xs = in[0];
            auto d = in[0].grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.grad()[i] * xs[i];
        });
    };
    auto r = grad_check([&](Graph& g) { return g.sum(bad_square(g, x)); }, leaves);
    EXPECT_FALSE(r.passed);
    EXPECT_GT(r.worst, 1e-4);
}

// Every differentiable op against central differences over 20 seeds.
TEST(GradCheck, AllOpsAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        Tensor a = randn(3, 4, rng, 1.0, true);
        Tensor b = randn(3, 4, rng, 1.0, true);
        Tensor c = randn(4, 2, rng, 1.0, true);
        Tensor row = randn(1, 4, rng, 1.0, true);
        Tensor pos = Tensor::from(3, 4, std::vector<double>(12), true);
        std::uniform_real_distribution<double> u(0.5, 2.0);
        for (auto& v : pos.data()) v = u(rng);
        Tensor w34 = randn(3, 4, rng);
        Tensor w32 = randn(3, 2, rng);
        Tensor w43 = randn(4, 3, rng);
        Tensor w38 = randn(3, 8, rng);
        Tensor w64 = randn(6, 4, rng);
        Tensor w116 = randn(1, 16, rng);

        std::vector<std::pair<const char*, LossBuilder>> cases = {
            {"matmul", [&](Graph& g) { return weighted(g, g.matmul(a, c), w32); }},
            {"transpose", [&](Graph& g) { return weighted(g, g.transpose(a), w43); }},
            {"add", [&](Graph& g) { return weighted(g, g.add(a, b), w34); }},
            {"sub", [&](Graph& g) { return weighted(g, g.sub(a, b), w34); }},
            {"mul", [&](Graph& g) { return weighted(g, g.mul(a, b), w34); }},
            {"scale", [&](Graph& g) { return weighted(g, g.scale(a, -1.7), w34); }},
            {"shift", [&](Graph& g) { return weighted(g, g.shift(a, 0.3), w34); }},
            {"tanh", [&](Graph& g) { return weighted(g, g.tanh(a), w34); }},
            {"sigmoid", [&](Graph& g) { return weighted(g, g.sigmoid(a), w34); }},
            {"exp", [&](Graph& g) { return weighted(g, g.exp(a), w34); }},
            {"log", [&](Graph& g) { return weighted(g, g.log(pos), w34); }},
            {"abs", [&](Graph& g) { return weighted(g, g.abs(a), w34); }},
            {"relu", [&](Graph& g) { return weighted(g, g.relu(a), w34); }},
            {"selu", [&](Graph& g) { return weighted(g, g.selu(a), w34); }},
            {"sum", [&](Graph& g) { return g.scale(g.sum(a), 1.3); }},
            {"mean", [&](Graph& g) { return g.scale(g.mean(a), 1.3); }},
            {"frobenius_sq", [&](Graph& g) { return g.frobenius_sq(a); }},
            {"row_l2_normalize", [&](Graph& g) { return weighted(g, g.row_l2_normalize(a), w34); }},
            {"softmax_row", [&](Graph& g) { return weighted(g, g.softmax_row(a), w34); }},
            {"log_softmax_row", [&](Graph& g) { return weighted(g, g.log_softmax_row(a), w34); }},
            {"kron", [&](Graph& g) { return weighted(g, g.kron(row, row), w116); }},
            {"concat_cols", [&](Graph& g) { return weighted(g, g.concat_cols(a, b), w38); }},
            {"stack_rows", [&](Graph& g) {
                 std::vector<Tensor> parts{a, b};
                 return weighted(g, g.stack_rows(parts), w64);
             }},
            {"add_row", [&](Graph& g) { return weighted(g, g.add_row(a, row), w34); }},
            {"pick", [&](Graph& g) { return g.scale(g.pick(a, 2, 1), 0.9); }},
        };
        std::vector<Tensor> leaves{a, b, c, row, pos};
        for (auto& [name, f] : cases) {
            auto r = grad_check(f, leaves, 1e-5, 1e-4);
            EXPECT_TRUE(r.passed) << name << " seed " << seed << " worst " << r.worst;
        }
    }
}
