#include "mkd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "mkd/errors.hpp"

namespace mkd {

// ---------------------------------------------------------------- Tensor --

Tensor::Tensor(std::size_t rows, std::size_t cols, bool requires_grad)
    : s_(std::make_shared<Storage>()) {
    s_->rows = rows;
    s_->cols = cols;
    s_->data.assign(rows * cols, 0.0);
    set_requires_grad(requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values,
                    bool requires_grad) {
    if (values.size() != rows * cols) {
        throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                         " values for shape (" + std::to_string(rows) + "x" +
                         std::to_string(cols) + ")");
    }
    Tensor t;
    t.s_ = std::make_shared<Storage>();
    t.s_->rows = rows;
    t.s_->cols = cols;
    t.s_->data = std::move(values);
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("Tensor::from_rows: ragged rows");
        v.insert(v.end(), row.begin(), row.end());
    }
    return from(r, c, std::move(v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from(1, 1, {v}, requires_grad); }

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double v) {
    return from(rows, cols, std::vector<double>(rows * cols, v));
}

std::string Tensor::shape_str() const {
    return "(" + std::to_string(rows()) + "x" + std::to_string(cols()) + ")";
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("Tensor::item on non-scalar " + shape_str());
    return s_->data[0];
}

void Tensor::set_requires_grad(bool on) {
    s_->requires_grad = on;
    if (on) {
        s_->grad.assign(s_->data.size(), 0.0);
    } else {
        s_->grad.clear();
    }
}

void Tensor::zero_grad() {
    if (s_) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    if (!s_) return {};
    return from(rows(), cols(), s_->data, requires_grad());
}

// ----------------------------------------------------------------- Graph --

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

void require_defined(const char* op, const Tensor& a) {
    if (!a.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

// Unary elementwise op with derivative expressed in terms of (x, y).
template <class Fwd, class Deriv>
Tensor unary(Graph& g, const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
    require_defined(op, a);
    Tensor out(a.rows(), a.cols());
    auto x = a.data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
    return g.record(op, out, {a}, [deriv](const Tensor& o, std::span<Tensor> in) {
        if (!in[0].requires_grad()) return;
        auto gx = in[0].grad();
        auto xs = std::as_const(in[0]).data();
        auto ys = o.data();
        auto go = o.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * deriv(xs[i], ys[i]);
    });
}

} // namespace

Tensor Graph::record(const char* op, Tensor out, std::vector<Tensor> inputs, BackwardFn fn) {
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    out.set_requires_grad(needs);
    nodes_.push_back(Node{op, std::move(inputs), out, needs ? std::move(fn) : BackwardFn{}});
    return out;
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    require_defined("matmul", a);
    require_defined("matmul", b);
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree " + a.shape_str() + " x " +
                         b.shape_str());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out(m, n);
    auto A = a.data();
    auto B = b.data();
    auto C = out.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t t = 0; t < k; ++t) {
            const double av = A[i * k + t];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) C[i * n + j] += av * B[t * n + j];
        }
    }
    return record("matmul", out, {a, b}, [m, k, n](const Tensor& o, std::span<Tensor> in) {
        auto G = o.grad();
        if (in[0].requires_grad()) {
            // dA = G * B^T
            auto dA = in[0].grad();
            auto Bv = std::as_const(in[1]).data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * Bv[t * n + j];
                    dA[i * k + t] += s;
                }
        }
        if (in[1].requires_grad()) {
            // dB = A^T * G
            auto dB = in[1].grad();
            auto Av = std::as_const(in[0]).data();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    const double av = Av[i * k + t];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) dB[t * n + j] += av * G[i * n + j];
                }
        }
    });
}

Tensor Graph::transpose(const Tensor& a) {
    require_defined("transpose", a);
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out(c, r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
    return record("transpose", out, {a}, [r, c](const Tensor& o, std::span<Tensor> in) {
        auto dA = in[0].grad();
        auto G = o.grad();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dA[i * c + j] += G[j * r + i];
    });
}

Tensor Graph::kron(const Tensor& a, const Tensor& b) {
    require_defined("kron", a);
    require_defined("kron", b);
    if (a.rows() != 1 || b.rows() != 1) {
        throw ShapeError("kron: expects row vectors, got " + a.shape_str() + " and " +
                         b.shape_str());
    }
    const std::size_t p = a.cols(), q = b.cols();
    Tensor out(1, p * q);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) out[i * q + j] = a[i] * b[j];
    return record("kron", out, {a, b}, [p, q](const Tensor& o, std::span<Tensor> in) {
        auto G = o.grad();
        const Tensor& av = in[0];
        const Tensor& bv = in[1];
        if (in[0].requires_grad()) {
            auto dA = in[0].grad();
            for (std::size_t i = 0; i < p; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < q; ++j) s += G[i * q + j] * bv[j];
                dA[i] += s;
            }
        }
        if (in[1].requires_grad()) {
            auto dB = in[1].grad();
            for (std::size_t j = 0; j < q; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < p; ++i) s += G[i * q + j] * av[i];
                dB[j] += s;
            }
        }
    });
}

Tensor Graph::concat_cols(const Tensor& a, const Tensor& b) {
    require_defined("concat_cols", a);
    require_defined("concat_cols", b);
    if (a.rows() != b.rows()) {
        throw ShapeError("concat_cols: row counts differ " + a.shape_str() + " vs " +
                         b.shape_str());
    }
    const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
    Tensor out(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < ca; ++j) out(i, j) = a(i, j);
        for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = b(i, j);
    }
    return record("concat_cols", out, {a, b},
                  [r, ca, cb, c](const Tensor& o, std::span<Tensor> in) {
                      auto G = o.grad();
                      if (in[0].requires_grad()) {
                          auto d = in[0].grad();
                          for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < ca; ++j) d[i * ca + j] += G[i * c + j];
                      }
                      if (in[1].requires_grad()) {
                          auto d = in[1].grad();
                          for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < cb; ++j)
                                  d[i * cb + j] += G[i * c + ca + j];
                      }
                  });
}

Tensor Graph::stack_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("stack_rows: no inputs");
    const std::size_t c = parts[0].cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        require_defined("stack_rows", p);
        if (p.cols() != c) {
            throw ShapeError("stack_rows: column counts differ " + parts[0].shape_str() +
                             " vs " + p.shape_str());
        }
        r += p.rows();
    }
    Tensor out(r, c);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
        off += p.size();
    }
    return record("stack_rows", out, std::vector<Tensor>(parts.begin(), parts.end()),
                  [](const Tensor& o, std::span<Tensor> in) {
                      auto G = o.grad();
                      std::size_t at = 0;
                      for (auto& t : in) {
                          if (t.requires_grad()) {
                              auto d = t.grad();
                              for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[at + i];
                          }
                          at += t.size();
                      }
                  });
}

Tensor Graph::add_row(const Tensor& a, const Tensor& row) {
    require_defined("add_row", a);
    require_defined("add_row", row);
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw ShapeError("add_row: cannot broadcast " + row.shape_str() + " onto " +
                         a.shape_str());
    }
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) = a(i, j) + row[j];
    return record("add_row", out, {a, row}, [r, c](const Tensor& o, std::span<Tensor> in) {
        auto G = o.grad();
        if (in[0].requires_grad()) {
            auto d = in[0].grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
        }
        if (in[1].requires_grad()) {
            auto d = in[1].grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) d[j] += G[i * c + j];
        }
    });
}

Tensor Graph::pick(const Tensor& a, std::size_t r, std::size_t c) {
    require_defined("pick", a);
    if (r >= a.rows() || c >= a.cols()) {
        throw ShapeError("pick: index (" + std::to_string(r) + "," + std::to_string(c) +
                         ") outside " + a.shape_str());
    }
    const std::size_t idx = r * a.cols() + c;
    return record("pick", Tensor::scalar(a[idx]), {a},
                  [idx](const Tensor& o, std::span<Tensor> in) { in[0].grad()[idx] += o.grad()[0]; });
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return record("add", out, {a, b}, [](const Tensor& o, std::span<Tensor> in) {
        auto G = o.grad();
        for (auto& t : in) {
            if (!t.requires_grad()) continue;
            auto d = t.grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
        }
    });
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return record("sub", out, {a, b}, [](const Tensor& o, std::span<Tensor> in) {
        auto G = o.grad();
        if (in[0].requires_grad()) {
            auto d = in[0].grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i];
        }
        if (in[1].requires_grad()) {
            auto d = in[1].grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= G[i];
        }
    });
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return record("mul", out, {a, b}, [](const Tensor& o, std::span<Tensor> in) {
        auto G = o.grad();
        const Tensor& av = in[0];
        const Tensor& bv = in[1];
        if (in[0].requires_grad()) {
            auto d = in[0].grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i] * bv[i];
        }
        if (in[1].requires_grad()) {
            auto d = in[1].grad();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += G[i] * av[i];
        }
    });
}

Tensor Graph::scale(const Tensor& a, double s) {
    return unary(
        *this, "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor Graph::shift(const Tensor& a, double s) {
    return unary(
        *this, "shift", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor Graph::tanh(const Tensor& a) {
    return unary(
        *this, "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor Graph::sigmoid(const Tensor& a) {
    return unary(
        *this, "sigmoid", a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor Graph::exp(const Tensor& a) {
    return unary(
        *this, "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor Graph::log(const Tensor& a) {
    require_defined("log", a);
    for (double v : a.data()) {
        if (!(v > 0.0)) throw std::domain_error("log: non-positive entry " + std::to_string(v));
    }
    return unary(
        *this, "log", a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor Graph::abs(const Tensor& a) {
    return unary(
        *this, "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor Graph::relu(const Tensor& a) {
    return unary(
        *this, "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor Graph::selu(const Tensor& a) {
    return unary(
        *this, "selu", a,
        [](double x) {
            return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
        },
        [](double x, double) {
            return x > 0.0 ? kSeluLambda : kSeluLambda * kSeluAlpha * std::exp(x);
        });
}

Tensor Graph::sum(const Tensor& a) {
    require_defined("sum", a);
    double s = 0.0;
    for (double v : a.data()) s += v;
    return record("sum", Tensor::scalar(s), {a}, [](const Tensor& o, std::span<Tensor> in) {
        const double g = o.grad()[0];
        for (double& d : in[0].grad()) d += g;
    });
}

Tensor Graph::mean(const Tensor& a) {
    require_defined("mean", a);
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double v : a.data()) s += v;
    const double n = static_cast<double>(a.size());
    return record("mean", Tensor::scalar(s / n), {a}, [n](const Tensor& o, std::span<Tensor> in) {
        const double g = o.grad()[0] / n;
        for (double& d : in[0].grad()) d += g;
    });
}

Tensor Graph::frobenius_sq(const Tensor& a) {
    require_defined("frobenius_sq", a);
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return record("frobenius_sq", Tensor::scalar(s), {a},
                  [](const Tensor& o, std::span<Tensor> in) {
                      const double g = o.grad()[0];
                      const Tensor& x = in[0];
                      auto d = in[0].grad();
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * g * x[i];
                  });
}

Tensor Graph::row_l2_normalize(const Tensor& a) {
    require_defined("row_l2_normalize", a);
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out(r, c);
    std::vector<double> norms(r);
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += a(i, j) * a(i, j);
        double n = std::sqrt(s);
        if (n <= kNormalizeEps) {
            n = kNormalizeEps;
            ++normalize_warnings_;
        }
        norms[i] = n;
        for (std::size_t j = 0; j < c; ++j) out(i, j) = a(i, j) / n;
    }
    return record("row_l2_normalize", out, {a},
                  [r, c, norms = std::move(norms)](const Tensor& o, std::span<Tensor> in) {
                      auto G = o.grad();
                      auto d = in[0].grad();
                      for (std::size_t i = 0; i < r; ++i) {
                          const double n = norms[i];
                          if (n == kNormalizeEps) {
                              // Guarded row: the divisor is a constant.
                              for (std::size_t j = 0; j < c; ++j) d[i * c + j] += G[i * c + j] / n;
                              continue;
                          }
                          double gy = 0.0;
                          for (std::size_t j = 0; j < c; ++j) gy += G[i * c + j] * o(i, j);
                          for (std::size_t j = 0; j < c; ++j)
                              d[i * c + j] += (G[i * c + j] - o(i, j) * gy) / n;
                      }
                  });
}

Tensor Graph::softmax_row(const Tensor& a) {
    require_defined("softmax_row", a);
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, a(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            out(i, j) = std::exp(a(i, j) - mx);
            s += out(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) out(i, j) /= s;
    }
    return record("softmax_row", out, {a}, [r, c](const Tensor& o, std::span<Tensor> in) {
        auto G = o.grad();
        auto d = in[0].grad();
        for (std::size_t i = 0; i < r; ++i) {
            double gy = 0.0;
            for (std::size_t j = 0; j < c; ++j) gy += G[i * c + j] * o(i, j);
            for (std::size_t j = 0; j < c; ++j) d[i * c + j] += o(i, j) * (G[i * c + j] - gy);
        }
    });
}

Tensor Graph::log_softmax_row(const Tensor& a) {
    require_defined("log_softmax_row", a);
    const std::size_t r = a.rows(), c = a.cols();
    Tensor out(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, a(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(a(i, j) - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < c; ++j) out(i, j) = a(i, j) - lse;
    }
    return record("log_softmax_row", out, {a}, [r, c](const Tensor& o, std::span<Tensor> in) {
        auto G = o.grad();
        auto d = in[0].grad();
        for (std::size_t i = 0; i < r; ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < c; ++j) gs += G[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                d[i * c + j] += G[i * c + j] - std::exp(o(i, j)) * gs;
        }
    });
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
        throw ContractError("backward: loss must be 1x1, got " + loss.shape_str());
    }
    if (!loss.requires_grad()) return;
    for (auto& n : nodes_) {
        if (n.output.requires_grad()) n.output.zero_grad();
    }
    Tensor root = loss;
    // A leaf loss (no recorded op) simply receives d(loss)/d(loss) = 1.
    root.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->backward) continue;
        it->backward(it->output, it->inputs);
    }
}

} // namespace mkd
