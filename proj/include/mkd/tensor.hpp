#pragma once

// Dense row-major matrix handle plus a define-by-run tape for reverse-mode
// differentiation. Only the operations needed by the distillation model and
// its losses are provided.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mkd {

/// Shared handle to a (rows x cols) block of doubles with an optional
/// gradient accumulator. Copies of a Tensor alias the same storage; use
/// clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, bool requires_grad = false);

    static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                            bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor filled(std::size_t rows, std::size_t cols, double v);

    bool defined() const noexcept { return static_cast<bool>(s_); }
    std::size_t rows() const noexcept { return s_ ? s_->rows : 0; }
    std::size_t cols() const noexcept { return s_ ? s_->cols : 0; }
    std::size_t size() const noexcept { return s_ ? s_->data.size() : 0; }
    std::string shape_str() const;

    std::span<double> data() { return s_->data; }
    std::span<const double> data() const { return s_->data; }
    double& operator()(std::size_t r, std::size_t c) { return s_->data[r * s_->cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return s_->data[r * s_->cols + c]; }
    double& operator[](std::size_t i) { return s_->data[i]; }
    double operator[](std::size_t i) const { return s_->data[i]; }
    /// Value of a 1x1 tensor.
    double item() const;

    bool requires_grad() const noexcept { return s_ && s_->requires_grad; }
    void set_requires_grad(bool on);
    std::span<double> grad() { return s_->grad; }
    std::span<const double> grad() const { return s_->grad; }
    void zero_grad();

    Tensor clone() const;
    bool same_storage(const Tensor& other) const noexcept { return s_ == other.s_; }

private:
    struct Storage {
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Storage> s_;
};

/// Records operations in insertion order; backward() walks the record in
/// reverse. A graph is built per forward pass and owned by one thread.
class Graph {
public:
    /// Receives the op output (with its grad populated) and the op inputs; it
    /// must add into grad() of every input that requires_grad().
    using BackwardFn = std::function<void(const Tensor& out, std::span<Tensor> inputs)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    // linear algebra
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& a);
    Tensor kron(const Tensor& a, const Tensor& b);
    Tensor concat_cols(const Tensor& a, const Tensor& b);
    Tensor stack_rows(std::span<const Tensor> rows);
    Tensor add_row(const Tensor& a, const Tensor& row);
    Tensor pick(const Tensor& a, std::size_t r, std::size_t c);

    // elementwise
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double s);
    Tensor shift(const Tensor& a, double s);
    Tensor tanh(const Tensor& a);
    Tensor sigmoid(const Tensor& a);
    Tensor exp(const Tensor& a);
    Tensor log(const Tensor& a);
    Tensor abs(const Tensor& a);
    Tensor relu(const Tensor& a);
    Tensor selu(const Tensor& a);

    // reductions
    Tensor sum(const Tensor& a);
    Tensor mean(const Tensor& a);
    Tensor frobenius_sq(const Tensor& a);
    Tensor row_l2_normalize(const Tensor& a);
    Tensor softmax_row(const Tensor& a);
    Tensor log_softmax_row(const Tensor& a);

    /// Appends a custom node. `out` is the already computed forward value.
    Tensor record(const char* op, Tensor out, std::vector<Tensor> inputs, BackwardFn fn);

    /// Reverse pass from a 1x1 loss. Leaf gradients accumulate across calls;
    /// intermediate gradients are reset on every call.
    void backward(const Tensor& loss);

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() { nodes_.clear(); }
    /// Number of rows that hit the epsilon guard in row_l2_normalize.
    std::size_t normalize_warnings() const noexcept { return normalize_warnings_; }

private:
    struct Node {
        const char* op;
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    std::size_t normalize_warnings_ = 0;
};

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kNormalizeEps = 1e-12;

} // namespace mkd
