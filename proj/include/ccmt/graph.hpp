#pragma once

#include "ccmt/tensor.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace ccmt {

class Rng;
template <typename T>
class Graph;

// Handle to a node recorded on a Graph.
template <typename T>
struct Var {
    Graph<T>* graph = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

// Tape of operations for reverse-mode differentiation. Nodes are appended
// in execution order, so the tape is topologically sorted by construction.
// One graph serves one forward/backward pass and is then discarded.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Input that never receives a gradient.
    Var<T> constant(Tensor<T> value);

    // Trainable leaf bound to an external tensor (not copied; must outlive the
    // graph). After backward() its gradient is added into `grad_sink` when
    // non-null.
    Var<T> leaf(const Tensor<T>& value, Tensor<T>* grad_sink);

    // Records an op. `backward` reads grad(self) and accumulates into the
    // grads of `inputs`; it is only invoked when the node requires grad.
    Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward);

    const Tensor<T>& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    // Gradient buffer for a node, zero-allocated on first access.
    Tensor<T>& grad(std::size_t id);
    bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

    // Populates grads of everything reachable from `loss` (which must hold
    // exactly one element) and flushes leaf grads into their sinks.
    void backward(Var<T> loss);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* external = nullptr;
        Tensor<T> grad;
        Tensor<T>* grad_sink = nullptr;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Var<T> push(Node node);

    std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return graph->value(id);
}

// ---- differentiable ops -------------------------------------------------

// A[m x n] * B[n x p].
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// A[m x n] * B[p x n]^T, used for query-key scores.
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

// X[m x n] + row[n] broadcast over rows.
template <typename T>
Var<T> add_row(Var<T> x, Var<T> row);

template <typename T>
Var<T> scale(Var<T> x, T factor);

// Softmax over each row with per-row max subtraction.
template <typename T>
Var<T> row_softmax(Var<T> x);

// Per-row normalization with population variance.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps);

// Tanh-approximated GELU.
template <typename T>
Var<T> gelu(Var<T> x);

// Inverted dropout; identity when p == 0.
template <typename T>
Var<T> dropout(Var<T> x, double p, Rng& rng);

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts);

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count);

// Column means, [m x n] -> [1 x n].
template <typename T>
Var<T> mean_rows(Var<T> x);

// Sum of all elements as a scalar.
template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) {
    return add(a, b);
}

// Plain (non-graph) helpers shared with tests.
double gelu_value(double x) noexcept;

} // namespace ccmt
