#include "ccmt/graph.hpp"

#include "ccmt/errors.hpp"
#include "ccmt/rng.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>

namespace ccmt {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<RowMat<T>> as_mat(Tensor<T>& t) {
    return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Eigen::Map<const RowMat<T>> as_mat(const Tensor<T>& t) {
    return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
void check_same_graph(Var<T> a, Var<T> b) {
    if (a.graph != b.graph || a.graph == nullptr) throw ContractError("operands belong to different graphs");
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

} // namespace

// ---- Graph --------------------------------------------------------------

template <typename T>
Var<T> Graph<T>::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::leaf(const Tensor<T>& value, Tensor<T>* grad_sink) {
    if (grad_sink && !grad_sink->same_shape(value))
        throw DimensionError("grad sink " + shape_str(grad_sink->shape()) + " does not match parameter " +
                             shape_str(value.shape()));
    Node n;
    n.external = &value;
    n.grad_sink = grad_sink;
    n.requires_grad = true;
    return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) {
        if (i >= nodes_.size()) throw ContractError("op input is not recorded on this graph");
        return nodes_[i].requires_grad;
    });
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

template <typename T>
const Tensor<T>& Graph<T>::value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
}

template <typename T>
Tensor<T>& Graph<T>::grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
    if (loss.graph != this) throw ContractError("loss belongs to a different graph");
    if (value(loss.id).size() != 1)
        throw ContractError("backward needs a scalar loss, got shape " + shape_str(value(loss.id).shape()));
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id).fill(T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, i);
        if (n.grad_sink) accumulate(*n.grad_sink, n.grad);
    }
}

// ---- ops ----------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    check_same_graph(a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.cols() != B.rows())
        throw DimensionError("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    Tensor<T> out(Shape{A.rows(), B.cols()});
    as_mat(out).noalias() = as_mat(A) * as_mat(B);
    const std::size_t ia = a.id, ib = b.id;
    return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
        const auto& dC = g.grad(self);
        if (g.requires_grad(ia)) as_mat(g.grad(ia)).noalias() += as_mat(dC) * as_mat(g.value(ib)).transpose();
        if (g.requires_grad(ib)) as_mat(g.grad(ib)).noalias() += as_mat(g.value(ia)).transpose() * as_mat(dC);
    });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
    check_same_graph(a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.cols() != B.cols())
        throw DimensionError("matmul_nt: " + shape_str(A.shape()) + " x " + shape_str(B.shape()) + "^T");
    Tensor<T> out(Shape{A.rows(), B.rows()});
    as_mat(out).noalias() = as_mat(A) * as_mat(B).transpose();
    const std::size_t ia = a.id, ib = b.id;
    return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
        const auto& dC = g.grad(self);
        if (g.requires_grad(ia)) as_mat(g.grad(ia)).noalias() += as_mat(dC) * as_mat(g.value(ib));
        if (g.requires_grad(ib)) as_mat(g.grad(ib)).noalias() += as_mat(dC).transpose() * as_mat(g.value(ia));
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    check_same_graph(a, b);
    const auto& A = a.value();
    const auto& B = b.value();
    if (A.rows() != B.rows() || A.cols() != B.cols())
        throw DimensionError("add: " + shape_str(A.shape()) + " + " + shape_str(B.shape()));
    Tensor<T> out = A;
    accumulate(out, B);
    const std::size_t ia = a.id, ib = b.id;
    return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad(self);
        if (g.requires_grad(ia)) accumulate(g.grad(ia), d);
        if (g.requires_grad(ib)) accumulate(g.grad(ib), d);
    });
}

template <typename T>
Var<T> add_row(Var<T> x, Var<T> row) {
    check_same_graph(x, row);
    const auto& X = x.value();
    const auto& R = row.value();
    if (R.size() != X.cols())
        throw DimensionError("add_row: " + shape_str(X.shape()) + " + row " + shape_str(R.shape()));
    Tensor<T> out = X;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto dst = out.row(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += R[c];
    }
    const std::size_t ix = x.id, ir = row.id;
    return x.graph->record(std::move(out), {ix, ir}, [ix, ir](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad(self);
        if (g.requires_grad(ix)) accumulate(g.grad(ix), d);
        if (g.requires_grad(ir)) {
            auto& dr = g.grad(ir);
            for (std::size_t r = 0; r < d.rows(); ++r) {
                auto src = d.row(r);
                for (std::size_t c = 0; c < src.size(); ++c) dr[c] += src[c];
            }
        }
    });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v *= factor;
    const std::size_t ix = x.id;
    return x.graph->record(std::move(out), {ix}, [ix, factor](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad(self);
        auto& dx = g.grad(ix);
        for (std::size_t i = 0; i < d.size(); ++i) dx[i] += factor * d[i];
    });
}

template <typename T>
Var<T> row_softmax(Var<T> x) {
    const auto& X = x.value();
    Tensor<T> out(X.shape());
    for (std::size_t r = 0; r < X.rows(); ++r) {
        auto in = X.row(r);
        auto y = out.row(r);
        const T mx = *std::max_element(in.begin(), in.end());
        T total = 0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            y[c] = std::exp(in[c] - mx);
            total += y[c];
        }
        for (auto& v : y) v /= total;
    }
    const std::size_t ix = x.id;
    return x.graph->record(std::move(out), {ix}, [ix](Graph<T>& g, std::size_t self) {
        const auto& Y = g.value(self);
        const auto& d = g.grad(self);
        auto& dx = g.grad(ix);
        for (std::size_t r = 0; r < Y.rows(); ++r) {
            auto y = Y.row(r);
            auto dy = d.row(r);
            auto dxr = dx.row(r);
            T dot = 0;
            for (std::size_t c = 0; c < y.size(); ++c) dot += y[c] * dy[c];
            for (std::size_t c = 0; c < y.size(); ++c) dxr[c] += y[c] * (dy[c] - dot);
        }
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
    check_same_graph(x, gain);
    check_same_graph(x, bias);
    const auto& X = x.value();
    const auto& G = gain.value();
    const auto& B = bias.value();
    const std::size_t n = X.cols();
    if (G.size() != n || B.size() != n)
        throw DimensionError("layer_norm: input " + shape_str(X.shape()) + ", gain " + shape_str(G.shape()) +
                             ", bias " + shape_str(B.shape()));
    if (!(eps > 0)) throw ContractError("layer_norm eps must be positive");
    Tensor<T> out(X.shape());
    // Cache normalized rows and reciprocal std for backward.
    auto xhat = std::make_shared<Tensor<T>>(X.shape());
    auto rstd = std::make_shared<std::vector<T>>(X.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) {
        auto in = X.row(r);
        T mean = 0;
        for (auto v : in) mean += v;
        mean /= static_cast<T>(n);
        T var = 0;
        for (auto v : in) var += (v - mean) * (v - mean);
        var /= static_cast<T>(n);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        auto xh = xhat->row(r);
        auto y = out.row(r);
        for (std::size_t c = 0; c < n; ++c) {
            xh[c] = (in[c] - mean) * rs;
            y[c] = xh[c] * G[c] + B[c];
        }
    }
    const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
    return x.graph->record(std::move(out), {ix, ig, ib}, [ix, ig, ib, xhat, rstd, n](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad(self);
        const auto& G = g.value(ig);
        const bool need_x = g.requires_grad(ix);
        const bool need_g = g.requires_grad(ig);
        const bool need_b = g.requires_grad(ib);
        std::vector<T> dxhat(n);
        for (std::size_t r = 0; r < d.rows(); ++r) {
            auto dy = d.row(r);
            auto xh = xhat->row(r);
            if (need_g) {
                auto& dg = g.grad(ig);
                for (std::size_t c = 0; c < n; ++c) dg[c] += dy[c] * xh[c];
            }
            if (need_b) {
                auto& db = g.grad(ib);
                for (std::size_t c = 0; c < n; ++c) db[c] += dy[c];
            }
            if (need_x) {
                T mean_d = 0, mean_dx = 0;
                for (std::size_t c = 0; c < n; ++c) {
                    dxhat[c] = dy[c] * G[c];
                    mean_d += dxhat[c];
                    mean_dx += dxhat[c] * xh[c];
                }
                mean_d /= static_cast<T>(n);
                mean_dx /= static_cast<T>(n);
                auto dx = g.grad(ix).row(r);
                const T rs = (*rstd)[r];
                for (std::size_t c = 0; c < n; ++c) dx[c] += rs * (dxhat[c] - mean_d - xh[c] * mean_dx);
            }
        }
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
} // namespace

double gelu_value(double x) noexcept {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

template <typename T>
Var<T> gelu(Var<T> x) {
    const auto& X = x.value();
    Tensor<T> out(X.shape());
    const T c = static_cast<T>(kGeluC), a = static_cast<T>(kGeluA);
    for (std::size_t i = 0; i < X.size(); ++i) {
        const T v = X[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
    }
    const std::size_t ix = x.id;
    return x.graph->record(std::move(out), {ix}, [ix, c, a](Graph<T>& g, std::size_t self) {
        const auto& X = g.value(ix);
        const auto& d = g.grad(self);
        auto& dx = g.grad(ix);
        for (std::size_t i = 0; i < X.size(); ++i) {
            const T v = X[i];
            const T th = std::tanh(c * (v + a * v * v * v));
            const T deriv = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * a * v * v);
            dx[i] += deriv * d[i];
        }
    });
}

template <typename T>
Var<T> dropout(Var<T> x, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout probability must be in [0, 1)");
    if (p == 0.0) return x;
    const auto& X = x.value();
    auto mask = std::make_shared<std::vector<T>>(X.size());
    const T keep = static_cast<T>(1.0 / (1.0 - p));
    Tensor<T> out(X.shape());
    for (std::size_t i = 0; i < X.size(); ++i) {
        (*mask)[i] = rng.uniform() < p ? T(0) : keep;
        out[i] = X[i] * (*mask)[i];
    }
    const std::size_t ix = x.id;
    return x.graph->record(std::move(out), {ix}, [ix, mask](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad(self);
        auto& dx = g.grad(ix);
        for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * (*mask)[i];
    });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_rows needs at least one input");
    const std::size_t ncols = parts.front().cols();
    std::size_t nrows = 0;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        check_same_graph(parts.front(), p);
        if (p.cols() != ncols)
            throw DimensionError("concat_rows: " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
        nrows += p.rows();
        ids.push_back(p.id);
    }
    Tensor<T> out(Shape{nrows, ncols});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const auto& v = p.value();
        std::copy(v.data(), v.data() + v.size(), out.data() + offset);
        offset += v.size();
    }
    return parts.front().graph->record(std::move(out), ids, [ids](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad(self);
        std::size_t offset = 0;
        for (auto id : ids) {
            const std::size_t len = g.value(id).size();
            if (g.requires_grad(id)) {
                auto& dst = g.grad(id);
                for (std::size_t i = 0; i < len; ++i) dst[i] += d[offset + i];
            }
            offset += len;
        }
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols needs at least one input");
    if (parts.size() == 1) return parts.front();
    const std::size_t nrows = parts.front().rows();
    std::size_t ncols = 0;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        check_same_graph(parts.front(), p);
        if (p.rows() != nrows)
            throw DimensionError("concat_cols: " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
        ncols += p.cols();
        ids.push_back(p.id);
    }
    Tensor<T> out(Shape{nrows, ncols});
    std::size_t col0 = 0;
    for (const auto& p : parts) {
        const auto& v = p.value();
        for (std::size_t r = 0; r < nrows; ++r)
            std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + col0);
        col0 += v.cols();
    }
    return parts.front().graph->record(std::move(out), ids, [ids](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad(self);
        std::size_t col0 = 0;
        for (auto id : ids) {
            const std::size_t w = g.value(id).cols();
            if (g.requires_grad(id)) {
                auto& dst = g.grad(id);
                for (std::size_t r = 0; r < d.rows(); ++r)
                    for (std::size_t c = 0; c < w; ++c) dst(r, c) += d(r, col0 + c);
            }
            col0 += w;
        }
    });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
    const auto& X = x.value();
    if (count == 0 || begin + count > X.rows())
        throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") out of " + shape_str(X.shape()));
    const std::size_t ncols = X.cols();
    Tensor<T> out(Shape{count, ncols});
    std::copy(X.data() + begin * ncols, X.data() + (begin + count) * ncols, out.data());
    const std::size_t ix = x.id;
    return x.graph->record(std::move(out), {ix}, [ix, begin, ncols](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad(self);
        auto& dx = g.grad(ix);
        for (std::size_t i = 0; i < d.size(); ++i) dx[begin * ncols + i] += d[i];
    });
}

template <typename T>
Var<T> mean_rows(Var<T> x) {
    const auto& X = x.value();
    const std::size_t m = X.rows(), n = X.cols();
    Tensor<T> out(Shape{1, n});
    for (std::size_t r = 0; r < m; ++r) {
        auto in = X.row(r);
        for (std::size_t c = 0; c < n; ++c) out[c] += in[c];
    }
    const T inv = T(1) / static_cast<T>(m);
    for (auto& v : out.values()) v *= inv;
    const std::size_t ix = x.id;
    return x.graph->record(std::move(out), {ix}, [ix, inv](Graph<T>& g, std::size_t self) {
        const auto& d = g.grad(self);
        auto& dx = g.grad(ix);
        for (std::size_t r = 0; r < dx.rows(); ++r) {
            auto dst = dx.row(r);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += d[c] * inv;
        }
    });
}

template <typename T>
Var<T> sum(Var<T> x) {
    T total = 0;
    for (auto v : x.value().values()) total += v;
    const std::size_t ix = x.id;
    return x.graph->record(Tensor<T>::scalar(total), {ix}, [ix](Graph<T>& g, std::size_t self) {
        const T d = g.grad(self)[0];
        for (auto& v : g.grad(ix).values()) v += d;
    });
}

#define CCMT_INSTANTIATE_OPS(T)                                                  \
    template class Graph<T>;                                                     \
    template Var<T> matmul(Var<T>, Var<T>);                                      \
    template Var<T> matmul_nt(Var<T>, Var<T>);                                   \
    template Var<T> add(Var<T>, Var<T>);                                         \
    template Var<T> add_row(Var<T>, Var<T>);                                     \
    template Var<T> scale(Var<T>, T);                                            \
    template Var<T> row_softmax(Var<T>);                                         \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                       \
    template Var<T> gelu(Var<T>);                                                \
    template Var<T> dropout(Var<T>, double, Rng&);                               \
    template Var<T> concat_rows(const std::vector<Var<T>>&);                     \
    template Var<T> concat_cols(const std::vector<Var<T>>&);                     \
    template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                \
    template Var<T> mean_rows(Var<T>);                                           \
    template Var<T> sum(Var<T>);

CCMT_INSTANTIATE_OPS(float)
CCMT_INSTANTIATE_OPS(double)
CCMT_INSTANTIATE_OPS(long double)

#undef CCMT_INSTANTIATE_OPS

} // namespace ccmt
