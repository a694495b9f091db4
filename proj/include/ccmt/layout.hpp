#pragma once

#include "ccmt/graph.hpp"
#include "ccmt/params.hpp"
#include "ccmt/rng.hpp"

#include <string>
#include <vector>

namespace ccmt {

enum class Init {
    xavier,       // N(0, 2 / (fan_in + fan_out))
    zeros,
    ones,
    small_normal, // N(0, 0.02^2)
};

struct ParamSpec {
    std::string name;
    Shape shape;
    Init init = Init::zeros;
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
};

// Declares the tensors a model owns, in a fixed order. Initialization walks
// the declarations in that order, so a seed fully determines the values.
class ParamLayout {
public:
    ParamId add(std::string name, Shape shape, Init init, std::size_t fan_in = 0, std::size_t fan_out = 0);
    ParamId weight(std::string name, std::size_t fan_in, std::size_t fan_out) {
        return add(std::move(name), {fan_in, fan_out}, Init::xavier, fan_in, fan_out);
    }

    const std::vector<ParamSpec>& specs() const noexcept { return specs_; }

    ParamStore<float> initialize(Rng& rng) const;

    // Throws ValidationError naming the first mismatching tensor.
    template <typename T>
    void check(const ParamStore<T>& store) const;

private:
    std::vector<ParamSpec> specs_;
};

// Feed-forward / classification MLP: x*W1 + b1 -> GELU -> *W2 + b2.
struct MlpLayout {
    ParamId w1, b1, w2, b2;
};

MlpLayout add_mlp(ParamLayout& layout, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out);

template <typename T>
Var<T> mlp_forward(const ParamBinding<T>& p, const MlpLayout& mlp, Var<T> x);

struct BlockOptions {
    double eps = 1e-5;
    bool standard_residual = false;
    double dropout = 0.0;
    Rng* dropout_rng = nullptr; // required when dropout > 0
};

// One attention block: per-head projections, output re-projection, two norms
// and a d -> 4d -> d feed-forward.
struct AttentionLayout {
    std::vector<ParamId> w_q, w_k, w_v; // one per head, each [d x d_h]
    ParamId m;                          // [(heads*d_h) x d]
    ParamId norm1_gain, norm1_bias, norm2_gain, norm2_bias;
    MlpLayout ff;
    std::size_t d = 0;
    std::size_t d_h = 0;
};

AttentionLayout add_attention_block(ParamLayout& layout, const std::string& prefix, std::size_t d, std::size_t d_h,
                                    std::size_t heads);

// Queries from q_src, keys from k_src, values from v_src (all [k x d]).
//   U_h = softmax(Q_h K_h^T / sqrt(d_h)) V_h,  Y = [U_1 .. U_H] M
// default:            Z = Y + Norm1(Y),       out = Z + FF(Norm2(Z))
// standard_residual:  Z = Norm1(q_src + Y),   out = Norm2(Z + FF(Z))
template <typename T>
Var<T> attention_block(const ParamBinding<T>& p, const AttentionLayout& block, Var<T> q_src, Var<T> k_src,
                       Var<T> v_src, const BlockOptions& opt);

} // namespace ccmt
