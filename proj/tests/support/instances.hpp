#pragma once

#include "ccmt/ccmt.hpp"
#include "ccmt/fuser.hpp"
#include "ccmt/gradcheck.hpp"
#include "dense_oracle.hpp"

#include <cmath>
#include <map>
#include <vector>

namespace testing_support {

using namespace ccmt;

struct Instance {
    FuserSpec spec;
    std::size_t dim = 0;
    std::size_t k = 0;
    PreparedSample sample;
    ParamStore<double> params;
};

// Small random architecture with random weights and inputs.
inline Instance random_instance(FusionKind kind, std::vector<Modality> mods, Rng& rng) {
    Instance in;
    in.spec.kind = kind;
    in.spec.modalities = std::move(mods);
    in.spec.heads = 1 + rng.below(2);
    in.spec.d_h = 1 + rng.below(4);
    in.spec.depth = 1 + rng.below(2);
    in.spec.standard_residual = rng.below(4) == 0;
    in.spec.d_mlp = 2 + rng.below(6);
    in.dim = 2 + rng.below(5);
    in.k = 2 + rng.below(4);
    const auto fuser = make_fuser<double>(in.spec, in.dim, in.k);
    in.sample = random_prepared_sample(fuser->spec(), in.dim, in.k, rng);
    in.params = random_params(fuser->layout(), 0.5, rng);
    return in;
}

inline std::map<Modality, oracle::Mat> oracle_inputs(const PreparedSample& s) {
    std::map<Modality, oracle::Mat> out;
    for (const auto& [m, t] : s.tokens) out.emplace(m, oracle::from_tensor(t));
    return out;
}

inline std::array<double, 2> graph_logits(const Instance& in) {
    const auto fuser = make_fuser<double>(in.spec, in.dim, in.k);
    Graph<double> g;
    ParamBinding<double> p(g, in.params, nullptr);
    const auto& l = fuser->logits(p, bind_inputs(g, in.sample), nullptr).value();
    return {l[0], l[1]};
}

inline std::array<double, 2> oracle_logits(const Instance& in) {
    oracle::Params p(in.params);
    oracle::BlockConfig cfg{in.spec.heads, in.spec.eps, in.spec.standard_residual};
    const auto inputs = oracle_inputs(in.sample);
    const auto [r, c] = in.spec.kind == FusionKind::ccmt ? oracle::ccmt(p, inputs, in.spec.depth, cfg)
                                                           : oracle::transformer(p, inputs, in.spec.depth, cfg);
    return {r, c};
}

inline double max_abs_diff(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::max(std::abs(a[0] - b[0]), std::abs(a[1] - b[1]));
}

// One attention block in isolation: random params, random q/k/v sources.
struct BlockInstance {
    ParamLayout layout;
    AttentionLayout block;
    ParamStore<double> params;
    TensorD q, k, v;
    std::size_t heads = 1;
    bool standard_residual = false;
    double eps = 1e-5;
};

inline TensorD random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    TensorD t(Shape{r, c});
    for (auto& x : t.values()) x = rng.normal();
    return t;
}

inline BlockInstance random_block(Rng& rng, std::size_t k_rows = 0) {
    BlockInstance b;
    const std::size_t d = 2 + rng.below(5);
    const std::size_t d_h = 1 + rng.below(4);
    b.heads = 1 + rng.below(3);
    b.standard_residual = rng.below(4) == 0;
    b.block = add_attention_block(b.layout, "blk", d, d_h, b.heads);
    b.params = random_params(b.layout, 0.5, rng);
    const std::size_t nq = 1 + rng.below(5);
    const std::size_t nk = k_rows ? k_rows : 1 + rng.below(5);
    b.q = random_matrix(nq, d, rng);
    b.k = random_matrix(nk, d, rng);
    b.v = random_matrix(nk, d, rng);
    return b;
}

inline TensorD block_forward(const BlockInstance& b, const TensorD& q, const TensorD& k, const TensorD& v) {
    Graph<double> g;
    ParamBinding<double> p(g, b.params, nullptr);
    BlockOptions opt{b.eps, b.standard_residual, 0.0, nullptr};
    return attention_block(p, b.block, g.constant(q), g.constant(k), g.constant(v), opt).value();
}

inline double block_oracle_error(const BlockInstance& b) {
    const auto got = block_forward(b, b.q, b.k, b.v);
    oracle::Params p(b.params);
    const auto want = oracle::block(p, "blk", oracle::from_tensor(b.q), oracle::from_tensor(b.k),
                                    oracle::from_tensor(b.v), {b.heads, b.eps, b.standard_residual});
    double err = 0;
    for (std::size_t i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got[i] - want.a[i]));
    return err;
}

} // namespace testing_support
