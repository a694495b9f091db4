#include "ccmt/layout.hpp"

#include "ccmt/errors.hpp"

#include <cmath>

namespace ccmt {

ParamId ParamLayout::add(std::string name, Shape shape, Init init, std::size_t fan_in, std::size_t fan_out) {
    for (const auto& s : specs_)
        if (s.name == name) throw ContractError("duplicate parameter name '" + name + "'");
    if (init == Init::xavier && fan_in + fan_out == 0) throw ContractError("xavier init needs fan sizes");
    specs_.push_back(ParamSpec{std::move(name), std::move(shape), init, fan_in, fan_out});
    return ParamId{specs_.size() - 1};
}

ParamStore<float> ParamLayout::initialize(Rng& rng) const {
    ParamStore<float> store;
    for (const auto& s : specs_) {
        TensorF t(s.shape);
        switch (s.init) {
        case Init::zeros: break;
        case Init::ones: t.fill(1.0f); break;
        case Init::xavier: {
            const double sd = std::sqrt(2.0 / static_cast<double>(s.fan_in + s.fan_out));
            for (auto& v : t.values()) v = static_cast<float>(sd * rng.normal());
            break;
        }
        case Init::small_normal:
            for (auto& v : t.values()) v = static_cast<float>(0.02 * rng.normal());
            break;
        }
        store.add(s.name, std::move(t));
    }
    return store;
}

template <typename T>
void ParamLayout::check(const ParamStore<T>& store) const {
    if (store.size() != specs_.size())
        throw ValidationError("expected " + std::to_string(specs_.size()) + " parameter tensors, got " +
                              std::to_string(store.size()));
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        if (store.name(i) != specs_[i].name)
            throw ValidationError("parameter " + std::to_string(i) + " is '" + store.name(i) + "', expected '" +
                                  specs_[i].name + "'");
        if (store.at(i).shape() != specs_[i].shape)
            throw ValidationError("parameter '" + specs_[i].name + "' has shape " + shape_str(store.at(i).shape()) +
                                  ", expected " + shape_str(specs_[i].shape));
    }
}

template void ParamLayout::check(const ParamStore<float>&) const;
template void ParamLayout::check(const ParamStore<double>&) const;
template void ParamLayout::check(const ParamStore<long double>&) const;

MlpLayout add_mlp(ParamLayout& layout, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out) {
    MlpLayout m;
    m.w1 = layout.weight(prefix + ".w1", in, hidden);
    m.b1 = layout.add(prefix + ".b1", {hidden}, Init::zeros);
    m.w2 = layout.weight(prefix + ".w2", hidden, out);
    m.b2 = layout.add(prefix + ".b2", {out}, Init::zeros);
    return m;
}

template <typename T>
Var<T> mlp_forward(const ParamBinding<T>& p, const MlpLayout& mlp, Var<T> x) {
    auto h = gelu(add_row(matmul(x, p[mlp.w1]), p[mlp.b1]));
    return add_row(matmul(h, p[mlp.w2]), p[mlp.b2]);
}

AttentionLayout add_attention_block(ParamLayout& layout, const std::string& prefix, std::size_t d, std::size_t d_h,
                                    std::size_t heads) {
    if (d == 0 || d_h == 0 || heads == 0) throw ContractError("attention block sizes must be positive");
    AttentionLayout b;
    b.d = d;
    b.d_h = d_h;
    for (std::size_t h = 0; h < heads; ++h) {
        const auto tag = "." + std::to_string(h);
        b.w_q.push_back(layout.weight(prefix + ".w_q" + tag, d, d_h));
        b.w_k.push_back(layout.weight(prefix + ".w_k" + tag, d, d_h));
        b.w_v.push_back(layout.weight(prefix + ".w_v" + tag, d, d_h));
    }
    b.m = layout.weight(prefix + ".m", heads * d_h, d);
    b.norm1_gain = layout.add(prefix + ".norm1.gain", {d}, Init::ones);
    b.norm1_bias = layout.add(prefix + ".norm1.bias", {d}, Init::zeros);
    b.norm2_gain = layout.add(prefix + ".norm2.gain", {d}, Init::ones);
    b.norm2_bias = layout.add(prefix + ".norm2.bias", {d}, Init::zeros);
    b.ff = add_mlp(layout, prefix + ".ff", d, 4 * d, d);
    return b;
}

template <typename T>
Var<T> attention_block(const ParamBinding<T>& p, const AttentionLayout& block, Var<T> q_src, Var<T> k_src,
                       Var<T> v_src, const BlockOptions& opt) {
    for (auto v : {q_src, k_src, v_src})
        if (v.cols() != block.d)
            throw DimensionError("attention block expects width " + std::to_string(block.d) + ", got " +
                                 shape_str(v.shape()));
    if (k_src.rows() != v_src.rows())
        throw DimensionError("keys " + shape_str(k_src.shape()) + " and values " + shape_str(v_src.shape()) +
                             " differ in row count");

    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(block.d_h));
    std::vector<Var<T>> heads;
    heads.reserve(block.w_q.size());
    for (std::size_t h = 0; h < block.w_q.size(); ++h) {
        auto q = matmul(q_src, p[block.w_q[h]]);
        auto k = matmul(k_src, p[block.w_k[h]]);
        auto v = matmul(v_src, p[block.w_v[h]]);
        auto attn = row_softmax(scale(matmul_nt(q, k), inv_sqrt_dh));
        heads.push_back(matmul(attn, v));
    }
    auto y = matmul(concat_cols(heads), p[block.m]);
    if (opt.dropout > 0) y = dropout(y, opt.dropout, *opt.dropout_rng);
    const T eps = static_cast<T>(opt.eps);

    if (opt.standard_residual) {
        auto z = layer_norm(add(q_src, y), p[block.norm1_gain], p[block.norm1_bias], eps);
        auto f = mlp_forward(p, block.ff, z);
        if (opt.dropout > 0) f = dropout(f, opt.dropout, *opt.dropout_rng);
        return layer_norm(add(z, f), p[block.norm2_gain], p[block.norm2_bias], eps);
    }
    auto z = add(y, layer_norm(y, p[block.norm1_gain], p[block.norm1_bias], eps));
    auto f = mlp_forward(p, block.ff, layer_norm(z, p[block.norm2_gain], p[block.norm2_bias], eps));
    if (opt.dropout > 0) f = dropout(f, opt.dropout, *opt.dropout_rng);
    return add(z, f);
}

template Var<float> mlp_forward(const ParamBinding<float>&, const MlpLayout&, Var<float>);
template Var<double> mlp_forward(const ParamBinding<double>&, const MlpLayout&, Var<double>);
template Var<float> attention_block(const ParamBinding<float>&, const AttentionLayout&, Var<float>, Var<float>,
                                    Var<float>, const BlockOptions&);
template Var<double> attention_block(const ParamBinding<double>&, const AttentionLayout&, Var<double>, Var<double>,
                                     Var<double>, const BlockOptions&);
template Var<long double> mlp_forward(const ParamBinding<long double>&, const MlpLayout&, Var<long double>);
template Var<long double> attention_block(const ParamBinding<long double>&, const AttentionLayout&, Var<long double>,
                                          Var<long double>, Var<long double>, const BlockOptions&);

} // namespace ccmt
