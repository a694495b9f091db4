#pragma once

// Step-by-step dense reference for the attention models, written with plain
// loops over std::vector. It looks parameters up by name and shares no code
// with the graph implementation.

#include "ccmt/params.hpp"
#include "ccmt/tokenstore.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace oracle {

struct Mat {
    std::size_t r = 0, c = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t rows, std::size_t cols) : r(rows), c(cols), a(rows * cols, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return a[i * c + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * c + j]; }
};

template <typename T>
Mat from_tensor(const ccmt::Tensor<T>& t) {
    Mat m(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.size(); ++i) m.a[i] = static_cast<double>(t[i]);
    return m;
}

class Params {
public:
    explicit Params(const ccmt::ParamStore<double>& store) : store_(store) {}

    Mat get(const std::string& name) const {
        auto id = store_.find(name);
        if (!id) throw std::out_of_range("oracle: no parameter " + name);
        return from_tensor(store_[*id]);
    }
    bool has(const std::string& name) const { return store_.find(name).has_value(); }

private:
    const ccmt::ParamStore<double>& store_;
};

inline Mat mul(const Mat& x, const Mat& y) {
    if (x.c != y.r) throw std::invalid_argument("oracle: bad matmul");
    Mat out(x.r, y.c);
    for (std::size_t i = 0; i < x.r; ++i)
        for (std::size_t j = 0; j < y.c; ++j) {
            double s = 0;
            for (std::size_t t = 0; t < x.c; ++t) s += x(i, t) * y(t, j);
            out(i, j) = s;
        }
    return out;
}

inline Mat transpose(const Mat& x) {
    Mat out(x.c, x.r);
    for (std::size_t i = 0; i < x.r; ++i)
        for (std::size_t j = 0; j < x.c; ++j) out(j, i) = x(i, j);
    return out;
}

inline Mat plus(const Mat& x, const Mat& y) {
    Mat out = x;
    for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] += y.a[i];
    return out;
}

// x + row vector b on every row.
inline Mat plus_row(const Mat& x, const Mat& b) {
    Mat out = x;
    for (std::size_t i = 0; i < x.r; ++i)
        for (std::size_t j = 0; j < x.c; ++j) out(i, j) += b.a[j];
    return out;
}

inline Mat softmax_rows(const Mat& x) {
    Mat out(x.r, x.c);
    for (std::size_t i = 0; i < x.r; ++i) {
        double mx = x(i, 0);
        for (std::size_t j = 1; j < x.c; ++j) mx = std::max(mx, x(i, j));
        double z = 0;
        for (std::size_t j = 0; j < x.c; ++j) z += std::exp(x(i, j) - mx);
        for (std::size_t j = 0; j < x.c; ++j) out(i, j) = std::exp(x(i, j) - mx) / z;
    }
    return out;
}

inline Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, double eps) {
    Mat out(x.r, x.c);
    for (std::size_t i = 0; i < x.r; ++i) {
        double mean = 0;
        for (std::size_t j = 0; j < x.c; ++j) mean += x(i, j);
        mean /= static_cast<double>(x.c);
        double var = 0;
        for (std::size_t j = 0; j < x.c; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
        var /= static_cast<double>(x.c);
        for (std::size_t j = 0; j < x.c; ++j)
            out(i, j) = (x(i, j) - mean) / std::sqrt(var + eps) * gain.a[j] + bias.a[j];
    }
    return out;
}

inline double gelu(double v) {
    const double pi = 3.14159265358979323846;
    return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / pi) * (v + 0.044715 * v * v * v)));
}

inline Mat mlp(const Params& p, const std::string& prefix, const Mat& x) {
    Mat h = plus_row(mul(x, p.get(prefix + ".w1")), p.get(prefix + ".b1"));
    for (auto& v : h.a) v = gelu(v);
    return plus_row(mul(h, p.get(prefix + ".w2")), p.get(prefix + ".b2"));
}

inline Mat rows(const Mat& x, std::size_t begin, std::size_t count) {
    Mat out(count, x.c);
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < x.c; ++j) out(i, j) = x(begin + i, j);
    return out;
}

inline Mat stack(const std::vector<Mat>& parts) {
    Mat out(0, parts.front().c);
    for (const auto& m : parts) {
        out.a.insert(out.a.end(), m.a.begin(), m.a.end());
        out.r += m.r;
    }
    return out;
}

struct BlockConfig {
    std::size_t heads = 1;
    double eps = 1e-5;
    bool standard_residual = false;
};

inline Mat block(const Params& p, const std::string& prefix, const Mat& q_src, const Mat& k_src, const Mat& v_src,
                 const BlockConfig& cfg) {
    std::vector<Mat> heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        const std::string sfx = "." + std::to_string(h);
        Mat q = mul(q_src, p.get(prefix + ".w_q" + sfx));
        Mat k = mul(k_src, p.get(prefix + ".w_k" + sfx));
        Mat v = mul(v_src, p.get(prefix + ".w_v" + sfx));
        Mat s = mul(q, transpose(k));
        const double scale = 1.0 / std::sqrt(static_cast<double>(q.c));
        for (auto& x : s.a) x *= scale;
        heads.push_back(mul(softmax_rows(s), v));
    }
    // Concatenate heads along columns.
    Mat u(q_src.r, 0);
    for (const auto& h : heads) u.c += h.c;
    u.a.assign(u.r * u.c, 0.0);
    std::size_t off = 0;
    for (const auto& h : heads) {
        for (std::size_t i = 0; i < h.r; ++i)
            for (std::size_t j = 0; j < h.c; ++j) u(i, off + j) = h(i, j);
        off += h.c;
    }
    Mat y = mul(u, p.get(prefix + ".m"));
    const Mat g1 = p.get(prefix + ".norm1.gain"), b1 = p.get(prefix + ".norm1.bias");
    const Mat g2 = p.get(prefix + ".norm2.gain"), b2 = p.get(prefix + ".norm2.bias");
    if (cfg.standard_residual) {
        Mat z = layer_norm(plus(q_src, y), g1, b1, cfg.eps);
        return layer_norm(plus(z, mlp(p, prefix + ".ff", z)), g2, b2, cfg.eps);
    }
    Mat z = plus(y, layer_norm(y, g1, b1, cfg.eps));
    return plus(z, mlp(p, prefix + ".ff", layer_norm(z, g2, b2, cfg.eps)));
}

inline std::pair<double, double> heads(const Params& p, const Mat& cls) {
    return {mlp(p, "head_request", cls).a[0], mlp(p, "head_complaint", cls).a[0]};
}

inline std::string pos_name(ccmt::Modality m) { return "pos_embed." + std::string(ccmt::modality_name(m)); }

// Cascade: text_en queries attend over text_fr, then audio queries/values
// attend over the fused text; readout from row 0 of the last output.
inline std::pair<double, double> ccmt(const Params& p, const std::map<ccmt::Modality, Mat>& in, std::size_t depth,
                                      const BlockConfig& cfg) {
    using ccmt::Modality;
    auto has = [&](Modality m) { return in.count(m) > 0; };
    auto encoded = [&](Modality m) { return plus(in.at(m), p.get(pos_name(m))); };

    Mat text;
    if (has(Modality::text_fr) && has(Modality::text_en)) {
        const Mat t_f = encoded(Modality::text_fr);
        Mat x = encoded(Modality::text_en);
        for (std::size_t i = 0; i < depth; ++i) x = block(p, "stage1." + std::to_string(i), x, t_f, t_f, cfg);
        text = x;
    } else {
        text = encoded(has(Modality::text_fr) ? Modality::text_fr : Modality::text_en);
    }
    if (!has(Modality::audio)) return heads(p, rows(text, 0, 1));

    const Mat& raw = in.at(Modality::audio);
    Mat t_a = stack({p.get("audio_class_token"), rows(raw, 1, raw.r - 1)});
    t_a = plus(t_a, p.get(pos_name(Modality::audio)));
    Mat x = t_a;
    for (std::size_t i = 0; i < depth; ++i) x = block(p, "stage2." + std::to_string(i), x, text, x, cfg);
    return heads(p, rows(x, 0, 1));
}

// Self-attention over [fusion class token; tokens + pos per modality].
inline std::pair<double, double> transformer(const Params& p, const std::map<ccmt::Modality, Mat>& in,
                                             std::size_t depth, const BlockConfig& cfg) {
    std::vector<Mat> parts{p.get("fusion_class_token")};
    for (const auto& [m, t] : in) parts.push_back(plus(t, p.get(pos_name(m))));
    Mat x = stack(parts);
    for (std::size_t i = 0; i < depth; ++i) x = block(p, "block." + std::to_string(i), x, x, x, cfg);
    return heads(p, rows(x, 0, 1));
}

} // namespace oracle
