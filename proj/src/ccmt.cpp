#include "ccmt/ccmt.hpp"

#include "ccmt/errors.hpp"

#include <algorithm>

namespace ccmt {

bool CcmtConfig::has(Modality m) const noexcept {
    return std::find(modalities.begin(), modalities.end(), m) != modalities.end();
}

void CcmtConfig::validate() const {
    if (k < 2) throw ValidationError("ccmt: k must be at least 2 (class token plus one token)");
    if (d == 0 || heads == 0 || depth == 0) throw ValidationError("ccmt: d, heads and depth must be positive");
    if (d_h == 0 && d % heads != 0)
        throw ValidationError("ccmt: d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
    if (!(eps > 0)) throw ValidationError("ccmt: eps must be positive");
    if (dropout < 0 || dropout >= 1) throw ValidationError("ccmt: dropout must be in [0, 1)");
    for (auto m : modalities)
        if (m == Modality::text_other)
            throw ValidationError("ccmt: text_other has no role in the cascade");
    if (modalities.size() < 2 || (!has(Modality::text_fr) && !has(Modality::text_en)))
        throw ValidationError("ccmt needs at least two modalities including a text stream");
}

CcmtConfig ccmt_config_from(const FuserSpec& spec, std::size_t dim, std::size_t k) {
    CcmtConfig cfg;
    cfg.k = k;
    cfg.d = dim;
    cfg.d_h = spec.d_h;
    cfg.heads = spec.heads;
    cfg.d_mlp = spec.d_mlp;
    cfg.depth = spec.depth;
    cfg.eps = spec.eps;
    cfg.standard_residual = spec.standard_residual;
    cfg.dropout = spec.dropout;
    cfg.modalities = spec.normalized().modalities;
    return cfg;
}

CcmtLayout make_ccmt_layout(const CcmtConfig& cfg) {
    cfg.validate();
    CcmtLayout out;
    auto& L = out.params;
    const std::size_t d = cfg.d, dh = cfg.head_dim();
    if (cfg.has_stage1())
        for (std::size_t i = 0; i < cfg.depth; ++i)
            out.stage1.push_back(add_attention_block(L, "stage1." + std::to_string(i), d, dh, cfg.heads));
    if (cfg.has_stage2())
        for (std::size_t i = 0; i < cfg.depth; ++i)
            out.stage2.push_back(add_attention_block(L, "stage2." + std::to_string(i), d, dh, cfg.heads));
    for (auto m : cfg.modalities)
        out.pos_embed[m] = L.add("pos_embed." + std::string(modality_name(m)), {cfg.k, d}, Init::small_normal);
    if (cfg.has(Modality::audio)) out.audio_class_token = L.add("audio_class_token", {d}, Init::small_normal);
    out.head_request = add_mlp(L, "head_request", d, cfg.mlp_hidden(), 1);
    out.head_complaint = add_mlp(L, "head_complaint", d, cfg.mlp_hidden(), 1);
    return out;
}

ParamStore<float> init_params(const CcmtConfig& cfg, Rng& rng) {
    return make_ccmt_layout(cfg).params.initialize(rng);
}

template <typename T>
Var<T> add_positional(const ParamBinding<T>& p, const CcmtLayout& layout, Modality m, Var<T> tokens) {
    auto it = layout.pos_embed.find(m);
    if (it == layout.pos_embed.end())
        throw ValidationError("no positional encoding for modality " + std::string(modality_name(m)));
    return add(tokens, p[it->second]);
}

template <typename T>
CcmtOutputs<T> ccmt_forward(const ParamBinding<T>& p, const CcmtLayout& layout, const CcmtConfig& cfg,
                            const ModalityVars<T>& inputs, Rng* dropout_rng) {
    for (auto m : cfg.modalities) {
        auto it = inputs.find(m);
        if (it == inputs.end())
            throw ContractError("ccmt_forward: missing modality " + std::string(modality_name(m)));
        if (it->second.rows() != cfg.k || it->second.cols() != cfg.d)
            throw DimensionError("ccmt_forward: " + std::string(modality_name(m)) + " tokens are " +
                                 shape_str(it->second.shape()) + ", expected [" + std::to_string(cfg.k) + "x" +
                                 std::to_string(cfg.d) + "]");
    }
    if (cfg.dropout > 0 && !dropout_rng) throw ContractError("ccmt_forward: dropout needs an rng");
    BlockOptions opt{cfg.eps, cfg.standard_residual, cfg.dropout, dropout_rng};

    auto encoded = [&](Modality m) { return add_positional(p, layout, m, inputs.at(m)); };

    CcmtOutputs<T> out;
    std::optional<Var<T>> text;
    if (cfg.has_stage1()) {
        auto t_e = encoded(Modality::text_en);
        auto t_f = encoded(Modality::text_fr);
        auto x = t_e;
        for (const auto& block : layout.stage1) x = attention_block(p, block, x, t_f, t_f, opt);
        out.t_c = x;
        text = x;
    } else {
        text = encoded(cfg.has(Modality::text_fr) ? Modality::text_fr : Modality::text_en);
    }

    Var<T> readout_src = *text;
    if (cfg.has_stage2()) {
        auto raw = inputs.at(Modality::audio);
        auto with_cls = concat_rows<T>({p[*layout.audio_class_token], slice_rows(raw, 1, cfg.k - 1)});
        auto t_a = add_positional(p, layout, Modality::audio, with_cls);
        auto x = t_a;
        for (const auto& block : layout.stage2) x = attention_block(p, block, x, *text, x, opt);
        out.t_o = x;
        readout_src = x;
    }

    auto cls = slice_rows(readout_src, 0, 1);
    out.logits = concat_cols<T>({mlp_forward(p, layout.head_request, cls), mlp_forward(p, layout.head_complaint, cls)});
    return out;
}

template <typename T>
CcmtFuser<T>::CcmtFuser(FuserSpec spec, std::size_t dim, std::size_t k)
    : Fuser<T>(std::move(spec), dim, k), cfg_(ccmt_config_from(this->spec_, dim, k)),
      ccmt_layout_(make_ccmt_layout(cfg_)) {
    this->layout_ = ccmt_layout_.params;
}

template <typename T>
Var<T> CcmtFuser<T>::logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng* dropout_rng) const {
    return ccmt_forward(p, ccmt_layout_, cfg_, inputs, dropout_rng).logits;
}

template Var<float> add_positional(const ParamBinding<float>&, const CcmtLayout&, Modality, Var<float>);
template Var<double> add_positional(const ParamBinding<double>&, const CcmtLayout&, Modality, Var<double>);
template CcmtOutputs<float> ccmt_forward(const ParamBinding<float>&, const CcmtLayout&, const CcmtConfig&,
                                         const ModalityVars<float>&, Rng*);
template CcmtOutputs<double> ccmt_forward(const ParamBinding<double>&, const CcmtLayout&, const CcmtConfig&,
                                          const ModalityVars<double>&, Rng*);
template class CcmtFuser<float>;
template class CcmtFuser<double>;
template Var<long double> add_positional(const ParamBinding<long double>&, const CcmtLayout&, Modality,
                                         Var<long double>);
template CcmtOutputs<long double> ccmt_forward(const ParamBinding<long double>&, const CcmtLayout&, const CcmtConfig&,
                                               const ModalityVars<long double>&, Rng*);
template class CcmtFuser<long double>;

} // namespace ccmt
