#pragma once

#include "ccmt/fuser.hpp"
#include "ccmt/layout.hpp"

#include <map>
#include <optional>
#include <vector>

namespace ccmt {

// Cascaded cross-modal transformer.
//
// Stage 1 fuses the two text streams: queries from English tokens, keys and
// values from French tokens, giving T_c. Stage 2 fuses T_c with audio:
// queries and values from audio tokens, keys from T_c, giving T_o. Row 0 of
// T_o (the audio class-token position) feeds the request and complaint heads.
//
// Bimodal subsets keep the same roles with one stage:
//   {text_fr, text_en}: stage 1 only, readout from T_c row 0.
//   {text, audio}:      stage 2 with that text stream in place of T_c.
struct CcmtConfig {
    std::size_t k = 100;
    std::size_t d = 32;
    std::size_t d_h = 0; // 0 -> d / heads
    std::size_t heads = 1;
    std::size_t d_mlp = 0; // 0 -> 4*d
    std::size_t depth = 1;
    double eps = 1e-5;
    bool standard_residual = false;
    double dropout = 0.0;
    std::vector<Modality> modalities{Modality::text_fr, Modality::text_en, Modality::audio};

    std::size_t head_dim() const noexcept { return d_h ? d_h : d / heads; }
    std::size_t mlp_hidden() const noexcept { return d_mlp ? d_mlp : 4 * d; }
    bool has(Modality m) const noexcept;
    bool has_stage1() const noexcept { return has(Modality::text_fr) && has(Modality::text_en); }
    bool has_stage2() const noexcept { return has(Modality::audio); }

    void validate() const;
};

CcmtConfig ccmt_config_from(const FuserSpec& spec, std::size_t dim, std::size_t k);

struct CcmtLayout {
    ParamLayout params;
    std::vector<AttentionLayout> stage1; // depth blocks, empty without stage 1
    std::vector<AttentionLayout> stage2; // depth blocks, empty without audio
    std::map<Modality, ParamId> pos_embed;
    std::optional<ParamId> audio_class_token;
    MlpLayout head_request;
    MlpLayout head_complaint;
};

CcmtLayout make_ccmt_layout(const CcmtConfig& cfg);

// Xavier-normal weights, zero biases, unit norm gains, N(0, 0.02^2)
// positional embeddings and audio class token.
ParamStore<float> init_params(const CcmtConfig& cfg, Rng& rng);

// tokens + pos_embed[modality], including the class-token row.
template <typename T>
Var<T> add_positional(const ParamBinding<T>& p, const CcmtLayout& layout, Modality m, Var<T> tokens);

template <typename T>
struct CcmtOutputs {
    Var<T> logits;              // [1 x 2]
    std::optional<Var<T>> t_c;  // stage-1 output
    std::optional<Var<T>> t_o;  // stage-2 output
};

// Inputs are uniformized [k x d] token matrices. The audio input's row 0 is
// a placeholder replaced by the learned audio class token.
template <typename T>
CcmtOutputs<T> ccmt_forward(const ParamBinding<T>& p, const CcmtLayout& layout, const CcmtConfig& cfg,
                            const ModalityVars<T>& inputs, Rng* dropout_rng = nullptr);

template <typename T>
class CcmtFuser : public Fuser<T> {
public:
    CcmtFuser(FuserSpec spec, std::size_t dim, std::size_t k);

    bool audio_class_slot() const override { return cfg_.has(Modality::audio); }
    Var<T> logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng* dropout_rng) const override;

    const CcmtConfig& config() const noexcept { return cfg_; }
    const CcmtLayout& ccmt_layout() const noexcept { return ccmt_layout_; }

private:
    CcmtConfig cfg_;
    CcmtLayout ccmt_layout_;
};

} // namespace ccmt
