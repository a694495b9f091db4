#include "ccmt/baselines.hpp"

#include "ccmt/errors.hpp"

namespace ccmt {

BinaryPair plurality_vote(const std::vector<BinaryPair>& votes) {
    if (votes.empty()) throw ContractError("plurality_vote needs at least one voter");
    int request = 0, complaint = 0;
    for (const auto& [r, c] : votes) {
        request += r ? 1 : -1;
        complaint += c ? 1 : -1;
    }
    return {request >= 0 ? 1 : 0, complaint >= 0 ? 1 : 0};
}

template <typename T>
Var<T> unimodal_forward(const ParamBinding<T>& p, const MlpLayout& mlp, Var<T> tokens) {
    return mlp_forward(p, mlp, mean_rows(tokens));
}

template <typename T>
Var<T> mlp_fusion_forward(const ParamBinding<T>& p, const MlpLayout& mlp, std::size_t expected_modalities,
                          const std::vector<Var<T>>& features) {
    if (features.size() != expected_modalities)
        throw ContractError("mlp fusion was built for " + std::to_string(expected_modalities) + " modalities, got " +
                            std::to_string(features.size()));
    return mlp_forward(p, mlp, concat_cols(features));
}

template <typename T>
Var<T> transformer_fusion_forward(const ParamBinding<T>& p, const TransformerLayout& layout,
                                  const std::vector<std::pair<Modality, Var<T>>>& token_sets,
                                  const BlockOptions& opt) {
    if (token_sets.empty()) throw ContractError("transformer fusion needs at least one modality");
    std::vector<Var<T>> parts{p[layout.fusion_class_token]};
    for (const auto& [m, tokens] : token_sets) {
        auto it = layout.pos_embed.find(m);
        if (it == layout.pos_embed.end())
            throw ContractError("transformer fusion has no positional encoding for " + std::string(modality_name(m)));
        parts.push_back(add(tokens, p[it->second]));
    }
    auto x = concat_rows(parts);
    for (const auto& block : layout.blocks) x = attention_block(p, block, x, x, x, opt);
    auto cls = slice_rows(x, 0, 1);
    return concat_cols<T>({mlp_forward(p, layout.head_request, cls), mlp_forward(p, layout.head_complaint, cls)});
}

// ---- fusers -----------------------------------------------------------------

template <typename T>
UnimodalFuser<T>::UnimodalFuser(FuserSpec spec, std::size_t dim, std::size_t k)
    : Fuser<T>(std::move(spec), dim, k) {
    if (this->spec_.modalities.size() != 1) throw ValidationError("unimodal fuser takes exactly one modality");
    mlp_ = add_mlp(this->layout_, "mlp", dim, this->mlp_hidden(), 2);
}

template <typename T>
Var<T> UnimodalFuser<T>::logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng*) const {
    this->require_inputs(inputs);
    return unimodal_forward(p, mlp_, inputs.at(this->spec_.modalities.front()));
}

template <typename T>
MlpFusionFuser<T>::MlpFusionFuser(FuserSpec spec, std::size_t dim, std::size_t k)
    : Fuser<T>(std::move(spec), dim, k) {
    mlp_ = add_mlp(this->layout_, "mlp", this->spec_.modalities.size() * dim, this->mlp_hidden(), 2);
}

template <typename T>
Var<T> MlpFusionFuser<T>::logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng*) const {
    this->require_inputs(inputs);
    std::vector<Var<T>> features;
    for (auto m : this->spec_.modalities) {
        auto tokens = inputs.at(m);
        // Text sets carry a class token at row 0; audio sets do not.
        const bool use_class = this->spec_.pooling == Pooling::class_token && m != Modality::audio;
        features.push_back(use_class ? slice_rows(tokens, 0, 1) : mean_rows(tokens));
    }
    return mlp_fusion_forward(p, mlp_, this->spec_.modalities.size(), features);
}

template <typename T>
TransformerFuser<T>::TransformerFuser(FuserSpec spec, std::size_t dim, std::size_t k)
    : Fuser<T>(std::move(spec), dim, k) {
    auto& L = this->layout_;
    const auto& s = this->spec_;
    const std::size_t d_h = s.d_h ? s.d_h : dim / s.heads;
    if (s.d_h == 0 && dim % s.heads != 0) throw ValidationError("transformer: dim not divisible by heads");
    for (std::size_t i = 0; i < s.depth; ++i)
        tl_.blocks.push_back(add_attention_block(L, "block." + std::to_string(i), dim, d_h, s.heads));
    for (auto m : s.modalities)
        tl_.pos_embed[m] = L.add("pos_embed." + std::string(modality_name(m)), {k, dim}, Init::small_normal);
    tl_.fusion_class_token = L.add("fusion_class_token", {dim}, Init::small_normal);
    tl_.head_request = add_mlp(L, "head_request", dim, this->mlp_hidden(), 1);
    tl_.head_complaint = add_mlp(L, "head_complaint", dim, this->mlp_hidden(), 1);
}

template <typename T>
Var<T> TransformerFuser<T>::logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng* dropout_rng) const {
    this->require_inputs(inputs);
    std::vector<std::pair<Modality, Var<T>>> sets;
    for (auto m : this->spec_.modalities) sets.emplace_back(m, inputs.at(m));
    return transformer_fusion_forward(p, tl_, sets, this->block_options(dropout_rng));
}

template <typename T>
VotingFuser<T>::VotingFuser(FuserSpec spec, std::size_t dim, std::size_t k) : Fuser<T>(std::move(spec), dim, k) {
    for (auto m : this->spec_.modalities)
        voters_.emplace_back(m, add_mlp(this->layout_, "voter." + std::string(modality_name(m)), dim,
                                        this->mlp_hidden(), 2));
}

template <typename T>
Var<T> VotingFuser<T>::voter_logits(const ParamBinding<T>& p, std::size_t i, Var<T> tokens) const {
    return unimodal_forward(p, voters_.at(i).second, tokens);
}

template <typename T>
Var<T> VotingFuser<T>::logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng*) const {
    this->require_inputs(inputs);
    std::optional<Var<T>> total;
    for (std::size_t i = 0; i < voters_.size(); ++i) {
        auto l = voter_logits(p, i, inputs.at(voters_[i].first));
        total = total ? add(*total, l) : l;
    }
    return *total;
}

template <typename T>
Var<T> VotingFuser<T>::loss(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Labels labels,
                            TaskWeights weights, Rng*) const {
    this->require_inputs(inputs);
    std::optional<Var<T>> total;
    for (std::size_t i = 0; i < voters_.size(); ++i) {
        auto l = bce_loss(voter_logits(p, i, inputs.at(voters_[i].first)), labels, weights);
        total = total ? add(*total, l) : l;
    }
    return *total;
}

template <typename T>
std::array<double, 2> VotingFuser<T>::decision_scores(const ParamBinding<T>& p, const ModalityVars<T>& inputs) const {
    this->require_inputs(inputs);
    std::vector<BinaryPair> votes;
    for (std::size_t i = 0; i < voters_.size(); ++i) {
        const auto& l = voter_logits(p, i, inputs.at(voters_[i].first)).value();
        votes.emplace_back(l[0] > 0 ? 1 : 0, l[1] > 0 ? 1 : 0);
    }
    const auto [r, c] = plurality_vote(votes);
    return {r ? 1.0 : -1.0, c ? 1.0 : -1.0};
}

#define CCMT_INSTANTIATE_BASELINES(T)                                                                            \
    template Var<T> unimodal_forward(const ParamBinding<T>&, const MlpLayout&, Var<T>);                          \
    template Var<T> mlp_fusion_forward(const ParamBinding<T>&, const MlpLayout&, std::size_t,                    \
                                       const std::vector<Var<T>>&);                                              \
    template Var<T> transformer_fusion_forward(const ParamBinding<T>&, const TransformerLayout&,                 \
                                               const std::vector<std::pair<Modality, Var<T>>>&,                  \
                                               const BlockOptions&);                                             \
    template class UnimodalFuser<T>;                                                                             \
    template class MlpFusionFuser<T>;                                                                            \
    template class TransformerFuser<T>;                                                                          \
    template class VotingFuser<T>;

CCMT_INSTANTIATE_BASELINES(float)
CCMT_INSTANTIATE_BASELINES(double)
CCMT_INSTANTIATE_BASELINES(long double)

#undef CCMT_INSTANTIATE_BASELINES

} // namespace ccmt
