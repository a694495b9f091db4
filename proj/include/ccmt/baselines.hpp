#pragma once

#include "ccmt/fuser.hpp"
#include "ccmt/layout.hpp"

#include <map>
#include <utility>
#include <vector>

namespace ccmt {

using BinaryPair = std::pair<int, int>; // (request, complaint)

// Per-task majority over voters. An even split resolves to 1.
BinaryPair plurality_vote(const std::vector<BinaryPair>& votes);

// Mean-pool over tokens, then MLP d -> hidden -> 2.
template <typename T>
Var<T> unimodal_forward(const ParamBinding<T>& p, const MlpLayout& mlp, Var<T> tokens);

// Concatenated per-modality feature rows -> MLP (n*d) -> hidden -> 2.
template <typename T>
Var<T> mlp_fusion_forward(const ParamBinding<T>& p, const MlpLayout& mlp, std::size_t expected_modalities,
                          const std::vector<Var<T>>& features);

struct TransformerLayout {
    ParamId fusion_class_token;
    std::map<Modality, ParamId> pos_embed;
    std::vector<AttentionLayout> blocks;
    MlpLayout head_request;
    MlpLayout head_complaint;
};

// Self-attention over [fusion class token; tokens_1 + pos_1; ...]; the heads
// read the fusion class token. Blocks share the cascade's block structure.
template <typename T>
Var<T> transformer_fusion_forward(const ParamBinding<T>& p, const TransformerLayout& layout,
                                  const std::vector<std::pair<Modality, Var<T>>>& token_sets,
                                  const BlockOptions& opt);

template <typename T>
class UnimodalFuser : public Fuser<T> {
public:
    UnimodalFuser(FuserSpec spec, std::size_t dim, std::size_t k);
    Var<T> logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng* dropout_rng) const override;
    const MlpLayout& mlp() const noexcept { return mlp_; }

private:
    MlpLayout mlp_;
};

template <typename T>
class MlpFusionFuser : public Fuser<T> {
public:
    MlpFusionFuser(FuserSpec spec, std::size_t dim, std::size_t k);
    Var<T> logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng* dropout_rng) const override;
    const MlpLayout& mlp() const noexcept { return mlp_; }

private:
    MlpLayout mlp_;
};

template <typename T>
class TransformerFuser : public Fuser<T> {
public:
    TransformerFuser(FuserSpec spec, std::size_t dim, std::size_t k);
    Var<T> logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng* dropout_rng) const override;
    const TransformerLayout& transformer_layout() const noexcept { return tl_; }

private:
    TransformerLayout tl_;
};

// One unimodal voter per modality, trained jointly on the sum of their
// losses; prediction is a plurality vote over the voters' binary outputs.
template <typename T>
class VotingFuser : public Fuser<T> {
public:
    VotingFuser(FuserSpec spec, std::size_t dim, std::size_t k);
    // Logits of voter i ([1 x 2]).
    Var<T> voter_logits(const ParamBinding<T>& p, std::size_t i, Var<T> tokens) const;
    // Sum of voter logits; used only as a fallback, training goes through loss().
    Var<T> logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng* dropout_rng) const override;
    Var<T> loss(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Labels labels, TaskWeights weights,
                Rng* dropout_rng) const override;
    std::array<double, 2> decision_scores(const ParamBinding<T>& p, const ModalityVars<T>& inputs) const override;

private:
    std::vector<std::pair<Modality, MlpLayout>> voters_;
};

} // namespace ccmt
