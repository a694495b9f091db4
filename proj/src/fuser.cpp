#include "ccmt/fuser.hpp"

#include "ccmt/baselines.hpp"
#include "ccmt/ccmt.hpp"
#include "ccmt/errors.hpp"

#include <algorithm>

namespace ccmt {

std::string_view fusion_kind_name(FusionKind k) noexcept {
    switch (k) {
    case FusionKind::ccmt: return "ccmt";
    case FusionKind::transformer: return "transformer";
    case FusionKind::mlp: return "mlp";
    case FusionKind::voting: return "voting";
    case FusionKind::unimodal: return "unimodal";
    }
    return "unknown";
}

std::optional<FusionKind> parse_fusion_kind(std::string_view name) noexcept {
    for (auto k : {FusionKind::ccmt, FusionKind::transformer, FusionKind::mlp, FusionKind::voting, FusionKind::unimodal})
        if (fusion_kind_name(k) == name) return k;
    return std::nullopt;
}

FuserSpec FuserSpec::normalized() const {
    FuserSpec out = *this;
    std::sort(out.modalities.begin(), out.modalities.end());
    return out;
}

void FuserSpec::validate() const {
    if (modalities.empty()) throw ValidationError("fuser needs at least one modality");
    auto sorted = modalities;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ValidationError("fuser modalities contain duplicates");
    if (depth == 0 || heads == 0) throw ValidationError("fuser depth and heads must be positive");
    if (!(eps > 0)) throw ValidationError("fuser eps must be positive");
    if (dropout < 0 || dropout >= 1) throw ValidationError("fuser dropout must be in [0, 1)");
    if (kind == FusionKind::unimodal && modalities.size() != 1)
        throw ValidationError("unimodal fuser takes exactly one modality");
}

namespace {

std::string_view pooling_name(Pooling p) { return p == Pooling::mean ? "mean" : "class_token"; }

} // namespace

nlohmann::json to_json(const FuserSpec& spec) {
    nlohmann::ordered_json j;
    j["kind"] = fusion_kind_name(spec.kind);
    auto mods = nlohmann::ordered_json::array();
    for (auto m : spec.modalities) mods.push_back(modality_name(m));
    j["modalities"] = mods;
    j["d_mlp"] = spec.d_mlp;
    j["depth"] = spec.depth;
    j["heads"] = spec.heads;
    j["d_h"] = spec.d_h;
    j["eps"] = spec.eps;
    j["standard_residual"] = spec.standard_residual;
    j["dropout"] = spec.dropout;
    j["pooling"] = pooling_name(spec.pooling);
    return j;
}

FuserSpec fuser_spec_from_json(const nlohmann::json& j) {
    FuserSpec s;
    try {
        auto kind = parse_fusion_kind(j.at("kind").get<std::string>());
        if (!kind) throw ValidationError("unknown fusion kind '" + j.at("kind").get<std::string>() + "'");
        s.kind = *kind;
        s.modalities.clear();
        for (const auto& m : j.at("modalities")) {
            auto mod = parse_modality(m.get<std::string>());
            if (!mod) throw ValidationError("unknown modality '" + m.get<std::string>() + "'");
            s.modalities.push_back(*mod);
        }
        s.d_mlp = j.value("d_mlp", std::size_t{0});
        s.depth = j.value("depth", std::size_t{1});
        s.heads = j.value("heads", std::size_t{1});
        s.d_h = j.value("d_h", std::size_t{0});
        s.eps = j.value("eps", 1e-5);
        s.standard_residual = j.value("standard_residual", false);
        s.dropout = j.value("dropout", 0.0);
        s.pooling = j.value("pooling", std::string("class_token")) == "mean" ? Pooling::mean : Pooling::class_token;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed fuser spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::vector<Modality> parse_modality_list(std::string_view list) {
    std::vector<Modality> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        auto end = list.find(',', start);
        if (end == std::string_view::npos) end = list.size();
        auto name = list.substr(start, end - start);
        while (!name.empty() && name.front() == ' ') name.remove_prefix(1);
        while (!name.empty() && name.back() == ' ') name.remove_suffix(1);
        std::optional<Modality> m;
        if (name == "fr") m = Modality::text_fr;
        else if (name == "en") m = Modality::text_en;
        else if (name == "other") m = Modality::text_other;
        else m = parse_modality(name);
        if (!m) throw ValidationError("unknown modality '" + std::string(name) + "'");
        out.push_back(*m);
        start = end + 1;
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---- Fuser base -----------------------------------------------------------

template <typename T>
Fuser<T>::Fuser(FuserSpec spec, std::size_t dim, std::size_t k) : spec_(spec.normalized()), dim_(dim), k_(k) {
    spec_.validate();
    if (dim == 0 || k == 0) throw ValidationError("fuser dim and k must be positive");
}

template <typename T>
Var<T> Fuser<T>::loss(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Labels labels, TaskWeights weights,
                      Rng* dropout_rng) const {
    return bce_loss(logits(p, inputs, dropout_rng), labels, weights);
}

template <typename T>
std::array<double, 2> Fuser<T>::decision_scores(const ParamBinding<T>& p, const ModalityVars<T>& inputs) const {
    const auto& l = logits(p, inputs, nullptr).value();
    return {static_cast<double>(l[0]), static_cast<double>(l[1])};
}

template <typename T>
BlockOptions Fuser<T>::block_options(Rng* dropout_rng) const {
    if (spec_.dropout > 0 && !dropout_rng) throw ContractError("dropout > 0 needs an rng");
    return BlockOptions{spec_.eps, spec_.standard_residual, dropout_rng ? spec_.dropout : 0.0, dropout_rng};
}

template <typename T>
void Fuser<T>::require_inputs(const ModalityVars<T>& inputs) const {
    for (auto m : spec_.modalities)
        if (!inputs.contains(m))
            throw ContractError(std::string(fusion_kind_name(spec_.kind)) + " fuser: missing modality " +
                                std::string(modality_name(m)));
}

template <typename T>
std::unique_ptr<Fuser<T>> make_fuser(const FuserSpec& spec, std::size_t dim, std::size_t k) {
    switch (spec.kind) {
    case FusionKind::ccmt: return std::make_unique<CcmtFuser<T>>(spec, dim, k);
    case FusionKind::transformer: return std::make_unique<TransformerFuser<T>>(spec, dim, k);
    case FusionKind::mlp: return std::make_unique<MlpFusionFuser<T>>(spec, dim, k);
    case FusionKind::voting: return std::make_unique<VotingFuser<T>>(spec, dim, k);
    case FusionKind::unimodal: return std::make_unique<UnimodalFuser<T>>(spec, dim, k);
    }
    throw ValidationError("unknown fusion kind");
}

PreparedSample prepare_sample(const SampleRecord& rec, const FuserSpec& spec, bool audio_class_slot, std::size_t k,
                              Rng& rng) {
    PreparedSample out;
    out.labels = {rec.label_request, rec.label_complaint};
    for (auto m : spec.normalized().modalities) {
        const TokenSet& ts = rec.at(m);
        if (m == Modality::audio && audio_class_slot && !ts.has_class_token) {
            auto slotted = prepend_class_token(ts, TensorF(Shape{ts.dim()}));
            out.tokens.emplace(m, uniformize(slotted, k, rng).tokens);
        } else {
            out.tokens.emplace(m, uniformize(ts, k, rng).tokens);
        }
    }
    return out;
}

template <typename T>
ModalityVars<T> bind_inputs(Graph<T>& g, const PreparedSample& s) {
    ModalityVars<T> out;
    for (const auto& [m, t] : s.tokens) {
        if constexpr (std::is_same_v<T, float>)
            out.emplace(m, g.constant(t));
        else
            out.emplace(m, g.constant(t.template cast<T>()));
    }
    return out;
}

template class Fuser<float>;
template class Fuser<double>;
template std::unique_ptr<Fuser<float>> make_fuser(const FuserSpec&, std::size_t, std::size_t);
template std::unique_ptr<Fuser<double>> make_fuser(const FuserSpec&, std::size_t, std::size_t);
template ModalityVars<float> bind_inputs(Graph<float>&, const PreparedSample&);
template ModalityVars<double> bind_inputs(Graph<double>&, const PreparedSample&);
template class Fuser<long double>;
template std::unique_ptr<Fuser<long double>> make_fuser(const FuserSpec&, std::size_t, std::size_t);
template ModalityVars<long double> bind_inputs(Graph<long double>&, const PreparedSample&);

} // namespace ccmt
