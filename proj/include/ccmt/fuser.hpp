#pragma once

#include "ccmt/graph.hpp"
#include "ccmt/layout.hpp"
#include "ccmt/loss.hpp"
#include "ccmt/params.hpp"
#include "ccmt/tokenstore.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ccmt {

enum class FusionKind { ccmt, transformer, mlp, voting, unimodal };

std::string_view fusion_kind_name(FusionKind k) noexcept;
std::optional<FusionKind> parse_fusion_kind(std::string_view name) noexcept;

// How mlp fusion turns a token set into one feature vector.
enum class Pooling { class_token, mean };

struct FuserSpec {
    FusionKind kind = FusionKind::ccmt;
    std::vector<Modality> modalities{Modality::text_fr, Modality::text_en, Modality::audio};
    std::size_t d_mlp = 0; // 0 -> 4*d
    std::size_t depth = 1;
    std::size_t heads = 1;
    std::size_t d_h = 0; // 0 -> d / heads
    double eps = 1e-5;
    bool standard_residual = false;
    double dropout = 0.0;
    Pooling pooling = Pooling::class_token;

    // Sorts modalities into canonical order and checks per-kind rules.
    // Throws ValidationError.
    void validate() const;
    FuserSpec normalized() const;

    friend bool operator==(const FuserSpec&, const FuserSpec&) = default;
};

nlohmann::json to_json(const FuserSpec& spec);
FuserSpec fuser_spec_from_json(const nlohmann::json& j);

// Parses "text_fr,text_en,audio" (also accepts the short names fr, en, audio).
std::vector<Modality> parse_modality_list(std::string_view list);

template <typename T>
using ModalityVars = std::map<Modality, Var<T>>;

// Maps the selected modality token sets to the two task logits. One instance
// describes a parameter layout; the parameters themselves live in a
// ParamStore so the same fuser can run in float (training) and double
// (gradient checks).
template <typename T>
class Fuser {
public:
    Fuser(FuserSpec spec, std::size_t dim, std::size_t k);
    virtual ~Fuser() = default;

    const FuserSpec& spec() const noexcept { return spec_; }
    const ParamLayout& layout() const noexcept { return layout_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t k() const noexcept { return k_; }
    std::size_t mlp_hidden() const noexcept { return spec_.d_mlp ? spec_.d_mlp : 4 * dim_; }

    // Whether the audio input carries a placeholder row 0 that the model
    // replaces with a learned class token.
    virtual bool audio_class_slot() const { return false; }

    // [1 x 2] logits (request, complaint).
    virtual Var<T> logits(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Rng* dropout_rng) const = 0;

    virtual Var<T> loss(const ParamBinding<T>& p, const ModalityVars<T>& inputs, Labels labels,
                        TaskWeights weights, Rng* dropout_rng) const;

    // Per-task scores; a task is predicted positive when its score is > 0.
    virtual std::array<double, 2> decision_scores(const ParamBinding<T>& p, const ModalityVars<T>& inputs) const;

protected:
    BlockOptions block_options(Rng* dropout_rng) const;
    void require_inputs(const ModalityVars<T>& inputs) const;

    FuserSpec spec_;
    std::size_t dim_;
    std::size_t k_;
    ParamLayout layout_;
};

template <typename T>
std::unique_ptr<Fuser<T>> make_fuser(const FuserSpec& spec, std::size_t dim, std::size_t k);

// Uniformized float tokens per modality plus labels; what a fuser consumes.
struct PreparedSample {
    std::map<Modality, TensorF> tokens;
    Labels labels{0, 0};
};

// Uniformizes every modality the fuser uses to k rows. For fusers with an
// audio class slot, a zero placeholder class row is attached before
// sampling so that it survives as row 0.
PreparedSample prepare_sample(const SampleRecord& rec, const FuserSpec& spec, bool audio_class_slot, std::size_t k,
                              Rng& rng);

template <typename T>
ModalityVars<T> bind_inputs(Graph<T>& g, const PreparedSample& s);

} // namespace ccmt
