#include "ccmt/baselines.hpp"
#include "ccmt/errors.hpp"
#include "ccmt/gradcheck.hpp"
#include "support/dense_oracle.hpp"
#include "support/instances.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace ccmt;
using namespace testing_support;

namespace {

std::vector<Modality> random_subset(Rng& rng) {
    std::vector<Modality> all{Modality::text_fr, Modality::text_en, Modality::audio};
    std::vector<Modality> out;
    while (out.empty())
        for (auto m : all)
            if (rng.bernoulli(0.5)) out.push_back(m);
    return out;
}

std::array<double, 2> fuser_logits(const Fuser<double>& f, const ParamStore<double>& ps, const PreparedSample& s) {
    Graph<double> g;
    ParamBinding<double> p(g, ps, nullptr);
    const auto& l = f.logits(p, bind_inputs(g, s), nullptr).value();
    return {l[0], l[1]};
}

GradCheckSetup baseline_setup(FusionKind kind, std::vector<Modality> mods, std::uint64_t seed) {
    auto s = tiny_gradcheck_setup(seed);
    s.spec.kind = kind;
    s.spec.modalities = std::move(mods);
    return s;
}

} // namespace

TEST(PluralityVote, Examples) {
    EXPECT_EQ(plurality_vote({{1, 0}, {1, 1}, {0, 0}}), (BinaryPair{1, 0}));
    EXPECT_EQ(plurality_vote({{0, 1}, {0, 1}, {1, 1}}), (BinaryPair{0, 1}));
    EXPECT_EQ(plurality_vote({{0, 0}}), (BinaryPair{0, 0}));
}

TEST(PluralityVote, EvenSplitIsPositive) {
    EXPECT_EQ(plurality_vote({{1, 0}, {0, 1}}), (BinaryPair{1, 1}));
    EXPECT_EQ(plurality_vote({{1, 1}, {0, 0}, {1, 0}, {0, 1}}), (BinaryPair{1, 1}));
}

TEST(PluralityVote, PermutationInvariantAndNonEmpty) {
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
        std::vector<BinaryPair> v(1 + rng.below(6));
        for (auto& [r, c] : v) {
            r = static_cast<int>(rng.below(2));
            c = static_cast<int>(rng.below(2));
        }
        const auto want = plurality_vote(v);
        std::reverse(v.begin(), v.end());
        EXPECT_EQ(plurality_vote(v), want);
        std::rotate(v.begin(), v.begin() + 1, v.end());
        EXPECT_EQ(plurality_vote(v), want);
    }
    EXPECT_THROW(plurality_vote({}), ContractError);
}

TEST(Unimodal, ZeroWeightsGiveBias) {
    FuserSpec spec;
    spec.kind = FusionKind::unimodal;
    spec.modalities = {Modality::audio};
    const auto f = make_fuser<double>(spec, 5, 3);
    Rng rng(2);
    auto ps = random_params(f->layout(), 1.0, rng);
    for (std::size_t i = 0; i < ps.size(); ++i) ps.at(i).fill(0.0);
    ps[*ps.find("mlp.b2")] = TensorD(Shape{2}, std::vector<double>{0.3, -0.6});
    const auto l = fuser_logits(*f, ps, random_prepared_sample(f->spec(), 5, 3, rng));
    EXPECT_EQ(l[0], 0.3);
    EXPECT_EQ(l[1], -0.6);
}

TEST(Unimodal, MeanPoolMatchesOracleAndIgnoresOrder) {
    Rng rng(3);
    for (int t = 0; t < 30; ++t) {
        FuserSpec spec;
        spec.kind = FusionKind::unimodal;
        spec.modalities = {Modality::text_en};
        spec.d_mlp = 2 + rng.below(5);
        const std::size_t dim = 2 + rng.below(4), k = 2 + rng.below(4);
        const auto f = make_fuser<double>(spec, dim, k);
        auto s = random_prepared_sample(f->spec(), dim, k, rng);
        const auto ps = random_params(f->layout(), 0.5, rng);
        const auto got = fuser_logits(*f, ps, s);

        oracle::Mat x = oracle::from_tensor(s.tokens.at(Modality::text_en));
        oracle::Mat mean(1, dim);
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t c = 0; c < dim; ++c) mean(0, c) += x(r, c) / double(k);
        const auto want = oracle::mlp(oracle::Params(ps), "mlp", mean);
        EXPECT_NEAR(got[0], want.a[0], 1e-10);
        EXPECT_NEAR(got[1], want.a[1], 1e-10);

        auto& tok = s.tokens.at(Modality::text_en);
        for (std::size_t c = 0; c < dim; ++c) std::swap(tok(0, c), tok(k - 1, c));
        EXPECT_LT(max_abs_diff(got, fuser_logits(*f, ps, s)), 1e-12);
    }
}

TEST(Unimodal, RequiresOneModality) {
    FuserSpec spec;
    spec.kind = FusionKind::unimodal;
    EXPECT_THROW(make_fuser<double>(spec, 4, 3), ValidationError);
}

TEST(MlpFusion, MatchesOracle) {
    Rng rng(4);
    for (int t = 0; t < 30; ++t) {
        FuserSpec spec;
        spec.kind = FusionKind::mlp;
        spec.modalities = random_subset(rng);
        spec.pooling = rng.bernoulli(0.5) ? Pooling::mean : Pooling::class_token;
        spec.d_mlp = 2 + rng.below(5);
        const std::size_t dim = 2 + rng.below(4), k = 2 + rng.below(4);
        const auto f = make_fuser<double>(spec, dim, k);
        const auto s = random_prepared_sample(f->spec(), dim, k, rng);
        const auto ps = random_params(f->layout(), 0.5, rng);

        std::vector<oracle::Mat> feats;
        for (auto m : f->spec().modalities) {
            const auto x = oracle::from_tensor(s.tokens.at(m));
            oracle::Mat v(1, dim);
            const bool cls = spec.pooling == Pooling::class_token && m != Modality::audio;
            for (std::size_t r = 0; r < (cls ? 1 : k); ++r)
                for (std::size_t c = 0; c < dim; ++c) v(0, c) += x(r, c) / double(cls ? 1 : k);
            feats.push_back(v);
        }
        oracle::Mat joined(1, dim * feats.size());
        for (std::size_t i = 0; i < feats.size(); ++i)
            for (std::size_t c = 0; c < dim; ++c) joined(0, i * dim + c) = feats[i](0, c);
        const auto want = oracle::mlp(oracle::Params(ps), "mlp", joined);
        const auto got = fuser_logits(*f, ps, s);
        EXPECT_NEAR(got[0], want.a[0], 1e-10);
        EXPECT_NEAR(got[1], want.a[1], 1e-10);
    }
}

TEST(MlpFusion, FeatureCountMismatchIsContractError) {
    ParamLayout layout;
    const auto mlp = add_mlp(layout, "mlp", 6, 4, 2);
    Rng rng(5);
    const auto ps = random_params(layout, 0.1, rng);
    Graph<double> g;
    ParamBinding<double> p(g, ps, nullptr);
    const auto x = g.constant(random_matrix(1, 3, rng));
    EXPECT_THROW(mlp_fusion_forward<double>(p, mlp, 2, {x}), ContractError);
    EXPECT_NO_THROW(mlp_fusion_forward<double>(p, mlp, 2, {x, x}));
}

TEST(Transformer, MatchesDenseOracle) {
    Rng rng(6);
    for (int t = 0; t < 60; ++t) {
        const auto in = random_instance(FusionKind::transformer, random_subset(rng), rng);
        EXPECT_LT(max_abs_diff(graph_logits(in), oracle_logits(in)), 1e-10) << "instance " << t;
    }
}

TEST(Transformer, ParameterNames) {
    FuserSpec spec;
    spec.kind = FusionKind::transformer;
    spec.depth = 2;
    const auto f = make_fuser<float>(spec, 8, 4);
    std::vector<std::string> names;
    for (const auto& s : f->layout().specs()) names.push_back(s.name);
    for (const char* want : {"fusion_class_token", "pos_embed.text_fr", "pos_embed.audio", "block.1.ff.w1",
                             "head_request.b2"})
        EXPECT_NE(std::find(names.begin(), names.end(), want), names.end()) << want;
}

TEST(Voting, DecisionIsPluralityOfVoters) {
    FuserSpec spec;
    spec.kind = FusionKind::voting;
    const auto f = make_fuser<double>(spec, 4, 3);
    const auto* voting = dynamic_cast<const VotingFuser<double>*>(f.get());
    ASSERT_NE(voting, nullptr);
    Rng rng(7);
    for (int t = 0; t < 30; ++t) {
        const auto s = random_prepared_sample(f->spec(), 4, 3, rng);
        const auto ps = random_params(f->layout(), 1.0, rng);
        Graph<double> g;
        ParamBinding<double> p(g, ps, nullptr);
        const auto inputs = bind_inputs(g, s);
        std::vector<BinaryPair> votes;
        for (std::size_t i = 0; i < f->spec().modalities.size(); ++i) {
            const auto l = voting->voter_logits(p, i, inputs.at(f->spec().modalities[i])).value();
            votes.emplace_back(l[0] > 0, l[1] > 0);
        }
        const auto want = plurality_vote(votes);
        const auto got = f->decision_scores(p, inputs);
        EXPECT_EQ(got[0] > 0, want.first == 1);
        EXPECT_EQ(got[1] > 0, want.second == 1);
    }
}

TEST(Voting, LossIsSumOfVoterLosses) {
    FuserSpec spec;
    spec.kind = FusionKind::voting;
    const auto f = make_fuser<double>(spec, 4, 3);
    const auto* voting = dynamic_cast<const VotingFuser<double>*>(f.get());
    Rng rng(8);
    const auto s = random_prepared_sample(f->spec(), 4, 3, rng);
    const auto ps = random_params(f->layout(), 1.0, rng);
    Graph<double> g;
    ParamBinding<double> p(g, ps, nullptr);
    const auto inputs = bind_inputs(g, s);
    double want = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const auto l = voting->voter_logits(p, i, inputs.at(f->spec().modalities[i])).value();
        want += bce_value(l[0], s.labels[0]) + bce_value(l[1], s.labels[1]);
    }
    EXPECT_NEAR(f->loss(p, inputs, s.labels, {1, 1}, nullptr).value().item(), want, 1e-12);
}

struct BaselineGradCase {
    const char* name;
    FusionKind kind;
    std::vector<Modality> mods;
};

void PrintTo(const BaselineGradCase& c, std::ostream* os) { *os << c.name; }

class BaselineGradCheck : public ::testing::TestWithParam<BaselineGradCase> {};

TEST_P(BaselineGradCheck, BelowThreshold) {
    const auto& c = GetParam();
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        const auto r = run_gradcheck(baseline_setup(c.kind, c.mods, seed));
        EXPECT_LT(r.max_rel_error, 1e-4) << c.name << " seed " << seed << " worst " << r.worst_param;
        EXPECT_GT(r.checked, 0u);
    }
}

INSTANTIATE_TEST_SUITE_P(
    Kinds, BaselineGradCheck,
    ::testing::Values(BaselineGradCase{"unimodal_audio", FusionKind::unimodal, {Modality::audio}},
                      BaselineGradCase{"mlp", FusionKind::mlp, {Modality::text_fr, Modality::text_en, Modality::audio}},
                      BaselineGradCase{"voting", FusionKind::voting,
                                       {Modality::text_fr, Modality::text_en, Modality::audio}},
                      BaselineGradCase{"transformer", FusionKind::transformer,
                                       {Modality::text_fr, Modality::text_en, Modality::audio}}),
    [](const auto& info) { return std::string(info.param.name); });
