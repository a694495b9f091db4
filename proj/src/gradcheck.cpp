#include "ccmt/gradcheck.hpp"

#include "ccmt/errors.hpp"

namespace ccmt {

GradCheckSetup tiny_gradcheck_setup(std::uint64_t seed) {
    GradCheckSetup s;
    s.spec.kind = FusionKind::ccmt;
    s.spec.modalities = {Modality::text_fr, Modality::text_en, Modality::audio};
    s.spec.heads = 1;
    s.spec.d_h = 8;
    s.dim = 8;
    s.k = 4;
    s.seed = seed;
    return s;
}

GradCheckSetup gradcheck_setup_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("gradcheck config must be a JSON object");
    GradCheckSetup s;
    s.spec = fuser_spec_from_json(j.value("fuser", nlohmann::json::object()));
    s.dim = j.value("dim", s.dim);
    s.k = j.value("k", s.k);
    s.seed = j.value("seed", s.seed);
    s.fd_eps = j.value("fd_eps", s.fd_eps);
    s.perturb = j.value("perturb", s.perturb);
    const std::string precision = j.value("precision", std::string("double"));
    if (precision == "extended")
        s.precision = Precision::extended;
    else if (precision != "double")
        throw ValidationError("precision must be 'double' or 'extended'");
    if (s.fd_eps < 1e-6 || s.fd_eps > 1e-4) throw ValidationError("fd_eps must lie in [1e-6, 1e-4]");
    return s;
}

nlohmann::json to_json(const GradCheckSetup& s) {
    return {{"fuser", to_json(s.spec)}, {"dim", s.dim}, {"k", s.k},
            {"seed", s.seed}, {"fd_eps", s.fd_eps}, {"perturb", s.perturb},
            {"precision", s.precision == Precision::extended ? "extended" : "double"}};
}

PreparedSample random_prepared_sample(const FuserSpec& spec, std::size_t dim, std::size_t k, Rng& rng) {
    PreparedSample s;
    for (auto m : spec.normalized().modalities) {
        TensorF t(Shape{k, dim});
        for (auto& v : t.values()) v = static_cast<float>(rng.normal());
        s.tokens.emplace(m, std::move(t));
    }
    s.labels = {static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2))};
    return s;
}

ParamStore<double> random_params(const ParamLayout& layout, double perturb, Rng& rng) {
    auto params = layout.initialize(rng).cast<double>();
    for (std::size_t i = 0; i < params.size(); ++i)
        for (auto& v : params.at(i).values()) v += perturb * rng.normal();
    return params;
}

template <typename T>
LossFnOf<T> fuser_loss_fn(const Fuser<T>& fuser, const PreparedSample& sample) {
    return [&fuser, sample](const ParamStore<T>& params, ParamStore<T>* grads) {
        Graph<T> g;
        ParamBinding<T> binding(g, params, grads);
        auto inputs = bind_inputs(g, sample);
        auto loss = fuser.loss(binding, inputs, sample.labels, {1.0, 1.0}, nullptr);
        if (grads) g.backward(loss);
        return loss.value().item();
    };
}

template LossFnOf<double> fuser_loss_fn(const Fuser<double>&, const PreparedSample&);
template LossFnOf<long double> fuser_loss_fn(const Fuser<long double>&, const PreparedSample&);

namespace {

template <typename T>
GradCheckReport run_typed(const GradCheckSetup& setup) {
    const auto fuser = make_fuser<T>(setup.spec, setup.dim, setup.k);
    Rng rng(derive_seed(setup.seed, 0x6C));
    const auto sample = random_prepared_sample(fuser->spec(), setup.dim, setup.k, rng);
    const auto params = random_params(fuser->layout(), setup.perturb, rng).template cast<T>();
    return grad_check<T>(fuser_loss_fn<T>(*fuser, sample), params, setup.fd_eps);
}

} // namespace

GradCheckReport run_gradcheck(const GradCheckSetup& setup) {
    if (setup.spec.dropout != 0.0) throw ValidationError("gradcheck needs dropout = 0");
    return setup.precision == Precision::extended ? run_typed<long double>(setup) : run_typed<double>(setup);
}

nlohmann::json to_json(const GradCheckReport& r) {
    nlohmann::ordered_json j;
    j["max_rel_error"] = r.max_rel_error;
    j["worst_param"] = r.worst_param;
    j["worst_index"] = r.worst_index;
    j["analytic"] = r.analytic;
    j["numeric"] = r.numeric;
    j["checked"] = r.checked;
    nlohmann::ordered_json per;
    for (const auto& [name, err] : r.per_param) per[name] = err;
    j["per_param"] = per;
    return j;
}

} // namespace ccmt
