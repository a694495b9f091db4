#pragma once

#include "ccmt/fuser.hpp"
#include "ccmt/params.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>

namespace ccmt {

// Arithmetic used for both the analytic pass and the finite differences.
// Extended (long double) lowers the rounding floor of the differences, which
// matters for parameters whose true gradient is zero or near zero.
enum class Precision { binary64, extended };

struct GradCheckSetup {
    FuserSpec spec;
    std::size_t dim = 8;
    std::size_t k = 4;
    std::uint64_t seed = 0;
    double fd_eps = 1e-5;
    // Std-dev of the noise added to freshly initialized parameters, so that
    // gains, biases and embeddings are away from their special init values.
    double perturb = 0.1;
    Precision precision = Precision::binary64;
};

// k=4, d=8, d_h=8, one head, trimodal CCMT.
GradCheckSetup tiny_gradcheck_setup(std::uint64_t seed = 0);
GradCheckSetup gradcheck_setup_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GradCheckSetup& s);

// Random [k x dim] inputs and labels for every modality the FuserSpec selects.
PreparedSample random_prepared_sample(const FuserSpec& spec, std::size_t dim, std::size_t k, Rng& rng);

// Seeded, perturbed double-precision parameters for a fuser layout.
ParamStore<double> random_params(const ParamLayout& layout, double perturb, Rng& rng);

// Loss of one fuser on one fixed sample.
template <typename T>
LossFnOf<T> fuser_loss_fn(const Fuser<T>& fuser, const PreparedSample& sample);

// Builds the fuser, a random sample and random parameters from the setup
// seed, then compares analytic and central-difference gradients.
GradCheckReport run_gradcheck(const GradCheckSetup& setup);

nlohmann::json to_json(const GradCheckReport& r);

} // namespace ccmt
