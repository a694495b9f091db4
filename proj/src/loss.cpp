#include "ccmt/loss.hpp"

#include "ccmt/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ccmt {

double bce_value(double logit, int label) noexcept {
    return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

template <typename T>
Var<T> bce_loss(Var<T> logits, Labels labels, TaskWeights weights) {
    const auto& x = logits.value();
    if (x.size() != 2) throw DimensionError("bce_loss expects two logits, got " + shape_str(x.shape()));
    for (int y : labels)
        if (y != 0 && y != 1) throw ContractError("bce_loss labels must be 0 or 1");
    T total = 0;
    for (std::size_t t = 0; t < 2; ++t) {
        const T z = x[t];
        const T y = static_cast<T>(labels[t]);
        total += static_cast<T>(weights[t]) * (std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z))));
    }
    const std::size_t ix = logits.id;
    return logits.graph->record(Tensor<T>::scalar(total), {ix}, [ix, labels, weights](Graph<T>& g, std::size_t self) {
        const T d = g.grad(self)[0];
        const auto& x = g.value(ix);
        auto& dx = g.grad(ix);
        for (std::size_t t = 0; t < 2; ++t) {
            const T sig = T(1) / (T(1) + std::exp(-x[t]));
            dx[t] += d * static_cast<T>(weights[t]) * (sig - static_cast<T>(labels[t]));
        }
    });
}

template Var<float> bce_loss(Var<float>, Labels, TaskWeights);
template Var<double> bce_loss(Var<double>, Labels, TaskWeights);
template Var<long double> bce_loss(Var<long double>, Labels, TaskWeights);

} // namespace ccmt
