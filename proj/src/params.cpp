#include "ccmt/params.hpp"

#include "ccmt/errors.hpp"

#include <algorithm>
#include <cmath>

namespace ccmt {

template <typename T>
ParamId ParamStore<T>::add(std::string name, Tensor<T> value) {
    if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
    return ParamId{tensors_.size() - 1};
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

template <typename T>
std::optional<ParamId> ParamStore<T>::find(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return ParamId{static_cast<std::size_t>(it - names_.begin())};
}

template <typename T>
ParamStore<T> ParamStore<T>::zeros_like() const {
    ParamStore out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor<T>(tensors_[i].shape()));
    return out;
}

template <typename T>
void ParamStore<T>::set_zero() {
    for (auto& t : tensors_) t.fill(T(0));
}

template <typename T>
void ParamStore<T>::add_from(const ParamStore& other) {
    if (other.size() != size()) throw DimensionError("parameter stores differ in tensor count");
    for (std::size_t i = 0; i < size(); ++i) {
        auto dst = tensors_[i].values();
        auto src = other.tensors_[i].values();
        if (dst.size() != src.size()) throw DimensionError("parameter '" + names_[i] + "' differs in size");
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
}

template <typename T>
ParamBinding<T>::ParamBinding(Graph<T>& graph, const ParamStore<T>& params, ParamStore<T>* grads)
    : graph_(&graph) {
    if (grads && grads->size() != params.size()) throw DimensionError("gradient store does not match parameters");
    vars_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        vars_.push_back(graph.leaf(params.at(i), grads ? &grads->at(i) : nullptr));
}

template <typename T>
GradCheckReport grad_check(const std::type_identity_t<LossFnOf<T>>& loss_fn, const ParamStore<T>& params, double eps) {
    if (!(eps > 0)) throw ContractError("grad_check eps must be positive");
    ParamStore<T> analytic = params.zeros_like();
    const T base = loss_fn(params, &analytic);
    const T again = loss_fn(params, nullptr);
    if (base != again)
        throw RuntimeFailure("grad_check: non-deterministic loss (" + std::to_string(static_cast<double>(base)) + " vs " +
                             std::to_string(static_cast<double>(again)) + ")");

    GradCheckReport report;
    ParamStore<T> probe = params;
    for (std::size_t p = 0; p < probe.size(); ++p) {
        double worst_here = 0.0;
        auto values = probe.at(p).values();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const T saved = values[j];
            values[j] = saved + static_cast<T>(eps);
            const T up = loss_fn(probe, nullptr);
            values[j] = saved - static_cast<T>(eps);
            const T down = loss_fn(probe, nullptr);
            values[j] = saved;

            const double numeric = static_cast<double>((up - down) / (T(2) * static_cast<T>(eps)));
            const double a = static_cast<double>(analytic.at(p)[j]);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            ++report.checked;
            worst_here = std::max(worst_here, rel);
            if (rel > report.max_rel_error || report.checked == 1) {
                report.max_rel_error = std::max(report.max_rel_error, rel);
                report.worst_param = probe.name(p);
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        report.per_param.emplace_back(probe.name(p), worst_here);
    }
    return report;
}

template GradCheckReport grad_check<double>(const LossFnOf<double>&, const ParamStore<double>&, double);
template GradCheckReport grad_check<long double>(const LossFnOf<long double>&, const ParamStore<long double>&,
                                                 double);

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamBinding<float>;
template class ParamBinding<double>;
template class ParamStore<long double>;
template class ParamBinding<long double>;

} // namespace ccmt
