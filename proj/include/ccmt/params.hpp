#pragma once

#include "ccmt/graph.hpp"
#include "ccmt/tensor.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace ccmt {

// Index of a tensor inside a ParamStore.
struct ParamId {
    std::size_t index = 0;
    friend bool operator==(ParamId, ParamId) = default;
};

// Ordered, named collection of trainable tensors. Models keep ParamIds into
// a store, so optimizers, checkpoints and gradient checks can treat every
// model uniformly.
template <typename T>
class ParamStore {
public:
    ParamId add(std::string name, Tensor<T> value);

    std::size_t size() const noexcept { return tensors_.size(); }
    std::size_t scalar_count() const noexcept;

    Tensor<T>& operator[](ParamId id) { return tensors_.at(id.index); }
    const Tensor<T>& operator[](ParamId id) const { return tensors_.at(id.index); }
    Tensor<T>& at(std::size_t i) { return tensors_.at(i); }
    const Tensor<T>& at(std::size_t i) const { return tensors_.at(i); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    std::optional<ParamId> find(const std::string& name) const;

    ParamStore zeros_like() const;
    void set_zero();
    void add_from(const ParamStore& other);

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
        return out;
    }

    friend bool operator==(const ParamStore& a, const ParamStore& b) {
        return a.names_ == b.names_ && a.tensors_ == b.tensors_;
    }

private:
    std::vector<std::string> names_;
    std::vector<Tensor<T>> tensors_;
};

// Graph leaves for every tensor of a store, in store order.
template <typename T>
class ParamBinding {
public:
    ParamBinding(Graph<T>& graph, const ParamStore<T>& params, ParamStore<T>* grads);

    Var<T> operator[](ParamId id) const { return vars_.at(id.index); }
    Graph<T>& graph() const { return *graph_; }

private:
    Graph<T>* graph_;
    std::vector<Var<T>> vars_;
};

// Loss evaluation over a store; when `grads` is non-null the function must
// also run backward and accumulate gradients into it.
template <typename T>
using LossFnOf = std::function<T(const ParamStore<T>& params, ParamStore<T>* grads)>;
using LossFn = LossFnOf<double>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
    // Max relative error per tensor name, in store order.
    std::vector<std::pair<std::string, double>> per_param;
};

// Central-difference check of every scalar in `params`. Throws RuntimeFailure
// if two forward passes with identical inputs disagree.
// Instantiated for double and long double.
template <typename T>
GradCheckReport grad_check(const std::type_identity_t<LossFnOf<T>>& loss_fn, const ParamStore<T>& params, double eps);

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class ParamBinding<float>;
extern template class ParamBinding<double>;
extern template class ParamStore<long double>;
extern template class ParamBinding<long double>;

} // namespace ccmt
