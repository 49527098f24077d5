#pragma once

// Adam with bias correction. Slots align with DfeParameters::named_parameters()
// order; after every step log_tau is clamped so tau stays in [0.01, 100].

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lightcrl/errors.hpp"
#include "lightcrl/model.hpp"
#include "lightcrl/tensor.hpp"

namespace lightcrl {

template <class S>
struct OptimizerState {
    struct Slot {
        std::vector<S> m;
        std::vector<S> v;
    };
    std::vector<Slot> slots;
    std::uint64_t step = 0;

    template <class Params>
    static OptimizerState make_for(const Params& named) {
        OptimizerState st;
        st.slots.reserve(named.size());
        for (const auto& [name, t] : named)
            st.slots.push_back({std::vector<S>(t.size(), S(0)), std::vector<S>(t.size(), S(0))});
        return st;
    }
};

/// One bias-corrected Adam update over a named parameter list, in place.
/// Every parameter must carry a populated gradient buffer.
template <class S>
void adam_step(const std::vector<std::pair<std::string, Tensor<S>>>& named, OptimizerState<S>& state,
               S lr, S beta1, S beta2, S eps) {
    if (state.slots.size() != named.size())
        throw ContractError("adam_step: optimizer state has " + std::to_string(state.slots.size()) +
                            " slots for " + std::to_string(named.size()) + " parameters");
    for (const auto& [name, t] : named)
        if (!t.requires_grad() || !t.has_grad())
            throw ContractError("adam_step: parameter '" + name + "' has no gradient");

    state.step += 1;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1), static_cast<double>(state.step)));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2), static_cast<double>(state.step)));

    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& t = const_cast<Tensor<S>&>(named[i].second);
        auto vals = t.value_mut();
        auto grads = t.grad();
        auto& slot = state.slots[i];
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const S g = grads[j];
            slot.m[j] = beta1 * slot.m[j] + (S(1) - beta1) * g;
            slot.v[j] = beta2 * slot.v[j] + (S(1) - beta2) * g * g;
            const S mhat = slot.m[j] / bc1;
            const S vhat = slot.v[j] / bc2;
            vals[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

/// Clamp log_tau so exp(log_tau) lies in [kTauMin, kTauMax].
template <class S>
void clamp_tau(DfeParameters<S>& params) {
    auto v = params.log_tau.value_mut();
    const S lo = static_cast<S>(std::log(kTauMin));
    const S hi = static_cast<S>(std::log(kTauMax));
    if (v[0] < lo) v[0] = lo;
    if (v[0] > hi) v[0] = hi;
}

/// Adam plus the post-step temperature clamp over a full model.
template <class S>
void adam_step(DfeParameters<S>& params, OptimizerState<S>& state, S lr, S beta1, S beta2, S eps) {
    adam_step(params.named_parameters(), state, lr, beta1, beta2, eps);
    clamp_tau(params);
}

/// Global max-norm gradient clip; no-op when max_norm <= 0.
template <class S>
void clip_grad_norm(const std::vector<std::pair<std::string, Tensor<S>>>& named, S max_norm) {
    if (!(max_norm > S(0))) return;
    double sq = 0.0;
    for (const auto& [name, t] : named)
        for (S g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm <= static_cast<double>(max_norm)) return;
    const S factor = static_cast<S>(static_cast<double>(max_norm) / norm);
    for (const auto& [name, t] : named) {
        auto g = const_cast<Tensor<S>&>(t).grad_mut();
        for (auto& v : g) v *= factor;
    }
}

} // namespace lightcrl
