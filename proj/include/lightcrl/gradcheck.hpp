#pragma once

// Central-difference verification of reverse-mode gradients:
//   numeric = (f(x + h) - f(x - h)) / 2h per coordinate,
//   error   = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Coordinate subsampling is supported for large tensors; the subsample is
// drawn deterministically from the seed in the options.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lightcrl/rng.hpp"
#include "lightcrl/tensor.hpp"

namespace lightcrl {

struct FdOptions {
    double h = 1e-5;
    std::size_t max_coords_per_tensor = 0; // 0 = check every coordinate
    std::uint64_t subsample_seed = 0;
};

struct FdReport {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

/// fn() must rebuild the loss from the parameter tensors' current values and
/// be deterministic for fixed values. Parameters must require grad.
template <class S, class Fn>
FdReport finite_difference_check(Fn&& fn, std::span<const std::pair<std::string, Tensor<S>>> params,
                                 const FdOptions& opts = {}) {
    for (auto& [name, t] : params) {
        if (!t.requires_grad())
            throw ContractError("finite_difference_check: parameter '" + name + "' does not require grad");
    }

    for (auto& [name, t] : params) const_cast<Tensor<S>&>(t).zero_grad();
    Tensor<S> loss = fn();
    if (loss.size() != 1) throw ContractError("finite_difference_check: fn must return a scalar");
    loss.backward();

    std::vector<std::vector<S>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, t] : params) analytic.emplace_back(t.grad().begin(), t.grad().end());

    FdReport report;
    const S h = static_cast<S>(opts.h);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& t = const_cast<Tensor<S>&>(params[pi].second);
        auto vals = t.value_mut();

        std::vector<std::size_t> coords;
        if (opts.max_coords_per_tensor == 0 || vals.size() <= opts.max_coords_per_tensor) {
            coords.resize(vals.size());
            for (std::size_t i = 0; i < vals.size(); ++i) coords[i] = i;
        } else {
            Xoshiro256ss rng(opts.subsample_seed ^ (0xA24BAED4963EE407ULL + pi));
            std::vector<std::size_t> all(vals.size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            for (std::size_t i = 0; i < opts.max_coords_per_tensor; ++i) {
                const std::size_t j = i + static_cast<std::size_t>(rng.next_below(all.size() - i));
                std::swap(all[i], all[j]);
            }
            coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(opts.max_coords_per_tensor));
        }

        for (std::size_t ci : coords) {
            const S saved = vals[ci];
            vals[ci] = saved + h;
            const double fp = static_cast<double>(fn().item());
            vals[ci] = saved - h;
            const double fm = static_cast<double>(fn().item());
            vals[ci] = saved;

            const double numeric = (fp - fm) / (2.0 * static_cast<double>(h));
            const double analytic_v = static_cast<double>(analytic[pi][ci]);
            const double denom = std::max({std::abs(analytic_v), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic_v - numeric) / denom;
            ++report.coords_checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_tensor = params[pi].first;
                report.worst_index = ci;
                report.worst_analytic = analytic_v;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

} // namespace lightcrl
