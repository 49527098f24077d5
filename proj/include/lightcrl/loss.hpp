#pragma once

// The soft-target bidirectional contrastive objective.
//
// For a batch of K aligned unit-norm encodings (m1hat, m2hat):
//   l12 = row-wise negative log-softmax of m1hat * m2hat^T / tau,
//   l21 = the same for the transposed similarity matrix,
//   T   = row-softmax of (m1hat*m1hat^T + m2hat*m2hat^T) / (2*tau), detached,
//   total = (1/2K) * (sum(T .* l12) + sum(T .* l21)).
// The pre-softmax target matrix is symmetric (a sum of two Gram matrices), so
// the coefficient matrix aligned entrywise with l21 is the same T that pairs
// with l12; both are reported and both are row-stochastic. Targets are
// constants: no gradient flows through them, including their tau dependence.
// Gradients reach the inputs and tau only through l12/l21.

#include <cmath>
#include <string>
#include <vector>

#include "lightcrl/errors.hpp"
#include "lightcrl/tensor.hpp"

namespace lightcrl {

inline constexpr double kUnitNormTolerance = 1e-4;

template <class S>
struct LossReport {
    Tensor<S> total;      // scalar, graph-connected
    Tensor<S> l12;        // [K x K], graph-connected
    Tensor<S> l21;        // [K x K], graph-connected
    Tensor<S> targets12;  // [K x K], detached
    Tensor<S> targets21;  // [K x K], detached
    S tau = S(0);         // temperature used
};

namespace detail {

template <class S>
void require_unit_rows(const Tensor<S>& a, const char* who) {
    const std::size_t r = a.shape()[0], d = a.shape()[1];
    auto av = a.value();
    for (std::size_t i = 0; i < r; ++i) {
        S sq = S(0);
        for (std::size_t j = 0; j < d; ++j) sq += av[i * d + j] * av[i * d + j];
        const double norm = std::sqrt(static_cast<double>(sq));
        if (std::abs(norm - 1.0) > kUnitNormTolerance)
            throw ContractError(std::string(who) + ": row " + std::to_string(i) + " has norm " +
                                std::to_string(norm) + ", expected 1");
    }
}

} // namespace detail

/// Entry (i, j) = <a_i, b_j> for row-unit-norm inputs (checked within 1e-4).
template <class S>
Tensor<S> cosine_similarity_matrix(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_rank2(a, "cosine_similarity_matrix");
    detail::require_rank2(b, "cosine_similarity_matrix");
    if (a.shape()[1] != b.shape()[1])
        throw ShapeError("cosine_similarity_matrix: widths differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    detail::require_unit_rows(a, "cosine_similarity_matrix");
    detail::require_unit_rows(b, "cosine_similarity_matrix");
    return matmul(a, transpose(b));
}

/// Row-wise negative log-softmax of sim / tau; tau is a positive scalar
/// tensor and receives gradient. Stabilized by row-max subtraction.
template <class S>
Tensor<S> pairwise_contrastive_loss(const Tensor<S>& sim, const Tensor<S>& tau) {
    detail::require_rank2(sim, "pairwise_contrastive_loss");
    if (tau.size() != 1) throw ContractError("pairwise_contrastive_loss: tau must be scalar");
    if (!(tau.item() > S(0)))
        throw ContractError("pairwise_contrastive_loss: tau must be positive, got " +
                            std::to_string(static_cast<double>(tau.item())));
    // 1/tau as exp(-log tau) keeps the expression differentiable in tau.
    Tensor<S> inv_tau = exp(neg(log(tau)));
    return neg(log_softmax_rows(mul(sim, inv_tau)));
}

/// Detached soft targets: row-softmax of (sim11 + sim22) / (2*tau).
/// sim11/sim22 are the intra-modal cosine matrices of the encoded batch.
template <class S>
Tensor<S> soft_targets(const Tensor<S>& sim11, const Tensor<S>& sim22, S tau) {
    detail::require_rank2(sim11, "soft_targets");
    detail::require_same_shape(sim11, sim22, "soft_targets");
    if (!(tau > S(0)))
        throw ContractError("soft_targets: tau must be positive, got " + std::to_string(static_cast<double>(tau)));
    Tensor<S> pre = scale(add(sim11.detach(), sim22.detach()), S(1) / (S(2) * tau));
    return softmax_rows(pre).detach();
}

/// Total loss with caller-supplied constant target matrices. This is the
/// stop-gradient-consistent evaluation path: gradient checks freeze the
/// targets at the base point and differentiate this function, because the
/// analytic gradient deliberately never flows through t.
template <class S>
LossReport<S> total_loss_with_targets(const Tensor<S>& m1hat, const Tensor<S>& m2hat, const Tensor<S>& tau,
                                      const Tensor<S>& targets12, const Tensor<S>& targets21) {
    detail::require_rank2(m1hat, "total_loss");
    detail::require_rank2(m2hat, "total_loss");
    if (m1hat.shape()[0] != m2hat.shape()[0])
        throw ShapeError("total_loss: batch sizes differ, " + shape_str(m1hat.shape()) + " vs " +
                         shape_str(m2hat.shape()));
    const std::size_t k = m1hat.shape()[0];
    const Shape want{k, k};
    if (targets12.shape() != want || targets21.shape() != want)
        throw ShapeError("total_loss: target matrices must be " + shape_str(want));

    LossReport<S> report;
    report.tau = tau.item();
    report.targets12 = targets12.detach();
    report.targets21 = targets21.detach();

    Tensor<S> sim12 = cosine_similarity_matrix(m1hat, m2hat);
    Tensor<S> sim21 = transpose(sim12);
    report.l12 = pairwise_contrastive_loss(sim12, tau);
    report.l21 = pairwise_contrastive_loss(sim21, tau);

    Tensor<S> weighted = add(sum_all(mul(report.targets12, report.l12)),
                             sum_all(mul(report.targets21, report.l21)));
    report.total = scale(weighted, S(1) / (S(2) * static_cast<S>(k)));
    return report;
}

/// Eq-style total: both directional losses weighted by the shared detached
/// target matrix and averaged over the batch. With the symmetric target
/// construction the matrix pairing with l21 equals the one pairing with l12.
template <class S>
LossReport<S> total_loss(const Tensor<S>& m1hat, const Tensor<S>& m2hat, const Tensor<S>& tau) {
    detail::require_rank2(m1hat, "total_loss");
    detail::require_rank2(m2hat, "total_loss");
    if (m1hat.shape()[0] != m2hat.shape()[0])
        throw ShapeError("total_loss: batch sizes differ, " + shape_str(m1hat.shape()) + " vs " +
                         shape_str(m2hat.shape()));

    // Intra-modal similarities feed only the detached targets; compute them
    // outside the graph.
    Tensor<S> a = m1hat.detach();
    Tensor<S> b = m2hat.detach();
    Tensor<S> sim11 = matmul(a, transpose(a));
    Tensor<S> sim22 = matmul(b, transpose(b));
    Tensor<S> targets = soft_targets(sim11, sim22, tau.item());
    return total_loss_with_targets(m1hat, m2hat, tau, targets, targets);
}

} // namespace lightcrl
