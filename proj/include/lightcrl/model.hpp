#pragma once

// The trainable fusion encoder. One shared transformer block and output head
// encode both modalities; a learnable per-modality context vector, fused with
// the projected embedding, tells the shared weights which modality it is
// looking at.
//
// Token semantics: the block consumes a sequence of 1 token (add / multiply /
// concat fusion: the fused vector) or 2 tokens (attention fusion: embedding
// first, context second), each of width d_model, carried as separate
// [k x d_model] matrices. The representation is read from token 0. Attention
// never crosses batch rows; with a single token it degenerates to the value
// projection. Pre-norm residual wiring, no positional encoding (sequences of
// length <= 2 have fixed roles).

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lightcrl/errors.hpp"
#include "lightcrl/rng.hpp"
#include "lightcrl/tensor.hpp"

namespace lightcrl {

enum class FusionKind { add, multiply, concat, attention };

inline const char* fusion_kind_name(FusionKind k) {
    switch (k) {
        case FusionKind::add: return "add";
        case FusionKind::multiply: return "multiply";
        case FusionKind::concat: return "concat";
        case FusionKind::attention: return "attention";
    }
    return "?";
}

inline FusionKind fusion_kind_from_name(const std::string& s) {
    if (s == "add") return FusionKind::add;
    if (s == "multiply") return FusionKind::multiply;
    if (s == "concat") return FusionKind::concat;
    if (s == "attention" || s == "dot") return FusionKind::attention;
    throw ContractError("unknown fusion kind '" + s + "'");
}

/// Two-layer MLP with ReLU: w2 * relu(w1 * x + b1) + b2, rows as samples.
template <class S>
struct ProjectionHead {
    Tensor<S> w1; // [d_in x d_model]
    Tensor<S> b1; // [d_model]
    Tensor<S> w2; // [d_model x d_model]
    Tensor<S> b2; // [d_model]

    std::size_t d_in() const { return w1.shape()[0]; }
    std::size_t d_model() const { return w1.shape()[1]; }
};

/// One learnable identifier row per modality; row l-1 belongs to modality l.
template <class S>
struct ContextTable {
    Tensor<S> c; // [2 x d_ctx]
};

template <class S>
struct FusionStrategy {
    FusionKind kind = FusionKind::add;
    Tensor<S> down_w; // [2*d_model x d_model], concat only
    Tensor<S> down_b; // [d_model], concat only
};

template <class S>
struct TransformerBlock {
    static constexpr std::size_t kHeads = 4;

    std::array<Tensor<S>, kHeads> wq; // each [d_model x d_head]
    std::array<Tensor<S>, kHeads> wk;
    std::array<Tensor<S>, kHeads> wv;
    Tensor<S> wo; // [d_model x d_model]
    Tensor<S> bo; // [d_model]
    Tensor<S> ln1_gain, ln1_bias; // [d_model]
    Tensor<S> ln2_gain, ln2_bias;
    Tensor<S> ff_w1; // [d_model x 4*d_model]
    Tensor<S> ff_b1; // [4*d_model]
    Tensor<S> ff_w2; // [4*d_model x d_model]
    Tensor<S> ff_b2; // [d_model]
};

template <class S>
struct DfeParameters {
    std::size_t d1 = 0, d2 = 0, d_ctx = 0, d_model = 0, d_out = 0;
    ProjectionHead<S> g1, g2, g3;
    ContextTable<S> contexts;
    FusionStrategy<S> fusion;
    TransformerBlock<S> block;
    Tensor<S> out_w; // [d_model x d_out]
    Tensor<S> out_b; // [d_out]
    Tensor<S> log_tau; // scalar

    S tau() const { return std::exp(log_tau.item()); }

    /// Fixed-order named view of every trainable tensor. The order defines the
    /// checkpoint section layout and the optimizer slot assignment.
    std::vector<std::pair<std::string, Tensor<S>>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        auto head = [&](const char* prefix, const ProjectionHead<S>& h) {
            out.emplace_back(std::string(prefix) + "/w1", h.w1);
            out.emplace_back(std::string(prefix) + "/b1", h.b1);
            out.emplace_back(std::string(prefix) + "/w2", h.w2);
            out.emplace_back(std::string(prefix) + "/b2", h.b2);
        };
        head("g1", g1);
        head("g2", g2);
        head("g3", g3);
        out.emplace_back("ctx", contexts.c);
        if (fusion.kind == FusionKind::concat) {
            out.emplace_back("fusion/down_w", fusion.down_w);
            out.emplace_back("fusion/down_b", fusion.down_b);
        }
        for (std::size_t h = 0; h < TransformerBlock<S>::kHeads; ++h) {
            const std::string p = "block/h" + std::to_string(h);
            out.emplace_back(p + "/wq", block.wq[h]);
            out.emplace_back(p + "/wk", block.wk[h]);
            out.emplace_back(p + "/wv", block.wv[h]);
        }
        out.emplace_back("block/wo", block.wo);
        out.emplace_back("block/bo", block.bo);
        out.emplace_back("block/ln1_gain", block.ln1_gain);
        out.emplace_back("block/ln1_bias", block.ln1_bias);
        out.emplace_back("block/ln2_gain", block.ln2_gain);
        out.emplace_back("block/ln2_bias", block.ln2_bias);
        out.emplace_back("block/ff_w1", block.ff_w1);
        out.emplace_back("block/ff_b1", block.ff_b1);
        out.emplace_back("block/ff_w2", block.ff_w2);
        out.emplace_back("block/ff_b2", block.ff_b2);
        out.emplace_back("out/w", out_w);
        out.emplace_back("out/b", out_b);
        out.emplace_back("log_tau", log_tau);
        return out;
    }

    void zero_grad() {
        for (auto& [name, t] : named_parameters()) t.zero_grad();
    }
};

/// Exact count of trainable scalars.
template <class S>
std::size_t param_count(const DfeParameters<S>& params) {
    std::size_t total = 0;
    for (const auto& [name, t] : params.named_parameters()) total += t.size();
    return total;
}

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kTauInit = 0.1;
inline constexpr double kTauMin = 0.01;
inline constexpr double kTauMax = 100.0;

namespace detail {

template <class S>
Tensor<S> he_uniform(GaussianSampler&, Xoshiro256ss& rng, std::size_t fan_in, Shape shape) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<S> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<S>((2.0 * rng.next_double() - 1.0) * limit);
    return Tensor<S>::from_data(std::move(shape), std::move(data), true);
}

template <class S>
ProjectionHead<S> init_head(Xoshiro256ss& rng, GaussianSampler& gauss, std::size_t d_in, std::size_t d_model) {
    ProjectionHead<S> h;
    h.w1 = he_uniform<S>(gauss, rng, d_in, {d_in, d_model});
    h.b1 = Tensor<S>::zeros({d_model}, true);
    h.w2 = he_uniform<S>(gauss, rng, d_model, {d_model, d_model});
    h.b2 = Tensor<S>::zeros({d_model}, true);
    return h;
}

} // namespace detail

/// Deterministic initialization: weights He-style fan-in scaled uniform,
/// biases zero, layer-norm gain 1 / bias 0, contexts N(0,1)/sqrt(d_ctx),
/// log_tau = ln(0.1). Draw order is fixed by the parameter list order.
template <class S>
DfeParameters<S> init_parameters(std::size_t d1, std::size_t d2, std::size_t d_ctx, std::size_t d_model,
                                 std::size_t d_out, FusionKind fusion_kind, std::uint64_t seed) {
    if (d1 == 0 || d2 == 0 || d_ctx == 0 || d_model == 0 || d_out == 0)
        throw ContractError("init_parameters: all dimensions must be >= 1");
    if (d_model % TransformerBlock<S>::kHeads != 0)
        throw ContractError("init_parameters: d_model=" + std::to_string(d_model) + " not divisible by 4");

    Xoshiro256ss rng(seed);
    GaussianSampler gauss(rng);

    DfeParameters<S> p;
    p.d1 = d1;
    p.d2 = d2;
    p.d_ctx = d_ctx;
    p.d_model = d_model;
    p.d_out = d_out;
    p.g1 = detail::init_head<S>(rng, gauss, d1, d_model);
    p.g2 = detail::init_head<S>(rng, gauss, d2, d_model);
    p.g3 = detail::init_head<S>(rng, gauss, d_ctx, d_model);

    {
        const double s = 1.0 / std::sqrt(static_cast<double>(d_ctx));
        std::vector<S> ctx(2 * d_ctx);
        for (auto& v : ctx) v = static_cast<S>(gauss.next() * s);
        p.contexts.c = Tensor<S>::from_data({2, d_ctx}, std::move(ctx), true);
        // Rows identify modalities; identical rows would make the identifier useless.
        S max_diff = S(0);
        for (std::size_t j = 0; j < d_ctx; ++j)
            max_diff = std::max(max_diff, std::abs(p.contexts.c.value()[j] - p.contexts.c.value()[d_ctx + j]));
        if (!(max_diff > S(0))) throw ContractError("init_parameters: context rows are identical");
    }

    p.fusion.kind = fusion_kind;
    if (fusion_kind == FusionKind::concat) {
        p.fusion.down_w = detail::he_uniform<S>(gauss, rng, 2 * d_model, {2 * d_model, d_model});
        p.fusion.down_b = Tensor<S>::zeros({d_model}, true);
    }

    const std::size_t d_head = d_model / TransformerBlock<S>::kHeads;
    for (std::size_t h = 0; h < TransformerBlock<S>::kHeads; ++h) {
        p.block.wq[h] = detail::he_uniform<S>(gauss, rng, d_model, {d_model, d_head});
        p.block.wk[h] = detail::he_uniform<S>(gauss, rng, d_model, {d_model, d_head});
        p.block.wv[h] = detail::he_uniform<S>(gauss, rng, d_model, {d_model, d_head});
    }
    p.block.wo = detail::he_uniform<S>(gauss, rng, d_model, {d_model, d_model});
    p.block.bo = Tensor<S>::zeros({d_model}, true);
    p.block.ln1_gain = Tensor<S>::ones({d_model}, true);
    p.block.ln1_bias = Tensor<S>::zeros({d_model}, true);
    p.block.ln2_gain = Tensor<S>::ones({d_model}, true);
    p.block.ln2_bias = Tensor<S>::zeros({d_model}, true);
    p.block.ff_w1 = detail::he_uniform<S>(gauss, rng, d_model, {d_model, 4 * d_model});
    p.block.ff_b1 = Tensor<S>::zeros({4 * d_model}, true);
    p.block.ff_w2 = detail::he_uniform<S>(gauss, rng, 4 * d_model, {4 * d_model, d_model});
    p.block.ff_b2 = Tensor<S>::zeros({d_model}, true);
    p.out_w = detail::he_uniform<S>(gauss, rng, d_model, {d_model, d_out});
    p.out_b = Tensor<S>::zeros({d_out}, true);
    p.log_tau = Tensor<S>::scalar(static_cast<S>(std::log(kTauInit)), true);
    return p;
}

/// Structural copy helpers. detached: frozen snapshot for evaluation;
/// trainable: independent leaves for best-model snapshots.
template <class S>
DfeParameters<S> copy_parameters(const DfeParameters<S>& src, bool trainable) {
    DfeParameters<S> dst = src; // copies handles and dims
    auto clone = [trainable](Tensor<S>& t) {
        t = trainable ? t.clone_leaf() : t.detach();
    };
    auto head = [&](ProjectionHead<S>& h) {
        clone(h.w1);
        clone(h.b1);
        clone(h.w2);
        clone(h.b2);
    };
    head(dst.g1);
    head(dst.g2);
    head(dst.g3);
    clone(dst.contexts.c);
    if (dst.fusion.kind == FusionKind::concat) {
        clone(dst.fusion.down_w);
        clone(dst.fusion.down_b);
    }
    for (std::size_t h = 0; h < TransformerBlock<S>::kHeads; ++h) {
        clone(dst.block.wq[h]);
        clone(dst.block.wk[h]);
        clone(dst.block.wv[h]);
    }
    clone(dst.block.wo);
    clone(dst.block.bo);
    clone(dst.block.ln1_gain);
    clone(dst.block.ln1_bias);
    clone(dst.block.ln2_gain);
    clone(dst.block.ln2_bias);
    clone(dst.block.ff_w1);
    clone(dst.block.ff_b1);
    clone(dst.block.ff_w2);
    clone(dst.block.ff_b2);
    clone(dst.out_w);
    clone(dst.out_b);
    clone(dst.log_tau);
    return dst;
}

/// x[k x d_in] -> w2 * relu(w1 * x + b1) + b2, per row.
template <class S>
Tensor<S> project(const ProjectionHead<S>& head, const Tensor<S>& x) {
    detail::require_rank2(x, "project");
    if (x.shape()[1] != head.d_in())
        throw ShapeError("project: input " + shape_str(x.shape()) + " does not match head d_in=" +
                         std::to_string(head.d_in()));
    Tensor<S> hidden = relu(add_bias(matmul(x, head.w1), head.b1));
    return add_bias(matmul(hidden, head.w2), head.b2);
}

/// Combine projected embeddings e[k x d_model] with the projected context
/// row ctx[1 x d_model] into the block's token sequence.
template <class S>
std::vector<Tensor<S>> fuse(const FusionStrategy<S>& strategy, const Tensor<S>& e, const Tensor<S>& ctx) {
    detail::require_rank2(e, "fuse");
    if (ctx.rank() != 2 || ctx.shape()[0] != 1 || ctx.shape()[1] != e.shape()[1])
        throw ShapeError("fuse: context " + shape_str(ctx.shape()) + " does not match embeddings " +
                         shape_str(e.shape()));
    const std::size_t k = e.shape()[0];
    Tensor<S> ctx_rows = tile_rows(ctx, k);
    switch (strategy.kind) {
        case FusionKind::add:
            return {add(e, ctx_rows)};
        case FusionKind::multiply:
            return {mul(e, ctx_rows)};
        case FusionKind::concat:
            return {add_bias(matmul(hconcat(e, ctx_rows), strategy.down_w), strategy.down_b)};
        case FusionKind::attention:
            // Embedding token first, context token second; the block's
            // attention realizes the scaled-dot-product fusion.
            return {e, ctx_rows};
    }
    throw ContractError("fuse: bad fusion kind");
}

namespace detail {

/// Multi-head self-attention over a <=2 token sequence plus feed-forward,
/// pre-norm residual wiring. Tokens are [k x d_model] matrices; attention is
/// confined to each batch row's own token window.
template <class S>
std::vector<Tensor<S>> block_forward(const TransformerBlock<S>& blk, const std::vector<Tensor<S>>& tokens) {
    const std::size_t T = tokens.size();
    const std::size_t d_model = tokens[0].shape()[1];
    const std::size_t d_head = d_model / TransformerBlock<S>::kHeads;
    const S scale_qk = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d_head)));
    const S eps = static_cast<S>(kLayerNormEps);

    std::vector<Tensor<S>> normed;
    normed.reserve(T);
    for (const auto& t : tokens) normed.push_back(layer_norm(t, blk.ln1_gain, blk.ln1_bias, eps));

    // attn_out[t] = Wo * concat_h( sum_t' alpha[t][t'] * V_h[t'] ) + bo
    std::vector<Tensor<S>> attn_out;
    attn_out.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<Tensor<S>> head_outputs;
        head_outputs.reserve(TransformerBlock<S>::kHeads);
        for (std::size_t h = 0; h < TransformerBlock<S>::kHeads; ++h) {
            Tensor<S> q = matmul(normed[t], blk.wq[h]); // [k x d_head]
            std::vector<Tensor<S>> keys, values, score_cols;
            keys.reserve(T);
            values.reserve(T);
            score_cols.reserve(T);
            for (std::size_t u = 0; u < T; ++u) {
                keys.push_back(matmul(normed[u], blk.wk[h]));
                values.push_back(matmul(normed[u], blk.wv[h]));
                score_cols.push_back(scale(row_sum(mul(q, keys.back())), scale_qk)); // [k x 1]
            }
            Tensor<S> alpha = softmax_rows(hconcat(score_cols)); // [k x T]
            Tensor<S> mixed = rowscale(values[0], slice_cols(alpha, 0, 1));
            for (std::size_t u = 1; u < T; ++u)
                mixed = add(mixed, rowscale(values[u], slice_cols(alpha, u, u + 1)));
            head_outputs.push_back(mixed); // [k x d_head]
        }
        attn_out.push_back(add_bias(matmul(hconcat(head_outputs), blk.wo), blk.bo));
    }

    std::vector<Tensor<S>> out;
    out.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor<S> x = add(tokens[t], attn_out[t]);
        Tensor<S> xn = layer_norm(x, blk.ln2_gain, blk.ln2_bias, eps);
        Tensor<S> ff = add_bias(matmul(relu(add_bias(matmul(xn, blk.ff_w1), blk.ff_b1)), blk.ff_w2), blk.ff_b2);
        out.push_back(add(x, ff));
    }
    return out;
}

} // namespace detail

/// Full encoder for one modality (1 or 2): projected frozen embeddings are
/// fused with the projected context identifier, passed through the shared
/// block, mapped to d_out and L2-normalized. Differentiable end to end.
template <class S>
Tensor<S> encode_modality(const DfeParameters<S>& params, const Tensor<S>& x, int modality) {
    if (modality != 1 && modality != 2) throw ContractError("encode_modality: modality must be 1 or 2");
    detail::require_rank2(x, "encode_modality");
    const std::size_t want = modality == 1 ? params.d1 : params.d2;
    if (x.shape()[1] != want)
        throw ShapeError("encode_modality: input " + shape_str(x.shape()) + " does not match d" +
                         std::to_string(modality) + "=" + std::to_string(want));

    const ProjectionHead<S>& g = modality == 1 ? params.g1 : params.g2;
    Tensor<S> e = project(g, x);
    Tensor<S> ctx_row = slice_rows(params.contexts.c, static_cast<std::size_t>(modality - 1),
                                   static_cast<std::size_t>(modality));
    Tensor<S> ctx = project(params.g3, ctx_row);
    std::vector<Tensor<S>> tokens = fuse(params.fusion, e, ctx);
    std::vector<Tensor<S>> encoded = detail::block_forward(params.block, tokens);
    return l2_normalize(add_bias(matmul(encoded[0], params.out_w), params.out_b));
}

} // namespace lightcrl
