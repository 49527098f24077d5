#include "support.hpp"
#include "oracles.hpp"

using namespace lightcrl;
using testutil::random_tensor;
using Catch::Approx;

namespace {

// Closed-form trainable scalar count for the fixed architecture.
std::size_t analytic_param_count(std::size_t d1, std::size_t d2, std::size_t dc, std::size_t dm,
                                 std::size_t dout, FusionKind kind) {
    auto head = [&](std::size_t din) { return din * dm + dm + dm * dm + dm; };
    std::size_t total = head(d1) + head(d2) + head(dc);
    total += 2 * dc;                                  // context rows
    if (kind == FusionKind::concat) total += 2 * dm * dm + dm;
    total += 3 * dm * dm;                             // per-head q/k/v, 4 heads of width dm/4
    total += dm * dm + dm;                            // attention output projection
    total += 4 * dm;                                  // two layer-norm gain/bias pairs
    total += dm * 4 * dm + 4 * dm + 4 * dm * dm + dm; // feed-forward
    total += dm * dout + dout;                        // output head
    total += 1;                                       // log_tau
    return total;
}

} // namespace

TEST_CASE("init_parameters is deterministic and validates dimensions") {
    auto a = init_parameters<double>(5, 7, 4, 8, 6, FusionKind::add, 42);
    auto b = init_parameters<double>(5, 7, 4, 8, 6, FusionKind::add, 42);
    REQUIRE(testutil::params_bit_identical(a, b));

    auto c = init_parameters<double>(5, 7, 4, 8, 6, FusionKind::add, 43);
    REQUIRE_FALSE(testutil::params_bit_identical(a, c));
    REQUIRE(param_count(a) == param_count(c));

    REQUIRE(a.tau() == Approx(0.1).margin(1e-12));
    REQUIRE_THROWS_AS(init_parameters<double>(5, 7, 4, 6, 6, FusionKind::add, 1), ContractError);
    REQUIRE_THROWS_AS(init_parameters<double>(0, 7, 4, 8, 6, FusionKind::add, 1), ContractError);

    // context rows must differ
    double diff = 0;
    for (std::size_t j = 0; j < 4; ++j)
        diff = std::max(diff, std::abs(a.contexts.c.value()[j] - a.contexts.c.value()[4 + j]));
    REQUIRE(diff > 1e-6);
}

TEST_CASE("param_count equals the analytic closed form") {
    for (auto kind : {FusionKind::add, FusionKind::multiply, FusionKind::concat, FusionKind::attention}) {
        auto p = init_parameters<double>(32, 48, 16, 64, 64, kind, 3);
        REQUIRE(param_count(p) == analytic_param_count(32, 48, 16, 64, 64, kind));
    }
    // doubling d_out adds exactly d_model*d_out + d_out
    auto p1 = init_parameters<double>(32, 48, 16, 64, 64, FusionKind::add, 3);
    auto p2 = init_parameters<double>(32, 48, 16, 64, 128, FusionKind::add, 3);
    REQUIRE(param_count(p2) - param_count(p1) == 64 * 64 + 64);
}

TEST_CASE("project: pinned cases and the two-layer oracle") {
    // zero weights, b2 = v -> every row equals v
    ProjectionHead<double> zero;
    zero.w1 = Tensor<double>::zeros({3, 4}, true);
    zero.b1 = Tensor<double>::zeros({4}, true);
    zero.w2 = Tensor<double>::zeros({4, 4}, true);
    zero.b2 = Tensor<double>::from_data({4}, {1, -2, 3, -4}, true);
    auto out = project(zero, Tensor<double>::from_data({2, 3}, {9, 9, 9, -9, -9, -9}));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(out.value()[i * 4 + j] == zero.b2.value()[j]);

    // identity weights on nonnegative input pass through the ReLU untouched
    ProjectionHead<double> ident;
    std::vector<double> eye(16, 0.0);
    for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
    ident.w1 = Tensor<double>::from_data({4, 4}, eye, true);
    ident.w2 = Tensor<double>::from_data({4, 4}, eye, true);
    ident.b1 = Tensor<double>::zeros({4}, true);
    ident.b2 = Tensor<double>::zeros({4}, true);
    auto x = Tensor<double>::from_data({2, 4}, {0, 1, 2, 3, 4, 0, 6, 7});
    auto y = project(ident, x);
    REQUIRE(testutil::bit_identical(y.value(), x.value()));

    // random case vs the scalar oracle
    Xoshiro256ss rng(8);
    auto p = init_parameters<double>(5, 7, 4, 8, 6, FusionKind::add, 12);
    auto xr = random_tensor<double>({3, 5}, rng);
    auto pr = project(p.g1, xr);
    for (std::size_t i = 0; i < 3; ++i) {
        auto expect = oracle::mlp2(std::span<const double>(xr.value().data() + i * 5, 5),
                                   {p.g1.w1.value().begin(), p.g1.w1.value().end()},
                                   {p.g1.b1.value().begin(), p.g1.b1.value().end()},
                                   {p.g1.w2.value().begin(), p.g1.w2.value().end()},
                                   {p.g1.b2.value().begin(), p.g1.b2.value().end()}, 5, 8, 8);
        for (std::size_t j = 0; j < 8; ++j)
            REQUIRE(pr.value()[i * 8 + j] == Approx(expect[j]).margin(1e-6));
    }

    REQUIRE_THROWS_AS(project(p.g1, random_tensor<double>({3, 6}, rng)), ShapeError);
}

TEST_CASE("fuse: pinned elementwise cases and token layout") {
    FusionStrategy<double> add_kind{FusionKind::add, {}, {}};
    auto e = Tensor<double>::from_data({1, 2}, {1, 2});
    auto ctx = Tensor<double>::from_data({1, 2}, {0.5, -1});

    auto added = fuse(add_kind, e, ctx);
    REQUIRE(added.size() == 1);
    REQUIRE(added[0].value()[0] == Approx(1.5));
    REQUIRE(added[0].value()[1] == Approx(1.0));

    FusionStrategy<double> mul_kind{FusionKind::multiply, {}, {}};
    auto mulled = fuse(mul_kind, e, ctx);
    REQUIRE(mulled[0].value()[0] == Approx(0.5));
    REQUIRE(mulled[0].value()[1] == Approx(-2.0));

    // attention: the sequence is exactly [e, ctx] with the embedding first
    FusionStrategy<double> attn_kind{FusionKind::attention, {}, {}};
    auto stacked = Tensor<double>::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    auto seq = fuse(attn_kind, stacked, ctx);
    REQUIRE(seq.size() == 2);
    REQUIRE(testutil::bit_identical(seq[0].value(), stacked.value()));
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(seq[1].value()[i * 2 + 0] == 0.5);
        REQUIRE(seq[1].value()[i * 2 + 1] == -1.0);
    }

    REQUIRE_THROWS_AS(fuse(add_kind, e, Tensor<double>::from_data({1, 3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("encode_modality: shape, unit norm, purity") {
    Xoshiro256ss rng(14);
    for (auto kind : {FusionKind::add, FusionKind::multiply, FusionKind::concat, FusionKind::attention}) {
        auto p = init_parameters<double>(5, 7, 4, 8, 6, kind, 21);
        auto x = random_tensor<double>({4, 5}, rng);
        auto h = encode_modality(p, x, 1);
        REQUIRE(h.shape() == Shape{4, 6});
        for (std::size_t i = 0; i < 4; ++i) {
            double norm = 0;
            for (std::size_t j = 0; j < 6; ++j) norm += h.value()[i * 6 + j] * h.value()[i * 6 + j];
            REQUIRE(std::sqrt(norm) == Approx(1.0).margin(1e-6));
        }

        // identical input rows encode identically
        std::vector<double> dup(2 * 5);
        for (std::size_t j = 0; j < 5; ++j) dup[j] = dup[5 + j] = x.value()[j];
        auto hd = encode_modality(p, Tensor<double>::from_data({2, 5}, dup), 1);
        for (std::size_t j = 0; j < 6; ++j) REQUIRE(hd.value()[j] == hd.value()[6 + j]);
    }
    auto p = init_parameters<double>(5, 7, 4, 8, 6, FusionKind::add, 21);
    REQUIRE_THROWS_AS(encode_modality(p, random_tensor<double>({2, 7}, rng), 1), ShapeError);
    REQUIRE_THROWS_AS(encode_modality(p, random_tensor<double>({2, 5}, rng), 3), ContractError);
}

TEST_CASE("encode_modality matches the scalar reference walk-through") {
    Xoshiro256ss rng(15);
    for (auto kind : {FusionKind::add, FusionKind::multiply, FusionKind::concat, FusionKind::attention}) {
        auto p = init_parameters<double>(5, 7, 4, 8, 6, kind, 33);
        for (int modality : {1, 2}) {
            const std::size_t d = modality == 1 ? 5 : 7;
            auto x = random_tensor<double>({3, d}, rng);
            auto h = encode_modality(p, x, modality);
            for (std::size_t i = 0; i < 3; ++i) {
                auto expect = oracle::dfe_forward_row(p, std::span<const double>(x.value().data() + i * d, d),
                                                      modality);
                for (std::size_t j = 0; j < 6; ++j)
                    REQUIRE(h.value()[i * 6 + j] == Approx(expect[j]).margin(1e-5));
            }
        }
    }
}

TEST_CASE("context identifier is not a no-op") {
    Xoshiro256ss rng(16);
    // Make g1 and g2 share weights so the context row is the only difference
    // between the two modality paths.
    auto p = init_parameters<double>(6, 6, 4, 8, 6, FusionKind::add, 44);
    p.g2 = p.g1;
    auto x = random_tensor<double>({3, 6}, rng);
    auto h1 = encode_modality(p, x, 1);
    auto h2 = encode_modality(p, x, 2);
    REQUIRE(testutil::max_abs_diff(h1.value(), h2.value()) > 1e-6);
}

TEST_CASE("batch independence: rows encode the same alone or batched") {
    Xoshiro256ss rng(17);
    for (auto kind : {FusionKind::add, FusionKind::attention}) {
        auto p = init_parameters<double>(5, 7, 4, 8, 6, kind, 55);
        auto x = random_tensor<double>({4, 5}, rng);
        auto batched = encode_modality(p, x, 1);
        for (std::size_t i = 0; i < 4; ++i) {
            auto row = Tensor<double>::from_data({1, 5}, std::vector<double>(x.value().begin() + i * 5,
                                                                             x.value().begin() + (i + 1) * 5));
            auto alone = encode_modality(p, row, 1);
            for (std::size_t j = 0; j < 6; ++j)
                REQUIRE(batched.value()[i * 6 + j] == Approx(alone.value()[j]).margin(1e-6));
        }
    }
}

TEST_CASE("one shared block and output head serve both modalities") {
    auto p = init_parameters<double>(5, 7, 4, 8, 6, FusionKind::add, 66);
    auto named = p.named_parameters();
    // exactly one block and one output head in the parameter inventory
    std::size_t block_entries = 0, out_entries = 0;
    for (const auto& [name, t] : named) {
        block_entries += name.rfind("block/", 0) == 0;
        out_entries += name.rfind("out/", 0) == 0;
    }
    REQUIRE(block_entries == 22); // 12 head matrices + wo + bo + 4 layer-norm + 4 feed-forward
    REQUIRE(out_entries == 2);
    // the named view is the same storage the struct fields use
    for (const auto& [name, t] : named) {
        if (name == "block/wo") REQUIRE(t.node() == p.block.wo.node());
        if (name == "out/w") REQUIRE(t.node() == p.out_w.node());
    }
}

TEST_CASE("gradient flow: encoding one modality leaves the other head untouched") {
    Xoshiro256ss rng(18);
    auto p = init_parameters<double>(5, 7, 4, 8, 6, FusionKind::attention, 77);
    auto x = random_tensor<double>({3, 5}, rng);
    p.zero_grad();
    sum_all(encode_modality(p, x, 1)).backward();

    auto nonzero = [](std::span<const double> g) {
        for (double v : g)
            if (v != 0.0) return true;
        return false;
    };
    REQUIRE(nonzero(p.g1.w1.grad()));
    REQUIRE(nonzero(p.g3.w1.grad()));
    REQUIRE(nonzero(p.block.wo.grad()));
    REQUIRE(nonzero(p.out_w.grad()));
    REQUIRE_FALSE(nonzero(p.g2.w1.grad()));
    REQUIRE_FALSE(nonzero(p.g2.b2.grad()));
    // only the modality-1 context row receives gradient
    auto cg = p.contexts.c.grad();
    REQUIRE(nonzero(cg.subspan(0, 4)));
    REQUIRE_FALSE(nonzero(cg.subspan(4, 4)));

    // the same storage receives gradient from the modality-2 path
    p.zero_grad();
    auto x2 = random_tensor<double>({3, 7}, rng);
    sum_all(encode_modality(p, x2, 2)).backward();
    REQUIRE(nonzero(p.block.wo.grad()));
    REQUIRE(nonzero(p.g2.w1.grad()));
    REQUIRE_FALSE(nonzero(p.g1.w1.grad()));
}

namespace {

// The loss treats its soft targets as constants, so the differentiable
// function is the loss with targets frozen at the base point.
template <class S>
auto frozen_target_loss(DfeParameters<S>& p, const Tensor<S>& x1, const Tensor<S>& x2) {
    Tensor<S> t12, t21;
    {
        auto h1 = encode_modality(p, x1, 1);
        auto h2 = encode_modality(p, x2, 2);
        auto rep = total_loss(h1, h2, lightcrl::exp(p.log_tau));
        t12 = rep.targets12;
        t21 = rep.targets21;
    }
    return [&p, &x1, &x2, t12, t21] {
        auto h1 = encode_modality(p, x1, 1);
        auto h2 = encode_modality(p, x2, 2);
        return total_loss_with_targets(h1, h2, lightcrl::exp(p.log_tau), t12, t21).total;
    };
}

} // namespace

TEST_CASE("full encoder gradients match central differences") {
    Xoshiro256ss rng(19);
    for (auto kind : {FusionKind::add, FusionKind::attention}) {
        auto p = init_parameters<double>(4, 5, 4, 8, 6, kind, 88);
        auto x1 = random_tensor<double>({3, 4}, rng);
        auto x2 = random_tensor<double>({3, 5}, rng);
        auto named = p.named_parameters();
        auto fn = frozen_target_loss(p, x1, x2);
        FdOptions opts;
        opts.h = 1e-5;
        opts.max_coords_per_tensor = 6; // keep runtime sane; every tensor still sampled
        opts.subsample_seed = 5;
        auto rep = finite_difference_check<double>(fn, named, opts);
        INFO(fusion_kind_name(kind) << " worst " << rep.worst_tensor);
        REQUIRE(rep.max_rel_error <= 1e-6);
    }
}

TEST_CASE("full encoder gradients at 32-bit precision") {
    Xoshiro256ss rng(20);
    auto p = init_parameters<float>(4, 5, 4, 8, 6, FusionKind::add, 99);
    auto x1 = testutil::random_tensor<float>({3, 4}, rng);
    auto x2 = testutil::random_tensor<float>({3, 5}, rng);
    auto named = p.named_parameters();
    auto fn = frozen_target_loss(p, x1, x2);
    FdOptions opts;
    opts.h = 1e-3;
    opts.max_coords_per_tensor = 4;
    opts.subsample_seed = 6;
    auto rep = finite_difference_check<float>(fn, named, opts);
    REQUIRE(rep.max_rel_error <= 1e-3);
}

TEST_CASE("copy_parameters: frozen copies drop grads, trainable copies are independent") {
    auto p = init_parameters<double>(4, 5, 4, 8, 6, FusionKind::concat, 111);
    auto frozen = copy_parameters(p, false);
    REQUIRE_FALSE(frozen.log_tau.requires_grad());
    REQUIRE(testutil::params_bit_identical(p, frozen)); // values equal
    auto trainable = copy_parameters(p, true);
    REQUIRE(trainable.log_tau.requires_grad());
    trainable.log_tau.value_mut()[0] = 99;
    REQUIRE(p.log_tau.item() != 99);
}
