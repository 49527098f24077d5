#pragma once

// Training loop: per-epoch shuffled minibatches, Adam updates with the
// temperature clamp, validation-loss early stopping with best-snapshot
// tracking, checkpoint state capture, and the fine-tuning mode.
//
// Determinism: with a fixed seed and single-threaded execution the loss
// history is bit-identical across runs at the same precision. Epoch shuffles
// are derived from (seed, epoch index) alone, so a run resumed from a
// checkpoint continues the exact batch schedule of the uninterrupted run.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lightcrl/checkpoint.hpp"
#include "lightcrl/data.hpp"
#include "lightcrl/errors.hpp"
#include "lightcrl/loss.hpp"
#include "lightcrl/model.hpp"
#include "lightcrl/optim.hpp"
#include "lightcrl/tensor.hpp"

namespace lightcrl {

/// Minimum absolute validation-loss improvement that resets the patience counter.
inline constexpr double kImprovementEps = 1e-5;

template <class S>
struct TrainConfig {
    std::size_t batch_k = 64;
    std::size_t max_epochs = 500;
    std::size_t patience = 20;
    S lr = static_cast<S>(1e-3);
    S beta1 = static_cast<S>(0.9);
    S beta2 = static_cast<S>(0.999);
    S eps_opt = static_cast<S>(1e-8);
    std::uint64_t seed = 0;
    double val_fraction = 0.1; // used when no explicit validation set is given
    S grad_clip = S(0);        // max gradient norm; 0 disables clipping
};

template <class S>
struct EpochStats {
    S train_loss = S(0);
    S val_loss = S(0);
};

template <class S>
void validate_config(const TrainConfig<S>& cfg, std::size_t n_train) {
    if (cfg.batch_k == 0 || cfg.batch_k > n_train)
        throw ContractError("batch_k=" + std::to_string(cfg.batch_k) + " outside [1, n_train=" +
                            std::to_string(n_train) + "]");
    if (cfg.patience == 0) throw ContractError("patience must be >= 1");
    if (cfg.lr < S(0)) throw ContractError("negative learning rate");
}

/// One pass over the training set: encode both modalities per batch, take the
/// total loss, backpropagate, Adam-update. Returns the unweighted mean of the
/// per-batch losses (the last partial batch counts as one batch).
template <class S>
S train_epoch(DfeParameters<S>& params, const PairedEmbeddingSet<S>& data, const TrainConfig<S>& cfg,
              OptimizerState<S>& opt, std::size_t epoch) {
    validate_config(cfg, data.n);
    EpochSampler sampler(data.n, cfg.seed, epoch);
    S acc = S(0);
    std::size_t batches = 0;
    auto named = params.named_parameters();
    while (!sampler.exhausted()) {
        Minibatch<S> batch = sample_minibatch(data, cfg.batch_k, sampler);
        params.zero_grad();
        Tensor<S> h1 = encode_modality(params, batch.m1, 1);
        Tensor<S> h2 = encode_modality(params, batch.m2, 2);
        Tensor<S> tau = exp(params.log_tau);
        LossReport<S> report = total_loss(h1, h2, tau);
        const S loss = report.total.item();
        if (!std::isfinite(static_cast<double>(loss)))
            throw DataError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches));
        report.total.backward();
        clip_grad_norm(named, cfg.grad_clip);
        adam_step(params, opt, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt);
        acc += loss;
        ++batches;
    }
    return acc / static_cast<S>(batches);
}

/// Mean per-batch total loss over sequential chunks of the validation set,
/// computed on a frozen snapshot (no graph, no gradient).
template <class S>
S validation_loss(const DfeParameters<S>& params, const PairedEmbeddingSet<S>& val, std::size_t batch_k) {
    if (val.n == 0) throw ContractError("validation set is empty");
    DfeParameters<S> frozen = copy_parameters(params, false);
    Tensor<S> tau = exp(frozen.log_tau);
    S acc = S(0);
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < val.n; lo += batch_k) {
        const std::size_t hi = std::min(val.n, lo + batch_k);
        std::vector<std::size_t> idx(hi - lo);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = lo + i;
        Tensor<S> h1 = encode_modality(frozen, gather_rows(val.m1, idx), 1);
        Tensor<S> h2 = encode_modality(frozen, gather_rows(val.m2, idx), 2);
        acc += total_loss(h1, h2, tau).total.item();
        ++batches;
    }
    return acc / static_cast<S>(batches);
}

/// Mutable trainer state; everything a checkpoint needs so a resumed run is
/// bit-identical to an uninterrupted one.
template <class S>
struct FitState {
    OptimizerState<S> opt;
    DfeParameters<S> best;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t next_epoch = 0;
    std::size_t stall = 0;

    bool initialized() const { return !opt.slots.empty(); }
};

template <class S>
struct FitResult {
    DfeParameters<S> best;
    std::vector<EpochStats<S>> history; // epochs executed by this call
};

/// Train until max_epochs or until validation loss fails to improve by at
/// least kImprovementEps for `patience` consecutive epochs. Keeps the
/// best-validation snapshot; never returns a worse one than observed.
template <class S>
FitResult<S> fit(DfeParameters<S>& params, const PairedEmbeddingSet<S>& train,
                 const PairedEmbeddingSet<S>& val, const TrainConfig<S>& cfg, FitState<S>* state = nullptr) {
    validate_config(cfg, train.n);
    if (val.n == 0) throw ContractError("fit: empty validation set");

    FitState<S> local;
    FitState<S>& st = state ? *state : local;
    if (!st.initialized()) {
        st.opt = OptimizerState<S>::make_for(params.named_parameters());
        st.best = copy_parameters(params, true);
        st.best_val = std::numeric_limits<double>::infinity();
        st.next_epoch = 0;
        st.stall = 0;
    }

    FitResult<S> result;
    for (std::size_t epoch = st.next_epoch; epoch < cfg.max_epochs; ++epoch) {
        const S tl = train_epoch(params, train, cfg, st.opt, epoch);
        const S vl = validation_loss(params, val, cfg.batch_k);
        if (!std::isfinite(static_cast<double>(vl)))
            throw DataError("non-finite validation loss at epoch " + std::to_string(epoch));
        result.history.push_back({tl, vl});
        if (static_cast<double>(vl) < st.best_val - kImprovementEps) {
            st.best_val = static_cast<double>(vl);
            st.best = copy_parameters(params, true);
            st.stall = 0;
        } else {
            ++st.stall;
        }
        st.next_epoch = epoch + 1;
        if (st.stall >= cfg.patience) break;
    }
    result.best = copy_parameters(st.best, true);
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint capture / restore
// ---------------------------------------------------------------------------

template <class S>
Checkpoint make_checkpoint(const DfeParameters<S>& params, const TrainConfig<S>& cfg, const FitState<S>& st) {
    Checkpoint ckpt;
    ckpt.add_scalar_f64("config/precision", static_cast<double>(sizeof(S) * 8));
    ckpt.add_scalar_f64("config/d1", static_cast<double>(params.d1));
    ckpt.add_scalar_f64("config/d2", static_cast<double>(params.d2));
    ckpt.add_scalar_f64("config/d_ctx", static_cast<double>(params.d_ctx));
    ckpt.add_scalar_f64("config/d_model", static_cast<double>(params.d_model));
    ckpt.add_scalar_f64("config/d_out", static_cast<double>(params.d_out));
    ckpt.add_scalar_f64("config/fusion", static_cast<double>(static_cast<int>(params.fusion.kind)));
    ckpt.add_scalar_f64("config/batch_k", static_cast<double>(cfg.batch_k));
    ckpt.add_scalar_f64("config/max_epochs", static_cast<double>(cfg.max_epochs));
    ckpt.add_scalar_f64("config/patience", static_cast<double>(cfg.patience));
    ckpt.add_scalar_f64("config/lr", static_cast<double>(cfg.lr));
    ckpt.add_scalar_f64("config/beta1", static_cast<double>(cfg.beta1));
    ckpt.add_scalar_f64("config/beta2", static_cast<double>(cfg.beta2));
    ckpt.add_scalar_f64("config/eps_opt", static_cast<double>(cfg.eps_opt));
    ckpt.add_scalar_f64("config/val_fraction", cfg.val_fraction);
    ckpt.add_scalar_f64("config/grad_clip", static_cast<double>(cfg.grad_clip));
    ckpt.add_seed("config/seed", cfg.seed);

    const auto named = params.named_parameters();
    for (const auto& [name, t] : named) ckpt.add_tensor("param/" + name, t);
    if (st.best.d_model != 0)
        for (const auto& [name, t] : st.best.named_parameters()) ckpt.add_tensor("best/" + name, t);
    if (st.opt.slots.size() == named.size()) {
        for (std::size_t i = 0; i < named.size(); ++i) {
            ckpt.add_values<S>("opt/m/" + named[i].first, named[i].second.shape(), st.opt.slots[i].m);
            ckpt.add_values<S>("opt/v/" + named[i].first, named[i].second.shape(), st.opt.slots[i].v);
        }
        ckpt.add_scalar_f64("opt/step", static_cast<double>(st.opt.step));
    }
    ckpt.add_scalar_f64("train/next_epoch", static_cast<double>(st.next_epoch));
    ckpt.add_scalar_f64("train/best_val", st.best_val);
    ckpt.add_scalar_f64("train/stall", static_cast<double>(st.stall));
    return ckpt;
}

template <class S>
struct RestoredRun {
    DfeParameters<S> params;
    TrainConfig<S> config;
    FitState<S> state;
};

/// Rebuild model, config and trainer state from a checkpoint. Throws
/// ContractError when the stored precision or any section shape disagrees
/// with this build's model skeleton.
template <class S>
RestoredRun<S> restore_run(const Checkpoint& ckpt) {
    const auto precision = static_cast<std::size_t>(ckpt.require("config/precision").scalar());
    if (precision != sizeof(S) * 8)
        throw ContractError("checkpoint precision is " + std::to_string(precision) + "-bit, build expects " +
                            std::to_string(sizeof(S) * 8) + "-bit");

    RestoredRun<S> run;
    run.config.batch_k = static_cast<std::size_t>(ckpt.require("config/batch_k").scalar());
    run.config.max_epochs = static_cast<std::size_t>(ckpt.require("config/max_epochs").scalar());
    run.config.patience = static_cast<std::size_t>(ckpt.require("config/patience").scalar());
    run.config.lr = static_cast<S>(ckpt.require("config/lr").scalar());
    run.config.beta1 = static_cast<S>(ckpt.require("config/beta1").scalar());
    run.config.beta2 = static_cast<S>(ckpt.require("config/beta2").scalar());
    run.config.eps_opt = static_cast<S>(ckpt.require("config/eps_opt").scalar());
    run.config.val_fraction = ckpt.require("config/val_fraction").scalar();
    run.config.grad_clip = static_cast<S>(ckpt.require("config/grad_clip").scalar());
    run.config.seed = ckpt.require("config/seed").scalar_u64_bits();

    const auto d1 = static_cast<std::size_t>(ckpt.require("config/d1").scalar());
    const auto d2 = static_cast<std::size_t>(ckpt.require("config/d2").scalar());
    const auto d_ctx = static_cast<std::size_t>(ckpt.require("config/d_ctx").scalar());
    const auto d_model = static_cast<std::size_t>(ckpt.require("config/d_model").scalar());
    const auto d_out = static_cast<std::size_t>(ckpt.require("config/d_out").scalar());
    const auto kind = static_cast<FusionKind>(static_cast<int>(ckpt.require("config/fusion").scalar()));

    run.params = init_parameters<S>(d1, d2, d_ctx, d_model, d_out, kind, run.config.seed);
    for (auto& [name, t] : run.params.named_parameters()) ckpt.read_into("param/" + name, t);

    if (ckpt.find("best/log_tau")) {
        run.state.best = init_parameters<S>(d1, d2, d_ctx, d_model, d_out, kind, run.config.seed);
        for (auto& [name, t] : run.state.best.named_parameters()) ckpt.read_into("best/" + name, t);
    } else {
        run.state.best = copy_parameters(run.params, true);
    }

    if (ckpt.find("opt/step")) {
        const auto named = run.params.named_parameters();
        run.state.opt = OptimizerState<S>::make_for(named);
        run.state.opt.step = static_cast<std::uint64_t>(ckpt.require("opt/step").scalar());
        for (std::size_t i = 0; i < named.size(); ++i) {
            Tensor<S> m = Tensor<S>::zeros(named[i].second.shape());
            Tensor<S> v = Tensor<S>::zeros(named[i].second.shape());
            ckpt.read_into("opt/m/" + named[i].first, m);
            ckpt.read_into("opt/v/" + named[i].first, v);
            run.state.opt.slots[i].m.assign(m.value().begin(), m.value().end());
            run.state.opt.slots[i].v.assign(v.value().begin(), v.value().end());
        }
    } else {
        run.state.opt = OptimizerState<S>::make_for(run.params.named_parameters());
    }
    run.state.next_epoch = static_cast<std::size_t>(ckpt.require("train/next_epoch").scalar());
    run.state.best_val = ckpt.require("train/best_val").scalar();
    run.state.stall = static_cast<std::size_t>(ckpt.require("train/stall").scalar());
    return run;
}

// ---------------------------------------------------------------------------
// Classifier head and fine-tuning
// ---------------------------------------------------------------------------

template <class S>
struct LinearHead {
    Tensor<S> w; // [d_in x classes]
    Tensor<S> b; // [classes]

    static LinearHead zero_init(std::size_t d_in, std::size_t classes) {
        // Zero init gives uniform logits: an untrained head predicts chance.
        return {Tensor<S>::zeros({d_in, classes}, true), Tensor<S>::zeros({classes}, true)};
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_parameters() const {
        return {{"head/w", w}, {"head/b", b}};
    }
};

template <class S>
Tensor<S> head_logits(const LinearHead<S>& head, const Tensor<S>& features) {
    return add_bias(matmul(features, head.w), head.b);
}

template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const std::uint32_t> labels) {
    return neg(select_labels_mean(log_softmax_rows(logits), labels));
}

/// Argmax predictions with ties resolved to the lowest index.
template <class S>
std::vector<std::uint32_t> argmax_rows(const Tensor<S>& logits) {
    const std::size_t r = logits.shape()[0], c = logits.shape()[1];
    std::vector<std::uint32_t> out(r);
    auto lv = logits.value();
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (lv[i * c + j] > lv[i * c + best]) best = j;
        out[i] = static_cast<std::uint32_t>(best);
    }
    return out;
}

template <class S>
double label_accuracy(const Tensor<S>& logits, std::span<const std::uint32_t> labels) {
    const auto pred = argmax_rows(logits);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
    return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

template <class S>
struct FinetuneResult {
    LinearHead<S> head;
    std::vector<std::pair<std::size_t, double>> test_accuracy; // (epoch, accuracy)
};

/// Softmax cross-entropy on modality-1 encodings, full batch per epoch.
/// freeze_dfe=true leaves the encoder untouched (features recomputed from a
/// frozen snapshot; only the head trains) and matches the linear probe step
/// for step. freeze_dfe=false trains head and encoder jointly.
template <class S>
FinetuneResult<S> finetune(DfeParameters<S>& params, const PairedEmbeddingSet<S>& train_set,
                           const PairedEmbeddingSet<S>* test_set, std::size_t num_classes, std::size_t epochs,
                           S lr, std::size_t eval_every, bool freeze_dfe) {
    if (!train_set.labels) throw DataError("finetune: training set has no labels");
    if (test_set && !test_set->labels) throw DataError("finetune: test set has no labels");
    if (num_classes < 2) throw ContractError("finetune: need at least 2 classes");

    FinetuneResult<S> result;
    result.head = LinearHead<S>::zero_init(params.d_out, num_classes);

    std::vector<std::pair<std::string, Tensor<S>>> named = result.head.named_parameters();
    if (!freeze_dfe)
        for (auto& nt : params.named_parameters()) named.push_back(nt);
    OptimizerState<S> opt = OptimizerState<S>::make_for(named);

    DfeParameters<S> frozen;
    if (freeze_dfe) frozen = copy_parameters(params, false);

    const auto& labels = *train_set.labels;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (auto& [name, t] : named) t.zero_grad();
        Tensor<S> feats = freeze_dfe ? encode_modality(frozen, train_set.m1, 1)
                                     : encode_modality(params, train_set.m1, 1);
        Tensor<S> loss = cross_entropy(head_logits(result.head, feats), labels);
        if (!std::isfinite(static_cast<double>(loss.item())))
            throw DataError("finetune: non-finite loss at epoch " + std::to_string(epoch));
        loss.backward();
        adam_step(named, opt, lr, static_cast<S>(0.9), static_cast<S>(0.999), static_cast<S>(1e-8));
        if (!freeze_dfe) clamp_tau(params);

        if (test_set && eval_every > 0 && (epoch + 1) % eval_every == 0) {
            DfeParameters<S> snap = copy_parameters(params, false);
            Tensor<S> test_feats = freeze_dfe ? encode_modality(frozen, test_set->m1, 1)
                                              : encode_modality(snap, test_set->m1, 1);
            Tensor<S> logits = head_logits(result.head, test_feats).detach();
            result.test_accuracy.emplace_back(epoch + 1, label_accuracy(logits, *test_set->labels));
        }
    }
    return result;
}

} // namespace lightcrl
