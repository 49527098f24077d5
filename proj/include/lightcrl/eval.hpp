#pragma once

// Evaluation protocols over a frozen encoder: zero-shot classification
// against class prototypes, cross-modal retrieval recall@k, the linear probe,
// and confusion/accuracy bookkeeping. All ranking ties resolve to the lower
// index, so every protocol is deterministic.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lightcrl/data.hpp"
#include "lightcrl/errors.hpp"
#include "lightcrl/model.hpp"
#include "lightcrl/tensor.hpp"
#include "lightcrl/trainer.hpp"

namespace lightcrl {

/// One modality-2 embedding per class, standing in for encoded class names.
template <class S>
struct ClassPrototypeSet {
    std::vector<std::string> names;
    Tensor<S> proto2; // [C x d2]

    std::size_t num_classes() const { return names.size(); }
};

struct EvalReport {
    std::string metric;
    std::size_t k = 0;
    std::string direction; // "1to2", "2to1", or "-" where not applicable
    double value = 0.0;    // always in [0, 1]
    std::size_t support = 0;
    std::vector<double> per_class; // optional breakdown
};

template <class S>
struct ZeroShotResult {
    Tensor<S> probabilities; // [n x C], rows sum to 1
    std::vector<EvalReport> reports;
};

/// Ranking core over already-encoded unit-norm rows: cosine similarities,
/// per-query softmax probabilities, and top-k accuracy per requested k.
template <class S>
ZeroShotResult<S> zero_shot_from_encodings(const Tensor<S>& queries_hat, const Tensor<S>& protos_hat,
                                           std::span<const std::uint32_t> labels,
                                           std::span<const std::size_t> topk) {
    const std::size_t C = protos_hat.shape()[0];
    if (C < 2) throw ContractError("zero_shot: need at least 2 prototypes");
    for (std::size_t k : topk)
        if (k == 0 || k > C)
            throw ContractError("zero_shot: top-k with k=" + std::to_string(k) + " for " +
                                std::to_string(C) + " classes");
    if (labels.size() != queries_hat.shape()[0])
        throw ShapeError("zero_shot: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(queries_hat.shape()[0]) + " queries");

    Tensor<S> sims = matmul(queries_hat, transpose(protos_hat)); // [n x C]
    ZeroShotResult<S> result;
    result.probabilities = softmax_rows(sims);

    const std::size_t n = queries_hat.shape()[0];
    auto sv = sims.value();
    for (std::size_t k : topk) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i) {
            // Rank classes by similarity, ties to the lower index.
            std::vector<std::size_t> order(C);
            for (std::size_t j = 0; j < C; ++j) order[j] = j;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return sv[i * C + a] > sv[i * C + b];
            });
            for (std::size_t r = 0; r < k; ++r)
                if (order[r] == labels[i]) {
                    ++hits;
                    break;
                }
        }
        result.reports.push_back({"zeroshot_topk", k, "1to2",
                                  static_cast<double>(hits) / static_cast<double>(n), n, {}});
    }
    return result;
}

/// Encode queries with context 1 and prototypes with context 2, then rank.
template <class S>
ZeroShotResult<S> zero_shot_classify(const DfeParameters<S>& params, const Tensor<S>& queries1,
                                     std::span<const std::uint32_t> labels, const ClassPrototypeSet<S>& protos,
                                     std::span<const std::size_t> topk) {
    DfeParameters<S> frozen = copy_parameters(params, false);
    Tensor<S> q = encode_modality(frozen, queries1, 1);
    Tensor<S> p = encode_modality(frozen, protos.proto2, 2);
    return zero_shot_from_encodings(q, p, labels, topk);
}

/// Cross-modal retrieval over already-encoded rows: for every row on one
/// side, rank all rows of the other side by cosine; recall@k is the fraction
/// whose true partner lands in the top k. Both directions are reported.
template <class S>
std::vector<EvalReport> recall_from_encodings(const Tensor<S>& h1, const Tensor<S>& h2,
                                              std::span<const std::size_t> ks) {
    if (h1.shape()[0] != h2.shape()[0])
        throw ShapeError("recall: row counts differ, " + shape_str(h1.shape()) + " vs " + shape_str(h2.shape()));
    const std::size_t n = h1.shape()[0];
    for (std::size_t k : ks)
        if (k == 0 || k > n)
            throw ContractError("recall: k=" + std::to_string(k) + " for n=" + std::to_string(n));

    Tensor<S> sims = matmul(h1, transpose(h2)); // [n x n]
    auto sv = sims.value();

    // rank_of[query] = position of the true partner under descending
    // similarity with ties to the lower index.
    auto partner_rank = [&](bool one_to_two, std::size_t i) {
        const S own = sv[i * n + i];
        std::size_t rank = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const S other = one_to_two ? sv[i * n + j] : sv[j * n + i];
            if (other > own || (other == own && j < i)) ++rank;
        }
        return rank;
    };

    std::vector<EvalReport> reports;
    for (int dir = 0; dir < 2; ++dir) {
        const bool one_to_two = dir == 0;
        std::vector<std::size_t> ranks(n);
        for (std::size_t i = 0; i < n; ++i) ranks[i] = partner_rank(one_to_two, i);
        for (std::size_t k : ks) {
            std::size_t hits = 0;
            for (std::size_t r : ranks) hits += r < k;
            reports.push_back({"recall", k, one_to_two ? "1to2" : "2to1",
                               static_cast<double>(hits) / static_cast<double>(n), n, {}});
        }
    }
    return reports;
}

/// Encode both sides of a paired set, then rank.
template <class S>
std::vector<EvalReport> retrieval_recall_at_k(const DfeParameters<S>& params, const PairedEmbeddingSet<S>& pairs,
                                              std::span<const std::size_t> ks) {
    DfeParameters<S> frozen = copy_parameters(params, false);
    Tensor<S> h1 = encode_modality(frozen, pairs.m1, 1);
    Tensor<S> h2 = encode_modality(frozen, pairs.m2, 2);
    return recall_from_encodings(h1, h2, ks);
}

template <class S>
struct ProbeResult {
    LinearHead<S> head;
    std::vector<std::pair<std::size_t, double>> test_accuracy; // (epoch, accuracy)
};

/// Train only a linear classifier on cached modality-1 features; the encoder
/// never changes. Test accuracy is recorded every eval_every epochs.
template <class S>
ProbeResult<S> train_linear_probe(const DfeParameters<S>& params, const PairedEmbeddingSet<S>& train_set,
                                  const PairedEmbeddingSet<S>& test_set, std::size_t epochs, S lr,
                                  std::size_t eval_every = 20) {
    if (!train_set.labels || !test_set.labels) throw DataError("train_linear_probe: labels are required");
    const std::size_t num_classes = std::max(train_set.num_classes(), test_set.num_classes());
    if (num_classes < 2) throw ContractError("train_linear_probe: need at least 2 classes");

    DfeParameters<S> frozen = copy_parameters(params, false);
    // Features are computed once and cached; epochs touch only the head.
    Tensor<S> train_feats = encode_modality(frozen, train_set.m1, 1);
    Tensor<S> test_feats = encode_modality(frozen, test_set.m1, 1);

    ProbeResult<S> result;
    result.head = LinearHead<S>::zero_init(params.d_out, num_classes);
    auto named = result.head.named_parameters();
    OptimizerState<S> opt = OptimizerState<S>::make_for(named);

    const auto& labels = *train_set.labels;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (auto& [name, t] : named) t.zero_grad();
        Tensor<S> loss = cross_entropy(head_logits(result.head, train_feats), labels);
        loss.backward();
        adam_step(named, opt, lr, static_cast<S>(0.9), static_cast<S>(0.999), static_cast<S>(1e-8));
        if (eval_every > 0 && (epoch + 1) % eval_every == 0) {
            Tensor<S> logits = head_logits(result.head, test_feats).detach();
            result.test_accuracy.emplace_back(epoch + 1, label_accuracy(logits, *test_set.labels));
        }
    }
    if (epochs == 0) {
        Tensor<S> logits = head_logits(result.head, test_feats).detach();
        result.test_accuracy.emplace_back(0, label_accuracy(logits, *test_set.labels));
    }
    return result;
}

struct ConfusionResult {
    EvalReport report;                       // metric "accuracy"
    std::vector<std::size_t> confusion;      // [C x C] row-major, rows = true class
    std::size_t num_classes = 0;
};

inline ConfusionResult confusion_and_accuracy(std::span<const std::uint32_t> pred,
                                              std::span<const std::uint32_t> truth) {
    if (pred.size() != truth.size())
        throw ShapeError("confusion_and_accuracy: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(truth.size()) + " labels");
    std::uint32_t mx = 0;
    for (std::uint32_t v : pred) mx = std::max(mx, v);
    for (std::uint32_t v : truth) mx = std::max(mx, v);
    ConfusionResult out;
    out.num_classes = static_cast<std::size_t>(mx) + 1;
    out.confusion.assign(out.num_classes * out.num_classes, 0);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        out.confusion[truth[i] * out.num_classes + pred[i]] += 1;
        hits += pred[i] == truth[i];
    }
    out.report = {"accuracy", 0, "-",
                  pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size()),
                  pred.size(), {}};
    // Per-class recall breakdown.
    out.report.per_class.resize(out.num_classes, 0.0);
    for (std::size_t c = 0; c < out.num_classes; ++c) {
        std::size_t support = 0, correct = 0;
        for (std::size_t j = 0; j < out.num_classes; ++j) support += out.confusion[c * out.num_classes + j];
        correct = out.confusion[c * out.num_classes + c];
        out.report.per_class[c] = support ? static_cast<double>(correct) / static_cast<double>(support) : 0.0;
    }
    return out;
}

/// Prototypes for synthetic data: the modality-2 image of each class mean.
template <class S>
ClassPrototypeSet<S> prototypes_from_synthetic(const SyntheticResult<S>& synth, const SyntheticSpec& spec) {
    ClassPrototypeSet<S> protos;
    std::vector<S> p(spec.num_classes * spec.d2);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        protos.names.push_back("class" + std::to_string(c));
        for (std::size_t j = 0; j < spec.d2; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < spec.d_latent; ++l)
                acc += synth.a2[j * spec.d_latent + l] * synth.class_means[c * spec.d_latent + l];
            p[c * spec.d2 + j] = static_cast<S>(acc);
        }
    }
    protos.proto2 = Tensor<S>::from_data({spec.num_classes, spec.d2}, std::move(p));
    return protos;
}

} // namespace lightcrl
