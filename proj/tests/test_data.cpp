#include "support.hpp"
#include "oracles.hpp"

#include <cstring>
#include <fstream>

#include "lightcrl/jsonl.hpp"

using namespace lightcrl;
using Catch::Approx;

namespace {

PairedEmbeddingSet<double> tiny_set(bool labeled) {
    PairedEmbeddingSet<double> set;
    set.n = 2;
    set.d1 = 3;
    set.d2 = 4;
    set.m1 = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    set.m2 = Tensor<double>::from_data({2, 4}, {0.5, -0.5, 1.5, -1.5, 2.5, -2.5, 3.5, -3.5});
    if (labeled) set.labels = std::vector<std::uint32_t>{1, 0};
    set.split_tag = SplitTag::val;
    return set;
}

} // namespace

TEST_CASE("LCE1 round trip is byte-exact") {
    testutil::TempDir dir("lce");
    for (bool labeled : {false, true}) {
        auto set = tiny_set(labeled);
        const std::string path = dir.file(labeled ? "l.lce" : "u.lce");
        save_embeddings(set, path);
        auto loaded = load_embeddings<double>(path);
        REQUIRE(loaded.n == 2);
        REQUIRE(loaded.d1 == 3);
        REQUIRE(loaded.d2 == 4);
        REQUIRE(loaded.split_tag == SplitTag::val);
        REQUIRE(loaded.labels.has_value() == labeled);
        if (labeled) REQUIRE(*loaded.labels == std::vector<std::uint32_t>{1, 0});
        REQUIRE(encode_embeddings(loaded) == encode_embeddings(set));
    }

    // n = 1 round trip
    PairedEmbeddingSet<double> one;
    one.n = 1;
    one.d1 = 2;
    one.d2 = 2;
    one.m1 = Tensor<double>::from_data({1, 2}, {0.25, -0.75});
    one.m2 = Tensor<double>::from_data({1, 2}, {1.25, 2.0});
    const std::string path = dir.file("one.lce");
    save_embeddings(one, path);
    REQUIRE(encode_embeddings(load_embeddings<double>(path)) == encode_embeddings(one));
}

TEST_CASE("LCE1 header validation") {
    testutil::TempDir dir("lcebad");
    auto set = tiny_set(true);
    std::string bytes = encode_embeddings(set);

    {
        std::string bad = bytes;
        bad[0] = 'X';
        bad[1] = 'X';
        bad[2] = 'X';
        bad[3] = 'X';
        REQUIRE_THROWS_AS(decode_embeddings<double>(reinterpret_cast<const unsigned char*>(bad.data()), bad.size()),
                          FormatError);
    }
    {
        std::string truncated = bytes.substr(0, bytes.size() - 5);
        REQUIRE_THROWS_AS(
            decode_embeddings<double>(reinterpret_cast<const unsigned char*>(truncated.data()), truncated.size()),
            CorruptionError);
    }
    {
        std::string reserved = bytes;
        reserved[22] = 1; // first reserved byte
        REQUIRE_THROWS_AS(
            decode_embeddings<double>(reinterpret_cast<const unsigned char*>(reserved.data()), reserved.size()),
            FormatError);
    }
    {
        // NaN in the m2 payload of row 1 -> data error naming the row
        std::string nan_bytes = bytes;
        const std::size_t header = 24;
        const std::size_t m2_off = header + 2 * 3 * 4 + (1 * 4 + 2) * 4;
        const float qnan = std::numeric_limits<float>::quiet_NaN();
        std::memcpy(nan_bytes.data() + m2_off, &qnan, 4);
        try {
            decode_embeddings<double>(reinterpret_cast<const unsigned char*>(nan_bytes.data()), nan_bytes.size());
            FAIL("expected DataError");
        } catch (const DataError& e) {
            REQUIRE(std::string(e.what()).find("row 1") != std::string::npos);
        }
    }
}

TEST_CASE("synthetic generation is a pure function of the spec") {
    SyntheticSpec spec{32, 4, 6, 5, 0.1, 4, 99};
    auto a = generate_synthetic<double>(spec);
    auto b = generate_synthetic<double>(spec);
    REQUIRE(testutil::bit_identical(a.set.m1.value(), b.set.m1.value()));
    REQUIRE(testutil::bit_identical(a.set.m2.value(), b.set.m2.value()));
    REQUIRE(*a.set.labels == *b.set.labels);

    SyntheticSpec other = spec;
    other.seed = 100;
    auto c = generate_synthetic<double>(other);
    REQUIRE_FALSE(testutil::bit_identical(a.set.m1.value(), c.set.m1.value()));

    // labels are balanced round robin
    std::vector<std::size_t> counts(4, 0);
    for (auto l : *a.set.labels) counts[l]++;
    for (auto c2 : counts) REQUIRE(c2 == 8);

    REQUIRE_THROWS_AS(generate_synthetic<double>(SyntheticSpec{0, 4, 6, 5, 0.1, 4, 1}), ContractError);
    REQUIRE_THROWS_AS(generate_synthetic<double>(SyntheticSpec{8, 0, 6, 5, 0.1, 4, 1}), ContractError);
}

TEST_CASE("sigma zero makes rows exact mixes of the latents") {
    SyntheticSpec spec{6, 3, 5, 4, 0.0, 1, 7};
    auto r = generate_synthetic<double>(spec);
    // m1_i must equal A1 z_i exactly: reconstruct with the same loop order.
    for (std::size_t i = 0; i < spec.n; ++i) {
        for (std::size_t j = 0; j < spec.d1; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < spec.d_latent; ++l)
                acc += r.a1[j * spec.d_latent + l] * r.latents[i * spec.d_latent + l];
            REQUIRE(r.set.m1.value()[i * spec.d1 + j] == acc);
        }
    }
    // distinct latents produce distinct rows
    REQUIRE(testutil::max_abs_diff(std::span<const double>(r.set.m1.value().data(), 5),
                                   std::span<const double>(r.set.m1.value().data() + 5, 5)) > 0.0);
}

TEST_CASE("generator sanity: cross-modal nearest neighbor in latent space") {
    SyntheticSpec spec{512, 8, 32, 48, 0.1, 10, 7};
    auto r = generate_synthetic<double>(spec);

    const std::vector<double> m1(r.set.m1.value().begin(), r.set.m1.value().end());
    const std::vector<double> m2(r.set.m2.value().begin(), r.set.m2.value().end());
    auto z1 = oracle::recover_latents(r.a1, m1, spec.n, spec.d1, spec.d_latent);
    auto z2 = oracle::recover_latents(r.a2, m2, spec.n, spec.d2, spec.d_latent);

    std::size_t hits = 0;
    for (std::size_t i = 0; i < spec.n; ++i) {
        double best = 1e300;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < spec.n; ++j) {
            double d2sum = 0.0;
            for (std::size_t l = 0; l < spec.d_latent; ++l) {
                const double d = z1[i * spec.d_latent + l] - z2[j * spec.d_latent + l];
                d2sum += d * d;
            }
            if (d2sum < best) {
                best = d2sum;
                best_j = j;
            }
        }
        hits += best_j == i;
    }
    const double recall = static_cast<double>(hits) / static_cast<double>(spec.n);
    REQUIRE(recall >= 0.95);
}

TEST_CASE("split_paired_set preserves alignment and labels") {
    SyntheticSpec spec{10, 2, 3, 3, 0.0, 2, 5};
    auto r = generate_synthetic<double>(spec);
    auto [front, back] = split_paired_set(r.set, 7);
    REQUIRE(front.n == 7);
    REQUIRE(back.n == 3);
    REQUIRE(front.split_tag == SplitTag::train);
    REQUIRE(back.split_tag == SplitTag::test);
    for (std::size_t j = 0; j < 3; ++j) {
        REQUIRE(back.m1.value()[j] == r.set.m1.value()[7 * 3 + j]);
        REQUIRE(back.m2.value()[j] == r.set.m2.value()[7 * 3 + j]);
    }
    REQUIRE((*back.labels)[0] == (*r.set.labels)[7]);
    REQUIRE_THROWS_AS(split_paired_set(r.set, 0), ContractError);
    REQUIRE_THROWS_AS(split_paired_set(r.set, 10), ContractError);
}

TEST_CASE("epoch sampler: permutation, partition, remainder") {
    const std::size_t n = 12;
    {
        EpochSampler s(n, 3, 0);
        auto idx = s.next(n);
        auto sorted = idx;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < n; ++i) REQUIRE(sorted[i] == i);
        REQUIRE(s.exhausted());
    }
    {
        // k | n: batches partition the index set
        EpochSampler s(n, 3, 1);
        std::vector<std::size_t> seen;
        while (!s.exhausted()) {
            auto b = s.next(4);
            REQUIRE(b.size() == 4);
            seen.insert(seen.end(), b.begin(), b.end());
        }
        std::sort(seen.begin(), seen.end());
        for (std::size_t i = 0; i < n; ++i) REQUIRE(seen[i] == i);
    }
    {
        // k does not divide n: the last batch is the remainder, not dropped
        EpochSampler s(n, 3, 2);
        std::vector<std::size_t> sizes;
        while (!s.exhausted()) sizes.push_back(s.next(5).size());
        REQUIRE(sizes == std::vector<std::size_t>{5, 5, 2});
    }
    {
        EpochSampler s(n, 3, 0);
        REQUIRE_THROWS_AS(s.next(n + 1), ContractError);
        REQUIRE_THROWS_AS(s.next(0), ContractError);
    }
    {
        // deterministic per (seed, epoch); different epochs reshuffle
        EpochSampler a(n, 9, 4), b(n, 9, 4), c(n, 9, 5);
        auto ia = a.next(n), ib = b.next(n), ic = c.next(n);
        REQUIRE(ia == ib);
        REQUIRE(ia != ic);
    }
}

TEST_CASE("sample_minibatch returns aligned rows") {
    SyntheticSpec spec{8, 2, 3, 4, 0.0, 2, 11};
    auto r = generate_synthetic<double>(spec);
    EpochSampler sampler(8, 1, 0);
    auto batch = sample_minibatch(r.set, 3, sampler);
    REQUIRE(batch.indices.size() == 3);
    for (std::size_t b = 0; b < 3; ++b) {
        const std::size_t i = batch.indices[b];
        for (std::size_t j = 0; j < 3; ++j) REQUIRE(batch.m1.value()[b * 3 + j] == r.set.m1.value()[i * 3 + j]);
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(batch.m2.value()[b * 4 + j] == r.set.m2.value()[i * 4 + j]);
    }
    EpochSampler s1(8, 1, 0);
    auto single = sample_minibatch(r.set, 1, s1);
    REQUIRE(single.m1.shape() == Shape{1, 3});
    REQUIRE_THROWS_AS(sample_minibatch(r.set, 9, s1), ContractError);
}

TEST_CASE("jsonl converter round trips through LCE1") {
    testutil::TempDir dir("jsonl");
    const std::string jp = dir.file("pairs.jsonl");
    {
        std::ofstream out(jp);
        out << R"({"m1":[1.0,2.0],"m2":[3.0,4.0,5.0],"label":1})" << "\n";
        out << "\n";
        out << R"({"m1":[-1.5,0.25],"m2":[0.0,1.0,-2.0],"label":0})" << "\n";
    }
    const std::string lp = dir.file("pairs.lce");
    convert_jsonl_to_lce<double>(jp, lp, SplitTag::test);
    auto set = load_embeddings<double>(lp);
    REQUIRE(set.n == 2);
    REQUIRE(set.d1 == 2);
    REQUIRE(set.d2 == 3);
    REQUIRE(set.split_tag == SplitTag::test);
    REQUIRE((*set.labels)[0] == 1);
    REQUIRE(set.m1.value()[2] == Approx(-1.5));

    // width mismatch
    {
        std::ofstream out(dir.file("bad_width.jsonl"));
        out << R"({"m1":[1.0],"m2":[1.0]})" << "\n";
        out << R"({"m1":[1.0,2.0],"m2":[1.0]})" << "\n";
    }
    REQUIRE_THROWS_AS(load_embeddings_jsonl<double>(dir.file("bad_width.jsonl")), DataError);

    // label on some lines only
    {
        std::ofstream out(dir.file("bad_label.jsonl"));
        out << R"({"m1":[1.0],"m2":[1.0],"label":0})" << "\n";
        out << R"({"m1":[1.0],"m2":[1.0]})" << "\n";
    }
    REQUIRE_THROWS_AS(load_embeddings_jsonl<double>(dir.file("bad_label.jsonl")), DataError);

    // malformed json
    {
        std::ofstream out(dir.file("bad_json.jsonl"));
        out << "{not json}\n";
    }
    REQUIRE_THROWS_AS(load_embeddings_jsonl<double>(dir.file("bad_json.jsonl")), FormatError);
}
