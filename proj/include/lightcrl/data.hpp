#pragma once

// Paired-embedding ingestion, synthetic paired data, and minibatch sampling.
//
// Embedding file format LCE1 (little-endian throughout):
//   magic   "LCE1"            4 bytes
//   version u32 = 1
//   n       u32               pair count
//   d1      u32               modality-1 width
//   d2      u32               modality-2 width
//   has_labels u8             0 or 1
//   split_tag  u8             0 = train, 1 = val, 2 = test
//   reserved   2 bytes = 0
//   m1 payload n*d1 float32, row-major
//   m2 payload n*d2 float32, row-major
//   labels     n u32          (only if has_labels)

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "lightcrl/errors.hpp"
#include "lightcrl/rng.hpp"
#include "lightcrl/tensor.hpp"

namespace lightcrl {

enum class SplitTag : std::uint8_t { train = 0, val = 1, test = 2 };

template <class S>
struct PairedEmbeddingSet {
    std::size_t n = 0;
    std::size_t d1 = 0;
    std::size_t d2 = 0;
    Tensor<S> m1; // [n x d1]
    Tensor<S> m2; // [n x d2]
    std::optional<std::vector<std::uint32_t>> labels; // class per row
    SplitTag split_tag = SplitTag::train;

    std::size_t num_classes() const {
        if (!labels) return 0;
        std::uint32_t mx = 0;
        for (std::uint32_t l : *labels) mx = std::max(mx, l);
        return static_cast<std::size_t>(mx) + 1;
    }
};

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

class ByteReader {
public:
    ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}

    std::uint8_t u8() {
        need(1);
        return p_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void bytes(unsigned char* dst, std::size_t k) {
        need(k);
        std::memcpy(dst, p_ + pos_, k);
        pos_ += k;
    }
    std::size_t remaining() const { return n_ - pos_; }

private:
    void need(std::size_t k) const {
        if (pos_ + k > n_) throw CorruptionError("truncated payload at byte " + std::to_string(pos_));
    }
    const unsigned char* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(len));
    if (len > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), len)) throw IoError("cannot read " + path);
    return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

} // namespace detail

template <class S>
std::string encode_embeddings(const PairedEmbeddingSet<S>& set) {
    std::string buf;
    buf += "LCE1";
    detail::put_u32(buf, 1);
    detail::put_u32(buf, static_cast<std::uint32_t>(set.n));
    detail::put_u32(buf, static_cast<std::uint32_t>(set.d1));
    detail::put_u32(buf, static_cast<std::uint32_t>(set.d2));
    buf.push_back(set.labels ? 1 : 0);
    buf.push_back(static_cast<char>(set.split_tag));
    buf.push_back(0);
    buf.push_back(0);
    for (S v : set.m1.value()) detail::put_f32(buf, static_cast<float>(v));
    for (S v : set.m2.value()) detail::put_f32(buf, static_cast<float>(v));
    if (set.labels)
        for (std::uint32_t l : *set.labels) detail::put_u32(buf, l);
    return buf;
}

template <class S>
void save_embeddings(const PairedEmbeddingSet<S>& set, const std::string& path) {
    detail::write_file_bytes(path, encode_embeddings(set));
}

template <class S>
PairedEmbeddingSet<S> decode_embeddings(const unsigned char* bytes, std::size_t len) {
    detail::ByteReader r(bytes, len);
    char magic[4];
    for (auto& c : magic) c = static_cast<char>(r.u8());
    if (std::memcmp(magic, "LCE1", 4) != 0) throw FormatError("bad magic, expected LCE1");
    const std::uint32_t version = r.u32();
    if (version != 1) throw FormatError("unsupported version " + std::to_string(version));
    PairedEmbeddingSet<S> set;
    set.n = r.u32();
    set.d1 = r.u32();
    set.d2 = r.u32();
    const std::uint8_t has_labels = r.u8();
    if (has_labels > 1) throw FormatError("bad has_labels byte " + std::to_string(has_labels));
    const std::uint8_t split = r.u8();
    if (split > 2) throw FormatError("bad split_tag byte " + std::to_string(split));
    set.split_tag = static_cast<SplitTag>(split);
    if (r.u8() != 0 || r.u8() != 0) throw FormatError("nonzero reserved bytes");
    if (set.n == 0 || set.d1 == 0 || set.d2 == 0)
        throw FormatError("zero extents in header (n=" + std::to_string(set.n) + ")");

    auto read_matrix = [&](std::size_t rows, std::size_t cols, const char* which) {
        std::vector<S> data(rows * cols);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                const float v = r.f32();
                if (!std::isfinite(v))
                    throw DataError(std::string("non-finite ") + which + " entry at row " + std::to_string(i));
                data[i * cols + j] = static_cast<S>(v);
            }
        }
        return Tensor<S>::from_data({rows, cols}, std::move(data));
    };
    set.m1 = read_matrix(set.n, set.d1, "m1");
    set.m2 = read_matrix(set.n, set.d2, "m2");
    if (has_labels) {
        std::vector<std::uint32_t> labels(set.n);
        for (auto& l : labels) l = r.u32();
        set.labels = std::move(labels);
    }
    if (r.remaining() != 0) throw CorruptionError("trailing bytes after payload");
    return set;
}

template <class S>
PairedEmbeddingSet<S> load_embeddings(const std::string& path) {
    const auto bytes = detail::read_file_bytes(path);
    return decode_embeddings<S>(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// Synthetic paired data
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    std::size_t n = 0;
    std::size_t d_latent = 0;
    std::size_t d1 = 0;
    std::size_t d2 = 0;
    double noise_sigma = 0.1;
    std::size_t num_classes = 1;
    std::uint64_t seed = 0;
};

/// Output of the generator. The mixing matrices, class means and latents are
/// exposed because the evaluation protocols build class prototypes from
/// a2 * mu_c and the generator sanity checks recover latents from the rows.
template <class S>
struct SyntheticResult {
    PairedEmbeddingSet<S> set;
    std::vector<double> a1;          // d1 x d_latent, row-major
    std::vector<double> a2;          // d2 x d_latent
    std::vector<double> class_means; // num_classes x d_latent
    std::vector<double> latents;     // n x d_latent
};

inline constexpr double kClassMeanScale = 3.0;

/// Deterministic synthetic pairs: labels are assigned round-robin,
/// z_i = mu_label + N(0, I), m1_i = A1 z_i + sigma * eps, m2_i = A2 z_i + sigma * eps'.
/// All draws come from one Box-Muller stream over Xoshiro256**(seed), in the
/// fixed order: class means, A1, A2, then per row (z, eps, eps').
template <class S>
SyntheticResult<S> generate_synthetic(const SyntheticSpec& spec) {
    if (spec.n == 0 || spec.d_latent == 0 || spec.d1 == 0 || spec.d2 == 0 || spec.num_classes == 0)
        throw ContractError("generate_synthetic: extents and class count must be positive");
    if (spec.noise_sigma < 0) throw ContractError("generate_synthetic: negative noise_sigma");

    Xoshiro256ss rng(spec.seed);
    GaussianSampler gauss(rng);

    SyntheticResult<S> out;
    out.class_means.resize(spec.num_classes * spec.d_latent);
    for (auto& v : out.class_means) v = kClassMeanScale * gauss.next();

    const double latent_scale = 1.0 / std::sqrt(static_cast<double>(spec.d_latent));
    out.a1.resize(spec.d1 * spec.d_latent);
    for (auto& v : out.a1) v = gauss.next() * latent_scale;
    out.a2.resize(spec.d2 * spec.d_latent);
    for (auto& v : out.a2) v = gauss.next() * latent_scale;

    out.latents.resize(spec.n * spec.d_latent);
    std::vector<S> m1(spec.n * spec.d1);
    std::vector<S> m2(spec.n * spec.d2);
    std::vector<std::uint32_t> labels(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const std::size_t cls = i % spec.num_classes;
        labels[i] = static_cast<std::uint32_t>(cls);
        double* z = out.latents.data() + i * spec.d_latent;
        for (std::size_t j = 0; j < spec.d_latent; ++j)
            z[j] = out.class_means[cls * spec.d_latent + j] + gauss.next();
        for (std::size_t j = 0; j < spec.d1; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < spec.d_latent; ++l) acc += out.a1[j * spec.d_latent + l] * z[l];
            m1[i * spec.d1 + j] = static_cast<S>(acc + spec.noise_sigma * gauss.next());
        }
        for (std::size_t j = 0; j < spec.d2; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < spec.d_latent; ++l) acc += out.a2[j * spec.d_latent + l] * z[l];
            m2[i * spec.d2 + j] = static_cast<S>(acc + spec.noise_sigma * gauss.next());
        }
    }

    out.set.n = spec.n;
    out.set.d1 = spec.d1;
    out.set.d2 = spec.d2;
    out.set.m1 = Tensor<S>::from_data({spec.n, spec.d1}, std::move(m1));
    out.set.m2 = Tensor<S>::from_data({spec.n, spec.d2}, std::move(m2));
    out.set.labels = std::move(labels);
    return out;
}

/// First n_front rows into one set, the rest into another. Alignment and
/// labels are preserved; round-robin labels keep both sides near-balanced.
template <class S>
std::pair<PairedEmbeddingSet<S>, PairedEmbeddingSet<S>> split_paired_set(const PairedEmbeddingSet<S>& set,
                                                                         std::size_t n_front,
                                                                         SplitTag front_tag = SplitTag::train,
                                                                         SplitTag back_tag = SplitTag::test) {
    if (n_front == 0 || n_front >= set.n)
        throw ContractError("split_paired_set: n_front must be in (0, n)");
    auto take = [&](std::size_t lo, std::size_t hi, SplitTag tag) {
        PairedEmbeddingSet<S> part;
        part.n = hi - lo;
        part.d1 = set.d1;
        part.d2 = set.d2;
        part.split_tag = tag;
        auto m1 = set.m1.value();
        auto m2 = set.m2.value();
        part.m1 = Tensor<S>::from_data({part.n, set.d1},
                                       std::vector<S>(m1.begin() + static_cast<std::ptrdiff_t>(lo * set.d1),
                                                      m1.begin() + static_cast<std::ptrdiff_t>(hi * set.d1)));
        part.m2 = Tensor<S>::from_data({part.n, set.d2},
                                       std::vector<S>(m2.begin() + static_cast<std::ptrdiff_t>(lo * set.d2),
                                                      m2.begin() + static_cast<std::ptrdiff_t>(hi * set.d2)));
        if (set.labels)
            part.labels = std::vector<std::uint32_t>(set.labels->begin() + static_cast<std::ptrdiff_t>(lo),
                                                     set.labels->begin() + static_cast<std::ptrdiff_t>(hi));
        return part;
    };
    return {take(0, n_front, front_tag), take(n_front, set.n, back_tag)};
}

// ---------------------------------------------------------------------------
// Minibatch sampling
// ---------------------------------------------------------------------------

/// Uniform without-replacement batches from an epoch-level shuffle. Batches
/// partition the index set; when k does not divide n, the last batch is the
/// remainder (used, not dropped).
class EpochSampler {
public:
    EpochSampler(std::size_t n, std::uint64_t run_seed, std::uint64_t epoch)
        : perm_(n), cursor_(0) {
        for (std::size_t i = 0; i < n; ++i) perm_[i] = i;
        Xoshiro256ss rng(epoch_seed(run_seed, epoch));
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
            std::swap(perm_[i - 1], perm_[j]);
        }
    }

    bool exhausted() const { return cursor_ >= perm_.size(); }

    std::vector<std::size_t> next(std::size_t k) {
        if (k == 0 || k > perm_.size())
            throw ContractError("EpochSampler: batch size " + std::to_string(k) + " vs n=" + std::to_string(perm_.size()));
        const std::size_t take = std::min(k, perm_.size() - cursor_);
        std::vector<std::size_t> idx(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                     perm_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
        cursor_ += take;
        return idx;
    }

private:
    std::vector<std::size_t> perm_;
    std::size_t cursor_;
};

template <class S>
Tensor<S> gather_rows(const Tensor<S>& mat, std::span<const std::size_t> idx) {
    const std::size_t d = mat.cols();
    std::vector<S> out(idx.size() * d);
    auto mv = mat.value();
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = mv[idx[i] * d + j];
    return Tensor<S>::from_data({idx.size(), d}, std::move(out));
}

template <class S>
struct Minibatch {
    Tensor<S> m1; // [k x d1]
    Tensor<S> m2; // [k x d2]
    std::vector<std::size_t> indices;
};

/// One aligned batch drawn from the sampler's current epoch shuffle.
template <class S>
Minibatch<S> sample_minibatch(const PairedEmbeddingSet<S>& set, std::size_t k, EpochSampler& sampler) {
    if (k == 0 || k > set.n)
        throw ContractError("sample_minibatch: k=" + std::to_string(k) + " outside [1, " + std::to_string(set.n) + "]");
    Minibatch<S> b;
    b.indices = sampler.next(k);
    b.m1 = gather_rows(set.m1, b.indices);
    b.m2 = gather_rows(set.m2, b.indices);
    return b;
}

} // namespace lightcrl
