#pragma once

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

#include "lightcrl/lightcrl.hpp"

namespace testutil {

template <class S>
lightcrl::Tensor<S> random_tensor(lightcrl::Shape shape, lightcrl::Xoshiro256ss& rng, double lo = -1.0,
                                  double hi = 1.0, bool requires_grad = false) {
    std::vector<S> data(lightcrl::shape_numel(shape));
    for (auto& v : data) v = static_cast<S>(lo + (hi - lo) * rng.next_double());
    return lightcrl::Tensor<S>::from_data(std::move(shape), std::move(data), requires_grad);
}

template <class S>
lightcrl::Tensor<S> random_unit_rows(std::size_t n, std::size_t d, lightcrl::Xoshiro256ss& rng,
                                     bool requires_grad = false) {
    lightcrl::GaussianSampler gauss(rng);
    std::vector<S> data(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double g = gauss.next();
                data[i * d + j] = static_cast<S>(g);
                norm += g * g;
            }
            norm = std::sqrt(norm);
        } while (norm < 1e-6);
        for (std::size_t j = 0; j < d; ++j) data[i * d + j] = static_cast<S>(static_cast<double>(data[i * d + j]) / norm);
    }
    return lightcrl::Tensor<S>::from_data({n, d}, std::move(data), requires_grad);
}

template <class S>
double max_abs_diff(std::span<const S> a, std::span<const S> b) {
    double mx = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        mx = std::max(mx, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return mx;
}

template <class S>
bool bit_identical(std::span<const S> a, std::span<const S> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

template <class S>
bool params_bit_identical(const lightcrl::DfeParameters<S>& a, const lightcrl::DfeParameters<S>& b) {
    auto na = a.named_parameters();
    auto nb = b.named_parameters();
    if (na.size() != nb.size()) return false;
    for (std::size_t i = 0; i < na.size(); ++i)
        if (!bit_identical(na[i].second.value(), nb[i].second.value())) return false;
    return true;
}

/// Scratch directory unique to a test, cleaned up on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("lightcrl_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::vector<unsigned char> slurp(const std::string& path) {
    return lightcrl::detail::read_file_bytes(path);
}

} // namespace testutil
