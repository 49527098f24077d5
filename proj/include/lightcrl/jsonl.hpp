#pragma once

// Interop converter: one JSON object per line, fields m1 (array), m2 (array),
// optional label (nonnegative integer) -> the LCE1 binary format. Every line
// must agree with the first line on widths and on label presence.

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lightcrl/data.hpp"
#include "lightcrl/errors.hpp"

namespace lightcrl {

template <class S>
PairedEmbeddingSet<S> load_embeddings_jsonl(const std::string& path, SplitTag split = SplitTag::train) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);

    std::vector<S> m1, m2;
    std::vector<std::uint32_t> labels;
    std::size_t d1 = 0, d2 = 0, row = 0;
    bool has_labels = false;

    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("line " + std::to_string(row + 1) + ": " + e.what());
        }
        if (!obj.contains("m1") || !obj.contains("m2") || !obj["m1"].is_array() || !obj["m2"].is_array())
            throw FormatError("line " + std::to_string(row + 1) + ": m1 and m2 arrays are required");

        if (row == 0) {
            d1 = obj["m1"].size();
            d2 = obj["m2"].size();
            has_labels = obj.contains("label");
            if (d1 == 0 || d2 == 0) throw FormatError("line 1: empty embedding vectors");
        }
        if (obj["m1"].size() != d1 || obj["m2"].size() != d2)
            throw DataError("line " + std::to_string(row + 1) + ": width differs from line 1");
        if (obj.contains("label") != has_labels)
            throw DataError("line " + std::to_string(row + 1) + ": label must be present on all lines or none");

        auto append = [&](const nlohmann::json& arr, std::vector<S>& dst, const char* which) {
            for (const auto& v : arr) {
                if (!v.is_number())
                    throw DataError("line " + std::to_string(row + 1) + ": non-numeric " + which + " entry");
                const double x = v.get<double>();
                if (!std::isfinite(x))
                    throw DataError("line " + std::to_string(row + 1) + ": non-finite " + which + " entry");
                dst.push_back(static_cast<S>(x));
            }
        };
        append(obj["m1"], m1, "m1");
        append(obj["m2"], m2, "m2");
        if (has_labels) {
            if (!obj["label"].is_number_unsigned())
                throw DataError("line " + std::to_string(row + 1) + ": label must be a nonnegative integer");
            labels.push_back(obj["label"].get<std::uint32_t>());
        }
        ++row;
    }
    if (row == 0) throw DataError("no records in " + path);

    PairedEmbeddingSet<S> set;
    set.n = row;
    set.d1 = d1;
    set.d2 = d2;
    set.split_tag = split;
    set.m1 = Tensor<S>::from_data({row, d1}, std::move(m1));
    set.m2 = Tensor<S>::from_data({row, d2}, std::move(m2));
    if (has_labels) set.labels = std::move(labels);
    return set;
}

template <class S>
void convert_jsonl_to_lce(const std::string& jsonl_path, const std::string& lce_path,
                          SplitTag split = SplitTag::train) {
    save_embeddings(load_embeddings_jsonl<S>(jsonl_path, split), lce_path);
}

} // namespace lightcrl
