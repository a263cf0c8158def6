#pragma once

// Checkpoint layout:
//   8 bytes   magic "KBGSATCK"
//   1 byte    format version
//   8 bytes   little-endian manifest length L
//   L bytes   manifest, key=value lines
//   payload   named little-endian float32 arrays in manifest order

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "kbgsat/config_types.hpp"
#include "kbgsat/errors.hpp"
#include "kbgsat/model.hpp"

namespace kbgsat {

inline constexpr std::string_view kCheckpointMagic = "KBGSATCK";
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<float> data;
};

struct Checkpoint {
    ModelConfig model;
    std::string config_hash;
    int epoch = 0;
    double best_valid_mrr = 0.0;
    std::vector<NamedArray> arrays;

    std::string serialize() const;
    static Checkpoint deserialize(std::string_view bytes);

    /// Writes atomically through a temporary file in the same directory.
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

/// FNV-1a 64-bit digest as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

template <typename Scalar>
Checkpoint make_checkpoint(const Model<Scalar>& model, int epoch = 0, double best_valid_mrr = 0.0,
                           std::string config_hash = {}) {
    Checkpoint ck;
    ck.model = model.config();
    ck.epoch = epoch;
    ck.best_valid_mrr = best_valid_mrr;
    ck.config_hash = std::move(config_hash);
    for (const auto* p : model.parameters()) {
        NamedArray a;
        a.name = p->name();
        a.rows = p->value().rows();
        a.cols = p->value().cols();
        a.data.resize(static_cast<std::size_t>(p->value().size()));
        for (Index i = 0; i < p->value().size(); ++i) a.data[static_cast<std::size_t>(i)] = static_cast<float>(p->value().data()[i]);
        ck.arrays.push_back(std::move(a));
    }
    return ck;
}

/// Rebuilds a model whose parameters equal the stored float32 arrays.
template <typename Scalar>
Model<Scalar> restore_model(const Checkpoint& ck) {
    Model<Scalar> model(ck.model, 0);
    auto params = model.parameters();
    if (params.size() != ck.arrays.size())
        throw CorruptionError("checkpoint holds " + std::to_string(ck.arrays.size()) + " arrays, model expects " +
                              std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& a = ck.arrays[i];
        auto& v = params[i]->value();
        if (a.name != params[i]->name() || a.rows != v.rows() || a.cols != v.cols())
            throw CorruptionError("checkpoint array '" + a.name + "' does not match model parameter '" +
                                  params[i]->name() + "'");
        for (Index k = 0; k < v.size(); ++k) v.data()[k] = static_cast<Scalar>(a.data[static_cast<std::size_t>(k)]);
        params[i]->zero_grad();
    }
    return model;
}

}  // namespace kbgsat
