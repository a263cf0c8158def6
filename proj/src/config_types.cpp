#include "kbgsat/config_types.hpp"

#include "kbgsat/errors.hpp"

namespace kbgsat {

std::string_view to_string(AttentionMode mode) { return mode == AttentionMode::KBGSAT ? "kbgsat" : "kbgat"; }

std::string_view to_string(Activation act) { return act == Activation::Tanh ? "tanh" : "relu"; }

std::string_view to_string(DecoderKind kind) {
    switch (kind) {
        case DecoderKind::TransE: return "transe";
        case DecoderKind::DistMult: return "distmult";
        case DecoderKind::ConvE: return "conve";
    }
    return "?";
}

std::string_view to_string(FilterPolicy policy) { return policy == FilterPolicy::TrainOnly ? "train" : "standard"; }

AttentionMode parse_attention(std::string_view s) {
    if (s == "kbgsat") return AttentionMode::KBGSAT;
    if (s == "kbgat") return AttentionMode::KBGAT;
    throw ConfigError("attention must be kbgsat or kbgat, got '" + std::string(s) + "'");
}

Activation parse_activation(std::string_view s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ConfigError("activation must be tanh or relu, got '" + std::string(s) + "'");
}

DecoderKind parse_decoder(std::string_view s) {
    if (s == "transe") return DecoderKind::TransE;
    if (s == "distmult") return DecoderKind::DistMult;
    if (s == "conve") return DecoderKind::ConvE;
    throw ConfigError("decoder must be transe, distmult or conve, got '" + std::string(s) + "'");
}

FilterPolicy parse_filter(std::string_view s) {
    if (s == "train") return FilterPolicy::TrainOnly;
    if (s == "standard") return FilterPolicy::Standard;
    throw ConfigError("filter must be train or standard, got '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
    if (dim <= 0) throw ConfigError("dim must be positive");
    if (layers != 1 && layers != 2) throw ConfigError("layers must be 1 or 2");
    if (num_entities < 0 || num_relations < 0) throw ConfigError("negative entity or relation count");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (decoder == DecoderKind::ConvE) {
        if (conve.rows * conve.cols != dim)
            throw ConfigError("conve reshape " + std::to_string(conve.rows) + "x" + std::to_string(conve.cols) +
                              " does not match dim " + std::to_string(dim));
        if (conve.channels <= 0 || conve.kernel_h <= 0 || conve.kernel_w <= 0)
            throw ConfigError("conve channels and kernel extents must be positive");
        if (conve.kernel_h > conve.image_h() || conve.kernel_w > conve.cols)
            throw ConfigError("conve kernel is larger than the stacked input");
    }
}

}  // namespace kbgsat
