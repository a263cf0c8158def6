#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace kbgsat {

enum class AttentionMode { KBGSAT, KBGAT };
enum class Activation { Tanh, Relu };
enum class DecoderKind { TransE, DistMult, ConvE };
enum class FilterPolicy { TrainOnly, Standard };

std::string_view to_string(AttentionMode mode);
std::string_view to_string(Activation act);
std::string_view to_string(DecoderKind kind);
std::string_view to_string(FilterPolicy policy);

AttentionMode parse_attention(std::string_view s);
Activation parse_activation(std::string_view s);
DecoderKind parse_decoder(std::string_view s);
FilterPolicy parse_filter(std::string_view s);

struct ConvEShape {
    int channels = 32;
    int kernel_h = 3;
    int kernel_w = 3;
    int rows = 10;  // reshape of a d-vector into rows x cols
    int cols = 20;

    int image_h() const { return 2 * rows; }
    int feature_h() const { return image_h() - kernel_h + 1; }
    int feature_w() const { return cols - kernel_w + 1; }
    int flat_features() const { return channels * feature_h() * feature_w(); }
};

/// Architecture of an encoder-decoder model; everything needed to
/// allocate its parameters.
struct ModelConfig {
    std::int32_t num_entities = 0;
    std::int32_t num_relations = 0;  // |R| without inverses or self-loop
    int dim = 200;
    int layers = 2;
    AttentionMode attention = AttentionMode::KBGSAT;
    Activation activation = Activation::Tanh;
    DecoderKind decoder = DecoderKind::ConvE;
    ConvEShape conve;
    double dropout = 0.1;

    std::int32_t relation_rows() const { return 2 * num_relations + 1; }

    /// Throws ConfigError when the combination is unusable.
    void validate() const;
};

}  // namespace kbgsat
