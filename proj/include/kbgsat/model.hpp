#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kbgsat/config_types.hpp"
#include "kbgsat/decoder.hpp"
#include "kbgsat/encoder.hpp"
#include "kbgsat/errors.hpp"
#include "kbgsat/tensor.hpp"

namespace kbgsat {

using Rng = std::mt19937_64;

/// A condition pair: score every entity as the missing tail of (entity, relation, ?).
struct Query {
    EntityId entity = 0;
    RelationId relation = 0;

    friend bool operator==(const Query&, const Query&) = default;
    friend auto operator<=>(const Query&, const Query&) = default;
};

/// Zero-mean normal with variance 2 / fan_in.
template <typename Scalar>
Matrix<Scalar> he_normal(Index rows, Index cols, Index fan_in, Rng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Matrix<Scalar> m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
    return m;
}

/// Final embeddings and scores of one forward pass.
template <typename Scalar>
struct ForwardResult {
    EncoderOutput<Scalar> encoded;
    Var<Scalar> scores;  // batch x |E|
};

/// All learnable arrays of the encoder-decoder model.
template <typename Scalar>
class Model {
public:
    Model() = default;

    /// He-initialises every weight from a generator seeded with `seed`.
    Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
        config_.validate();
        Rng rng(seed);
        const Index d = config_.dim;
        const Index ne = config_.num_entities, nr = config_.relation_rows();
        entity_emb_ = Parameter<Scalar>("entity_emb", he_normal<Scalar>(ne, d, d, rng));
        relation_emb_ = Parameter<Scalar>("relation_emb", he_normal<Scalar>(nr, d, d, rng));
        for (int l = 0; l < config_.layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            EncoderLayerParams<Scalar> layer;
            layer.w_out = Parameter<Scalar>(p + "w_out", he_normal<Scalar>(d, 2 * d, 2 * d, rng));
            layer.w_in = Parameter<Scalar>(p + "w_in", he_normal<Scalar>(d, 2 * d, 2 * d, rng));
            layer.w_loop = Parameter<Scalar>(p + "w_loop", he_normal<Scalar>(d, 2 * d, 2 * d, rng));
            layer.w = Parameter<Scalar>(p + "w", he_normal<Scalar>(d, 3 * d, 3 * d, rng));
            if (config_.attention == AttentionMode::KBGSAT) {
                layer.w_out_query = Parameter<Scalar>(p + "w_out_query", he_normal<Scalar>(d, d, d, rng));
                layer.w_in_query = Parameter<Scalar>(p + "w_in_query", he_normal<Scalar>(d, d, d, rng));
            } else {
                layer.attention = Parameter<Scalar>(p + "attention", he_normal<Scalar>(3 * d, 1, 3 * d, rng));
            }
            layer.w_rel = Parameter<Scalar>(p + "w_rel", he_normal<Scalar>(d, d, d, rng));
            layers_.push_back(std::move(layer));
        }
        if (config_.decoder == DecoderKind::ConvE) {
            const auto& s = config_.conve;
            const Index k = static_cast<Index>(s.kernel_h) * s.kernel_w;
            conve_.kernels = Parameter<Scalar>("conve.kernels", he_normal<Scalar>(s.channels, k, k, rng));
            conve_.kernel_bias = Parameter<Scalar>("conve.kernel_bias", Matrix<Scalar>::Zero(s.channels, 1));
            const Index f = s.flat_features();
            conve_.fc = Parameter<Scalar>("conve.fc", he_normal<Scalar>(d, f, f, rng));
            conve_.fc_bias = Parameter<Scalar>("conve.fc_bias", Matrix<Scalar>::Zero(1, d));
        }
    }

    const ModelConfig& config() const { return config_; }
    ModelConfig& config() { return config_; }

    Parameter<Scalar>& entity_emb() { return entity_emb_; }
    Parameter<Scalar>& relation_emb() { return relation_emb_; }
    std::vector<EncoderLayerParams<Scalar>>& layers() { return layers_; }
    const std::vector<EncoderLayerParams<Scalar>>& layers() const { return layers_; }
    ConvEParams<Scalar>& conve() { return conve_; }

    /// Every learnable array in a fixed order.
    std::vector<Parameter<Scalar>*> parameters() { return collect<Parameter<Scalar>>(*this); }
    std::vector<const Parameter<Scalar>*> parameters() const { return collect<const Parameter<Scalar>>(*this); }

    Parameter<Scalar>* find(const std::string& name) {
        for (auto* p : parameters())
            if (p->name() == name) return p;
        return nullptr;
    }

    void zero_grad() {
        for (auto* p : parameters()) p->zero_grad();
    }

    /// Records the full encoder on `tape`. A const model records its
    /// parameters as constants.
    template <typename Self>
    static EncoderOutput<Scalar> encode_impl(Self& self, Tape<Scalar>& tape, const GraphIndex& graph, bool training,
                                             Rng& rng) {
        if (graph.num_entities != self.config_.num_entities ||
            graph.num_relation_rows != self.config_.relation_rows())
            throw DimensionError("graph does not match the model's entity/relation counts");
        EmbeddingVars<Scalar> input{tape.parameter(self.entity_emb_), tape.parameter(self.relation_emb_)};
        std::vector<LayerLeaves<Scalar>> leaves;
        for (auto& layer : self.layers_) leaves.push_back(bind_layer(tape, layer, self.config_.attention));
        ForwardOptions opt{self.config_.attention, self.config_.activation, self.config_.dropout, training};
        return kbgsat::encode(leaves, input, graph, opt, rng);
    }

    EncoderOutput<Scalar> encode(Tape<Scalar>& tape, const GraphIndex& graph, bool training, Rng& rng) {
        return encode_impl(*this, tape, graph, training, rng);
    }
    EncoderOutput<Scalar> encode(Tape<Scalar>& tape, const GraphIndex& graph, bool training, Rng& rng) const {
        return encode_impl(*this, tape, graph, training, rng);
    }

    /// Scores each query against all entities from already-encoded
    /// embeddings: batch x |E| logits.
    template <typename Self>
    static Var<Scalar> score_impl(Self& self, Tape<Scalar>& tape, const EmbeddingVars<Scalar>& emb,
                                  std::span<const Query> queries) {
        std::vector<Index> heads, rels;
        heads.reserve(queries.size());
        rels.reserve(queries.size());
        for (const auto& q : queries) {
            if (q.entity < 0 || q.entity >= self.config_.num_entities || q.relation < 0 ||
                q.relation >= self.config_.relation_rows())
                throw ContractError("query (" + std::to_string(q.entity) + ", " + std::to_string(q.relation) +
                                    ") is out of range");
            heads.push_back(q.entity);
            rels.push_back(q.relation);
        }
        auto h = gather_rows(emb.entity, std::span<const Index>(heads));
        auto r = gather_rows(emb.relation, std::span<const Index>(rels));
        switch (self.config_.decoder) {
            case DecoderKind::TransE: return score_transe(h, r, emb.entity);
            case DecoderKind::DistMult: return score_distmult(h, r, emb.entity);
            case DecoderKind::ConvE: {
                ConvELeaves<Scalar> c{tape.parameter(self.conve_.kernels), tape.parameter(self.conve_.kernel_bias),
                                      tape.parameter(self.conve_.fc), tape.parameter(self.conve_.fc_bias)};
                return score_conve(h, r, emb.entity, c, self.config_.conve);
            }
        }
        throw ContractError("unknown decoder");
    }

    Var<Scalar> score(Tape<Scalar>& tape, const EmbeddingVars<Scalar>& emb, std::span<const Query> queries) {
        return score_impl(*this, tape, emb, queries);
    }
    Var<Scalar> score(Tape<Scalar>& tape, const EmbeddingVars<Scalar>& emb, std::span<const Query> queries) const {
        return score_impl(*this, tape, emb, queries);
    }

    ForwardResult<Scalar> forward(Tape<Scalar>& tape, const GraphIndex& graph, std::span<const Query> queries,
                                  bool training, Rng& rng) {
        ForwardResult<Scalar> out{encode(tape, graph, training, rng), {}};
        out.scores = score(tape, out.encoded.final, queries);
        return out;
    }

private:
    template <typename P, typename Self>
    static std::vector<P*> collect(Self& self) {
        std::vector<P*> out{&self.entity_emb_, &self.relation_emb_};
        for (auto& l : self.layers_) {
            out.push_back(&l.w_out);
            out.push_back(&l.w_in);
            out.push_back(&l.w_loop);
            out.push_back(&l.w);
            if (self.config_.attention == AttentionMode::KBGSAT) {
                out.push_back(&l.w_out_query);
                out.push_back(&l.w_in_query);
            } else {
                out.push_back(&l.attention);
            }
            out.push_back(&l.w_rel);
        }
        if (self.config_.decoder == DecoderKind::ConvE) {
            out.push_back(&self.conve_.kernels);
            out.push_back(&self.conve_.kernel_bias);
            out.push_back(&self.conve_.fc);
            out.push_back(&self.conve_.fc_bias);
        }
        return out;
    }

    ModelConfig config_;
    Parameter<Scalar> entity_emb_;
    Parameter<Scalar> relation_emb_;
    std::vector<EncoderLayerParams<Scalar>> layers_;
    ConvEParams<Scalar> conve_;
};

}  // namespace kbgsat
