#pragma once

// Graph self-attention encoder.
//
// Each layer aggregates three views of an entity: messages along outgoing
// edges, messages along incoming edges, and a self-loop transform of the
// entity itself. The views are concatenated and mixed by W under the layer
// activation. Relation rows are updated by a shared W_r. The final entity
// embedding is the sum of every layer's output.

#include <random>
#include <vector>

#include "kbgsat/config_types.hpp"
#include "kbgsat/kg_data.hpp"
#include "kbgsat/tensor.hpp"

namespace kbgsat {

enum class Direction { Out, In };

/// Edges of one direction as parallel arrays: the edge contributes to
/// `center`, carries the embedding of `neighbor`, and uses relation row
/// `relation`.
struct EdgeList {
    std::vector<Index> center;
    std::vector<Index> neighbor;
    std::vector<Index> relation;

    std::size_t size() const { return center.size(); }
};

/// Flattened adjacency consumed by the encoder. Edge order follows the
/// entity id, then adjacency-list order.
struct GraphIndex {
    Index num_entities = 0;
    Index num_relation_rows = 0;
    Index loop_relation = 0;
    EdgeList out;
    EdgeList in;

    const EdgeList& edges(Direction dir) const { return dir == Direction::Out ? out : in; }
};

inline GraphIndex build_graph_index(const AugmentedGraph& graph) {
    GraphIndex index;
    index.num_entities = graph.num_entities;
    index.num_relation_rows = graph.num_relation_rows();
    index.loop_relation = graph.loop_relation();
    auto fill = [](const std::vector<std::vector<AugmentedGraph::Neighbor>>& adj, EdgeList& edges) {
        for (std::size_t i = 0; i < adj.size(); ++i)
            for (const auto& nb : adj[i]) {
                edges.center.push_back(static_cast<Index>(i));
                edges.neighbor.push_back(nb.entity);
                edges.relation.push_back(nb.relation);
            }
    };
    fill(graph.out_adj, index.out);
    fill(graph.in_adj, index.in);
    return index;
}

template <typename Scalar>
struct EncoderLayerParams {
    Parameter<Scalar> w_out;        // d x 2d, message transform for outgoing edges
    Parameter<Scalar> w_in;         // d x 2d
    Parameter<Scalar> w_loop;       // d x 2d
    Parameter<Scalar> w;            // d x 3d, combination of the three views
    Parameter<Scalar> w_out_query;  // d x d, projects the center entity into an attention query
    Parameter<Scalar> w_in_query;   // d x d
    Parameter<Scalar> w_rel;        // d x d, relation update
    Parameter<Scalar> attention;    // 3d x 1, global vector (KBGAT mode only)

    Parameter<Scalar>& transform(Direction dir) { return dir == Direction::Out ? w_out : w_in; }
    Parameter<Scalar>& query(Direction dir) { return dir == Direction::Out ? w_out_query : w_in_query; }
};

/// Tape leaves for one layer. The tape records parameter reads once per
/// forward pass so gradients from every use accumulate.
template <typename Scalar>
struct LayerLeaves {
    Var<Scalar> w_out, w_in, w_loop, w, w_out_query, w_in_query, w_rel, attention;

    const Var<Scalar>& transform(Direction dir) const { return dir == Direction::Out ? w_out : w_in; }
    const Var<Scalar>& query(Direction dir) const { return dir == Direction::Out ? w_out_query : w_in_query; }
};

template <typename Scalar, typename P>
LayerLeaves<Scalar> bind_layer(Tape<Scalar>& tape, P& p, AttentionMode mode) {
    LayerLeaves<Scalar> l;
    l.w_out = tape.parameter(p.w_out);
    l.w_in = tape.parameter(p.w_in);
    l.w_loop = tape.parameter(p.w_loop);
    l.w = tape.parameter(p.w);
    l.w_rel = tape.parameter(p.w_rel);
    if (mode == AttentionMode::KBGSAT) {
        l.w_out_query = tape.parameter(p.w_out_query);
        l.w_in_query = tape.parameter(p.w_in_query);
    } else {
        l.attention = tape.parameter(p.attention);
    }
    return l;
}

/// Entity and relation matrices flowing between layers.
template <typename Scalar>
struct EmbeddingVars {
    Var<Scalar> entity;    // |E| x d
    Var<Scalar> relation;  // (2|R|+1) x d
};

/// W_dir x [v_neighbor ; v_relation] for every edge of one direction.
template <typename Scalar>
Var<Scalar> direction_messages(const Var<Scalar>& transform, const EmbeddingVars<Scalar>& state, const EdgeList& edges) {
    auto nbr = gather_rows(state.entity, std::span<const Index>(edges.neighbor));
    auto rel = gather_rows(state.relation, std::span<const Index>(edges.relation));
    return matmul(concat<Scalar>({nbr, rel}), transpose(transform));
}

/// Softmax-normalised attention over each center entity's edges.
/// KBGSAT: logit = (W'_dir v_i)^T (W_dir [v_j ; v_r]); `messages` supplies
/// the second factor so W_dir is shared with the message path.
/// KBGAT: logit = a^T [v_i ; v_r ; v_j].
template <typename Scalar>
Var<Scalar> attention_coefficients(Direction dir, AttentionMode mode, const LayerLeaves<Scalar>& layer,
                                   const EmbeddingVars<Scalar>& state, const EdgeList& edges,
                                   const Var<Scalar>& messages, Index num_entities) {
    const std::span<const Index> centers(edges.center);
    Var<Scalar> logits;
    if (mode == AttentionMode::KBGSAT) {
        auto queries = matmul(state.entity, transpose(layer.query(dir)));
        logits = sum_last(mul(gather_rows(queries, centers), messages));
    } else {
        auto head = gather_rows(state.entity, centers);
        auto rel = gather_rows(state.relation, std::span<const Index>(edges.relation));
        auto tail = gather_rows(state.entity, std::span<const Index>(edges.neighbor));
        logits = reshape(matmul(concat<Scalar>({head, rel, tail}), layer.attention), Shape{static_cast<Index>(edges.size())});
    }
    return segment_softmax(logits, centers, num_entities);
}

/// Sum over a direction's edges of alpha * message, per center entity.
/// Entities without edges in this direction receive the zero vector.
template <typename Scalar>
Var<Scalar> aggregate_direction(const Var<Scalar>& messages, const Var<Scalar>& coefficients, const EdgeList& edges,
                                Index num_entities) {
    return scatter_add_rows(scale_rows(messages, coefficients), std::span<const Index>(edges.center), num_entities);
}

/// W_loop x [v_i ; v_loop-relation] for every entity.
template <typename Scalar>
Var<Scalar> self_loop(const Var<Scalar>& w_loop, const EmbeddingVars<Scalar>& state, Index loop_relation) {
    const std::vector<Index> rows(static_cast<std::size_t>(state.entity.rows()), loop_relation);
    auto loop_rel = gather_rows(state.relation, std::span<const Index>(rows));
    return matmul(concat<Scalar>({state.entity, loop_rel}), transpose(w_loop));
}

/// Intermediate results of one layer, kept for inspection in tests.
template <typename Scalar>
struct LayerTrace {
    Var<Scalar> alpha_out, alpha_in;
    Var<Scalar> agg_out, agg_in, loop;
    EmbeddingVars<Scalar> output;
};

struct ForwardOptions {
    AttentionMode attention = AttentionMode::KBGSAT;
    Activation activation = Activation::Tanh;
    double dropout = 0.0;
    bool training = false;
};

template <typename Scalar, typename Rng>
LayerTrace<Scalar> layer_forward(const LayerLeaves<Scalar>& layer, const EmbeddingVars<Scalar>& state,
                                 const GraphIndex& graph, const ForwardOptions& opt, Rng& rng) {
    LayerTrace<Scalar> trace;
    const Index n = graph.num_entities;
    Var<Scalar> agg[2];
    Var<Scalar> alpha[2];
    for (Direction dir : {Direction::Out, Direction::In}) {
        const EdgeList& edges = graph.edges(dir);
        auto messages = direction_messages(layer.transform(dir), state, edges);
        auto a = attention_coefficients(dir, opt.attention, layer, state, edges, messages, n);
        const int k = dir == Direction::Out ? 0 : 1;
        alpha[k] = a;
        agg[k] = aggregate_direction(messages, dropout(a, opt.dropout, rng, opt.training), edges, n);
    }
    trace.alpha_out = alpha[0];
    trace.alpha_in = alpha[1];
    trace.agg_out = agg[0];
    trace.agg_in = agg[1];
    trace.loop = self_loop(layer.w_loop, state, graph.loop_relation);

    auto mixed = matmul(concat<Scalar>({agg[0], agg[1], trace.loop}), transpose(layer.w));
    auto activated = opt.activation == Activation::Tanh ? tanh(mixed) : relu(mixed);
    trace.output.entity = dropout(activated, opt.dropout, rng, opt.training);
    trace.output.relation = matmul(state.relation, transpose(layer.w_rel));
    return trace;
}

template <typename Scalar>
struct EncoderOutput {
    EmbeddingVars<Scalar> final;
    std::vector<LayerTrace<Scalar>> layers;
};

/// Runs every layer; final entity = sum of layer outputs, final relation =
/// last layer's relation rows.
template <typename Scalar, typename Rng>
EncoderOutput<Scalar> encode(const std::vector<LayerLeaves<Scalar>>& layers, const EmbeddingVars<Scalar>& input,
                             const GraphIndex& graph, const ForwardOptions& opt, Rng& rng) {
    if (layers.empty()) throw ContractError("encode: at least one layer is required");
    EncoderOutput<Scalar> out;
    EmbeddingVars<Scalar> state = input;
    Var<Scalar> skip_sum;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        out.layers.push_back(layer_forward(layers[l], state, graph, opt, rng));
        state = out.layers.back().output;
        skip_sum = l == 0 ? state.entity : add(skip_sum, state.entity);
    }
    out.final.entity = skip_sum;
    out.final.relation = state.relation;
    return out;
}

}  // namespace kbgsat
