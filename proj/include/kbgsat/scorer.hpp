#pragma once

#include <span>

#include <Eigen/Dense>

#include "kbgsat/model.hpp"

namespace kbgsat {

using ScoreMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Anything that scores condition pairs against every entity. Must be
/// safe to call concurrently.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::int32_t num_entities() const = 0;
    /// queries.size() x num_entities() scores; higher is more plausible.
    virtual ScoreMatrix score(std::span<const Query> queries) const = 0;
};

/// Scores from a model over a fixed graph. The encoder runs once at
/// construction; score() only evaluates the decoder.
template <typename Scalar>
class ModelScorer : public Scorer {
public:
    ModelScorer(const Model<Scalar>& model, const GraphIndex& graph) : model_(model) {
        Tape<Scalar> tape(false);
        Rng unused(0);
        auto enc = model_.encode(tape, graph, false, unused);
        entity_ = enc.final.entity.value();
        relation_ = enc.final.relation.value();
    }

    std::int32_t num_entities() const override { return static_cast<std::int32_t>(entity_.rows()); }

    ScoreMatrix score(std::span<const Query> queries) const override {
        Tape<Scalar> tape(false);
        EmbeddingVars<Scalar> emb{tape.constant(entity_), tape.constant(relation_)};
        return model_.score(tape, emb, queries).value().template cast<double>();
    }

    const Matrix<Scalar>& entity_embeddings() const { return entity_; }
    const Matrix<Scalar>& relation_embeddings() const { return relation_; }

private:
    const Model<Scalar>& model_;
    Matrix<Scalar> entity_;
    Matrix<Scalar> relation_;
};

/// Scores from a fixed table keyed by query; used for stubbing in tests.
class TableScorer : public Scorer {
public:
    explicit TableScorer(std::int32_t num_entities) : num_entities_(num_entities) {}

    void set(const Query& q, std::vector<double> row) {
        rows_.emplace_back(q, std::move(row));
    }

    std::int32_t num_entities() const override { return num_entities_; }

    ScoreMatrix score(std::span<const Query> queries) const override {
        ScoreMatrix out = ScoreMatrix::Zero(static_cast<Index>(queries.size()), num_entities_);
        for (std::size_t i = 0; i < queries.size(); ++i)
            for (const auto& [q, row] : rows_)
                if (q == queries[i])
                    for (std::int32_t e = 0; e < num_entities_; ++e) out(static_cast<Index>(i), e) = row[static_cast<std::size_t>(e)];
        return out;
    }

private:
    std::int32_t num_entities_;
    std::vector<std::pair<Query, std::vector<double>>> rows_;
};

}  // namespace kbgsat
