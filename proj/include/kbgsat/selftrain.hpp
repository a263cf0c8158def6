#pragma once

// Self-training: predict one unverified tail for every condition pair of
// the valid/test splits, add those facts to the training set, retrain.

#include <ostream>
#include <span>
#include <vector>

#include "kbgsat/kg_data.hpp"
#include "kbgsat/scorer.hpp"
#include "kbgsat/trainer.hpp"

namespace kbgsat {

struct ConditionPairSet {
    std::vector<Query> pairs;
    std::vector<Split> source;
};

/// Forward (h, r) and inverse (t, r+|R|) pairs of every source triple,
/// deduplicated, in first-occurrence order.
ConditionPairSet build_condition_pairs(const TripleStore& store, std::span<const Split> source_splits);

struct GeneratedTriples {
    std::vector<Triple> triples;  // (pair entity, pair relation, predicted tail)
    std::size_t skipped_pairs = 0;
};

/// For each pair takes the highest-scoring tail not already known for the
/// pair in `train_known`; ties go to the smaller entity id.
GeneratedTriples generate_new_triples(const Scorer& scorer, const KnownTails& train_known,
                                      const ConditionPairSet& pairs, int workers = 1,
                                      std::ostream* warnings = nullptr);

/// A generated triple in forward orientation: inverse-relation predictions
/// (e, r+|R|, t) become (t, r, e).
Triple to_forward(const Triple& t, std::int32_t num_relations);

/// train followed by the forward form of every generated triple not
/// already present, without duplicates.
std::vector<Triple> merge_training_set(std::span<const Triple> train, std::span<const Triple> generated,
                                       std::int32_t num_relations);

struct SelfTrainConfig {
    std::vector<Split> sources{Split::Valid, Split::Test};
    int rounds = 1;
    int epochs = 300;
    bool warm_start = true;
    bool generate = true;
};

template <typename Scalar>
struct SelfTrainResult {
    FitResult fit;
    std::vector<Triple> generated;    // forward orientation, all rounds
    std::vector<Triple> training_set; // final training set used for retraining
};

/// Generates new triples from `pretrained` and retrains on the union.
/// Warm start continues from the pretrained parameters; otherwise the
/// model is re-initialised from the training seed.
template <typename Scalar>
SelfTrainResult<Scalar> self_train(const Model<Scalar>& pretrained, const TripleStore& store,
                                   const TrainConfig& train_config, const SelfTrainConfig& config,
                                   std::ostream* log = nullptr) {
    if (config.rounds < 1) throw ConfigError("selftrain rounds must be at least 1");
    SelfTrainResult<Scalar> result;
    result.training_set = store.train;
    Model<Scalar> current = pretrained;
    const auto pairs = build_condition_pairs(store, config.sources);
    TrainConfig retrain = train_config;
    retrain.epochs_max = config.epochs;

    for (int round = 0; round < config.rounds; ++round) {
        if (config.generate) {
            const auto graph = augment(store.num_entities(), store.num_relations(), result.training_set);
            const auto index = build_graph_index(graph);
            ModelScorer<Scalar> scorer(current, index);
            const auto train_known = known_tails(store.num_entities(), store.num_relations(), result.training_set);
            const auto gen = generate_new_triples(scorer, train_known, pairs, train_config.workers, log);
            if (gen.triples.empty() && log) *log << "warning: no triples generated; retraining on the train set alone\n";
            const std::size_t before = result.training_set.size();
            result.training_set = merge_training_set(result.training_set, gen.triples, store.num_relations());
            result.generated.insert(result.generated.end(),
                                    result.training_set.begin() + static_cast<std::ptrdiff_t>(before),
                                    result.training_set.end());
            if (log)
                *log << "round " << round + 1 << ": generated " << gen.triples.size() << " triples from "
                     << pairs.pairs.size() << " pairs, " << result.training_set.size() - before << " new\n";
        }
        Model<Scalar> model = config.warm_start ? current : Model<Scalar>(current.config(), train_config.seed);
        result.fit = fit(model, store, result.training_set, retrain, {}, log);
        current = restore_model<Scalar>(result.fit.best);
    }
    return result;
}

}  // namespace kbgsat
