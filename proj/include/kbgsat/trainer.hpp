#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kbgsat/adam.hpp"
#include "kbgsat/checkpoint.hpp"
#include "kbgsat/evaluation.hpp"
#include "kbgsat/kg_data.hpp"
#include "kbgsat/model.hpp"
#include "kbgsat/scorer.hpp"

namespace kbgsat {

struct TrainConfig {
    double lr = 0.001;
    int batch_size = 128;
    int epochs_max = 500;
    int patience = 20;
    std::uint64_t seed = 0;
    double label_smoothing = 0.0;
    FilterPolicy filter = FilterPolicy::Standard;
    int workers = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::string config_hash;

    void validate() const {
        if (!(lr > 0.0 && lr < 1.0)) throw ConfigError("lr must be in (0, 1)");
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (patience < 1) throw ConfigError("patience must be at least 1");
        if (epochs_max < 1) throw ConfigError("epochs must be at least 1");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must be in [0, 1)");
        if (workers < 1) throw ConfigError("workers must be at least 1");
    }

    AdamOptions adam() const { return {lr, beta1, beta2, adam_eps}; }
};

/// Distinct (entity, relation) pairs of the augmented triples, ascending.
inline std::vector<Query> condition_pairs(const AugmentedGraph& graph) {
    std::vector<Query> pairs;
    pairs.reserve(graph.triples.size());
    for (const auto& t : graph.triples) pairs.push_back({t.head, t.relation});
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    return pairs;
}

template <typename Scalar>
struct Batch {
    std::vector<Query> queries;
    Matrix<Scalar> labels;  // queries.size() x |E|
};

/// One epoch's worth of 1-N batches. Labels are materialised on demand:
/// 1 for every known tail of the pair, 0 for everything else.
template <typename Scalar>
class BatchStream {
public:
    BatchStream(std::vector<Query> pairs, const KnownTails& known, std::int32_t num_entities, int batch_size,
                double label_smoothing)
        : pairs_(std::move(pairs)), known_(&known), num_entities_(num_entities),
          batch_size_(static_cast<std::size_t>(batch_size)), smoothing_(label_smoothing) {}

    std::size_t num_batches() const { return (pairs_.size() + batch_size_ - 1) / batch_size_; }
    const std::vector<Query>& pairs() const { return pairs_; }

    Batch<Scalar> batch(std::size_t i) const {
        Batch<Scalar> b;
        const std::size_t begin = i * batch_size_, end = std::min(pairs_.size(), begin + batch_size_);
        b.queries.assign(pairs_.begin() + static_cast<std::ptrdiff_t>(begin), pairs_.begin() + static_cast<std::ptrdiff_t>(end));
        b.labels = Matrix<Scalar>::Zero(static_cast<Index>(b.queries.size()), num_entities_);
        for (std::size_t k = 0; k < b.queries.size(); ++k)
            for (EntityId t : known_->tails(b.queries[k].entity, b.queries[k].relation))
                b.labels(static_cast<Index>(k), t) = Scalar(1);
        if (smoothing_ > 0.0)
            b.labels = (Scalar(1.0 - smoothing_) * b.labels).array() + Scalar(smoothing_ / num_entities_);
        return b;
    }

private:
    std::vector<Query> pairs_;
    const KnownTails* known_;
    std::int32_t num_entities_;
    std::size_t batch_size_;
    double smoothing_;
};

/// Shuffles the condition pairs of `graph` with `rng` and groups them.
template <typename Scalar>
BatchStream<Scalar> make_batches(const AugmentedGraph& graph, const KnownTails& known, int batch_size, Rng& rng,
                                 double label_smoothing = 0.0) {
    if (graph.triples.empty()) throw ContractError("make_batches: the training graph is empty");
    if (batch_size < 1) throw ContractError("make_batches: batch_size must be at least 1");
    auto pairs = condition_pairs(graph);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    return BatchStream<Scalar>(std::move(pairs), known, graph.num_entities, batch_size, label_smoothing);
}

/// Full-graph encode, 1-N scoring, BCE, backward and one Adam step per
/// batch. Returns the mean batch loss weighted by batch size, so a short
/// final batch does not make the value depend on the shuffle.
template <typename Scalar>
double train_epoch(Model<Scalar>& model, const GraphIndex& graph, const BatchStream<Scalar>& batches,
                   Adam<Scalar>& optimizer, Rng& rng) {
    const auto params = model.parameters();
    double total = 0.0;
    std::size_t rows = 0;
    const std::size_t n = batches.num_batches();
    for (std::size_t i = 0; i < n; ++i) {
        const Batch<Scalar> batch = batches.batch(i);
        model.zero_grad();
        Tape<Scalar> tape;
        auto fwd = model.forward(tape, graph, batch.queries, true, rng);
        auto loss = bce_with_logits(fwd.scores, batch.labels);
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value))
            throw NumericError("non-finite loss in batch " + std::to_string(i) + " (" + std::to_string(value) + ")");
        tape.backward(loss);
        optimizer.step(params);
        total += value * static_cast<double>(batch.queries.size());
        rows += batch.queries.size();
    }
    return rows == 0 ? 0.0 : total / static_cast<double>(rows);
}

/// Stops once the tracked value has not strictly improved for `patience`
/// consecutive observations.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}

    /// Returns true if `value` is a new best.
    bool observe(int epoch, double value) {
        if (value > best_) {
            best_ = value;
            best_epoch_ = epoch;
            since_best_ = 0;
            return true;
        }
        ++since_best_;
        return false;
    }

    bool should_stop() const { return since_best_ >= patience_; }
    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }

private:
    int patience_;
    double best_ = -std::numeric_limits<double>::infinity();
    int best_epoch_ = 0;
    int since_best_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double valid_mrr = 0.0;
    bool improved = false;
};

std::string history_json(std::span<const EpochRecord> history);

struct FitResult {
    Checkpoint best;
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_valid_mrr = 0.0;
    int epochs_run = 0;
};

template <typename Scalar>
using ValidationFn = std::function<double(const Model<Scalar>&, int epoch)>;

/// Trains on `train_triples` until `epochs_max` or early stopping on the
/// filtered valid MRR, keeping the best epoch as a checkpoint. `validate`
/// replaces the built-in valid evaluation when set.
template <typename Scalar>
FitResult fit(Model<Scalar>& model, const TripleStore& store, std::span<const Triple> train_triples,
              const TrainConfig& config, ValidationFn<Scalar> validate = {}, std::ostream* log = nullptr) {
    config.validate();
    if (store.valid.empty() && !validate) throw ConfigError("fit: the valid split is empty");
    const auto graph = augment(store.num_entities(), store.num_relations(), train_triples);
    const auto index = build_graph_index(graph);
    const auto known = known_tails(store.num_entities(), store.num_relations(), train_triples);
    const KnownTails filter = validate ? KnownTails{} : filter_for(store, config.filter);
    EvalOptions eval;
    eval.workers = config.workers;

    Rng rng(config.seed);
    Adam<Scalar> optimizer(config.adam());
    EarlyStopping stopper(config.patience);
    FitResult result;
    for (int epoch = 1; epoch <= config.epochs_max; ++epoch) {
        auto batches = make_batches<Scalar>(graph, known, config.batch_size, rng, config.label_smoothing);
        const double loss = train_epoch(model, index, batches, optimizer, rng);
        double mrr;
        if (validate) {
            mrr = validate(model, epoch);
        } else {
            ModelScorer<Scalar> scorer(model, index);
            mrr = evaluate_split(scorer, store, Split::Valid, config.filter, filter, eval).mrr;
        }
        const bool improved = stopper.observe(epoch, mrr);
        if (improved) result.best = make_checkpoint(model, epoch, mrr, config.config_hash);
        result.history.push_back({epoch, loss, mrr, improved});
        result.epochs_run = epoch;
        if (log)
            *log << "epoch " << epoch << " loss " << loss << " valid_mrr " << mrr << (improved ? " *" : "") << '\n';
        if (stopper.should_stop()) break;
    }
    result.best_epoch = stopper.best_epoch();
    result.best_valid_mrr = stopper.best();
    return result;
}

}  // namespace kbgsat
