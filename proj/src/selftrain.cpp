#include "kbgsat/selftrain.hpp"

#include <algorithm>
#include <set>

#include "kbgsat/parallel.hpp"

namespace kbgsat {

ConditionPairSet build_condition_pairs(const TripleStore& store, std::span<const Split> source_splits) {
    if (source_splits.empty()) throw ContractError("build_condition_pairs: no source split given");
    ConditionPairSet set;
    set.source.assign(source_splits.begin(), source_splits.end());
    std::set<Query> seen;
    auto push = [&](Query q) {
        if (seen.insert(q).second) set.pairs.push_back(q);
    };
    for (Split s : source_splits) {
        if (s == Split::Train) throw ContractError("build_condition_pairs: sources must be valid and/or test");
        for (const auto& t : store.split(s)) {
            push({t.head, t.relation});
            push({t.tail, t.relation + store.num_relations()});
        }
    }
    return set;
}

GeneratedTriples generate_new_triples(const Scorer& scorer, const KnownTails& train_known,
                                      const ConditionPairSet& pairs, int workers, std::ostream* warnings) {
    const std::size_t n = pairs.pairs.size();
    std::vector<EntityId> choice(n, -1);
    constexpr std::size_t kChunk = 256;
    parallel_chunks(n, workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t b = begin; b < end; b += kChunk) {
            const std::size_t e = std::min(end, b + kChunk);
            const std::span<const Query> batch(pairs.pairs.data() + b, e - b);
            const ScoreMatrix scores = scorer.score(batch);
            for (std::size_t i = b; i < e; ++i) {
                const Query& q = pairs.pairs[i];
                const auto known = train_known.tails(q.entity, q.relation);
                const auto row = scores.row(static_cast<Index>(i - b));
                EntityId best = -1;
                // Descending score, ascending id on ties: first strict maximum wins.
                for (Index c = 0; c < row.size(); ++c) {
                    if (std::binary_search(known.begin(), known.end(), static_cast<EntityId>(c))) continue;
                    if (best < 0 || row(c) > row(best)) best = static_cast<EntityId>(c);
                }
                choice[i] = best;
            }
        }
    });
    GeneratedTriples out;
    for (std::size_t i = 0; i < n; ++i) {
        const Query& q = pairs.pairs[i];
        if (choice[i] < 0) {
            ++out.skipped_pairs;
            if (warnings)
                *warnings << "warning: every candidate is already known for pair (" << q.entity << ", " << q.relation
                          << "); skipped\n";
            continue;
        }
        out.triples.push_back({q.entity, q.relation, choice[i]});
    }
    return out;
}

Triple to_forward(const Triple& t, std::int32_t num_relations) {
    if (t.relation >= 2 * num_relations) throw ContractError("to_forward: the self-loop relation is not a fact");
    if (t.relation >= num_relations) return {t.tail, t.relation - num_relations, t.head};
    return t;
}

std::vector<Triple> merge_training_set(std::span<const Triple> train, std::span<const Triple> generated,
                                       std::int32_t num_relations) {
    std::vector<Triple> out(train.begin(), train.end());
    std::set<Triple> seen(train.begin(), train.end());
    for (const auto& g : generated) {
        const Triple f = to_forward(g, num_relations);
        if (seen.insert(f).second) out.push_back(f);
    }
    return out;
}

}  // namespace kbgsat
