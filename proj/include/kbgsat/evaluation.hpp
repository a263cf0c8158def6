#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "kbgsat/config_types.hpp"
#include "kbgsat/kg_data.hpp"
#include "kbgsat/scorer.hpp"

namespace kbgsat {

struct RankResult {
    Query query;
    EntityId target = 0;
    double rank = 0.0;  // >= 1; half-integers arise from ties
};

/// Filtered rank of `target` among candidates not in `filter`:
/// 1 + #strictly better + #tied / 2. `filter` must be sorted and must not
/// contain the target.
RankResult rank_query(std::span<const double> scores, EntityId target, std::span<const EntityId> filter);

struct Metrics {
    double mr = 0.0;
    double mrr = 0.0;
    std::map<int, double> hits;
    std::size_t n_queries = 0;
    FilterPolicy filter_policy = FilterPolicy::Standard;

    std::string to_json() const;
    std::string to_text() const;
};

/// Accumulates ranks in the given order.
Metrics summarize(std::span<const RankResult> ranks, std::span<const int> ks, FilterPolicy policy);

/// Known tails used for filtering under a policy.
KnownTails filter_for(const TripleStore& store, FilterPolicy policy);

/// Every triple of `split` yields the queries (h, r) -> t and (t, r+|R|) -> h.
std::vector<std::pair<Query, EntityId>> split_queries(const TripleStore& store, Split split);

struct EvalOptions {
    std::vector<int> ks{1, 3, 10};
    int workers = 1;
    std::size_t chunk_size = 256;
};

/// Filtered MR, MRR and Hits@k over both query directions of `split`.
Metrics evaluate_split(const Scorer& scorer, const TripleStore& store, Split split, FilterPolicy policy,
                       const KnownTails& filter, const EvalOptions& options = {},
                       std::vector<RankResult>* ranks = nullptr);

Metrics evaluate_split(const Scorer& scorer, const TripleStore& store, Split split, FilterPolicy policy,
                       const EvalOptions& options = {});

}  // namespace kbgsat
