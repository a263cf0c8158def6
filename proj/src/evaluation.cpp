#include "kbgsat/evaluation.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "kbgsat/errors.hpp"
#include "kbgsat/parallel.hpp"

namespace kbgsat {

namespace {

// `filter` is sorted; the target is skipped whether or not it is listed.
double filtered_rank(std::span<const double> scores, EntityId target, std::span<const EntityId> filter) {
    const double ts = scores[static_cast<std::size_t>(target)];
    std::size_t greater = 0, equal = 0;
    auto next = filter.begin();
    for (std::size_t e = 0; e < scores.size(); ++e) {
        while (next != filter.end() && static_cast<std::size_t>(*next) < e) ++next;
        if (next != filter.end() && static_cast<std::size_t>(*next) == e) continue;
        if (static_cast<EntityId>(e) == target) continue;
        if (scores[e] > ts)
            ++greater;
        else if (scores[e] == ts)
            ++equal;
    }
    return 1.0 + static_cast<double>(greater) + static_cast<double>(equal) / 2.0;
}

}  // namespace

RankResult rank_query(std::span<const double> scores, EntityId target, std::span<const EntityId> filter) {
    if (target < 0 || static_cast<std::size_t>(target) >= scores.size())
        throw ContractError("rank_query: target out of range");
    if (!std::is_sorted(filter.begin(), filter.end())) throw ContractError("rank_query: filter must be sorted");
    if (std::binary_search(filter.begin(), filter.end(), target))
        throw ContractError("rank_query: target " + std::to_string(target) + " is in the filter set");
    RankResult r;
    r.target = target;
    r.rank = filtered_rank(scores, target, filter);
    return r;
}

Metrics summarize(std::span<const RankResult> ranks, std::span<const int> ks, FilterPolicy policy) {
    Metrics m;
    m.filter_policy = policy;
    m.n_queries = ranks.size();
    for (int k : ks) m.hits[k] = 0.0;
    if (ranks.empty()) return m;
    double sum_rank = 0.0, sum_rr = 0.0;
    for (const auto& r : ranks) {
        sum_rank += r.rank;
        sum_rr += 1.0 / r.rank;
        for (int k : ks)
            if (r.rank <= k) m.hits[k] += 1.0;
    }
    const double n = static_cast<double>(ranks.size());
    m.mr = sum_rank / n;
    m.mrr = sum_rr / n;
    for (auto& [k, h] : m.hits) h /= n;
    return m;
}

std::string Metrics::to_json() const {
    nlohmann::ordered_json j;
    j["mr"] = mr;
    j["mrr"] = mrr;
    nlohmann::ordered_json h = nlohmann::ordered_json::object();
    for (const auto& [k, v] : hits) h[std::to_string(k)] = v;
    j["hits"] = h;
    j["n_queries"] = n_queries;
    j["filter_policy"] = std::string(to_string(filter_policy));
    return j.dump(2);
}

std::string Metrics::to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "filter=" << to_string(filter_policy) << " queries=" << n_queries << " MR=" << std::setprecision(2) << mr
       << std::setprecision(4) << " MRR=" << mrr;
    for (const auto& [k, v] : hits) os << " Hits@" << k << "=" << v;
    return os.str();
}

KnownTails filter_for(const TripleStore& store, FilterPolicy policy) {
    if (policy == FilterPolicy::TrainOnly) {
        const Split s[] = {Split::Train};
        return known_tails(store, s);
    }
    const Split s[] = {Split::Train, Split::Valid, Split::Test};
    return known_tails(store, s);
}

std::vector<std::pair<Query, EntityId>> split_queries(const TripleStore& store, Split split) {
    std::vector<std::pair<Query, EntityId>> out;
    const auto& triples = store.split(split);
    out.reserve(2 * triples.size());
    for (const auto& t : triples) {
        out.push_back({{t.head, t.relation}, t.tail});
        out.push_back({{t.tail, t.relation + store.num_relations()}, t.head});
    }
    return out;
}

Metrics evaluate_split(const Scorer& scorer, const TripleStore& store, Split split, FilterPolicy policy,
                       const KnownTails& filter, const EvalOptions& options, std::vector<RankResult>* ranks_out) {
    const auto queries = split_queries(store, split);
    if (queries.empty()) throw ContractError("evaluate_split: split " + std::string(split_name(split)) + " is empty");
    if (scorer.num_entities() != store.num_entities())
        throw DimensionError("evaluate_split: scorer covers " + std::to_string(scorer.num_entities()) +
                             " entities, dataset has " + std::to_string(store.num_entities()));
    std::vector<RankResult> ranks(queries.size());
    const std::size_t chunk = std::max<std::size_t>(options.chunk_size, 1);
    parallel_chunks(queries.size(), options.workers, [&](std::size_t begin, std::size_t end) {
        std::vector<Query> batch;
        for (std::size_t b = begin; b < end; b += chunk) {
            const std::size_t e = std::min(end, b + chunk);
            batch.clear();
            for (std::size_t i = b; i < e; ++i) batch.push_back(queries[i].first);
            const ScoreMatrix scores = scorer.score(batch);
            for (std::size_t i = b; i < e; ++i) {
                const auto& [q, target] = queries[i];
                const auto row = scores.row(static_cast<Index>(i - b));
                const std::span<const double> s(row.data(), static_cast<std::size_t>(row.size()));
                ranks[i] = RankResult{q, target, filtered_rank(s, target, filter.tails(q.entity, q.relation))};
            }
        }
    });
    if (ranks_out) *ranks_out = ranks;
    return summarize(ranks, options.ks, policy);
}

Metrics evaluate_split(const Scorer& scorer, const TripleStore& store, Split split, FilterPolicy policy,
                       const EvalOptions& options) {
    return evaluate_split(scorer, store, split, policy, filter_for(store, policy), options);
}

}  // namespace kbgsat
