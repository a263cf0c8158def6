#include "kbgsat/kg_data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "kbgsat/errors.hpp"

namespace kbgsat {

namespace fs = std::filesystem;

std::string_view split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::Train;
    if (name == "valid") return Split::Valid;
    if (name == "test") return Split::Test;
    throw ConfigError("unknown split '" + std::string(name) + "' (expected train, valid or test)");
}

std::int32_t Dictionary::intern(const std::string& name) {
    auto [it, inserted] = ids_.try_emplace(name, static_cast<std::int32_t>(names_.size()));
    if (inserted) names_.push_back(name);
    return it->second;
}

std::int32_t Dictionary::find(const std::string& name) const {
    auto it = ids_.find(name);
    return it == ids_.end() ? -1 : it->second;
}

namespace {

std::size_t edit_distance(std::string_view a, std::string_view b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

std::vector<std::string> Dictionary::nearest(const std::string& query, std::size_t count) const {
    std::vector<std::pair<std::size_t, std::int32_t>> scored;
    scored.reserve(names_.size());
    for (std::size_t i = 0; i < names_.size(); ++i)
        scored.emplace_back(edit_distance(query, names_[i]), static_cast<std::int32_t>(i));
    const std::size_t k = std::min(count, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(names_[static_cast<std::size_t>(scored[i].second)]);
    return out;
}

const std::vector<Triple>& TripleStore::split(Split s) const {
    switch (s) {
        case Split::Train: return train;
        case Split::Valid: return valid;
        case Split::Test: return test;
    }
    return train;
}

std::vector<Triple>& TripleStore::split(Split s) {
    return const_cast<std::vector<Triple>&>(std::as_const(*this).split(s));
}

void TripleStore::validate() const {
    const std::int32_t ne = num_entities(), nr = num_relations();
    for (Split s : {Split::Train, Split::Valid, Split::Test}) {
        const auto& triples = split(s);
        for (const auto& t : triples)
            if (t.head < 0 || t.head >= ne || t.tail < 0 || t.tail >= ne || t.relation < 0 || t.relation >= nr)
                throw DataError(std::string(split_name(s)) + " contains an out-of-range id");
        std::vector<Triple> sorted(triples);
        std::sort(sorted.begin(), sorted.end());
        std::ostringstream offenders;
        std::size_t dupes = 0;
        for (std::size_t i = 1; i < sorted.size(); ++i) {
            if (sorted[i] != sorted[i - 1] || (i >= 2 && sorted[i] == sorted[i - 2])) continue;
            if (dupes < 20)
                offenders << "\n  " << entities.name(sorted[i].head) << '\t' << relations.name(sorted[i].relation)
                          << '\t' << entities.name(sorted[i].tail);
            ++dupes;
        }
        if (dupes > 0)
            throw DataError(std::to_string(dupes) + " duplicate triple(s) in " + std::string(split_name(s)) + ":" +
                            offenders.str());
    }
}

std::vector<Triple> parse_triples(std::string_view text, const std::string& source, TripleStore& store,
                                  std::size_t* blank_lines) {
    std::vector<Triple> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) {
            if (blank_lines) ++*blank_lines;
            continue;
        }
        std::string_view fields[3];
        std::size_t n = 0, start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            if (n < 3) fields[n] = line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start);
            ++n;
            if (tab == std::string_view::npos) break;
            start = tab + 1;
        }
        if (n != 3)
            throw ParseError(source, line_no, "expected 3 tab-separated fields, found " + std::to_string(n));
        for (const auto& f : fields)
            if (f.empty()) throw ParseError(source, line_no, "empty field");
        Triple t;
        t.head = store.entities.intern(std::string(fields[0]));
        t.relation = store.relations.intern(std::string(fields[1]));
        t.tail = store.entities.intern(std::string(fields[2]));
        out.push_back(t);
    }
    return out;
}

namespace {

std::string read_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

}  // namespace

TripleStore load_dataset(const fs::path& dir, LoadReport* report) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
    for (const char* name : {"train.txt", "valid.txt", "test.txt"})
        if (!fs::exists(dir / name)) throw DataError("missing " + (dir / name).string());

    TripleStore store;
    std::size_t blanks = 0;
    store.train = parse_triples(read_file(dir / "train.txt"), (dir / "train.txt").string(), store, &blanks);
    const std::int32_t train_entities = store.num_entities();
    const std::int32_t train_relations = store.num_relations();
    store.valid = parse_triples(read_file(dir / "valid.txt"), (dir / "valid.txt").string(), store, &blanks);
    store.test = parse_triples(read_file(dir / "test.txt"), (dir / "test.txt").string(), store, &blanks);
    store.validate();

    if (report) {
        *report = LoadReport{};
        report->skipped_blank_lines = blanks;
        for (std::int32_t e = train_entities; e < store.num_entities(); ++e)
            report->entities_unseen_in_train.push_back(store.entities.name(e));
        for (std::int32_t r = train_relations; r < store.num_relations(); ++r)
            report->relations_unseen_in_train.push_back(store.relations.name(r));
    }
    return store;
}

std::string LoadReport::to_json(const TripleStore& store) const {
    nlohmann::ordered_json j;
    j["entities"] = store.num_entities();
    j["relations"] = store.num_relations();
    j["train"] = store.train.size();
    j["valid"] = store.valid.size();
    j["test"] = store.test.size();
    j["entities_unseen_in_train"] = entities_unseen_in_train;
    j["relations_unseen_in_train"] = relations_unseen_in_train;
    j["skipped_blank_lines"] = skipped_blank_lines;
    return j.dump(2);
}

void write_triples(const TripleStore& store, std::span<const Triple> triples, const fs::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write " + file.string());
    for (const auto& t : triples)
        out << store.entities.name(t.head) << '\t' << store.relations.name(t.relation) << '\t'
            << store.entities.name(t.tail) << '\n';
    if (!out) throw DataError("write failed for " + file.string());
}

void write_dataset(const TripleStore& store, const fs::path& dir) {
    fs::create_directories(dir);
    write_triples(store, store.train, dir / "train.txt");
    write_triples(store, store.valid, dir / "valid.txt");
    write_triples(store, store.test, dir / "test.txt");
}

void export_dictionaries(const TripleStore& store, const fs::path& dir) {
    fs::create_directories(dir);
    auto dump = [](const Dictionary& dict, const fs::path& file) {
        std::ofstream out(file, std::ios::binary);
        if (!out) throw DataError("cannot write " + file.string());
        for (std::int32_t i = 0; i < dict.size(); ++i) out << i << '\t' << dict.name(i) << '\n';
    };
    dump(store.entities, dir / "entities.dict");
    dump(store.relations, dir / "relations.dict");
}

AugmentedGraph augment(std::int32_t num_entities, std::int32_t num_relations, std::span<const Triple> train) {
    AugmentedGraph g;
    g.num_entities = num_entities;
    g.num_relations = num_relations;
    g.triples.reserve(2 * train.size());
    g.triples.assign(train.begin(), train.end());
    for (const auto& t : train) g.triples.push_back({t.tail, t.relation + num_relations, t.head});
    g.out_adj.resize(static_cast<std::size_t>(num_entities));
    g.in_adj.resize(static_cast<std::size_t>(num_entities));
    for (const auto& t : train) {
        g.out_adj[static_cast<std::size_t>(t.head)].push_back({t.tail, t.relation});
        g.in_adj[static_cast<std::size_t>(t.tail)].push_back({t.head, t.relation});
    }
    return g;
}

AugmentedGraph augment(const TripleStore& store) {
    return augment(store.num_entities(), store.num_relations(), store.train);
}

void KnownTails::add(const Triple& t) {
    map_[key(t.head, t.relation)].push_back(t.tail);
    map_[key(t.tail, t.relation + num_relations_)].push_back(t.head);
}

void KnownTails::finalize() {
    for (auto& [k, tails] : map_) {
        std::sort(tails.begin(), tails.end());
        tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
    }
}

std::span<const EntityId> KnownTails::tails(EntityId e, RelationId r) const {
    auto it = map_.find(key(e, r));
    if (it == map_.end()) return {};
    return it->second;
}

bool KnownTails::contains(EntityId e, RelationId r, EntityId t) const {
    auto ts = tails(e, r);
    return std::binary_search(ts.begin(), ts.end(), t);
}

std::vector<std::pair<EntityId, RelationId>> KnownTails::keys() const {
    const auto stride = static_cast<std::uint64_t>(2 * num_relations_ + 1);
    std::vector<std::uint64_t> raw;
    raw.reserve(map_.size());
    for (const auto& [k, v] : map_) raw.push_back(k);
    std::sort(raw.begin(), raw.end());
    std::vector<std::pair<EntityId, RelationId>> out;
    out.reserve(raw.size());
    for (auto k : raw) out.emplace_back(static_cast<EntityId>(k / stride), static_cast<RelationId>(k % stride));
    return out;
}

KnownTails known_tails(std::int32_t num_entities, std::int32_t num_relations, std::span<const Triple> triples) {
    KnownTails known(num_entities, num_relations);
    for (const auto& t : triples) known.add(t);
    known.finalize();
    return known;
}

KnownTails known_tails(const TripleStore& store, std::span<const Split> splits) {
    KnownTails known(store.num_entities(), store.num_relations());
    for (Split s : splits)
        for (const auto& t : store.split(s)) known.add(t);
    known.finalize();
    return known;
}

}  // namespace kbgsat
