#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kbgsat {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triple {
    EntityId head = 0;
    RelationId relation = 0;
    EntityId tail = 0;

    friend bool operator==(const Triple&, const Triple&) = default;
    friend auto operator<=>(const Triple&, const Triple&) = default;
};

enum class Split { Train, Valid, Test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// Bidirectional surface-string <-> dense id mapping. Ids follow insertion order.
class Dictionary {
public:
    /// Returns the id of name, inserting it if new.
    std::int32_t intern(const std::string& name);
    /// Returns -1 when name is unknown.
    std::int32_t find(const std::string& name) const;
    const std::string& name(std::int32_t id) const { return names_.at(static_cast<std::size_t>(id)); }
    std::int32_t size() const { return static_cast<std::int32_t>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }

    /// Up to `count` known names closest to `query` by edit distance.
    std::vector<std::string> nearest(const std::string& query, std::size_t count) const;

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::int32_t> ids_;
};

class TripleStore;

/// Entities or relations that occur in valid/test but never in train.
struct LoadReport {
    std::vector<std::string> entities_unseen_in_train;
    std::vector<std::string> relations_unseen_in_train;
    std::size_t skipped_blank_lines = 0;

    std::string to_json(const TripleStore& store) const;
};

class TripleStore {
public:
    Dictionary entities;
    Dictionary relations;
    std::vector<Triple> train;
    std::vector<Triple> valid;
    std::vector<Triple> test;

    std::int32_t num_entities() const { return entities.size(); }
    std::int32_t num_relations() const { return relations.size(); }

    const std::vector<Triple>& split(Split s) const;
    std::vector<Triple>& split(Split s);

    /// Throws DataError on out-of-range ids or duplicates within a split.
    void validate() const;
};

/// Reads train.txt, valid.txt and test.txt from dir. Ids are assigned by
/// first appearance scanning train, then valid, then test.
TripleStore load_dataset(const std::filesystem::path& dir, LoadReport* report = nullptr);

/// Parses one split from text. Used by load_dataset; exposed for tests.
std::vector<Triple> parse_triples(std::string_view text, const std::string& source, TripleStore& store,
                                  std::size_t* blank_lines = nullptr);

/// Writes the three splits as head<TAB>relation<TAB>tail files.
void write_dataset(const TripleStore& store, const std::filesystem::path& dir);

void write_triples(const TripleStore& store, std::span<const Triple> triples, const std::filesystem::path& file);

/// Writes entities.dict and relations.dict as id<TAB>name lines.
void export_dictionaries(const TripleStore& store, const std::filesystem::path& dir);

/// Train triples with inverse copies and per-entity adjacency in both
/// directions. Relation ids r+|R| denote inverses and 2|R| the self-loop.
class AugmentedGraph {
public:
    struct Neighbor {
        EntityId entity;
        RelationId relation;
        friend bool operator==(const Neighbor&, const Neighbor&) = default;
    };

    std::int32_t num_entities = 0;
    std::int32_t num_relations = 0;  // |R| before augmentation
    std::vector<Triple> triples;     // original train followed by their inverses
    std::vector<std::vector<Neighbor>> out_adj;
    std::vector<std::vector<Neighbor>> in_adj;

    RelationId loop_relation() const { return 2 * num_relations; }
    RelationId inverse(RelationId r) const { return r < num_relations ? r + num_relations : r - num_relations; }
    std::int32_t num_relation_rows() const { return 2 * num_relations + 1; }
};

AugmentedGraph augment(std::int32_t num_entities, std::int32_t num_relations, std::span<const Triple> train);
AugmentedGraph augment(const TripleStore& store);

/// (entity, relation) -> sorted tails, over forward and inverse directions.
class KnownTails {
public:
    KnownTails() = default;
    KnownTails(std::int32_t num_entities, std::int32_t num_relations)
        : num_entities_(num_entities), num_relations_(num_relations) {}

    void add(const Triple& forward);
    void finalize();

    /// Empty span when the pair has no known tails.
    std::span<const EntityId> tails(EntityId e, RelationId r) const;
    bool contains(EntityId e, RelationId r, EntityId t) const;
    std::size_t num_pairs() const { return map_.size(); }
    bool empty() const { return map_.empty(); }

    /// Every key in ascending (entity, relation) order.
    std::vector<std::pair<EntityId, RelationId>> keys() const;

private:
    std::uint64_t key(EntityId e, RelationId r) const {
        return static_cast<std::uint64_t>(e) * static_cast<std::uint64_t>(2 * num_relations_ + 1) +
               static_cast<std::uint64_t>(r);
    }

    std::int32_t num_entities_ = 0;
    std::int32_t num_relations_ = 0;
    std::unordered_map<std::uint64_t, std::vector<EntityId>> map_;
};

KnownTails known_tails(const TripleStore& store, std::span<const Split> splits);
KnownTails known_tails(std::int32_t num_entities, std::int32_t num_relations, std::span<const Triple> triples);

}  // namespace kbgsat
