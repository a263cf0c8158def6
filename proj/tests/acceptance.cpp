// Acceptance suite: prints one line per criterion.
//
//   acceptance [--only N[,M...]]
//
// Exit status is 1 when any selected criterion failed. A criterion that
// cannot run here (the public datasets are not in the tree) is reported as
// NOT RUN; with --only the exit status is then 77 so ctest shows a skip.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "kbgsat/checkpoint.hpp"
#include "kbgsat/cli.hpp"
#include "kbgsat/evaluation.hpp"
#include "kbgsat/run_config.hpp"
#include "kbgsat/selftrain.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace kbgsat;
using namespace kbgsat::testing;

namespace {

enum class Status { Pass, Fail, NotRun };

struct Outcome {
    Status status = Status::Pass;
    std::string detail;

    static Outcome pass(std::string d) { return {Status::Pass, std::move(d)}; }
    static Outcome fail(std::string d) { return {Status::Fail, std::move(d)}; }
    static Outcome not_run(std::string d) { return {Status::NotRun, std::move(d)}; }
};

std::string joined(std::vector<std::string> parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "; " : "") + parts[i];
    return out;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// Checks shared by several criteria

ModelConfig toy_config(const TripleStore& s, DecoderKind kind, AttentionMode mode, int dim) {
    ModelConfig c;
    c.num_entities = s.num_entities();
    c.num_relations = s.num_relations();
    c.dim = dim;
    c.layers = 2;
    c.decoder = kind;
    c.attention = mode;
    c.conve = ConvEShape{2, 3, 3, 2, dim / 2};
    return c;
}

/// Coefficient sums per (layer, direction, center) of `model` on `store`.
Outcome attention_normalised(const Model<double>& model, const TripleStore& store) {
    const auto index = build_graph_index(augment(store));
    Tape<double> tape(false);
    Rng rng(0);
    const auto enc = model.encode(tape, index, false, rng);
    double worst = 0.0;
    std::size_t groups = 0, singletons = 0;
    for (const auto& layer : enc.layers) {
        for (Direction dir : {Direction::Out, Direction::In}) {
            const auto& edges = index.edges(dir);
            const Mat alpha = (dir == Direction::Out ? layer.alpha_out : layer.alpha_in).value();
            std::map<EntityId, std::pair<double, int>> sums;
            for (std::size_t k = 0; k < edges.size(); ++k) {
                auto& [sum, count] = sums[edges.center[k]];
                sum += alpha(static_cast<Index>(k), 0);
                ++count;
            }
            for (const auto& [center, sc] : sums) {
                ++groups;
                if (sc.second == 1) {
                    ++singletons;
                    if (sc.first != 1.0)
                        return Outcome::fail("singleton coefficient " + fmt(sc.first, 17) + " at entity " +
                                             std::to_string(center));
                }
                worst = std::max(worst, std::abs(sc.first - 1.0));
            }
        }
    }
    if (worst > 1e-6) return Outcome::fail("worst |sum - 1| = " + fmt(worst));
    return Outcome::pass(std::to_string(groups) + " groups, " + std::to_string(singletons) +
                         " singletons, worst |sum - 1| = " + fmt(worst));
}

Outcome gradients_sound(Model<double>& model, const TripleStore& store, std::uint64_t seed) {
    const auto graph = augment(store);
    const auto index = build_graph_index(graph);
    const Split train[] = {Split::Train};
    const auto known = known_tails(store, train);
    Rng rng(seed);
    auto batches = make_batches<double>(graph, known, 6, rng);
    const auto batch = batches.batch(0);
    const auto rep = check_model_gradients(model, index, batch.queries, batch.labels, seed, 1e-5, 1e-4, 1e-8);
    const std::string stats = std::to_string(rep.checked) + " entries, worst rel " + fmt(rep.worst_rel);
    if (!rep.ok) return Outcome::fail(stats + "; " + rep.detail);
    return Outcome::pass(stats);
}

/// Compares evaluate_split to a brute-force ranker over `scorer`'s rows.
bool matches_brute_force(const Scorer& scorer, const TripleStore& store, std::string* why) {
    for (auto policy : {FilterPolicy::TrainOnly, FilterPolicy::Standard}) {
        for (Split split : {Split::Valid, Split::Test}) {
            if (store.split(split).empty()) continue;
            std::vector<const std::vector<Triple>*> lists{&store.train};
            if (policy == FilterPolicy::Standard) lists = {&store.train, &store.valid, &store.test};
            const std::int32_t nr = store.num_relations();
            std::vector<double> ref;
            for (const auto& t : store.split(split)) {
                for (int dir = 0; dir < 2; ++dir) {
                    const Query q = dir == 0 ? Query{t.head, t.relation} : Query{t.tail, t.relation + nr};
                    const EntityId target = dir == 0 ? t.tail : t.head;
                    const Query one[] = {q};
                    const ScoreMatrix row = scorer.score(one);
                    const std::vector<double> scores(row.data(), row.data() + row.cols());
                    auto filtered = brute_force_known(lists, q.entity, q.relation, nr);
                    filtered.erase(target);
                    ref.push_back(brute_force_rank(scores, target, filtered));
                }
            }
            std::vector<RankResult> ranks;
            EvalOptions opt;
            opt.chunk_size = 5;
            const auto m = evaluate_split(scorer, store, split, policy, filter_for(store, policy), opt, &ranks);
            double mr = 0, mrr = 0;
            std::map<int, double> hits;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                if (ranks[i].rank != ref[i]) {
                    *why = "rank " + fmt(ranks[i].rank) + " != brute force " + fmt(ref[i]);
                    return false;
                }
                mr += ref[i];
                mrr += 1.0 / ref[i];
                for (int k : {1, 3, 10}) hits[k] += ref[i] <= k ? 1.0 : 0.0;
            }
            const double n = static_cast<double>(ref.size());
            bool same = m.mr == mr / n && m.mrr == mrr / n;
            for (int k : {1, 3, 10}) same = same && m.hits.at(k) == hits[k] / n;
            if (!same) {
                *why = "aggregate metrics differ from brute force";
                return false;
            }
        }
    }
    return true;
}

std::vector<double> random_levels(std::mt19937_64& rng, std::int32_t n, int levels) {
    std::vector<double> row(static_cast<std::size_t>(n));
    for (auto& v : row) v = static_cast<double>(static_cast<int>(rng() % static_cast<std::uint64_t>(levels)));
    return row;
}

/// Monotone invariance of rank_query on random rows.
bool rank_invariance(std::mt19937_64& rng, int cases, std::string* why) {
    const std::vector<std::function<double(double)>> transforms{
        [](double x) { return 3.0 * x - 1.0; },
        [](double x) { return x * x * x + x; },
        [](double x) { return std::exp(x / 3.0); },
        [](double x) { return std::tanh(x / 5.0); },
    };
    for (int c = 0; c < cases; ++c) {
        const auto n = static_cast<std::int32_t>(2 + rng() % 40);
        const auto row = random_levels(rng, n, 7);
        const auto target = static_cast<EntityId>(rng() % static_cast<std::uint64_t>(n));
        std::vector<EntityId> filter;
        for (EntityId e = 0; e < n; ++e)
            if (e != target && rng() % 3 == 0) filter.push_back(e);
        const double base = rank_query(row, target, filter).rank;
        const auto& f = transforms[rng() % transforms.size()];
        std::vector<double> mapped(row.size());
        std::transform(row.begin(), row.end(), mapped.begin(), f);
        const double now = rank_query(mapped, target, filter).rank;
        if (now != base) {
            *why = "case " + std::to_string(c) + ": " + fmt(base) + " became " + fmt(now);
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Synthetic separable KG shared by criteria 6, 7 and 9

// Five groups of ten; relation k moves step_k groups ahead and the third
// relation is the composition of the first two.
TripleStore synthetic_store() { return cluster_store(5, 10, {1, 2, 3}, 0.1, 2024); }

ModelConfig synthetic_model_config(const TripleStore& s) {
    ModelConfig c;
    c.num_entities = s.num_entities();
    c.num_relations = s.num_relations();
    c.dim = 8;
    c.layers = 2;
    c.decoder = DecoderKind::ConvE;
    c.attention = AttentionMode::KBGSAT;
    c.conve = ConvEShape{8, 3, 3, 2, 4};
    c.dropout = 0.1;
    return c;
}

TrainConfig synthetic_train_config() {
    TrainConfig tc;
    tc.lr = 0.005;
    tc.batch_size = 32;
    tc.epochs_max = 200;
    tc.patience = 200;
    tc.seed = 7;
    tc.workers = 1;
    return tc;
}

struct Pretrained {
    TripleStore store = synthetic_store();
    std::optional<Model<double>> model;
    FitResult fit;
};

Pretrained& pretrained() {
    static Pretrained p = [] {
        Pretrained r;
        Model<double> m(synthetic_model_config(r.store), 7);
        r.fit = fit<double>(m, r.store, r.store.train, synthetic_train_config());
        r.model = restore_model<double>(r.fit.best);
        return r;
    }();
    return p;
}

// ---------------------------------------------------------------------------
// Criteria

Outcome dataset_fidelity() {
    struct Expected {
        const char* name;
        std::int32_t entities, relations;
        std::size_t train, valid, test;
    };
    const Expected expected[] = {{"FB15k-237", 14541, 237, 272115, 17535, 20466},
                                 {"WN18RR", 40943, 11, 86835, 3034, 3134}};
    const char* env = std::getenv("KBGSAT_DATA_ROOT");
    const std::filesystem::path root = env ? env : std::filesystem::path(KBGSAT_SOURCE_DIR) / "data";
    std::vector<std::string> detail;
    for (const auto& e : expected) {
        const auto dir = root / e.name;
        if (!std::filesystem::exists(dir / "train.txt"))
            return Outcome::not_run(dir.string() + " not found; set KBGSAT_DATA_ROOT to a directory holding " +
                                    "FB15k-237/ and WN18RR/");
        const auto start = std::chrono::steady_clock::now();
        const auto s = load_dataset(dir);
        const double secs = seconds_since(start);
        std::ostringstream got;
        got << s.num_entities() << "/" << s.num_relations() << "/" << s.train.size() << "/" << s.valid.size() << "/"
            << s.test.size();
        const bool ok = s.num_entities() == e.entities && s.num_relations() == e.relations &&
                        s.train.size() == e.train && s.valid.size() == e.valid && s.test.size() == e.test;
        if (!ok) return Outcome::fail(std::string(e.name) + " loaded as " + got.str());
        if (secs >= 10.0) return Outcome::fail(std::string(e.name) + " took " + fmt(secs) + " s");
        detail.push_back(std::string(e.name) + " " + got.str() + " in " + fmt(secs, 2) + " s");
    }
    return Outcome::pass(joined(detail));
}

Outcome attention_normalisation() {
    std::mt19937_64 rng(31);
    std::size_t trials = 0;
    for (int t = 0; t < 30; ++t) {
        const auto n = static_cast<std::int32_t>(5 + rng() % 46);
        const auto m = static_cast<std::int32_t>(1 + rng() % 4);
        const auto s = random_store(n, m, static_cast<std::size_t>(n + rng() % (2 * n)), rng);
        for (auto mode : {AttentionMode::KBGSAT, AttentionMode::KBGAT}) {
            Model<double> model(toy_config(s, DecoderKind::DistMult, mode, 8), rng());
            const auto r = attention_normalised(model, s);
            if (r.status != Status::Pass) return r;
            ++trials;
        }
    }
    return Outcome::pass(std::to_string(trials) + " random graphs with |E| <= 50, both attention modes");
}

Outcome gradient_soundness() {
    std::mt19937_64 rng(41);
    const auto s = random_store(10, 2, 24, rng);
    std::vector<std::string> detail;
    for (auto kind : {DecoderKind::TransE, DecoderKind::DistMult, DecoderKind::ConvE}) {
        const std::string name(to_string(kind));
        const auto start = std::chrono::steady_clock::now();
        auto cfg = toy_config(s, kind, AttentionMode::KBGSAT, 8);
        cfg.dropout = 0.1;
        Model<double> model(cfg, 5);
        auto r = gradients_sound(model, s, 17);
        const double secs = seconds_since(start);
        if (r.status != Status::Pass) return Outcome::fail(name + ": " + r.detail);
        if (secs >= 60.0) return Outcome::fail(name + " took " + fmt(secs) + " s");
        detail.push_back(name + " " + r.detail + " (" + fmt(secs, 2) + " s)");
    }
    return Outcome::pass(joined(detail));
}

Outcome oracle_equivalence() {
    std::mt19937_64 rng(51);
    int tables = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const auto s = random_store(static_cast<std::int32_t>(4 + rng() % 25), 3, 50, rng, 0.2, 0.2);
        TableScorer scorer(s.num_entities());
        std::set<Query> seen;
        for (Split sp : {Split::Valid, Split::Test})
            for (const auto& [q, target] : split_queries(s, sp))
                if (seen.insert(q).second) scorer.set(q, random_levels(rng, s.num_entities(), 5));
        std::string why;
        if (!matches_brute_force(scorer, s, &why)) return Outcome::fail("table " + std::to_string(trial) + ": " + why);
        ++tables;
    }
    std::string why;
    const int cases = 500;
    if (!rank_invariance(rng, cases, &why)) return Outcome::fail(why);
    return Outcome::pass(std::to_string(tables) + " tie-heavy score tables, " + std::to_string(cases) +
                         " monotone transform cases");
}

Outcome generation_postconditions() {
    std::mt19937_64 rng(61);
    std::size_t generated = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const auto n = static_cast<std::int32_t>(3 + rng() % 20);
        const auto s = random_store(n, 2, static_cast<std::size_t>(3 * n), rng, 0.2, 0.2);
        if (s.valid.empty() && s.test.empty()) continue;
        const Split both[] = {Split::Valid, Split::Test};
        const auto pairs = build_condition_pairs(s, both);
        TableScorer scorer(n);
        std::map<Query, std::vector<double>> rows;
        for (const auto& q : pairs.pairs) scorer.set(q, rows[q] = random_levels(rng, n, 4));
        const auto known = known_tails(s.num_entities(), s.num_relations(), s.train);
        const auto gen = generate_new_triples(scorer, known, pairs, 1 + static_cast<int>(trial % 2));
        if (gen.triples.size() > pairs.pairs.size()) return Outcome::fail("more triples than condition pairs");
        const auto aug = augment(s);
        const std::set<Triple> aug_set(aug.triples.begin(), aug.triples.end());
        for (const auto& t : gen.triples) {
            if (aug_set.count(t)) return Outcome::fail("generated a triple already in augmented train");
            const auto ref = brute_force_known({&s.train}, t.head, t.relation, s.num_relations());
            const auto& row = rows.at({t.head, t.relation});
            for (EntityId c = 0; c < n; ++c) {
                if (ref.count(c) || c == t.tail) continue;
                const double a = row[static_cast<std::size_t>(t.tail)], b = row[static_cast<std::size_t>(c)];
                if (b > a || (b == a && c < t.tail)) return Outcome::fail("a better non-train candidate exists");
            }
        }
        generated += gen.triples.size();
    }
    return Outcome::pass(std::to_string(generated) + " generated triples checked on stubbed scorers");
}

Outcome desk_scale_learning() {
    const auto start = std::chrono::steady_clock::now();
    auto& p = pretrained();
    const double secs = seconds_since(start);
    const double baseline = random_baseline_mrr(p.store.num_entities());
    const double mrr = p.fit.best_valid_mrr;
    const std::string detail = "valid MRR " + fmt(mrr) + " vs 10 x baseline " + fmt(10 * baseline) + " (best epoch " +
                               std::to_string(p.fit.best_epoch) + " of " + std::to_string(p.fit.epochs_run) + ", " +
                               fmt(secs, 3) + " s)";
    if (secs >= 300.0) return Outcome::fail(detail + "; over the 5 minute budget");
    if (mrr < 10 * baseline) return Outcome::fail(detail);
    return Outcome::pass(detail);
}

Outcome self_training_pipeline() {
    auto& p = pretrained();
    auto tc = synthetic_train_config();
    SelfTrainConfig st;
    st.epochs = 60;
    const auto r = self_train<double>(*p.model, p.store, tc, st);
    auto retrained = restore_model<double>(r.fit.best);

    std::string detail = std::to_string(r.generated.size()) + " triples generated; ";
    if (auto a = attention_normalised(retrained, p.store); a.status != Status::Pass)
        return Outcome::fail("attention on the retrained model: " + a.detail);

    // Gradient soundness is checked on the retrained weights. Dropout stays as trained.
    if (auto g = gradients_sound(retrained, p.store, 3); g.status != Status::Pass)
        return Outcome::fail("gradients on the retrained model: " + g.detail);

    const auto index = build_graph_index(augment(p.store));
    ModelScorer<double> scorer(retrained, index);
    std::string why;
    if (!matches_brute_force(scorer, p.store, &why)) return Outcome::fail("ranking on the retrained model: " + why);
    std::mt19937_64 rng(71);
    if (!rank_invariance(rng, 100, &why)) return Outcome::fail(why);

    TempDir dir;
    write_triples(p.store, r.generated, dir / "train.txt");
    write_file(dir / "valid.txt", "");
    write_file(dir / "test.txt", "");
    const auto reloaded = load_dataset(dir.path());
    std::vector<Triple> back;
    for (const auto& t : reloaded.train)
        back.push_back({p.store.entities.find(reloaded.entities.name(t.head)),
                        p.store.relations.find(reloaded.relations.name(t.relation)),
                        p.store.entities.find(reloaded.entities.name(t.tail))});
    if (back != r.generated) return Outcome::fail("generated triples did not round-trip through the loader");

    const auto test = evaluate_split(scorer, p.store, Split::Test, FilterPolicy::Standard);
    detail += "retrained model passes attention, gradient and ranking checks; file round-trips; test MRR " +
              fmt(test.mrr);
    return Outcome::pass(detail);
}

Outcome full_scale_config() {
    const auto root = std::filesystem::path(KBGSAT_SOURCE_DIR);
    const auto conf = root / "configs" / "fb15k237_conve_l2.conf";
    if (!std::filesystem::exists(conf)) return Outcome::fail(conf.string() + " is missing");
    const auto c = load_run_config(conf);
    const bool exact = c.model.dim == 200 && c.model.decoder == DecoderKind::ConvE && c.model.layers == 2 &&
                       c.model.attention == AttentionMode::KBGSAT && c.train.lr == 0.001 &&
                       c.train.batch_size == 128 && c.model.dropout == 0.1 && c.train.epochs_max == 500 &&
                       c.train.patience == 20 && c.selftrain.epochs == 300 &&
                       c.train.filter == FilterPolicy::Standard;
    if (!exact) return Outcome::fail("shipped config differs from the published settings:\n" + c.echo());
    const auto readme = read_file(root / "README.md");
    for (const char* needle : {"fb15k237_conve_l2.conf", "0.4154", "0.3445", "0.5613", "217.6", "2 points",
                               "batch normalization"})
        if (readme.find(needle) == std::string::npos)
            return Outcome::fail(std::string("README does not document \"") + needle + "\"");
    return Outcome::pass("exact config shipped and tolerance documented; the multi-hour full-scale run itself was "
                         "not executed here");
}

Outcome determinism() {
    TempDir root;
    const auto s = modular_store(20, {1, 3, 4}, 0.2, 9);
    write_dataset(s, root / "data");
    write_file(root / "c.conf", "dataset = " + (root / "data").string() +
                                    "\ndim = 8\nepochs = 5\nbatch_size = 8\nlr = 0.01\ndropout = 0.2\n"
                                    "decoder = conve\nconve_reshape = 2x4\nworkers = 1\nselftrain_epochs = 3\n");
    auto run = [&](std::vector<std::string> args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        if (code != kExitOk) throw std::runtime_error(args[0] + " exited with " + std::to_string(code) + ": " + err.str());
    };
    std::vector<std::string> files;
    for (int rep = 0; rep < 2; ++rep) {
        const auto dir = root / ("rep" + std::to_string(rep));
        const std::string conf = (root / "c.conf").string();
        run({"train", "--config", conf, "--seed", "3", "--output", (dir / "train").string()});
        const auto ck = (dir / "train" / "checkpoint.kbg").string();
        run({"eval", "--config", conf, "--seed", "3", "--checkpoint", ck, "--output", (dir / "eval").string()});
        run({"selftrain", "--config", conf, "--seed", "3", "--checkpoint", ck, "--output", (dir / "st").string()});
        std::string blob;
        for (const char* f : {"train/checkpoint.kbg", "train/history.json", "eval/metrics.json", "eval/metrics.txt",
                              "st/checkpoint.kbg", "st/generated_triples.tsv", "st/history.json"})
            blob += read_file(dir / f) + '\0';
        files.push_back(blob);
    }
    if (files[0] != files[1]) return Outcome::fail("outputs of the two runs differ");
    return Outcome::pass("train, eval and selftrain outputs bit-identical across two runs (workers=1)");
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"dataset fidelity", dataset_fidelity},
        {"attention normalisation", attention_normalisation},
        {"gradient soundness", gradient_soundness},
        {"oracle equivalence", oracle_equivalence},
        {"generation postconditions", generation_postconditions},
        {"desk-scale learning", desk_scale_learning},
        {"self-training pipeline", self_training_pipeline},
        {"full-scale configuration", full_scale_config},
        {"determinism", determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream list(argv[++i]);
            std::string item;
            while (std::getline(list, item, ',')) only.insert(std::stoi(item));
        } else {
            std::cerr << "usage: acceptance [--only N[,M...]]\n";
            return 2;
        }
    }

    bool failed = false, skipped = false;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = criteria[i].second();
        } catch (const std::exception& e) {
            r = Outcome::fail(std::string("exception: ") + e.what());
        }
        const char* tag = r.status == Status::Pass ? "PASS" : r.status == Status::Fail ? "FAIL" : "NOT RUN";
        failed = failed || r.status == Status::Fail;
        skipped = skipped || r.status == Status::NotRun;
        std::cout << "[" << tag << "] " << id << ". " << criteria[i].first << ": " << r.detail << " ("
                  << fmt(seconds_since(start), 3) << " s)" << std::endl;
    }
    if (failed) return 1;
    return skipped && !only.empty() ? 77 : 0;
}
