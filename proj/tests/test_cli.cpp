#include "doctest.h"

#include <sstream>

#include "json.hpp"

#include "kbgsat/checkpoint.hpp"
#include "kbgsat/cli.hpp"
#include "kbgsat/evaluation.hpp"
#include "kbgsat/run_config.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace kbgsat;
using namespace kbgsat::testing;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

// Four groups of three entities; a relation links whole groups.
struct Fixture {
    TempDir root;
    std::filesystem::path data = root / "data";
    std::filesystem::path config = root / "toy.conf";
    TripleStore store = cluster_store(4, 3, {1, 2}, 0.2, 21);

    Fixture() {
        write_dataset(store, data);
        write_file(config,
                   "# toy run\n"
                   "dataset = " + data.string() + "\n"
                   "decoder = conve\n"
                   "dim = 8\n"
                   "conve_channels = 8\n"
                   "conve_reshape = 2x4\n"
                   "lr = 0.005\n"
                   "batch_size = 8\n"
                   "epochs = 100\n"
                   "patience = 100\n"
                   "workers = 1\n"
                   "precision = f64\n"
                   "selftrain_epochs = 3\n");
    }

    std::vector<std::string> base(const std::string& cmd, const std::string& out) const {
        return {cmd, "--config", config.string(), "--output", (root / out).string()};
    }
};

}  // namespace

TEST_CASE("run config parsing") {
    RunConfig c;
    apply_config_text(c, "decoder = distmult  # comment\n\n layers=1\nconve_kernel = 2x4\nselftrain_sources = test\n", "t");
    CHECK(c.model.decoder == DecoderKind::DistMult);
    CHECK(c.model.layers == 1);
    CHECK(c.model.conve.kernel_h == 2);
    CHECK(c.model.conve.kernel_w == 4);
    CHECK(c.selftrain.sources == std::vector<Split>{Split::Test});
    CHECK_THROWS_AS(apply_config_text(c, "learning_rate = 0.1\n", "t"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "lr\n", "t"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "lr = fast\n", "t"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(c, "selftrain_sources = train\n", "t"), ConfigError);
    try {
        apply_config_text(c, "\n\nbogus = 1\n", "file.conf");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("file.conf:3") != std::string::npos);
    }

    for (const auto& key : RunConfig::keys()) CHECK(c.echo().find(key + " = ") != std::string::npos);
    RunConfig a, b;
    b.set("workers", "7");
    b.set("output", "elsewhere");
    CHECK(a.hash() == b.hash());
    b.set("seed", "5");
    CHECK(a.hash() != b.hash());
}

TEST_CASE("usage errors") {
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"train", "--decoder", "rescal", "--dataset", "x"}).code == kExitUsage);
    CHECK(cli({"train", "--layers", "3", "--dataset", "x"}).code == kExitUsage);
    CHECK(cli({"train"}).code == kExitUsage);
    CHECK(cli({"train", "--help"}).code == kExitOk);
    CHECK(cli({"train", "--dataset", "x", "--set", "nonsense=1"}).code == kExitUsage);
}

TEST_CASE("train, eval, selftrain, predict and export-dicts on a toy dataset") {
    Fixture f;
    const auto run_dir = f.root / "run1";

    auto r = cli(f.base("train", "run1"));
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("# resolved config") != std::string::npos);
    CHECK(r.out.find("decoder = conve") != std::string::npos);
    CHECK(std::filesystem::exists(run_dir / "checkpoint.kbg"));
    const auto history = nlohmann::json::parse(read_file(run_dir / "history.json"));
    CHECK(history.size() > 0);
    CHECK(nlohmann::json::parse(read_file(run_dir / "load_report.json"))["entities"] == 12);

    SUBCASE("same seed reproduces the checkpoint") {
        REQUIRE(cli(f.base("train", "run2")).code == kExitOk);
        CHECK(read_file(run_dir / "checkpoint.kbg") == read_file(f.root / "run2" / "checkpoint.kbg"));
        REQUIRE(cli(f.base("train", "run3")).code == kExitOk);
    }

    SUBCASE("eval matches the library") {
        auto args = f.base("eval", "eval");
        args.insert(args.end(), {"--checkpoint", (run_dir / "checkpoint.kbg").string(), "--split", "test"});
        r = cli(args);
        REQUIRE(r.code == kExitOk);
        const auto j = nlohmann::json::parse(read_file(f.root / "eval" / "metrics.json"));
        CHECK(j.contains("mr"));
        CHECK(j.contains("mrr"));
        CHECK(j["hits"].contains("1"));
        CHECK(j["hits"].contains("3"));
        CHECK(j["hits"].contains("10"));
        CHECK(j["filter_policy"] == "standard");

        const auto store = load_dataset(f.data);
        const auto model = restore_model<double>(Checkpoint::load(run_dir / "checkpoint.kbg"));
        const auto index = build_graph_index(augment(store));
        ModelScorer<double> scorer(model, index);
        const auto m = evaluate_split(scorer, store, Split::Test, FilterPolicy::Standard);
        CHECK(j["mrr"].get<double>() == m.mrr);
        CHECK(j["mr"].get<double>() == m.mr);
        CHECK(j["hits"]["10"].get<double>() == m.hits.at(10));

        args.back() = "dev";
        CHECK(cli(args).code == kExitUsage);
        args.back() = "valid";
        args.insert(args.end(), {"--filter", "train"});
        REQUIRE(cli(args).code == kExitOk);
        CHECK(nlohmann::json::parse(read_file(f.root / "eval" / "metrics.json"))["filter_policy"] == "train");
    }

    SUBCASE("selftrain") {
        auto args = f.base("selftrain", "st");
        CHECK(cli(args).code == kExitUsage);  // no checkpoint given
        args.insert(args.end(), {"--checkpoint", (run_dir / "checkpoint.kbg").string()});
        r = cli(args);
        INFO(r.err);
        REQUIRE(r.code == kExitOk);
        const auto gen_file = f.root / "st" / "generated_triples.tsv";
        REQUIRE(std::filesystem::exists(gen_file));
        CHECK(std::filesystem::exists(f.root / "st" / "checkpoint.kbg"));
        TempDir reload;
        std::filesystem::copy_file(gen_file, reload / "train.txt");
        write_file(reload / "valid.txt", "");
        write_file(reload / "test.txt", "");
        const auto gen = load_dataset(reload.path());
        CHECK(gen.train.size() > 0);

        args[4] = (f.root / "st2").string();
        args.insert(args.end(), {"--set", "selftrain_generate = false"});
        REQUIRE(cli(args).code == kExitOk);
        CHECK(read_file(f.root / "st2" / "generated_triples.tsv").empty());

        write_file(f.root / "bad.kbg", "NOTACKPT and some bytes");
        auto bad = f.base("selftrain", "st3");
        bad.insert(bad.end(), {"--checkpoint", (f.root / "bad.kbg").string()});
        r = cli(bad);
        CHECK(r.code == kExitData);
        CHECK(r.err.find("magic") != std::string::npos);
        bad.back() = (f.root / "missing.kbg").string();
        CHECK(cli(bad).code == kExitData);
    }

    SUBCASE("predict") {
        const auto& t = f.store.test.front();
        const std::string head = f.store.entities.name(t.head), rel = f.store.relations.name(t.relation);
        auto args = f.base("predict", "unused");
        args.insert(args.end(), {"--checkpoint", (run_dir / "checkpoint.kbg").string(), "--entity", head,
                                 "--relation", rel, "-k", "3"});
        r = cli(args);
        INFO(r.err);
        REQUIRE(r.code == kExitOk);
        std::istringstream lines(r.out.substr(r.out.find("# config hash")));
        std::string line;
        std::getline(lines, line);
        std::vector<std::pair<std::string, double>> rows;
        while (std::getline(lines, line)) {
            const auto tab = line.find('\t');
            rows.emplace_back(line.substr(0, tab), std::stod(line.substr(tab + 1)));
        }
        REQUIRE(rows.size() == 3);
        // The best unknown candidate lies in the target's group.
        CHECK(f.store.entities.find(rows[0].first) / 3 == t.tail / 3);
        CHECK(rows[0].second >= rows[1].second);
        CHECK(rows[1].second >= rows[2].second);

        const Split train[] = {Split::Train};
        const auto known = known_tails(f.store, train).tails(t.head, t.relation).size();
        args[args.size() - 1] = "50";
        r = cli(args);
        REQUIRE(r.code == kExitOk);
        auto body = r.out.substr(r.out.find("# config hash"));
        CHECK(static_cast<std::size_t>(std::count(body.begin(), body.end(), '\n')) == 1 + 12 - known);

        args.push_back("--include-known");
        r = cli(args);
        REQUIRE(r.code == kExitOk);
        body = r.out.substr(r.out.find("# config hash"));
        CHECK(std::count(body.begin(), body.end(), '\n') == 1 + 12);
        std::size_t marked = 0;
        for (auto pos = body.find("\tknown"); pos != std::string::npos; pos = body.find("\tknown", pos + 1)) ++marked;
        CHECK(marked == known);

        args = f.base("predict", "unused");
        args.insert(args.end(), {"--checkpoint", (run_dir / "checkpoint.kbg").string(), "--entity", "e99",
                                 "--relation", "r0"});
        r = cli(args);
        CHECK(r.code == kExitData);
        CHECK(r.err.find("nearest") != std::string::npos);
        CHECK(r.err.find("e9") != std::string::npos);
    }

    SUBCASE("export-dicts") {
        r = cli({"export-dicts", "--dataset", f.data.string(), "--output", (f.root / "dicts").string()});
        REQUIRE(r.code == kExitOk);
        CHECK(read_file(f.root / "dicts" / "relations.dict") == "0\tr0\n1\tr1\n");
    }
}

TEST_CASE("missing dataset fails without creating outputs") {
    TempDir root;
    const auto out = root / "never";
    const auto r = cli({"train", "--dataset", (root / "nope").string(), "--output", out.string()});
    CHECK(r.code == kExitData);
    CHECK_FALSE(std::filesystem::exists(out));
}

TEST_CASE("flags override the config file") {
    Fixture f;
    auto args = f.base("export-dicts", "d");
    args.insert(args.end(), {"--seed", "9", "--decoder", "distmult", "--layers", "2", "--attention", "kbgat",
                             "--filter", "train", "--workers", "3"});
    const auto r = cli(args);
    REQUIRE(r.code == kExitOk);
    for (const char* s : {"seed = 9", "decoder = distmult", "layers = 2", "attention = kbgat", "filter = train",
                          "workers = 3"})
        CHECK(r.out.find(s) != std::string::npos);
}
