#include "kbgsat/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "CLI11.hpp"

#include "kbgsat/checkpoint.hpp"
#include "kbgsat/evaluation.hpp"
#include "kbgsat/run_config.hpp"
#include "kbgsat/selftrain.hpp"
#include "kbgsat/trainer.hpp"

namespace fs = std::filesystem;

namespace kbgsat {

namespace {

struct Options {
    std::string config;
    // flag name -> config key, applied in this order over the file
    std::vector<std::pair<std::string, std::string>> overrides;
    std::vector<std::string> sets;

    std::string entity, relation, direction = "tail";
    std::size_t k = 10;
    bool include_known = false;
};

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + file.string());
    out << text;
    if (!text.empty() && text.back() != '\n') out << '\n';
    if (!out) throw DataError("write failed for " + file.string());
}

class Command {
public:
    Command(CLI::App& app, const std::string& name, const std::string& help) : cmd_(app.add_subcommand(name, help)) {
        cmd_->add_option("--config", opts.config, "key=value config file");
        flag("--dataset", "dataset", "dataset directory holding train/valid/test.txt");
        flag("--output", "output", "output directory");
        flag("--seed", "seed", "seed for every random stream");
        flag("--workers", "workers", "worker threads (1 is fully reproducible)");
        flag("--precision", "precision", "f32 or f64", {"f32", "f64"});
        flag("--decoder", "decoder", "decoder", {"transe", "distmult", "conve"});
        flag("--layers", "layers", "encoder layers", {"1", "2"});
        flag("--attention", "attention", "attention scheme", {"kbgsat", "kbgat"});
        flag("--filter", "filter", "ranking filter", {"train", "standard"});
        cmd_->add_option("--set", opts.sets, "extra key=value assignment, repeatable")
            ->expected(1)
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    }

    CLI::App* app() { return cmd_; }

    void flag(const std::string& name, const std::string& key, const std::string& help,
              std::vector<std::string> choices = {}) {
        auto* o = cmd_->add_option_function<std::string>(
            name, [this, key](const std::string& v) { opts.overrides.emplace_back(key, v); }, help);
        if (!choices.empty()) o->check(CLI::IsMember(choices));
    }

    RunConfig resolve() const {
        RunConfig config = opts.config.empty() ? RunConfig{} : load_run_config(opts.config);
        for (const auto& [key, value] : opts.overrides) config.set(key, value);
        for (const auto& s : opts.sets) apply_config_text(config, s, "--set");
        return config;
    }

    Options opts;

private:
    CLI::App* cmd_;
};

ModelConfig model_config_for(const RunConfig& config, const TripleStore& store) {
    ModelConfig mc = config.model;
    mc.num_entities = store.num_entities();
    mc.num_relations = store.num_relations();
    mc.validate();
    return mc;
}

void require_checkpoint(const RunConfig& config) {
    if (config.checkpoint.empty()) throw ConfigError("this command needs checkpoint = PATH (or --checkpoint)");
}

void check_matches(const Checkpoint& ck, const TripleStore& store) {
    if (ck.model.num_entities != store.num_entities() || ck.model.num_relations != store.num_relations())
        throw DataError("checkpoint was trained on " + std::to_string(ck.model.num_entities) + " entities and " +
                        std::to_string(ck.model.num_relations) + " relations, dataset has " +
                        std::to_string(store.num_entities()) + " and " + std::to_string(store.num_relations()));
}

template <typename Scalar>
int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
    LoadReport report;
    const TripleStore store = load_dataset(config.dataset, &report);
    const ModelConfig mc = model_config_for(config, store);
    TrainConfig tc = config.train;
    tc.config_hash = config.hash();
    tc.validate();
    if (store.valid.empty()) throw DataError("the valid split is empty; early stopping needs it");

    fs::create_directories(config.output);
    write_text(config.output / "config.txt", config.echo());
    write_text(config.output / "load_report.json", report.to_json(store));

    Model<Scalar> model(mc, tc.seed);
    const FitResult result = fit(model, store, store.train, tc, {}, &err);
    result.best.save(config.output / "checkpoint.kbg");
    write_text(config.output / "history.json", history_json(result.history));
    out << "best epoch " << result.best_epoch << " of " << result.epochs_run << ", valid MRR " << result.best_valid_mrr
        << "\nwrote " << (config.output / "checkpoint.kbg").string() << '\n';
    return kExitOk;
}

template <typename Scalar>
int cmd_selftrain(const RunConfig& config, std::ostream& out, std::ostream& err) {
    require_checkpoint(config);
    const Checkpoint ck = Checkpoint::load(config.checkpoint);
    LoadReport report;
    const TripleStore store = load_dataset(config.dataset, &report);
    check_matches(ck, store);
    TrainConfig tc = config.train;
    tc.config_hash = config.hash();
    tc.validate();
    if (store.valid.empty()) throw DataError("the valid split is empty; early stopping needs it");

    const Model<Scalar> pretrained = restore_model<Scalar>(ck);
    fs::create_directories(config.output);
    write_text(config.output / "config.txt", config.echo());
    write_text(config.output / "load_report.json", report.to_json(store));

    const auto result = self_train<Scalar>(pretrained, store, tc, config.selftrain, &err);
    write_triples(store, result.generated, config.output / "generated_triples.tsv");
    result.fit.best.save(config.output / "checkpoint.kbg");
    write_text(config.output / "history.json", history_json(result.fit.history));
    out << "generated " << result.generated.size() << " new triples; best epoch " << result.fit.best_epoch
        << ", valid MRR " << result.fit.best_valid_mrr << "\nwrote " << (config.output / "checkpoint.kbg").string()
        << '\n';
    return kExitOk;
}

template <typename Scalar>
int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream&) {
    require_checkpoint(config);
    const Checkpoint ck = Checkpoint::load(config.checkpoint);
    const TripleStore store = load_dataset(config.dataset);
    check_matches(ck, store);
    if (store.split(config.split).empty())
        throw DataError("split " + std::string(split_name(config.split)) + " is empty");

    const Model<Scalar> model = restore_model<Scalar>(ck);
    const auto index = build_graph_index(augment(store));
    ModelScorer<Scalar> scorer(model, index);
    EvalOptions options;
    options.workers = config.train.workers;
    const Metrics m = evaluate_split(scorer, store, config.split, config.train.filter, options);

    fs::create_directories(config.output);
    write_text(config.output / "metrics.json", m.to_json());
    write_text(config.output / "metrics.txt", std::string(split_name(config.split)) + " " + m.to_text());
    out << split_name(config.split) << ' ' << m.to_text() << '\n';
    return kExitOk;
}

std::int32_t resolve_name(const Dictionary& dict, const std::string& name, const char* what) {
    const std::int32_t id = dict.find(name);
    if (id >= 0) return id;
    std::string msg = std::string("unknown ") + what + " '" + name + "'";
    const auto near = dict.nearest(name, 5);
    if (!near.empty()) {
        msg += "; nearest: ";
        for (std::size_t i = 0; i < near.size(); ++i) msg += (i ? ", " : "") + near[i];
    }
    throw DataError(msg);
}

template <typename Scalar>
int cmd_predict(const RunConfig& config, const Options& opts, std::ostream& out, std::ostream&) {
    require_checkpoint(config);
    if (opts.entity.empty() || opts.relation.empty()) throw ConfigError("predict needs --entity and --relation");
    const Checkpoint ck = Checkpoint::load(config.checkpoint);
    const TripleStore store = load_dataset(config.dataset);
    check_matches(ck, store);
    const EntityId e = resolve_name(store.entities, opts.entity, "entity");
    RelationId r = resolve_name(store.relations, opts.relation, "relation");
    if (opts.direction == "head") r += store.num_relations();

    const Model<Scalar> model = restore_model<Scalar>(ck);
    const auto index = build_graph_index(augment(store));
    ModelScorer<Scalar> scorer(model, index);
    const Query q{e, r};
    const ScoreMatrix scores = scorer.score(std::span<const Query>(&q, 1));
    const Matrix<double> probs = probabilities<double>(scores);

    const Split train_only[] = {Split::Train};
    const KnownTails known = known_tails(store, train_only);
    const auto known_tails_of_q = known.tails(e, r);
    std::vector<EntityId> order;
    for (EntityId c = 0; c < store.num_entities(); ++c) {
        const bool is_known = std::binary_search(known_tails_of_q.begin(), known_tails_of_q.end(), c);
        if (!is_known || opts.include_known) order.push_back(c);
    }
    std::stable_sort(order.begin(), order.end(), [&](EntityId a, EntityId b) { return scores(0, a) > scores(0, b); });
    if (order.size() > opts.k) order.resize(opts.k);

    out << std::setprecision(6);
    for (EntityId c : order) {
        out << store.entities.name(c) << '\t' << probs(0, c);
        if (opts.include_known && std::binary_search(known_tails_of_q.begin(), known_tails_of_q.end(), c))
            out << "\tknown";
        out << '\n';
    }
    return kExitOk;
}

int cmd_export_dicts(const RunConfig& config, std::ostream& out) {
    const TripleStore store = load_dataset(config.dataset);
    export_dictionaries(store, config.output);
    out << "wrote " << store.num_entities() << " entities and " << store.num_relations() << " relations to "
        << config.output.string() << '\n';
    return kExitOk;
}

template <typename Scalar>
int dispatch(const std::string& name, const RunConfig& config, const Options& opts, std::ostream& out,
             std::ostream& err) {
    if (name == "train") return cmd_train<Scalar>(config, out, err);
    if (name == "selftrain") return cmd_selftrain<Scalar>(config, out, err);
    if (name == "eval") return cmd_eval<Scalar>(config, out, err);
    if (name == "predict") return cmd_predict<Scalar>(config, opts, out, err);
    return cmd_export_dicts(config, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Knowledge graph link prediction with relational graph attention", "kbgsat"};
    app.require_subcommand(1, 1);

    std::vector<std::unique_ptr<Command>> commands;
    auto add = [&](const std::string& name, const std::string& help) {
        commands.push_back(std::make_unique<Command>(app, name, help));
        return commands.back().get();
    };
    add("train", "train a model on the train split with early stopping on valid");
    auto* selftrain = add("selftrain", "generate triples with a trained model and retrain on the union");
    auto* eval = add("eval", "filtered ranking metrics of a checkpoint on one split");
    auto* predict = add("predict", "top-k completions of (entity, relation, ?)");
    add("export-dicts", "write entities.dict and relations.dict");

    for (auto* c : {selftrain, eval, predict}) c->flag("--checkpoint", "checkpoint", "checkpoint file");
    eval->flag("--split", "split", "split to evaluate", {"train", "valid", "test"});
    auto* p = predict->app();
    p->add_option("--entity", predict->opts.entity, "known entity name")->required();
    p->add_option("--relation", predict->opts.relation, "relation name")->required();
    p->add_option("--direction", predict->opts.direction, "predict the tail or the head")
        ->check(CLI::IsMember({"tail", "head"}));
    p->add_option("-k,--top", predict->opts.k, "rows to print")->check(CLI::PositiveNumber);
    p->add_flag("--include-known", predict->opts.include_known, "keep tails already known from train");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        Command* chosen = nullptr;
        for (auto& c : commands)
            if (c->app()->parsed()) chosen = c.get();
        const std::string name = chosen->app()->get_name();
        const RunConfig config = chosen->resolve();
        if (config.dataset.empty()) throw ConfigError("dataset is not set (use --dataset or dataset = DIR)");
        out << "# resolved config\n" << config.echo() << "# config hash " << config.hash() << '\n';
        out.flush();
        return config.precision == Precision::F64 ? dispatch<double>(name, config, chosen->opts, out, err)
                                                  : dispatch<float>(name, config, chosen->opts, out, err);
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const FormatError& e) {
        err << "checkpoint error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

}  // namespace kbgsat
