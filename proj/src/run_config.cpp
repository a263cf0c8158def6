#include "kbgsat/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "kbgsat/checkpoint.hpp"
#include "kbgsat/parallel.hpp"

namespace kbgsat {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("'" + key + "' expects true or false, got '" + value + "'");
}

// "AxB" -> (A, B)
std::pair<int, int> parse_pair(const std::string& key, const std::string& value) {
    const auto x = value.find('x');
    if (x == std::string::npos) throw ConfigError("'" + key + "' expects AxB, got '" + value + "'");
    return {parse_number<int>(key, value.substr(0, x)), parse_number<int>(key, value.substr(x + 1))};
}

// Shortest text that reads back to the same double.
std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string join_splits(const std::vector<Split>& splits) {
    std::string out;
    for (Split s : splits) {
        if (!out.empty()) out += ',';
        out += split_name(s);
    }
    return out;
}

struct Entry {
    std::string key;
    bool affects_results;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<Entry>& table() {
    static const std::vector<Entry> entries = [] {
        std::vector<Entry> e;
        auto add = [&](std::string key, bool affects, auto set, auto get) {
            e.push_back({std::move(key), affects, set, get});
        };
        add("dataset", true, [](RunConfig& c, const std::string& v) { c.dataset = v; },
            [](const RunConfig& c) { return c.dataset.string(); });
        add("output", false, [](RunConfig& c, const std::string& v) { c.output = v; },
            [](const RunConfig& c) { return c.output.string(); });
        add("checkpoint", false, [](RunConfig& c, const std::string& v) { c.checkpoint = v; },
            [](const RunConfig& c) { return c.checkpoint.string(); });
        add("split", false, [](RunConfig& c, const std::string& v) { c.split = parse_split(v); },
            [](const RunConfig& c) { return std::string(split_name(c.split)); });
        add("precision", true,
            [](RunConfig& c, const std::string& v) {
                if (v == "f32") c.precision = Precision::F32;
                else if (v == "f64") c.precision = Precision::F64;
                else throw ConfigError("precision must be f32 or f64, got '" + v + "'");
            },
            [](const RunConfig& c) { return std::string(c.precision == Precision::F32 ? "f32" : "f64"); });
        add("seed", true, [](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); });
        add("workers", false,
            [](RunConfig& c, const std::string& v) {
                c.train.workers = parse_number<int>("workers", v);
                if (c.train.workers < 1) throw ConfigError("workers must be at least 1");
            },
            [](const RunConfig& c) { return std::to_string(c.train.workers); });
        add("decoder", true, [](RunConfig& c, const std::string& v) { c.model.decoder = parse_decoder(v); },
            [](const RunConfig& c) { return std::string(to_string(c.model.decoder)); });
        add("layers", true, [](RunConfig& c, const std::string& v) { c.model.layers = parse_number<int>("layers", v); },
            [](const RunConfig& c) { return std::to_string(c.model.layers); });
        add("attention", true, [](RunConfig& c, const std::string& v) { c.model.attention = parse_attention(v); },
            [](const RunConfig& c) { return std::string(to_string(c.model.attention)); });
        add("activation", true, [](RunConfig& c, const std::string& v) { c.model.activation = parse_activation(v); },
            [](const RunConfig& c) { return std::string(to_string(c.model.activation)); });
        add("dim", true, [](RunConfig& c, const std::string& v) { c.model.dim = parse_number<int>("dim", v); },
            [](const RunConfig& c) { return std::to_string(c.model.dim); });
        add("dropout", true, [](RunConfig& c, const std::string& v) { c.model.dropout = parse_number<double>("dropout", v); },
            [](const RunConfig& c) { return format_double(c.model.dropout); });
        add("conve_channels", true,
            [](RunConfig& c, const std::string& v) { c.model.conve.channels = parse_number<int>("conve_channels", v); },
            [](const RunConfig& c) { return std::to_string(c.model.conve.channels); });
        add("conve_kernel", true,
            [](RunConfig& c, const std::string& v) {
                std::tie(c.model.conve.kernel_h, c.model.conve.kernel_w) = parse_pair("conve_kernel", v);
            },
            [](const RunConfig& c) {
                return std::to_string(c.model.conve.kernel_h) + "x" + std::to_string(c.model.conve.kernel_w);
            });
        add("conve_reshape", true,
            [](RunConfig& c, const std::string& v) {
                std::tie(c.model.conve.rows, c.model.conve.cols) = parse_pair("conve_reshape", v);
            },
            [](const RunConfig& c) {
                return std::to_string(c.model.conve.rows) + "x" + std::to_string(c.model.conve.cols);
            });
        add("lr", true, [](RunConfig& c, const std::string& v) { c.train.lr = parse_number<double>("lr", v); },
            [](const RunConfig& c) { return format_double(c.train.lr); });
        add("batch_size", true,
            [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_number<int>("batch_size", v); },
            [](const RunConfig& c) { return std::to_string(c.train.batch_size); });
        add("epochs", true, [](RunConfig& c, const std::string& v) { c.train.epochs_max = parse_number<int>("epochs", v); },
            [](const RunConfig& c) { return std::to_string(c.train.epochs_max); });
        add("patience", true, [](RunConfig& c, const std::string& v) { c.train.patience = parse_number<int>("patience", v); },
            [](const RunConfig& c) { return std::to_string(c.train.patience); });
        add("label_smoothing", true,
            [](RunConfig& c, const std::string& v) { c.train.label_smoothing = parse_number<double>("label_smoothing", v); },
            [](const RunConfig& c) { return format_double(c.train.label_smoothing); });
        add("filter", true, [](RunConfig& c, const std::string& v) { c.train.filter = parse_filter(v); },
            [](const RunConfig& c) { return std::string(to_string(c.train.filter)); });
        add("selftrain_sources", true,
            [](RunConfig& c, const std::string& v) {
                std::vector<Split> splits;
                std::stringstream ss(v);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    const Split s = parse_split(trim(item));
                    if (s == Split::Train) throw ConfigError("selftrain_sources may only list valid and test");
                    splits.push_back(s);
                }
                if (splits.empty()) throw ConfigError("selftrain_sources must name at least one split");
                c.selftrain.sources = splits;
            },
            [](const RunConfig& c) { return join_splits(c.selftrain.sources); });
        add("selftrain_rounds", true,
            [](RunConfig& c, const std::string& v) { c.selftrain.rounds = parse_number<int>("selftrain_rounds", v); },
            [](const RunConfig& c) { return std::to_string(c.selftrain.rounds); });
        add("selftrain_epochs", true,
            [](RunConfig& c, const std::string& v) { c.selftrain.epochs = parse_number<int>("selftrain_epochs", v); },
            [](const RunConfig& c) { return std::to_string(c.selftrain.epochs); });
        add("selftrain_warm_start", true,
            [](RunConfig& c, const std::string& v) { c.selftrain.warm_start = parse_bool("selftrain_warm_start", v); },
            [](const RunConfig& c) { return std::string(c.selftrain.warm_start ? "true" : "false"); });
        add("selftrain_generate", true,
            [](RunConfig& c, const std::string& v) { c.selftrain.generate = parse_bool("selftrain_generate", v); },
            [](const RunConfig& c) { return std::string(c.selftrain.generate ? "true" : "false"); });
        return e;
    }();
    return entries;
}

const Entry* find_entry(const std::string& key) {
    for (const auto& e : table())
        if (e.key == key) return &e;
    return nullptr;
}

}  // namespace

RunConfig::RunConfig() { train.workers = default_workers(); }

void RunConfig::set(const std::string& key, const std::string& value) {
    const Entry* e = find_entry(key);
    if (!e) throw ConfigError("unknown config key '" + key + "'");
    e->set(*this, value);
}

std::string RunConfig::echo() const {
    std::string out;
    for (const auto& e : table()) out += e.key + " = " + e.get(*this) + "\n";
    return out;
}

std::string RunConfig::hash() const {
    std::string text;
    for (const auto& e : table())
        if (e.affects_results) text += e.key + "=" + e.get(*this) + "\n";
    return fnv1a_hex(text);
}

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out;
        for (const auto& e : table()) out.push_back(e.key);
        return out;
    }();
    return k;
}

void apply_config_text(RunConfig& config, std::string_view text, const std::string& source) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(number) + ": expected key = value");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        try {
            config.set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(number) + ": " + e.what());
        }
    }
}

RunConfig load_run_config(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    RunConfig config;
    apply_config_text(config, ss.str(), file.string());
    return config;
}

}  // namespace kbgsat
