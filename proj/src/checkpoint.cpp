#include "kbgsat/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace kbgsat {

namespace fs = std::filesystem;

std::string fnv1a_hex(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

template <typename T>
void put_le(std::string& out, T value) {
    auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    out.append(reinterpret_cast<const char*>(bits.data()), bits.size());
}

template <typename T>
T get_le(const char* p) {
    std::array<unsigned char, sizeof(T)> bits;
    std::memcpy(bits.data(), p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    return std::bit_cast<T>(bits);
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string manifest_text(const Checkpoint& ck) {
    std::ostringstream os;
    const auto& m = ck.model;
    os << "format=kbgsat-checkpoint\n"
       << "entities=" << m.num_entities << '\n'
       << "relations=" << m.num_relations << '\n'
       << "dim=" << m.dim << '\n'
       << "layers=" << m.layers << '\n'
       << "attention=" << to_string(m.attention) << '\n'
       << "activation=" << to_string(m.activation) << '\n'
       << "decoder=" << to_string(m.decoder) << '\n'
       << "conve_channels=" << m.conve.channels << '\n'
       << "conve_kernel=" << m.conve.kernel_h << 'x' << m.conve.kernel_w << '\n'
       << "conve_reshape=" << m.conve.rows << 'x' << m.conve.cols << '\n'
       << "dropout=" << format_double(m.dropout) << '\n'
       << "config_hash=" << ck.config_hash << '\n'
       << "epoch=" << ck.epoch << '\n'
       << "best_valid_mrr=" << format_double(ck.best_valid_mrr) << '\n'
       << "arrays=" << ck.arrays.size() << '\n';
    for (const auto& a : ck.arrays) os << "array=" << a.name << ' ' << a.rows << ' ' << a.cols << '\n';
    return os.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    if constexpr (std::is_floating_point_v<T>) {
        char* end = nullptr;
        value = static_cast<T>(std::strtod(text.c_str(), &end));
        if (end == text.c_str() || *end != '\0') throw CorruptionError("manifest: bad number for " + key);
    } else {
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc() || ptr != text.data() + text.size())
            throw CorruptionError("manifest: bad number for " + key);
    }
    return value;
}

std::pair<int, int> parse_pair(const std::string& key, const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos) throw CorruptionError("manifest: bad extent pair for " + key);
    return {parse_number<int>(key, text.substr(0, x)), parse_number<int>(key, text.substr(x + 1))};
}

}  // namespace

std::string Checkpoint::serialize() const {
    for (const auto& a : arrays)
        if (static_cast<std::int64_t>(a.data.size()) != a.rows * a.cols)
            throw ContractError("checkpoint array '" + a.name + "' has inconsistent extents");
    const std::string manifest = manifest_text(*this);
    std::string out;
    out.append(kCheckpointMagic);
    out.push_back(static_cast<char>(kCheckpointVersion));
    put_le<std::uint64_t>(out, manifest.size());
    out.append(manifest);
    for (const auto& a : arrays)
        for (float v : a.data) put_le<float>(out, v);
    return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
    if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
        throw FormatError("not a checkpoint (bad magic)");
    std::size_t pos = kCheckpointMagic.size();
    if (bytes.size() < pos + 1 + 8) throw CorruptionError("checkpoint header is truncated");
    const auto version = static_cast<std::uint8_t>(bytes[pos]);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    pos += 1;
    const auto manifest_len = get_le<std::uint64_t>(bytes.data() + pos);
    pos += 8;
    if (manifest_len > bytes.size() - pos) throw CorruptionError("checkpoint manifest is truncated");
    const std::string manifest(bytes.substr(pos, manifest_len));
    pos += manifest_len;

    std::map<std::string, std::string> kv;
    std::vector<std::string> array_lines;
    std::istringstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CorruptionError("manifest line without '=': " + line);
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "array")
            array_lines.push_back(value);
        else
            kv[key] = value;
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw CorruptionError("manifest is missing '" + key + "'");
        return it->second;
    };
    if (get("format") != "kbgsat-checkpoint") throw FormatError("unknown manifest format");

    Checkpoint ck;
    ck.model.num_entities = parse_number<std::int32_t>("entities", get("entities"));
    ck.model.num_relations = parse_number<std::int32_t>("relations", get("relations"));
    ck.model.dim = parse_number<int>("dim", get("dim"));
    ck.model.layers = parse_number<int>("layers", get("layers"));
    ck.model.attention = parse_attention(get("attention"));
    ck.model.activation = parse_activation(get("activation"));
    ck.model.decoder = parse_decoder(get("decoder"));
    ck.model.conve.channels = parse_number<int>("conve_channels", get("conve_channels"));
    std::tie(ck.model.conve.kernel_h, ck.model.conve.kernel_w) = parse_pair("conve_kernel", get("conve_kernel"));
    std::tie(ck.model.conve.rows, ck.model.conve.cols) = parse_pair("conve_reshape", get("conve_reshape"));
    ck.model.dropout = parse_number<double>("dropout", get("dropout"));
    ck.config_hash = get("config_hash");
    ck.epoch = parse_number<int>("epoch", get("epoch"));
    ck.best_valid_mrr = parse_number<double>("best_valid_mrr", get("best_valid_mrr"));
    const auto n_arrays = parse_number<std::size_t>("arrays", get("arrays"));
    if (n_arrays != array_lines.size()) throw CorruptionError("manifest array count disagrees with array entries");

    std::uint64_t expected = 0;
    for (const auto& entry : array_lines) {
        std::istringstream es(entry);
        NamedArray a;
        if (!(es >> a.name >> a.rows >> a.cols) || a.rows < 0 || a.cols < 0)
            throw CorruptionError("bad array entry: " + entry);
        expected += static_cast<std::uint64_t>(a.rows * a.cols) * sizeof(float);
        ck.arrays.push_back(std::move(a));
    }
    if (bytes.size() - pos != expected)
        throw CorruptionError("checkpoint payload has " + std::to_string(bytes.size() - pos) + " bytes, manifest needs " +
                              std::to_string(expected));
    for (auto& a : ck.arrays) {
        a.data.resize(static_cast<std::size_t>(a.rows * a.cols));
        for (auto& v : a.data) {
            v = get_le<float>(bytes.data() + pos);
            pos += sizeof(float);
        }
    }
    return ck;
}

void Checkpoint::save(const fs::path& path) const {
    const std::string bytes = serialize();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

Checkpoint Checkpoint::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

}  // namespace kbgsat
