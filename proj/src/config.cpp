#include "odvqa/config.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace odvqa {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void require(bool ok, const std::string& key, const std::string& message) {
    if (!ok) throw ConfigError(key, key + ": " + message);
}

std::string fmt_real(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key, key + ": expected a real number, got '" + value + "'");
    }
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, v);
    if (ec != std::errc() || ptr != end || value.empty())
        throw ConfigError(key, key + ": expected a non-negative integer, got '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError(key, key + ": expected true or false, got '" + value + "'");
}

std::string to_string(Backbone v) { return v == Backbone::spherical ? "spherical" : "standard"; }

std::string to_string(SfiMode v) {
    switch (v) {
        case SfiMode::selective: return "selective";
        case SfiMode::sum: return "sum";
        case SfiMode::sum_ca: return "sum_ca";
        case SfiMode::concat: return "concat";
        case SfiMode::concat_ca: return "concat_ca";
    }
    return "selective";
}

std::string to_string(MftnMode v) { return v == MftnMode::nonlocal ? "nonlocal" : "off"; }

void ModelConfig::validate() const {
    require(channels >= 1, "channels", "must be at least 1");
    require(reduction >= 1, "reduction", "must be at least 1");
    require(channels % reduction == 0, "reduction",
            "must divide channels (" + std::to_string(channels) + " % " + std::to_string(reduction) + " != 0)");
    for (std::size_t n : stage_blocks) require(n >= 1, "stage_blocks", "every stage needs at least one block");
    require(mpaq_blocks >= 1, "mpaq_blocks", "must be at least 1");
    const std::size_t c0 = effective_embed_channels();
    require(c0 >= 1 && c0 <= channels, "embed_channels", "must lie in [1, channels]");
}

void TrainConfig::validate() const {
    model.validate();
    require(learning_rate > 0, "learning_rate", "must be positive");
    require(weight_decay >= 0, "weight_decay", "must be non-negative");
    require(batch_size >= 2, "batch_size", "must be at least 2 (batch normalization needs two samples)");
    require(iterations >= 1, "iterations", "must be at least 1");
    require(clips >= 1, "clips", "must be at least 1");
    require(frame_interval >= 1, "frame_interval", "must be at least 1");
}

KeyValues KeyValues::parse(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(n), "line " + std::to_string(n) + ": expected key=value");
        Entry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), n};
        if (e.key.empty()) throw ConfigError("line " + std::to_string(n), "line " + std::to_string(n) + ": empty key");
        if (kv.find(e.key)) throw ConfigError(e.key, e.key + ": given twice (line " + std::to_string(n) + ")");
        kv.entries.push_back(std::move(e));
    }
    return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config", "cannot read config file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

const KeyValues::Entry* KeyValues::find(const std::string& key) const {
    for (const auto& e : entries)
        if (e.key == key) return &e;
    return nullptr;
}

bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
    ModelConfig& m = cfg.model;
    if (key == "learning_rate") cfg.learning_rate = parse_real(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_real(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_uint(key, value);
    else if (key == "iterations") cfg.iterations = parse_uint(key, value);
    else if (key == "clips") cfg.clips = parse_uint(key, value);
    else if (key == "frame_interval") cfg.frame_interval = parse_uint(key, value);
    else if (key == "seed") cfg.seed = parse_uint(key, value);
    else if (key == "precision") {
        if (value == "32") cfg.precision = Precision::f32;
        else if (value == "64") cfg.precision = Precision::f64;
        else throw ConfigError(key, key + ": expected 32 or 64, got '" + value + "'");
    } else if (key == "channels") m.channels = parse_uint(key, value);
    else if (key == "reduction") m.reduction = parse_uint(key, value);
    else if (key == "stage_blocks") {
        std::istringstream in(value);
        std::string part;
        std::size_t i = 0;
        while (std::getline(in, part, ',')) {
            if (i >= 3) throw ConfigError(key, key + ": expected three comma-separated counts");
            m.stage_blocks[i++] = parse_uint(key, trim(part));
        }
        if (i != 3) throw ConfigError(key, key + ": expected three comma-separated counts");
    } else if (key == "backbone") {
        if (value == "spherical") m.backbone = Backbone::spherical;
        else if (value == "standard") m.backbone = Backbone::standard;
        else throw ConfigError(key, key + ": expected spherical or standard, got '" + value + "'");
    } else if (key == "long_skip") m.long_skip = parse_bool(key, value);
    else if (key == "spatial_attention") m.spatial_attention = parse_bool(key, value);
    else if (key == "sfi_mode") {
        if (value == "selective") m.sfi_mode = SfiMode::selective;
        else if (value == "sum") m.sfi_mode = SfiMode::sum;
        else if (value == "sum_ca") m.sfi_mode = SfiMode::sum_ca;
        else if (value == "concat") m.sfi_mode = SfiMode::concat;
        else if (value == "concat_ca") m.sfi_mode = SfiMode::concat_ca;
        else throw ConfigError(key, key + ": expected selective, sum, sum_ca, concat or concat_ca, got '" + value + "'");
    } else if (key == "mpaq") m.mpaq_enabled = parse_bool(key, value);
    else if (key == "mpaq_blocks") m.mpaq_blocks = parse_uint(key, value);
    else if (key == "mftn_mode") {
        if (value == "nonlocal") m.mftn_mode = MftnMode::nonlocal;
        else if (value == "off") m.mftn_mode = MftnMode::off;
        else throw ConfigError(key, key + ": expected nonlocal or off, got '" + value + "'");
    } else if (key == "embed_channels") m.embed_channels = parse_uint(key, value);
    else if (key == "normalize_similarity") m.normalize_similarity = parse_bool(key, value);
    else return false;
    return true;
}

std::string to_text(const ModelConfig& m) {
    std::ostringstream os;
    os << "channels=" << m.channels << '\n'
       << "stage_blocks=" << m.stage_blocks[0] << ',' << m.stage_blocks[1] << ',' << m.stage_blocks[2] << '\n'
       << "reduction=" << m.reduction << '\n'
       << "backbone=" << to_string(m.backbone) << '\n'
       << "long_skip=" << (m.long_skip ? "true" : "false") << '\n'
       << "spatial_attention=" << (m.spatial_attention ? "true" : "false") << '\n'
       << "sfi_mode=" << to_string(m.sfi_mode) << '\n'
       << "mpaq=" << (m.mpaq_enabled ? "true" : "false") << '\n'
       << "mpaq_blocks=" << m.mpaq_blocks << '\n'
       << "mftn_mode=" << to_string(m.mftn_mode) << '\n'
       << "embed_channels=" << m.embed_channels << '\n'
       << "normalize_similarity=" << (m.normalize_similarity ? "true" : "false") << '\n';
    return os.str();
}

std::string to_text(const TrainConfig& c) {
    std::ostringstream os;
    os << "learning_rate=" << fmt_real(c.learning_rate) << '\n'
       << "weight_decay=" << fmt_real(c.weight_decay) << '\n'
       << "batch_size=" << c.batch_size << '\n'
       << "iterations=" << c.iterations << '\n'
       << "clips=" << c.clips << '\n'
       << "frame_interval=" << c.frame_interval << '\n'
       << "seed=" << c.seed << '\n'
       << "precision=" << (c.precision == Precision::f32 ? "32" : "64") << '\n'
       << to_text(c.model);
    return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
    TrainConfig tc;
    for (const auto& e : KeyValues::parse(text).entries)
        if (!apply_train_key(tc, e.key, e.value)) throw ConfigError(e.key, "unknown model key '" + e.key + "'");
    tc.model.validate();
    return tc.model;
}

TrainConfig train_config_from_text(const std::string& text) {
    TrainConfig tc;
    for (const auto& e : KeyValues::parse(text).entries)
        if (!apply_train_key(tc, e.key, e.value)) throw ConfigError(e.key, "unknown training key '" + e.key + "'");
    tc.model.validate();
    return tc;
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

}  // namespace odvqa
