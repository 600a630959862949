#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace odvqa {

/// Raised for malformed or invalid configuration; `key` names the offending field.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& message)
        : std::runtime_error(message), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

enum class Backbone { spherical, standard };
enum class SfiMode { selective, sum, sum_ca, concat, concat_ca };
enum class MftnMode { nonlocal, off };
enum class Precision { f32, f64 };

struct ModelConfig {
    std::size_t channels = 16;
    std::array<std::size_t, 3> stage_blocks{3, 4, 6};
    std::size_t reduction = 8;
    Backbone backbone = Backbone::spherical;
    bool long_skip = true;
    bool spatial_attention = true;
    SfiMode sfi_mode = SfiMode::selective;
    bool mpaq_enabled = true;
    std::size_t mpaq_blocks = 1;
    MftnMode mftn_mode = MftnMode::nonlocal;
    std::size_t embed_channels = 0;  // 0 selects channels / 2
    bool normalize_similarity = false;

    std::size_t effective_embed_channels() const { return embed_channels ? embed_channels : channels / 2; }
    void validate() const;
};

struct TrainConfig {
    double learning_rate = 3e-4;
    double weight_decay = 5e-5;
    std::size_t batch_size = 6;
    std::size_t iterations = 2000;
    std::size_t clips = 6;           // S
    std::size_t frame_interval = 3;  // delta t
    std::uint64_t seed = 1;
    Precision precision = Precision::f32;
    ModelConfig model;

    void validate() const;
};

/// Ordered key=value pairs from a flat text file; '#' starts a comment.
struct KeyValues {
    struct Entry {
        std::string key, value;
        std::size_t line = 0;
    };
    std::vector<Entry> entries;

    static KeyValues parse(const std::string& text);
    static KeyValues load(const std::filesystem::path& path);
    const Entry* find(const std::string& key) const;
};

/// Applies one key; returns false when the key is not a model/training field.
bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Canonical text form (one key=value per line, fixed order).
std::string to_text(const TrainConfig& cfg);
std::string to_text(const ModelConfig& cfg);

/// Reads a model config back from to_text(ModelConfig) output.
ModelConfig model_config_from_text(const std::string& text);
TrainConfig train_config_from_text(const std::string& text);

std::uint64_t fnv1a64(const std::string& text);
std::string hex64(std::uint64_t v);

std::string to_string(Backbone v);
std::string to_string(SfiMode v);
std::string to_string(MftnMode v);

// Typed field parsers shared by the config readers; they throw ConfigError naming the key.
double parse_real(const std::string& key, const std::string& value);
std::uint64_t parse_uint(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

}  // namespace odvqa
