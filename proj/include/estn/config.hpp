#pragma once

#include <map>
#include <string>
#include <vector>

#include "estn/network.hpp"

namespace estn {

// Flat `key = value` text with '#' comments. Appliers consume the keys they
// understand; whatever is left over is rejected by the caller, so unknown
// keys never pass silently.
struct KvConfig {
    std::map<std::string, std::string> values;

    bool has(const std::string& k) const { return values.count(k) != 0; }
    // Returns and consumes the key.
    bool take(const std::string& k, std::string& out);
    void set(const std::string& k, const std::string& v) { values[k] = v; }
    void reject_unknown(const std::string& context) const;
};

KvConfig parse_kv_text(const std::string& text);
KvConfig parse_kv_file(const std::string& path);

// Model keys: channels, blocks, scale, windows, bsgm_window, train_patch,
// bsgm_enabled, lrcab_variant, share_scores.
void apply_model_keys(KvConfig& kv, ModelConfig& cfg);
std::string model_config_text(const ModelConfig& cfg);

struct TrainConfig {
    std::int64_t batch = 64;
    std::int64_t patch = 64;  // LR-space crop; mirrors ModelConfig::train_patch
    double lr0 = 2e-4;
    std::vector<std::int64_t> milestones{250, 400, 425, 450, 475};
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-8;
    std::int64_t iterations = 500;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 0;  // 0: only initial + final

    void validate() const;
};

// Train keys: batch_size, learning_rate, milestones, beta1, beta2, adam_eps,
// weight_decay, iterations, seed, checkpoint_every.
void apply_train_keys(KvConfig& kv, TrainConfig& cfg);

}  // namespace estn
