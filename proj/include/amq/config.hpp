#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace amq {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Flat key=value configuration: defaults, overlaid by an optional file, then
// by environment variables (key "train.epochs" reads AMQ_TRAIN_EPOCHS).
// Unknown keys in the file are errors; the effective map hashes canonically.
class ConfigMap {
public:
    static ConfigMap defaults();
    static ConfigMap load(const std::string& path_or_empty);

    const std::string& get(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    int64_t get_int(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;

    uint64_t hash() const;
    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
    void apply_env();
};

enum class RunMode { Targeted, Random, Uniform };

RunMode parse_mode(const std::string& s);
const char* mode_name(RunMode m);

struct SweepPoint {
    RunMode mode = RunMode::Targeted;
    std::vector<double> alphas;
};

// "mode:a1,a2;mode:a1,a2;..." with one alpha per quantization level.
std::vector<SweepPoint> parse_sweep_points(const std::string& s, size_t n_levels);

}  // namespace amq
