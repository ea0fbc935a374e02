#include "amq/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace amq {

namespace {

struct Default {
    const char* key;
    const char* value;
};

// Every recognized key with its default. Keys mirror module names.
const Default kDefaults[] = {
    {"data.path", "darcy.jsonl"},
    {"data.grid_n", "32"},
    {"data.stride", "2"},
    {"data.knn_k", "5"},
    {"data.n_train", "200"},
    {"data.n_val", "50"},
    {"data.seed", "7"},
    {"model.hidden", "24"},
    {"model.layers", "2"},
    {"model.w_bits", "8"},
    {"model.b0", "4"},
    {"model.use_segments", "0"},
    {"aux.hidden", "32"},
    {"aux.layers", "3"},
    {"aux.bits", "8"},
    {"train.epochs", "30"},
    {"train.batch", "4"},
    {"train.lr_main", "0.003"},
    {"train.lr_aux", "0.003"},
    {"train.warmup_epochs", "2"},
    {"train.levels", "4,8"},
    {"train.alphas", "0.5,0.5"},
    {"train.calib_steps", "200"},
    {"train.ema_decay", "0.99"},
    {"train.seed", "1"},
    {"train.mode", "targeted"},
    {"train.eval_every", "5"},
    {"train.diffuse_steps", "10"},
    {"out.dir", "out"},
    {"sweep.points", "uniform:0,1;uniform:1,0;targeted:0.5,0.5;random:0.5,0.5"},
    {"sweep.seeds", "1,2,3"},
    {"sweep.plot", "0"},
};

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string env_name(const std::string& key) {
    std::string out = "AMQ_";
    for (char c : key)
        out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(trim(cur));
    return out;
}

}  // namespace

ConfigMap ConfigMap::defaults() {
    ConfigMap m;
    for (const auto& d : kDefaults) m.kv_[d.key] = d.value;
    m.apply_env();
    return m;
}

ConfigMap ConfigMap::load(const std::string& path_or_empty) {
    ConfigMap m;
    for (const auto& d : kDefaults) m.kv_[d.key] = d.value;
    if (!path_or_empty.empty()) {
        std::ifstream in(path_or_empty);
        if (!in) throw ConfigError("config: cannot open " + path_or_empty);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config: line " + std::to_string(lineno) +
                                  " is not key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (m.kv_.find(key) == m.kv_.end())
                throw ConfigError("config: unknown key '" + key + "' on line " +
                                  std::to_string(lineno));
            m.kv_[key] = value;
        }
    }
    m.apply_env();
    return m;
}

void ConfigMap::apply_env() {
    for (auto& [key, value] : kv_) {
        const char* env = std::getenv(env_name(key).c_str());
        if (env) value = env;
    }
}

const std::string& ConfigMap::get(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
}

void ConfigMap::set(const std::string& key, const std::string& value) {
    if (kv_.find(key) == kv_.end()) throw ConfigError("config: unknown key '" + key + "'");
    kv_[key] = value;
}

int64_t ConfigMap::get_int(const std::string& key) const {
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not an integer: " + get(key));
    }
}

uint64_t ConfigMap::get_u64(const std::string& key) const {
    try {
        size_t pos = 0;
        const uint64_t v = std::stoull(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not an unsigned integer: " + get(key));
    }
}

double ConfigMap::get_double(const std::string& key) const {
    try {
        size_t pos = 0;
        const double v = std::stod(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' is not a number: " + get(key));
    }
}

bool ConfigMap::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: " + v);
}

std::vector<int> ConfigMap::get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& tok : split(get(key), ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' has a non-integer entry: " + tok);
        }
    }
    if (out.empty()) throw ConfigError("config: key '" + key + "' is an empty list");
    return out;
}

std::vector<double> ConfigMap::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : split(get(key), ',')) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' has a non-numeric entry: " + tok);
        }
    }
    if (out.empty()) throw ConfigError("config: key '" + key + "' is an empty list");
    return out;
}

uint64_t ConfigMap::hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [k, v] : kv_) h = fnv1a(k + "=" + v + "\n", h);
    return h;
}

RunMode parse_mode(const std::string& s) {
    if (s == "targeted") return RunMode::Targeted;
    if (s == "random") return RunMode::Random;
    if (s == "uniform") return RunMode::Uniform;
    throw ConfigError("config: unknown mode '" + s + "'");
}

const char* mode_name(RunMode m) {
    switch (m) {
        case RunMode::Targeted: return "targeted";
        case RunMode::Random: return "random";
        default: return "uniform";
    }
}

std::vector<SweepPoint> parse_sweep_points(const std::string& s, size_t n_levels) {
    std::vector<SweepPoint> out;
    for (const auto& entry : split(s, ';')) {
        if (entry.empty()) continue;
        const size_t colon = entry.find(':');
        if (colon == std::string::npos)
            throw ConfigError("config: sweep point '" + entry + "' is not mode:alphas");
        SweepPoint p;
        p.mode = parse_mode(trim(entry.substr(0, colon)));
        for (const auto& tok : split(entry.substr(colon + 1), ',')) {
            try {
                p.alphas.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw ConfigError("config: sweep point '" + entry + "' has a bad ratio");
            }
        }
        if (p.alphas.size() != n_levels)
            throw ConfigError("config: sweep point '" + entry + "' needs one ratio per level");
        out.push_back(std::move(p));
    }
    if (out.empty()) throw ConfigError("config: sweep grid is empty");
    return out;
}

}  // namespace amq
