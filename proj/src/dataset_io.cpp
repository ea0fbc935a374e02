#include "amq/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "amq/version.hpp"

namespace amq {

using nlohmann::json;

namespace {

json sample_to_json(const MeshSample& s, const char* split) {
    json j;
    j["split"] = split;
    json pos = json::array();
    for (int r = 0; r < s.pos.rows(); ++r) pos.push_back({s.pos(r, 0), s.pos(r, 1)});
    j["pos"] = std::move(pos);
    j["src"] = s.graph.src;
    j["dst"] = s.graph.dst;
    json feat = json::array(), target = json::array();
    for (int r = 0; r < s.feat.rows(); ++r) feat.push_back(s.feat(r, 0));
    for (int r = 0; r < s.target.rows(); ++r) target.push_back(s.target(r, 0));
    j["feat"] = std::move(feat);
    j["target"] = std::move(target);
    return j;
}

MeshSample sample_from_json(const json& j) {
    MeshSample s;
    const auto& pos = j.at("pos");
    const int n = static_cast<int>(pos.size());
    s.pos = Matrix<double>(n, 2);
    for (int r = 0; r < n; ++r) {
        s.pos(r, 0) = pos[r].at(0).get<double>();
        s.pos(r, 1) = pos[r].at(1).get<double>();
    }
    s.feat = Matrix<double>(n, 1);
    s.target = Matrix<double>(n, 1);
    const auto& feat = j.at("feat");
    const auto& target = j.at("target");
    if (static_cast<int>(feat.size()) != n || static_cast<int>(target.size()) != n)
        throw std::runtime_error("dataset: node array lengths disagree");
    for (int r = 0; r < n; ++r) {
        s.feat(r, 0) = feat[r].get<double>();
        s.target(r, 0) = target[r].get<double>();
    }
    s.graph.n_nodes = n;
    s.graph.src = j.at("src").get<std::vector<int>>();
    s.graph.dst = j.at("dst").get<std::vector<int>>();
    s.graph.build_csr();
    return s;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    json header;
    header["format_version"] = ds.meta.format_version;
    header["kind"] = ds.meta.kind;
    header["grid_n"] = ds.meta.grid_n;
    header["stride"] = ds.meta.stride;
    header["knn_k"] = ds.meta.knn_k;
    header["seed"] = ds.meta.seed;
    header["generator_version"] =
        ds.meta.generator_version.empty() ? kCodeVersion : ds.meta.generator_version;
    header["n_train"] = ds.train.size();
    header["n_val"] = ds.val.size();
    out << header.dump() << '\n';
    for (const auto& s : ds.train) out << sample_to_json(s, "train").dump() << '\n';
    for (const auto& s : ds.val) out << sample_to_json(s, "val").dump() << '\n';
    if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_dataset: empty file");
    const json header = json::parse(line);
    Dataset ds;
    ds.meta.format_version = header.at("format_version").get<int>();
    if (ds.meta.format_version != 1)
        throw std::runtime_error("load_dataset: unsupported format version");
    ds.meta.kind = header.at("kind").get<std::string>();
    ds.meta.grid_n = header.at("grid_n").get<int>();
    ds.meta.stride = header.at("stride").get<int>();
    ds.meta.knn_k = header.at("knn_k").get<int>();
    ds.meta.seed = header.at("seed").get<uint64_t>();
    ds.meta.generator_version = header.at("generator_version").get<std::string>();
    const size_t n_train = header.at("n_train").get<size_t>();
    const size_t n_val = header.at("n_val").get<size_t>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        MeshSample s = sample_from_json(j);
        if (j.at("split").get<std::string>() == "train")
            ds.train.push_back(std::move(s));
        else
            ds.val.push_back(std::move(s));
    }
    if (ds.train.size() != n_train || ds.val.size() != n_val)
        throw std::runtime_error("load_dataset: sample counts disagree with header");
    return ds;
}

uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("file_checksum: cannot open " + path);
    uint64_t h = 1469598103934665603ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!in) break;
    }
    return h;
}

}  // namespace amq
