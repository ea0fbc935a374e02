#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amq/graph.hpp"
#include "amq/matrix.hpp"

namespace amq {

// One mesh sample: a graph over nodes with positions, a scalar input field
// (the PDE coefficient) and a scalar target field (the solution).
struct MeshSample {
    Graph graph;
    Matrix<double> pos;     // n x 2, coordinates in [0,1]
    Matrix<double> feat;    // n x 1, coefficient at node
    Matrix<double> target;  // n x 1, solution at node
};

struct DatasetMeta {
    int format_version = 1;
    std::string kind = "darcy";
    int grid_n = 32;
    int stride = 2;
    int knn_k = 5;
    uint64_t seed = 0;
    std::string generator_version;
};

struct Dataset {
    DatasetMeta meta;
    std::vector<MeshSample> train;
    std::vector<MeshSample> val;
};

// Line-delimited text container: one JSON header line, then one JSON record
// per sample. Writing is deterministic for a fixed dataset.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// FNV-1a over the file bytes; used for the printed dataset checksum.
uint64_t file_checksum(const std::string& path);

}  // namespace amq
