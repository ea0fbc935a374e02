#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "amq/model.hpp"

namespace amq {

// Cost unit: one Int8 x Int8 multiply-accumulate. A MAC at widths (b_a, b_W)
// counts b_a * b_W / 64. Bias adds and elementwise ops are not counted.
inline double layer_mac_cost(int64_t rows, int d_in, int d_out, int b_a, int b_w) {
    if (rows < 0 || d_in < 0 || d_out < 0 || b_a < 1 || b_w < 1)
        throw std::invalid_argument("layer_mac_cost: bad arguments");
    return double(rows) * double(d_in) * double(d_out) * double(b_a * b_w) / 64.0;
}

struct CostEntry {
    std::string name;
    double raw_macs = 0.0;  // N * d_in * d_out for the rows in this entry
    int b_a = 0;
    int b_w = 0;
    double int8eq = 0.0;
};

struct CostReport {
    std::vector<CostEntry> entries;
    double main_total = 0.0;
    double aux_total = 0.0;
    double total() const { return main_total + aux_total; }
};

namespace detail {

inline void cost_layer_split(CostReport& rep, const std::string& name, const Assignment& assign,
                             int d_in, int d_out, int b_w, double& total) {
    for (int k = 0; k < assign.n_levels(); ++k) {
        const int64_t rows = static_cast<int64_t>(assign.buckets[k].size());
        if (rows == 0) continue;
        CostEntry e;
        e.name = name + "[b" + std::to_string(assign.levels[k]) + "]";
        e.raw_macs = double(rows) * double(d_in) * double(d_out);
        e.b_a = assign.levels[k];
        e.b_w = b_w;
        e.int8eq = layer_mac_cost(rows, d_in, d_out, e.b_a, b_w);
        total += e.int8eq;
        rep.entries.push_back(std::move(e));
    }
}

inline void cost_mpnn(CostReport& rep, const std::string& prefix, const MPNNConfig& cfg,
                      const Assignment& nodes, const Assignment& edges, double& total) {
    const int d = cfg.hidden;
    cost_layer_split(rep, prefix + "encoder.l1", nodes, cfg.in_dim, d, cfg.w_bits, total);
    cost_layer_split(rep, prefix + "encoder.l2", nodes, d, d, cfg.w_bits, total);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = prefix + "proc" + std::to_string(l) + ".";
        cost_layer_split(rep, p + "msg.l1", edges, 2 * d + 3, d, cfg.w_bits, total);
        cost_layer_split(rep, p + "msg.l2", edges, d, d, cfg.w_bits, total);
        cost_layer_split(rep, p + "upd.l1", nodes, 2 * d, d, cfg.w_bits, total);
        cost_layer_split(rep, p + "upd.l2", nodes, d, d, cfg.w_bits, total);
    }
    cost_layer_split(rep, prefix + "decoder.l1", nodes, d, d, cfg.w_bits, total);
    cost_layer_split(rep, prefix + "decoder.l2", nodes, d, cfg.out_dim, cfg.w_bits, total);
}

}  // namespace detail

// Per-sample cost of the main model under the given allocation plus the
// auxiliary model at its fixed precision.
inline CostReport model_cost_report(const MPNNConfig& main_cfg, const MPNNConfig& aux_cfg,
                                    const Allocation& alloc, const Graph& g) {
    if (alloc.nodes.n_items() != g.n_nodes || alloc.edges.n_items() != g.n_edges())
        throw std::invalid_argument("model_cost_report: allocation does not match graph");
    if (aux_cfg.levels.size() != 1)
        throw std::invalid_argument("model_cost_report: auxiliary model is single-level");
    CostReport rep;
    detail::cost_mpnn(rep, "main.", main_cfg, alloc.nodes, alloc.edges, rep.main_total);
    const Assignment an = uniform_assignment(g.n_nodes, aux_cfg.levels[0]);
    const Assignment ae = uniform_assignment(g.n_edges(), aux_cfg.levels[0]);
    detail::cost_mpnn(rep, "aux.", aux_cfg, an, ae, rep.aux_total);
    return rep;
}

}  // namespace amq
