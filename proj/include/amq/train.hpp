#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amq/config.hpp"
#include "amq/cost.hpp"
#include "amq/dataset.hpp"
#include "amq/model.hpp"
#include "amq/optim.hpp"
#include "amq/rng.hpp"

namespace amq {

struct TrainConfig {
    int epochs = 30;
    int batch = 4;
    double lr_main = 3e-3;
    double lr_aux = 3e-3;
    int warmup_epochs = 2;
    std::vector<int> levels{4, 8};
    std::vector<double> alphas{0.5, 0.5};
    int calib_steps = 200;
    double ema_decay = 0.99;
    uint64_t seed = 1;
    RunMode mode = RunMode::Targeted;
    int eval_every = 5;  // epochs
    int diffuse_steps = 10;

    int hidden = 24;
    int layers = 2;
    int w_bits = 8;
    int b0 = 4;
    bool use_segments = false;

    int aux_hidden = 32;
    int aux_layers = 3;
    int aux_bits = 8;

    void validate() const;
    static TrainConfig from_map(const ConfigMap& m);
};

struct EvalMetrics {
    double val_loss = 0.0;     // mean scalar MSE on normalized targets
    double rel_l2 = 0.0;       // mean relative L2
    double macs_int8eq = 0.0;  // mean per-sample, main + auxiliary
    double aux_macs = 0.0;     // mean per-sample auxiliary share
    std::vector<int64_t> node_level_counts;  // allocation histogram over val set
};

struct StepMetrics {
    double main_loss = 0.0;
    double aux_loss = 0.0;
    double macs_int8eq = 0.0;
};

// Joint training of the main surrogate and the complexity-predicting
// auxiliary model. Per sample: auxiliary forward -> complexity weights ->
// bucket assignment -> quantized main forward/backward -> auxiliary target
// from the detached per-node loss -> auxiliary backward. Adam steps happen
// once per batch for each model.
class Trainer {
public:
    Trainer(const Dataset& ds, const TrainConfig& cfg);

    StepMetrics train_epoch();
    EvalMetrics evaluate() const;

    int64_t step() const { return step_; }
    int epochs_done() const { return epochs_done_; }
    int64_t steps_per_epoch() const { return steps_per_epoch_; }
    uint64_t order_hash() const { return order_hash_; }
    double target_scale() const { return u_scale_; }
    const TrainConfig& config() const { return cfg_; }

    MPNNModel<float>& main_model() { return main_; }
    MPNNModel<float>& aux_model() { return aux_; }

    void save_checkpoint(const std::string& path, uint64_t config_hash) const;
    // Restores everything the constructor set up; config and dataset must
    // match the saved run.
    void load_checkpoint(const std::string& path, uint64_t config_hash);

private:
    struct TrainSample {
        PreparedSample<float> ps;
        Allocation aux_alloc;
    };

    TrainConfig cfg_;
    MPNNModel<float> main_, aux_;
    Adam<float> opt_main_, opt_aux_;
    Rng data_rng_, shuffle_rng_;
    uint64_t eval_seed_ = 0;
    std::vector<TrainSample> train_, val_;
    double u_scale_ = 1.0;
    int64_t step_ = 0;
    int64_t steps_per_epoch_ = 0;
    int64_t total_steps_ = 0;
    int epochs_done_ = 0;
    uint64_t order_hash_ = 1469598103934665603ull;
    bool frozen_ = false;

    void build_models();
    StepMetrics run_batch(const std::vector<int>& idxs);
    Allocation allocate(const TrainSample& s, const std::vector<double>& w) const;
    std::vector<double> aux_weights(Tape<float>& tape, ForwardResult<float>& res,
                                    const TrainSample& s, bool calibrate);
    void maybe_freeze();
};

struct TrainResult {
    EvalMetrics final_metrics;
    int64_t steps = 0;
    std::string csv_path;
    std::string checkpoint_path;
};

// Full cmd-train driver: runs the loop, appends one CSV row per evaluation,
// writes the final checkpoint. With resume=true, continues from the
// checkpoint in out_dir if one exists.
TrainResult run_training(const Dataset& ds, const TrainConfig& cfg, const std::string& out_dir,
                         const ConfigMap& effective_config, bool resume);

}  // namespace amq
