#include "amq/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include "amq/checkpoint.hpp"
#include "amq/version.hpp"

namespace amq {

namespace {

constexpr double kFeatShift = 7.5;  // centers the {3, 12} coefficient values
constexpr double kFeatScale = 4.5;
constexpr uint32_t kCheckpointMagic = 0x414d5143;  // "AMQC"
constexpr int32_t kCheckpointVersion = 1;

std::vector<Matrix<float>> zero_like(const std::vector<Matrix<float>*>& params) {
    std::vector<Matrix<float>> out;
    out.reserve(params.size());
    for (const auto* p : params) out.emplace_back(p->rows(), p->cols());
    return out;
}

void accumulate_grads(std::vector<Matrix<float>>& acc, const Tape<float>& tape,
                      const std::vector<int>& leaves) {
    if (acc.size() != leaves.size())
        throw std::logic_error("train: gradient accumulator misaligned");
    for (size_t i = 0; i < leaves.size(); ++i) {
        const Matrix<float>& g = tape.grad(leaves[i]);
        if (g.empty()) continue;  // parameter off the loss path this sample
        for (size_t k = 0; k < acc[i].size(); ++k) acc[i].data()[k] += g.data()[k];
    }
}

void scale_grads(std::vector<Matrix<float>>& acc, float s) {
    for (auto& g : acc)
        for (size_t k = 0; k < g.size(); ++k) g.data()[k] *= s;
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1 || batch < 1) throw ConfigError("train: epochs and batch must be >= 1");
    if (!(lr_main > 0.0) || !(lr_aux > 0.0)) throw ConfigError("train: learning rates must be > 0");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
        throw ConfigError("train: warmup must be shorter than the run");
    if (levels.empty() || levels.size() != alphas.size())
        throw ConfigError("train: levels/alphas mismatch");
    for (size_t i = 1; i < levels.size(); ++i)
        if (levels[i] <= levels[i - 1]) throw ConfigError("train: levels must be ascending");
    double sum = 0.0;
    for (double a : alphas) {
        if (!(a >= 0.0)) throw ConfigError("train: ratios must be >= 0");
        sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("train: ratios must sum to 1");
    if (calib_steps < 1) throw ConfigError("train: calibration needs at least one step");
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("train: ema decay in (0,1)");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
    if (diffuse_steps < 0) throw ConfigError("train: diffusion steps must be >= 0");
    if (hidden < 1 || layers < 1 || aux_hidden < 1 || aux_layers < 1)
        throw ConfigError("train: model dims must be >= 1");
    if (w_bits < 2 || w_bits > 16 || aux_bits < 2 || aux_bits > 16)
        throw ConfigError("train: bit-widths must be in [2,16]");
    if (use_segments)
        for (int lvl : levels)
            if (b0 < 2 || lvl % b0 != 0)
                throw ConfigError("train: b0 must divide every level for the segment kernel");
}

TrainConfig TrainConfig::from_map(const ConfigMap& m) {
    TrainConfig c;
    c.epochs = static_cast<int>(m.get_int("train.epochs"));
    c.batch = static_cast<int>(m.get_int("train.batch"));
    c.lr_main = m.get_double("train.lr_main");
    c.lr_aux = m.get_double("train.lr_aux");
    c.warmup_epochs = static_cast<int>(m.get_int("train.warmup_epochs"));
    c.levels = m.get_int_list("train.levels");
    c.alphas = m.get_double_list("train.alphas");
    c.calib_steps = static_cast<int>(m.get_int("train.calib_steps"));
    c.ema_decay = m.get_double("train.ema_decay");
    c.seed = m.get_u64("train.seed");
    c.mode = parse_mode(m.get("train.mode"));
    c.eval_every = static_cast<int>(m.get_int("train.eval_every"));
    c.diffuse_steps = static_cast<int>(m.get_int("train.diffuse_steps"));
    c.hidden = static_cast<int>(m.get_int("model.hidden"));
    c.layers = static_cast<int>(m.get_int("model.layers"));
    c.w_bits = static_cast<int>(m.get_int("model.w_bits"));
    c.b0 = static_cast<int>(m.get_int("model.b0"));
    c.use_segments = m.get_bool("model.use_segments");
    c.aux_hidden = static_cast<int>(m.get_int("aux.hidden"));
    c.aux_layers = static_cast<int>(m.get_int("aux.layers"));
    c.aux_bits = static_cast<int>(m.get_int("aux.bits"));
    c.validate();
    return c;
}

Trainer::Trainer(const Dataset& ds, const TrainConfig& cfg)
    : cfg_(cfg), data_rng_(0), shuffle_rng_(0) {
    cfg_.validate();
    if (ds.train.empty() || ds.val.empty())
        throw std::invalid_argument("train: dataset needs both splits");

    Rng master(cfg_.seed);
    const uint64_t main_seed = master.raw();
    const uint64_t aux_seed = master.raw();
    data_rng_ = Rng(master.raw());
    shuffle_rng_ = Rng(master.raw());
    eval_seed_ = master.raw();

    u_scale_ = 0.0;
    for (const auto& s : ds.train)
        for (size_t i = 0; i < s.target.size(); ++i)
            u_scale_ = std::max(u_scale_, std::abs(s.target.data()[i]));
    if (u_scale_ <= 0.0) throw std::invalid_argument("train: degenerate target field");

    auto prep = [&](const MeshSample& s) {
        TrainSample t;
        t.ps = prepare_sample<float>(s, kFeatShift, kFeatScale, u_scale_);
        t.aux_alloc.nodes = uniform_assignment(s.graph.n_nodes, cfg_.aux_bits);
        t.aux_alloc.edges = uniform_assignment(s.graph.n_edges(), cfg_.aux_bits);
        return t;
    };
    for (const auto& s : ds.train) train_.push_back(prep(s));
    for (const auto& s : ds.val) val_.push_back(prep(s));

    build_models();
    main_.init(main_seed);
    aux_.init(aux_seed);
    opt_main_.init(main_.params());
    opt_aux_.init(aux_.params());

    steps_per_epoch_ = (static_cast<int64_t>(train_.size()) + cfg_.batch - 1) / cfg_.batch;
    total_steps_ = steps_per_epoch_ * cfg_.epochs;
}

void Trainer::build_models() {
    MPNNConfig mc;
    mc.in_dim = 3;
    mc.out_dim = 1;
    mc.hidden = cfg_.hidden;
    mc.layers = cfg_.layers;
    mc.levels = cfg_.levels;
    mc.b0 = cfg_.b0;
    mc.w_bits = cfg_.w_bits;
    mc.ema_decay = cfg_.ema_decay;
    main_.cfg = mc;

    MPNNConfig ac;
    ac.in_dim = 3;
    ac.out_dim = 1;
    ac.hidden = cfg_.aux_hidden;
    ac.layers = cfg_.aux_layers;
    ac.levels = {cfg_.aux_bits};
    ac.b0 = cfg_.b0;
    ac.w_bits = cfg_.w_bits;
    ac.ema_decay = cfg_.ema_decay;
    ac.sigmoid_head = true;
    aux_.cfg = ac;
}

std::vector<double> Trainer::aux_weights(Tape<float>& tape, ForwardResult<float>& res,
                                         const TrainSample& s, bool calibrate) {
    ForwardOpts opts;
    opts.quant = true;
    opts.calibrate = calibrate;
    opts.use_segments = cfg_.use_segments;
    res = aux_.forward(tape, s.ps, s.aux_alloc, opts);
    const Matrix<float>& pred = tape.value(res.pred);
    std::vector<double> w(pred.rows());
    for (int i = 0; i < pred.rows(); ++i) w[i] = double(pred(i, 0));
    return w;
}

Allocation Trainer::allocate(const TrainSample& s, const std::vector<double>& w) const {
    Allocation a;
    a.nodes = assign_buckets(w, cfg_.levels, cfg_.alphas);
    a.edges = assign_buckets(edge_weights(w, s.ps.graph->dst), cfg_.levels, cfg_.alphas);
    return a;
}

void Trainer::maybe_freeze() {
    if (frozen_ || step_ < cfg_.calib_steps) return;
    main_.freeze_quantizers();
    aux_.freeze_quantizers();
    frozen_ = true;
}

StepMetrics Trainer::run_batch(const std::vector<int>& idxs) {
    const bool calibrate = !frozen_ && step_ < cfg_.calib_steps;
    auto main_params = main_.params();
    auto aux_params = aux_.params();
    std::vector<Matrix<float>> gmain = zero_like(main_params);
    std::vector<Matrix<float>> gaux = zero_like(aux_params);
    StepMetrics metrics;

    for (int idx : idxs) {
        TrainSample& s = train_[idx];
        order_hash_ = fnv1a(std::to_string(idx) + ",", order_hash_);

        Tape<float> aux_tape;
        ForwardResult<float> aux_res;
        std::vector<double> w = aux_weights(aux_tape, aux_res, s, calibrate);
        if (cfg_.mode == RunMode::Random) shuffle_rng_.shuffle(w);
        const Allocation alloc = allocate(s, w);

        Tape<float> tape;
        ForwardOpts opts;
        opts.quant = true;
        opts.calibrate = calibrate;
        opts.use_segments = cfg_.use_segments;
        ForwardResult<float> res = main_.forward(tape, s.ps, alloc, opts);
        const int target = tape.leaf(s.ps.target, false);
        const int loss = tape.mse(res.pred, target);
        metrics.main_loss += double(tape.value(loss)(0, 0));
        tape.backward(loss);
        accumulate_grads(gmain, tape, res.param_leaves);

        // Auxiliary target from the detached main loss.
        const std::vector<double> raw = per_node_loss(tape.value(res.pred), s.ps.target);
        const std::vector<double> target_v =
            diffuse_loss(normalize_loss(raw), *s.ps.graph, cfg_.diffuse_steps);
        Matrix<float> aux_target(static_cast<int>(target_v.size()), 1);
        for (size_t i = 0; i < target_v.size(); ++i)
            aux_target(static_cast<int>(i), 0) = static_cast<float>(target_v[i]);
        const int aux_t = aux_tape.leaf(std::move(aux_target), false);
        const int aux_loss = aux_tape.mse(aux_res.pred, aux_t);
        metrics.aux_loss += double(aux_tape.value(aux_loss)(0, 0));
        aux_tape.backward(aux_loss);
        accumulate_grads(gaux, aux_tape, aux_res.param_leaves);

        const CostReport cr = model_cost_report(main_.cfg, aux_.cfg, alloc, *s.ps.graph);
        metrics.macs_int8eq += cr.total();
    }

    const float inv = 1.0f / float(idxs.size());
    scale_grads(gmain, inv);
    scale_grads(gaux, inv);
    metrics.main_loss /= double(idxs.size());
    metrics.aux_loss /= double(idxs.size());
    metrics.macs_int8eq /= double(idxs.size());

    const int64_t warmup = static_cast<int64_t>(cfg_.warmup_epochs) * steps_per_epoch_;
    const int64_t s = std::min(step_ + 1, total_steps_);
    opt_main_.step(main_params, gmain, lr_schedule(s, total_steps_, warmup, cfg_.lr_main));
    opt_aux_.step(aux_params, gaux, lr_schedule(s, total_steps_, warmup, cfg_.lr_aux));

    ++step_;
    maybe_freeze();
    return metrics;
}

StepMetrics Trainer::train_epoch() {
    std::vector<int> order(train_.size());
    std::iota(order.begin(), order.end(), 0);
    data_rng_.shuffle(order);

    StepMetrics epoch;
    int64_t batches = 0;
    for (size_t at = 0; at < order.size(); at += cfg_.batch) {
        const size_t hi = std::min(order.size(), at + cfg_.batch);
        const std::vector<int> idxs(order.begin() + at, order.begin() + hi);
        const StepMetrics m = run_batch(idxs);
        epoch.main_loss += m.main_loss;
        epoch.aux_loss += m.aux_loss;
        epoch.macs_int8eq += m.macs_int8eq;
        ++batches;
    }
    epoch.main_loss /= double(batches);
    epoch.aux_loss /= double(batches);
    epoch.macs_int8eq /= double(batches);
    ++epochs_done_;
    return epoch;
}

EvalMetrics Trainer::evaluate() const {
    if (val_.empty()) throw std::invalid_argument("evaluate: empty validation set");
    EvalMetrics m;
    m.node_level_counts.assign(cfg_.levels.size(), 0);
    Rng eval_rng(eval_seed_);
    Trainer& self = const_cast<Trainer&>(*this);  // forward needs mutable layer refs only

    for (const TrainSample& s : val_) {
        Tape<float> aux_tape;
        ForwardOpts opts;
        opts.quant = true;
        opts.calibrate = false;
        opts.use_segments = cfg_.use_segments;
        ForwardResult<float> aux_res = self.aux_.forward(aux_tape, s.ps, s.aux_alloc, opts);
        const Matrix<float>& apred = aux_tape.value(aux_res.pred);
        std::vector<double> w(apred.rows());
        for (int i = 0; i < apred.rows(); ++i) w[i] = double(apred(i, 0));
        if (cfg_.mode == RunMode::Random) eval_rng.shuffle(w);
        const Allocation alloc = allocate(s, w);

        Tape<float> tape;
        ForwardResult<float> res = self.main_.forward(tape, s.ps, alloc, opts);
        const Matrix<float>& pred = tape.value(res.pred);
        const std::vector<double> raw = per_node_loss(pred, s.ps.target);
        double sample_loss = 0.0;
        for (double v : raw) sample_loss += v;
        m.val_loss += sample_loss / double(raw.size());
        m.rel_l2 += rel_l2(pred, s.ps.target);

        const CostReport cr = model_cost_report(self.main_.cfg, self.aux_.cfg, alloc, *s.ps.graph);
        m.macs_int8eq += cr.total();
        m.aux_macs += cr.aux_total;
        for (size_t k = 0; k < alloc.nodes.buckets.size(); ++k)
            m.node_level_counts[k] += static_cast<int64_t>(alloc.nodes.buckets[k].size());
    }
    const double n = double(val_.size());
    m.val_loss /= n;
    m.rel_l2 /= n;
    m.macs_int8eq /= n;
    m.aux_macs /= n;
    return m;
}

void Trainer::save_checkpoint(const std::string& path, uint64_t config_hash) const {
    BinaryWriter w(path);
    w.pod<uint32_t>(kCheckpointMagic);
    w.pod<int32_t>(kCheckpointVersion);
    w.pod<uint64_t>(config_hash);
    w.pod<int64_t>(step_);
    w.pod<int32_t>(epochs_done_);
    w.pod<double>(u_scale_);
    w.pod<uint8_t>(frozen_ ? 1 : 0);
    w.str(data_rng_.serialize());
    w.str(shuffle_rng_.serialize());
    w.pod<uint64_t>(eval_seed_);
    w.pod<uint64_t>(order_hash_);

    Trainer& self = const_cast<Trainer&>(*this);
    auto dump_model = [&](MPNNModel<float>& model, Adam<float>& opt) {
        auto params = model.params();
        w.pod<uint64_t>(params.size());
        for (const auto* p : params) w.matrix(*p);
        auto quants = model.quantizers();
        w.pod<uint64_t>(quants.size());
        for (const auto* q : quants) w.quantizer(*q);
        w.pod<int64_t>(opt.steps_taken());
        for (const auto& mm : opt.moments1()) w.matrix(mm);
        for (const auto& vv : opt.moments2()) w.matrix(vv);
    };
    dump_model(self.main_, self.opt_main_);
    dump_model(self.aux_, self.opt_aux_);
    w.done();
}

void Trainer::load_checkpoint(const std::string& path, uint64_t config_hash) {
    BinaryReader r(path);
    if (r.pod<uint32_t>() != kCheckpointMagic)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    if (r.pod<int32_t>() != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version in " + path);
    const uint64_t saved_hash = r.pod<uint64_t>();
    if (saved_hash != config_hash)
        throw std::runtime_error("checkpoint: config hash mismatch; refusing to resume");
    step_ = r.pod<int64_t>();
    epochs_done_ = r.pod<int32_t>();
    u_scale_ = r.pod<double>();
    frozen_ = r.pod<uint8_t>() != 0;
    data_rng_.restore(r.str());
    shuffle_rng_.restore(r.str());
    eval_seed_ = r.pod<uint64_t>();
    order_hash_ = r.pod<uint64_t>();

    auto load_model = [&](MPNNModel<float>& model, Adam<float>& opt) {
        auto params = model.params();
        if (r.pod<uint64_t>() != params.size())
            throw std::runtime_error("checkpoint: parameter count mismatch");
        for (auto* p : params) {
            Matrix<float> m = r.matrix<float>();
            if (!m.same_shape(*p)) throw std::runtime_error("checkpoint: parameter shape mismatch");
            *p = std::move(m);
        }
        auto quants = model.quantizers();
        if (r.pod<uint64_t>() != quants.size())
            throw std::runtime_error("checkpoint: quantizer count mismatch");
        for (auto* q : quants) *q = r.quantizer();
        opt.set_steps_taken(r.pod<int64_t>());
        for (auto& mm : opt.moments1()) {
            Matrix<float> m = r.matrix<float>();
            if (!m.same_shape(mm)) throw std::runtime_error("checkpoint: moment shape mismatch");
            mm = std::move(m);
        }
        for (auto& vv : opt.moments2()) {
            Matrix<float> m = r.matrix<float>();
            if (!m.same_shape(vv)) throw std::runtime_error("checkpoint: moment shape mismatch");
            vv = std::move(m);
        }
    };
    load_model(main_, opt_main_);
    load_model(aux_, opt_aux_);
}

TrainResult run_training(const Dataset& ds, const TrainConfig& cfg, const std::string& out_dir,
                         const ConfigMap& effective_config, bool resume) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string csv_path = out_dir + "/metrics.csv";
    const std::string ckpt_path = out_dir + "/checkpoint.bin";
    const uint64_t cfg_hash = effective_config.hash();

    Trainer trainer(ds, cfg);
    bool resumed = false;
    if (resume && fs::exists(ckpt_path)) {
        trainer.load_checkpoint(ckpt_path, cfg_hash);
        resumed = true;
    }

    FILE* csv = std::fopen(csv_path.c_str(), resumed ? "a" : "w");
    if (!csv) throw std::runtime_error("train: cannot open " + csv_path);
    if (!resumed)
        std::fprintf(csv,
                     "step,mode,ratios,val_loss,rel_l2,macs_int8eq,aux_macs,"
                     "config_hash,seed,code_version,order_hash\n");

    std::string ratios;
    for (size_t i = 0; i < cfg.alphas.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", cfg.alphas[i]);
        ratios += (i ? "|" : "") + std::string(buf);
    }

    auto emit = [&]() {
        const EvalMetrics m = trainer.evaluate();
        std::fprintf(csv, "%lld,%s,%s,%.9g,%.9g,%.9g,%.9g,%016llx,%llu,%s,%016llx\n",
                     static_cast<long long>(trainer.step()), mode_name(cfg.mode), ratios.c_str(),
                     m.val_loss, m.rel_l2, m.macs_int8eq, m.aux_macs,
                     static_cast<unsigned long long>(cfg_hash),
                     static_cast<unsigned long long>(cfg.seed), kCodeVersion,
                     static_cast<unsigned long long>(trainer.order_hash()));
        std::fflush(csv);
        return m;
    };

    EvalMetrics last{};
    bool evaluated = false;
    for (int epoch = trainer.epochs_done(); epoch < cfg.epochs; ++epoch) {
        trainer.train_epoch();
        if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
            last = emit();
            evaluated = true;
            // Checkpoint at every evaluation so an interrupted run resumes
            // from the last emitted row instead of starting over.
            trainer.save_checkpoint(ckpt_path, cfg_hash);
        }
    }
    if (!evaluated) last = emit();
    std::fclose(csv);

    trainer.save_checkpoint(ckpt_path, cfg_hash);
    TrainResult res;
    res.final_metrics = last;
    res.steps = trainer.step();
    res.csv_path = csv_path;
    res.checkpoint_path = ckpt_path;
    return res;
}

}  // namespace amq
