#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "amq/config.hpp"
#include "amq/datagen.hpp"
#include "amq/dataset.hpp"
#include "amq/train.hpp"
#include "amq/version.hpp"

namespace fs = std::filesystem;
using namespace amq;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
};

ConfigMap effective_config(const CommonOpts& o) {
    ConfigMap m = ConfigMap::load(o.config_path);
    for (const auto& s : o.sets) {
        const size_t eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + s);
        m.set(s.substr(0, eq), s.substr(eq + 1));
    }
    return m;
}

int cmd_gen_data(const CommonOpts& o) {
    const ConfigMap m = effective_config(o);
    const int grid_n = static_cast<int>(m.get_int("data.grid_n"));
    const int stride = static_cast<int>(m.get_int("data.stride"));
    const int k = static_cast<int>(m.get_int("data.knn_k"));
    const int n_train = static_cast<int>(m.get_int("data.n_train"));
    const int n_val = static_cast<int>(m.get_int("data.n_val"));
    if (grid_n < 8) throw ConfigError("data.grid_n must be >= 8");
    if (stride < 1 || k < 1 || n_train < 1 || n_val < 1)
        throw ConfigError("data.stride, data.knn_k and split sizes must be >= 1");
    const std::string path = m.get("data.path");

    Dataset ds = generate_dataset(grid_n, stride, k, n_train, n_val, m.get_u64("data.seed"));
    ds.meta.generator_version = kCodeVersion;
    save_dataset(ds, path);
    std::printf("wrote %zu samples to %s checksum=%016llx\n", ds.train.size() + ds.val.size(),
                path.c_str(), static_cast<unsigned long long>(file_checksum(path)));
    return kExitOk;
}

int cmd_train(const CommonOpts& o, bool resume) {
    const ConfigMap m = effective_config(o);
    const TrainConfig cfg = TrainConfig::from_map(m);
    const Dataset ds = load_dataset(m.get("data.path"));
    const TrainResult res = run_training(ds, cfg, m.get("out.dir"), m, resume);
    std::printf("trained %lld steps  val_loss=%.9g rel_l2=%.9g macs=%.9g\n",
                static_cast<long long>(res.steps), res.final_metrics.val_loss,
                res.final_metrics.rel_l2, res.final_metrics.macs_int8eq);
    std::printf("metrics: %s\ncheckpoint: %s\n", res.csv_path.c_str(),
                res.checkpoint_path.c_str());
    return kExitOk;
}

struct SweepRow {
    std::string name, mode, ratios, status;
    uint64_t seed = 0;
    EvalMetrics metrics;
    uint64_t config_hash = 0;
};

std::string ratios_string(const std::vector<double>& alphas) {
    std::string out;
    for (size_t i = 0; i < alphas.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", alphas[i]);
        out += (i ? "|" : "") + std::string(buf);
    }
    return out;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("sweep: cannot open " + path);
    out << "name,mode,ratios,seed,status,val_loss,rel_l2,macs_int8eq,aux_macs,"
           "config_hash,code_version\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%llu,%s,%.9g,%.9g,%.9g,%.9g,%016llx,%s\n",
                      r.name.c_str(), r.mode.c_str(), r.ratios.c_str(),
                      static_cast<unsigned long long>(r.seed), r.status.c_str(),
                      r.metrics.val_loss, r.metrics.rel_l2, r.metrics.macs_int8eq,
                      r.metrics.aux_macs, static_cast<unsigned long long>(r.config_hash),
                      kCodeVersion);
        out << buf;
    }
}

void write_pareto_svg(const std::string& path, const std::vector<SweepRow>& rows);

int cmd_sweep(const CommonOpts& o, bool resume) {
    const ConfigMap base = effective_config(o);
    const std::vector<int> levels = base.get_int_list("train.levels");
    const std::vector<SweepPoint> points =
        parse_sweep_points(base.get("sweep.points"), levels.size());
    std::vector<uint64_t> seeds;
    for (int s : base.get_int_list("sweep.seeds")) seeds.push_back(static_cast<uint64_t>(s));
    const std::string out_dir = base.get("out.dir");
    fs::create_directories(out_dir);
    const Dataset ds = load_dataset(base.get("data.path"));

    std::vector<SweepRow> rows;
    for (size_t pi = 0; pi < points.size(); ++pi) {
        for (uint64_t seed : seeds) {
            const SweepPoint& p = points[pi];
            ConfigMap m = base;
            m.set("train.mode", mode_name(p.mode));
            m.set("train.alphas", [&] {
                std::string s;
                for (size_t i = 0; i < p.alphas.size(); ++i) {
                    char buf[32];
                    std::snprintf(buf, sizeof(buf), "%g", p.alphas[i]);
                    s += (i ? "," : "") + std::string(buf);
                }
                return s;
            }());
            m.set("train.seed", std::to_string(seed));
            const std::string point_name =
                "p" + std::to_string(pi) + "_" + mode_name(p.mode) + "_s" + std::to_string(seed);
            const std::string point_dir = out_dir + "/" + point_name;
            m.set("out.dir", point_dir);

            SweepRow row;
            row.name = point_name;
            row.mode = mode_name(p.mode);
            row.ratios = ratios_string(p.alphas);
            row.seed = seed;
            row.config_hash = m.hash();

            const std::string done_marker = point_dir + "/done";
            try {
                const TrainConfig cfg = TrainConfig::from_map(m);
                if (resume && fs::exists(done_marker)) {
                    // Finished earlier; recover the metrics without retraining.
                    Trainer t(ds, cfg);
                    t.load_checkpoint(point_dir + "/checkpoint.bin", m.hash());
                    row.metrics = t.evaluate();
                    row.status = "ok";
                } else {
                    const TrainResult res = run_training(ds, cfg, point_dir, m, resume);
                    row.metrics = res.final_metrics;
                    row.status = "ok";
                    std::ofstream(done_marker) << "done\n";
                }
            } catch (const std::exception& e) {
                row.status = std::string("error: ") + e.what();
            }
            std::printf("%s %s\n", row.name.c_str(), row.status.c_str());
            rows.push_back(std::move(row));
        }
    }
    const std::string csv = out_dir + "/sweep.csv";
    write_sweep_csv(csv, rows);
    std::printf("sweep results: %s\n", csv.c_str());
    if (base.get_bool("sweep.plot")) {
        const std::string svg = out_dir + "/pareto.svg";
        write_pareto_svg(svg, rows);
        std::printf("plot: %s\n", svg.c_str());
    }
    for (const auto& r : rows)
        if (r.status != "ok") return kExitRuntime;
    return kExitOk;
}

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("report: cannot open " + path);
    std::vector<SweepRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                f.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        f.push_back(cur);
        if (f.size() < 11) continue;
        SweepRow r;
        r.name = f[0];
        r.mode = f[1];
        r.ratios = f[2];
        r.seed = std::stoull(f[3]);
        r.status = f[4];
        if (r.status == "ok") {
            r.metrics.val_loss = std::stod(f[5]);
            r.metrics.rel_l2 = std::stod(f[6]);
            r.metrics.macs_int8eq = std::stod(f[7]);
            r.metrics.aux_macs = std::stod(f[8]);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_pareto_svg(const std::string& path, const std::vector<SweepRow>& rows) {
    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    for (const auto& r : rows) {
        if (r.status != "ok") continue;
        min_x = std::min(min_x, r.metrics.macs_int8eq);
        max_x = std::max(max_x, r.metrics.macs_int8eq);
        min_y = std::min(min_y, r.metrics.val_loss);
        max_y = std::max(max_y, r.metrics.val_loss);
    }
    if (min_x > max_x) throw std::runtime_error("plot: no successful rows");
    if (max_x - min_x < 1e-12) max_x = min_x + 1.0;
    if (max_y - min_y < 1e-12) max_y = min_y + 1.0;

    const int W = 640, H = 440, L = 70, B = 50, Tm = 20, R = 20;
    auto sx = [&](double v) { return L + (v - min_x) / (max_x - min_x) * (W - L - R); };
    auto sy = [&](double v) { return H - B - (v - min_y) / (max_y - min_y) * (H - B - Tm); };
    auto color = [](const std::string& mode) {
        if (mode == "uniform") return "#777777";
        if (mode == "targeted") return "#c0392b";
        return "#2980b9";
    };

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("plot: cannot open " + path);
    char buf[512];
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", L, H - B,
                  W - R, H - B);
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", L, Tm, L,
                  H - B);
    out << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-size=\"12\">MACs (Int8-eq, per sample)</text>\n",
                  W / 2 - 80, H - 12);
    out << buf;
    std::snprintf(
        buf, sizeof(buf),
        "<text x=\"14\" y=\"%d\" font-size=\"12\" transform=\"rotate(-90 14 %d)\">val loss</text>\n",
        H / 2, H / 2);
    out << buf;
    for (const auto& r : rows) {
        if (r.status != "ok") continue;
        std::snprintf(buf, sizeof(buf),
                      "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"5\" fill=\"%s\" opacity=\"0.75\">"
                      "<title>%s loss=%.6g macs=%.6g</title></circle>\n",
                      sx(r.metrics.macs_int8eq), sy(r.metrics.val_loss), color(r.mode),
                      r.name.c_str(), r.metrics.val_loss, r.metrics.macs_int8eq);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"16\" font-size=\"12\">grey=uniform red=targeted "
                  "blue=random</text>\n",
                  L);
    out << buf;
    out << "</svg>\n";
}

int cmd_report(const CommonOpts& o, const std::string& csv_override, bool plot) {
    const ConfigMap m = effective_config(o);
    const std::string csv =
        csv_override.empty() ? m.get("out.dir") + "/sweep.csv" : csv_override;
    const std::vector<SweepRow> rows = read_sweep_csv(csv);
    if (rows.empty()) throw std::runtime_error("report: no rows in " + csv);
    std::printf("%-28s %-9s %-9s %6s %-8s %12s %10s %14s\n", "name", "mode", "ratios", "seed",
                "status", "val_loss", "rel_l2", "macs_int8eq");
    for (const auto& r : rows) {
        if (r.status == "ok")
            std::printf("%-28s %-9s %-9s %6llu %-8s %12.6g %10.4g %14.6g\n", r.name.c_str(),
                        r.mode.c_str(), r.ratios.c_str(),
                        static_cast<unsigned long long>(r.seed), r.status.c_str(),
                        r.metrics.val_loss, r.metrics.rel_l2, r.metrics.macs_int8eq);
        else
            std::printf("%-28s %-9s %-9s %6llu %s\n", r.name.c_str(), r.mode.c_str(),
                        r.ratios.c_str(), static_cast<unsigned long long>(r.seed),
                        r.status.c_str());
    }
    if (plot) {
        const std::string svg = csv.substr(0, csv.find_last_of('/')) + "/pareto.svg";
        write_pareto_svg(svg, rows);
        std::printf("plot: %s\n", svg.c_str());
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive mixed-precision quantization for mesh PDE surrogates"};
    app.require_subcommand(1);

    CommonOpts opts;
    bool resume = false;
    bool plot = false;
    std::string report_csv;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", opts.config_path, "configuration file (key = value lines)");
        sub->add_option("--set", opts.sets, "override a config key, e.g. --set train.seed=3")
            ->take_all();
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic Darcy dataset");
    add_common(gen);
    CLI::App* train = app.add_subcommand("train", "run one joint training");
    add_common(train);
    train->add_flag("--resume", resume, "continue from the checkpoint in out.dir");
    CLI::App* sweep = app.add_subcommand("sweep", "train every (mode, ratio, seed) grid point");
    add_common(sweep);
    sweep->add_flag("--resume", resume, "skip grid points that already finished");
    CLI::App* report = app.add_subcommand("report", "print a sweep summary table");
    add_common(report);
    report->add_option("--csv", report_csv, "sweep CSV to read (default out.dir/sweep.csv)");
    report->add_flag("--plot", plot, "also write an SVG Pareto scatter");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(opts);
        if (train->parsed()) return cmd_train(opts, resume);
        if (sweep->parsed()) return cmd_sweep(opts, resume);
        if (report->parsed()) return cmd_report(opts, report_csv, plot);
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
}
