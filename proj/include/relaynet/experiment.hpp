#pragma once

// Experiment orchestration: config parsing, Monte-Carlo BER evaluation with
// fresh noise, sweeps over 1/sigma^2, the relay-count median study, and the
// CSV artifacts.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "relaynet/deepopt.hpp"
#include "relaynet/io.hpp"
#include "relaynet/linopt.hpp"
#include "relaynet/netgen.hpp"

namespace relaynet {

struct ExperimentConfig {
    std::string fixture;  // "fig3" or "fig5"; empty when spatial is set
    std::optional<SpatialConfig> spatial;
    ModulationSpec modulation{1, 1};
    std::string optimizer = "both";  // linear | dr | both
    ReceiverKind receiver = ReceiverKind::standard;
    std::vector<double> snr_grid_db;  // 1/sigma^2 grid in dB
    std::string snr_reference = "inv_sigma2";  // or "cell_edge"
    std::vector<std::uint64_t> seeds{0};
    double P_max = 0.64;
    std::string output_dir = ".";
    bool deterministic = true;

    // Monte-Carlo evaluation budget.
    long long eval_min_errors = 100;
    long long eval_max_symbols = 4000000;
    double ber_floor = 1e-4;

    // Deep-relay training knobs (0 => derived from the grid).
    double train_sigma2_init = 0.0;
    double train_sigma2_max = 0.0;
    double train_lr = 1e-2;
    int train_stage_cap = 2000;
    int train_max_stages = 60;
    int train_batch = 600;
    int train_refine_iters = 400;  // per-point fine-tuning after snapshot selection
    bool rms_init = false;

    // Linear optimizer knobs.
    int lin_max_sweeps = 20;
    int lin_zeta_rounds = 10;

    // Median study.
    std::vector<int> relay_counts;
    double cell_edge_snr_db = -22.0;

    void validate() const {
        if (fixture.empty() == !spatial.has_value())
            throw config_error("config: exactly one of fixture/spatial required");
        if (snr_grid_db.empty() && relay_counts.empty())
            throw config_error("config: snr_grid is empty");
        for (std::size_t i = 1; i < snr_grid_db.size(); ++i)
            if (snr_grid_db[i] <= snr_grid_db[i - 1])
                throw config_error("config: snr_grid must be strictly increasing");
        if (seeds.empty()) throw config_error("config: seeds is empty");
        if (optimizer != "linear" && optimizer != "dr" && optimizer != "both")
            throw config_error("config: optimizer must be linear, dr or both");
        if (snr_reference != "inv_sigma2" && snr_reference != "cell_edge")
            throw config_error("config: snr_reference must be inv_sigma2 or cell_edge");
        ModulationSpec check(modulation.M, modulation.B, modulation.epsilon);
        (void)check;
    }

    double sigma2_of_db(double db) const {
        const double inv = std::pow(10.0, db / 10.0);
        // Cell-edge reference: unit transmitter at the cell radius sees a
        // r^-alpha = 1e-8 power gain, so SNR_edge = 1e-8 / sigma^2.
        return snr_reference == "cell_edge" ? 1e-8 / inv : 1.0 / inv;
    }

    Topology build_topology(std::uint64_t seed) const {
        if (!fixture.empty()) return relaynet::fixture(fixture);
        SpatialConfig sc = *spatial;
        sc.seed = seed;
        return spatial_network(sc);
    }
};

inline ReceiverKind receiver_kind_from_string(const std::string& s) {
    if (s == "standard") return ReceiverKind::standard;
    if (s == "low_complexity") return ReceiverKind::low_complexity;
    throw config_error("unknown receiver kind: " + s);
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    if (j.contains("fixture")) c.fixture = j.at("fixture").get<std::string>();
    if (j.contains("spatial")) {
        const json& s = j.at("spatial");
        SpatialConfig sc;
        sc.n_relays = s.at("n_relays").get<int>();
        sc.m_receivers = s.at("m_receivers").get<int>();
        if (s.contains("radius")) sc.radius = s.at("radius").get<double>();
        if (s.contains("sector")) sc.sector = s.at("sector").get<double>();
        if (s.contains("alpha")) sc.alpha = s.at("alpha").get<double>();
        if (s.contains("antenna_width")) sc.antenna_width = s.at("antenna_width").get<double>();
        if (s.contains("direct_reference"))
            sc.direct_reference = s.at("direct_reference").get<bool>();
        c.spatial = sc;
    }
    const json& mod = j.at("modulation");
    c.modulation = ModulationSpec{mod.at("M").get<int>(), mod.at("B").get<int>(),
                                  mod.value("epsilon", 0.01)};
    if (j.contains("optimizer")) c.optimizer = j.at("optimizer").get<std::string>();
    if (j.contains("receiver"))
        c.receiver = receiver_kind_from_string(j.at("receiver").get<std::string>());
    if (j.contains("snr_grid_db")) c.snr_grid_db = j.at("snr_grid_db").get<std::vector<double>>();
    if (j.contains("snr_reference")) c.snr_reference = j.at("snr_reference").get<std::string>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("P_max")) c.P_max = j.at("P_max").get<double>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("deterministic")) c.deterministic = j.at("deterministic").get<bool>();
    if (j.contains("eval_min_errors")) c.eval_min_errors = j.at("eval_min_errors").get<long long>();
    if (j.contains("eval_max_symbols"))
        c.eval_max_symbols = j.at("eval_max_symbols").get<long long>();
    if (j.contains("train_sigma2_init")) c.train_sigma2_init = j.at("train_sigma2_init").get<double>();
    if (j.contains("train_sigma2_max")) c.train_sigma2_max = j.at("train_sigma2_max").get<double>();
    if (j.contains("train_lr")) c.train_lr = j.at("train_lr").get<double>();
    if (j.contains("train_stage_cap")) c.train_stage_cap = j.at("train_stage_cap").get<int>();
    if (j.contains("train_max_stages")) c.train_max_stages = j.at("train_max_stages").get<int>();
    if (j.contains("train_batch")) c.train_batch = j.at("train_batch").get<int>();
    if (j.contains("train_refine_iters"))
        c.train_refine_iters = j.at("train_refine_iters").get<int>();
    if (j.contains("rms_init")) c.rms_init = j.at("rms_init").get<bool>();
    if (j.contains("lin_max_sweeps")) c.lin_max_sweeps = j.at("lin_max_sweeps").get<int>();
    if (j.contains("lin_zeta_rounds")) c.lin_zeta_rounds = j.at("lin_zeta_rounds").get<int>();
    if (j.contains("relay_counts")) c.relay_counts = j.at("relay_counts").get<std::vector<int>>();
    if (j.contains("cell_edge_snr_db")) c.cell_edge_snr_db = j.at("cell_edge_snr_db").get<double>();
    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    return config_from_json(load_json(path));
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline int worker_count() {
    if (const char* env = std::getenv("RELAYNET_WORKERS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    return 1;
}

/// Deterministic-order parallel map over [0, n); tasks must be independent.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
    const int workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) fn(i);
        });
    for (auto& th : pool) th.join();
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Monte-Carlo BER with fresh symbols and noise per chunk; runs until the
/// worst (m,b) pair has collected min_errors errors or the symbol budget is
/// exhausted.
inline BerReport evaluate_ber(const Topology& t, const RelayParams& params,
                              const ModulationSpec& spec, ReceiverKind kind, double sigma,
                              std::uint64_t seed, long long min_errors = 100,
                              long long max_symbols = 4000000) {
    const int chunk = 20000;
    BerCounter counter(spec.M, spec.B);
    long long total = 0;
    for (int c = 0; total < max_symbols; ++c) {
        const int K = static_cast<int>(std::min<long long>(chunk, max_symbols - total));
        const std::uint64_t s = detail::mix_seed(seed, static_cast<std::uint64_t>(c));
        const BitFrame frame = BitFrame::random(spec, K, s);
        const Vec symbols = modulate_frame(spec, frame);
        const NoiseBatch noise = NoiseBatch::draw(t, K, sigma, s ^ 0x517cc1b727220a95ull);
        const ForwardTrace trace = forward(t, params, symbols, noise);
        accumulate_ber(counter, trace.r, params, frame, spec, kind);
        total += K;
        if (counter.worst_errors() >= min_errors) break;
    }
    return counter.report();
}

struct SweepRow {
    double inv_sigma2_db = 0.0;
    bool infeasible = false;
    Mat per_bit;  // M x B error rates
    double ber_worst = 1.0;
    double ci_low = 0.0, ci_high = 1.0;  // CI of the worst pair
};

struct SweepResult {
    std::string optimizer;
    std::vector<SweepRow> rows;
};

inline void write_sweep_csv(const std::string& path, const SweepResult& res,
                            const ModulationSpec& spec) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open for writing: " + path);
    out << "inv_sigma2_db,ber_worst";
    for (int m = 1; m <= spec.M; ++m)
        for (int b = 1; b <= spec.B; ++b) out << ",ber_m" << m << "_b" << b;
    out << ",ci_low,ci_high\n";
    for (const auto& row : res.rows) {
        out << detail::fmt_double(row.inv_sigma2_db);
        if (row.infeasible) {
            out << ",inf";
            for (int i = 0; i < spec.M * spec.B; ++i) out << ",inf";
            out << ",inf,inf\n";
            continue;
        }
        out << ',' << detail::fmt_double(row.ber_worst);
        for (int m = 0; m < spec.M; ++m)
            for (int b = 0; b < spec.B; ++b) out << ',' << detail::fmt_double(row.per_bit(m, b));
        out << ',' << detail::fmt_double(row.ci_low) << ',' << detail::fmt_double(row.ci_high)
            << '\n';
    }
}

/// Trains the deep-relay optimizer once, spanning the config's noise grid.
inline TrainResult train_dr(const Topology& t, const ExperimentConfig& cfg, std::uint64_t seed) {
    TrainConfig tc;
    tc.kind = cfg.receiver;
    tc.lr = cfg.train_lr;
    tc.stage_iter_cap = cfg.train_stage_cap;
    tc.max_stages = cfg.train_max_stages;
    tc.loss.K = cfg.train_batch;
    tc.seed = seed;
    tc.rms_init = cfg.rms_init;
    double s2_lo = cfg.train_sigma2_init, s2_hi = cfg.train_sigma2_max;
    if (s2_lo <= 0.0 || s2_hi <= 0.0) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (double db : cfg.snr_grid_db) {
            lo = std::min(lo, cfg.sigma2_of_db(db));
            hi = std::max(hi, cfg.sigma2_of_db(db));
        }
        if (cfg.snr_grid_db.empty()) lo = hi = cfg.sigma2_of_db(cfg.cell_edge_snr_db);
        // The curriculum must start quiet enough to learn the structure
        // first; a grid-derived start can already be past that point.
        if (s2_lo <= 0.0) s2_lo = std::min(lo / 4.0, 1e-6);
        if (s2_hi <= 0.0) s2_hi = hi * 1.5;
    }
    tc.sigma2_init = s2_lo;
    tc.sigma2_max = s2_hi;
    return train(t, cfg.modulation, tc);
}

/// One sweep of BER vs 1/sigma^2 for one optimizer and one master seed.
/// optimizer is "linear" or "dr".
inline SweepResult run_ber_sweep_single(const ExperimentConfig& cfg, const std::string& optimizer,
                                        std::uint64_t seed) {
    const Topology t = cfg.build_topology(seed);
    if (optimizer == "dr" && t.total_relays() == 0)
        throw config_error("deep-relay optimization needs at least one relay");

    SweepResult res;
    res.optimizer = optimizer;
    res.rows.resize(cfg.snr_grid_db.size());

    std::optional<TrainResult> dr;
    if (optimizer == "dr") dr = train_dr(t, cfg, seed);

    detail::parallel_for(static_cast<int>(cfg.snr_grid_db.size()), [&](int gi) {
        SweepRow& row = res.rows[gi];
        row.inv_sigma2_db = cfg.snr_grid_db[gi];
        const double sigma2 = cfg.sigma2_of_db(row.inv_sigma2_db);
        const double sigma = std::sqrt(sigma2);
        RelayParams params;
        if (optimizer == "linear") {
            LinOptConfig lc;
            lc.P_max = cfg.P_max;
            lc.seed = seed;
            lc.max_sweeps = cfg.lin_max_sweeps;
            lc.max_zeta_rounds = cfg.lin_zeta_rounds;
            try {
                params = optimize(t, sigma, cfg.modulation, lc).params;
            } catch (const infeasible_error&) {
                row.infeasible = true;
                return;
            }
        } else {
            params = select_snapshot(*dr, sigma2).params;
            // Curriculum snapshots are taken the moment a stage clears the 5%
            // batch threshold, so they are barely trained for their noise
            // level; polish at the exact evaluation variance.
            if (cfg.train_refine_iters > 0) {
                LossConfig rc;
                rc.K = cfg.train_batch;
                params = refine(t, cfg.modulation, params, sigma2, cfg.receiver,
                                cfg.train_refine_iters, detail::mix_seed(seed, 0x7ef1 + gi), rc,
                                cfg.train_lr);
            }
        }
        const long long budget =
            std::min<long long>(cfg.eval_max_symbols,
                                static_cast<long long>(100.0 / cfg.ber_floor));
        const BerReport rep =
            evaluate_ber(t, params, cfg.modulation, cfg.receiver, sigma,
                         detail::mix_seed(seed, 0xbe5000 + gi), cfg.eval_min_errors, budget);
        row.per_bit = rep.rate;
        row.ber_worst = rep.worst;
        const ConfidenceInterval ci = rep.worst_ci();
        row.ci_low = ci.low;
        row.ci_high = ci.high;
    });
    return res;
}

/// Runs the configured sweep(s) and writes one CSV per optimizer and seed
/// into output_dir. Returns the written paths.
inline std::vector<std::string> run_ber_sweep(const ExperimentConfig& cfg) {
    std::vector<std::string> optimizers;
    if (cfg.optimizer == "both") {
        optimizers = {"linear", "dr"};
    } else {
        optimizers = {cfg.optimizer};
    }
    std::vector<std::string> paths;
    for (const std::string& opt : optimizers) {
        for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
            SweepResult res = run_ber_sweep_single(cfg, opt, cfg.seeds[si]);
            std::string path = cfg.output_dir + "/sweep_" + opt;
            if (cfg.seeds.size() > 1) path += "_seed" + std::to_string(cfg.seeds[si]);
            path += ".csv";
            write_sweep_csv(path, res, cfg.modulation);
            paths.push_back(path);
        }
    }
    return paths;
}

// --------------------------------------------------------------------------
// Median study over relay counts at a fixed cell-edge SNR.
// --------------------------------------------------------------------------

struct MedianCell {
    int n_relays = 0;
    std::string optimizer;
    std::vector<double> per_seed;  // worst BER, ordered as cfg.seeds
    double median = 0.0, q25 = 0.0, q75 = 0.0;
};

inline double percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * (static_cast<double>(v.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline std::vector<MedianCell> run_median_study(const ExperimentConfig& cfg) {
    if (cfg.relay_counts.empty()) throw config_error("median study: relay_counts is empty");
    if (!cfg.spatial) throw config_error("median study: spatial network config required");
    const double sigma2 = cfg.sigma2_of_db(cfg.cell_edge_snr_db);
    const double sigma = std::sqrt(sigma2);
    const int S = static_cast<int>(cfg.seeds.size());

    std::vector<std::string> optimizers;
    if (cfg.optimizer == "both") {
        optimizers = {"linear", "dr"};
    } else {
        optimizers = {cfg.optimizer};
    }

    std::vector<MedianCell> cells;
    for (int n : cfg.relay_counts) {
        for (const std::string& opt : optimizers) {
            MedianCell cell;
            cell.n_relays = n;
            cell.optimizer = opt;
            cell.per_seed.assign(S, 1.0);
            detail::parallel_for(S, [&](int si) {
                const std::uint64_t seed = cfg.seeds[si];
                ExperimentConfig sub = cfg;
                sub.spatial->n_relays = n;
                const Topology t = sub.build_topology(seed);
                RelayParams params;
                if (opt == "linear") {
                    LinOptConfig lc;
                    lc.P_max = cfg.P_max;
                    lc.seed = seed;
                    lc.max_sweeps = cfg.lin_max_sweeps;
                    lc.max_zeta_rounds = cfg.lin_zeta_rounds;
                    try {
                        params = optimize(t, sigma, cfg.modulation, lc).params;
                    } catch (const infeasible_error&) {
                        cell.per_seed[si] = 1.0;
                        return;
                    }
                } else {
                    ExperimentConfig tcfg = sub;
                    tcfg.snr_grid_db = {cfg.cell_edge_snr_db};
                    params = select_snapshot(train_dr(t, tcfg, seed), sigma2).params;
                    if (cfg.train_refine_iters > 0) {
                        LossConfig rc;
                        rc.K = cfg.train_batch;
                        params = refine(t, cfg.modulation, params, sigma2, cfg.receiver,
                                        cfg.train_refine_iters,
                                        detail::mix_seed(seed, 0x8ef2 + n), rc, cfg.train_lr);
                    }
                }
                const long long budget =
                    std::min<long long>(cfg.eval_max_symbols,
                                        static_cast<long long>(100.0 / cfg.ber_floor));
                cell.per_seed[si] = evaluate_ber(t, params, cfg.modulation, cfg.receiver, sigma,
                                                 detail::mix_seed(seed, 0x3ed1a0 + n),
                                                 cfg.eval_min_errors, budget)
                                        .worst;
            });
            cell.median = percentile(cell.per_seed, 0.5);
            cell.q25 = percentile(cell.per_seed, 0.25);
            cell.q75 = percentile(cell.per_seed, 0.75);
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

inline void write_median_csv(const std::string& path, const std::vector<MedianCell>& cells,
                             int n_seeds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open for writing: " + path);
    out << "n_relays,optimizer,ber_median,ber_q25,ber_q75";
    for (int s = 1; s <= n_seeds; ++s) out << ",ber_seed" << s;
    out << '\n';
    for (const auto& c : cells) {
        out << c.n_relays << ',' << c.optimizer << ',' << detail::fmt_double(c.median) << ','
            << detail::fmt_double(c.q25) << ',' << detail::fmt_double(c.q75);
        for (double v : c.per_seed) out << ',' << detail::fmt_double(v);
        out << '\n';
    }
}

// --------------------------------------------------------------------------
// Noiseless transfer-function dump.
// --------------------------------------------------------------------------

inline void write_transfer_csv(const std::string& path, const Topology& t,
                               const RelayParams& params) {
    const int n = 2001;  // s in [-1, 1], step 0.001, endpoints exact
    Vec grid(n);
    for (int i = 0; i < n; ++i) grid[i] = -1.0 + 2.0 * i / (n - 1);
    grid[0] = -1.0;
    grid[n - 1] = 1.0;
    const Mat rbar = transfer_function(t, params, grid);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open for writing: " + path);
    out << "s";
    for (int m = 1; m <= t.M; ++m) out << ",rbar_m" << m;
    out << '\n';
    for (int i = 0; i < n; ++i) {
        out << detail::fmt_double(grid[i]);
        for (int m = 0; m < t.M; ++m) out << ',' << detail::fmt_double(rbar(m, i));
        out << '\n';
    }
}

inline void write_placement_csv(const std::string& path, const Placement& pl,
                                const std::vector<int>& layer_of_relay) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open for writing: " + path);
    out << "id,x,y,layer\n";
    out << "bs," << 0.0 << ',' << 0.0 << ",-1\n";
    for (std::size_t i = 0; i < pl.relays.size(); ++i)
        out << "relay" << i << ',' << detail::fmt_double(pl.relays[i].x) << ','
            << detail::fmt_double(pl.relays[i].y) << ',' << layer_of_relay[i] << '\n';
    for (std::size_t m = 0; m < pl.receivers.size(); ++m)
        out << "rx" << m << ',' << detail::fmt_double(pl.receivers[m].x) << ','
            << detail::fmt_double(pl.receivers[m].y) << ",-2\n";
}

inline void write_training_log_csv(const std::string& path, const TrainResult& result) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open for writing: " + path);
    out << "stage,sigma2,iter,loss,ber_worst\n";
    for (const auto& rec : result.history)
        out << rec.stage << ',' << detail::fmt_double(rec.sigma2) << ',' << rec.iter << ','
            << detail::fmt_double(rec.loss) << ',' << detail::fmt_double(rec.ber_worst) << '\n';
}

inline void write_convergence_log_csv(const std::string& path, const LinOptResult& result) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open for writing: " + path);
    out << "zeta_round,sweep,layer,eta,max_power\n";
    for (const auto& row : result.log)
        out << row.zeta_round << ',' << row.sweep << ',' << row.layer << ','
            << detail::fmt_double(row.eta) << ',' << detail::fmt_double(row.max_power) << '\n';
}

}  // namespace relaynet
