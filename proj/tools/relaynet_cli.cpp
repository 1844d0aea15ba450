// Command line front end: network generation, both optimizers, BER sweeps,
// the relay-count median study and transfer-function dumps. Everything is
// driven by a JSON experiment config; see configs/ for worked examples.
//
// Exit codes: 0 success, 2 infeasible optimization, 1 any other error.

#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "relaynet/experiment.hpp"

namespace {

using namespace relaynet;

struct CommonArgs {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")->required();
    cmd->add_option("--out", args.out, "output directory (overrides config output_dir)");
    cmd->add_option("--seed", args.seed, "master seed (overrides config seeds)")
        ->each([&args](const std::string&) { args.seed_set = true; });
}

ExperimentConfig load(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args.config_path);
    if (!args.out.empty()) cfg.output_dir = args.out;
    if (args.seed_set) cfg.seeds = {args.seed};
    std::filesystem::create_directories(cfg.output_dir);
    return cfg;
}

int cmd_generate(const CommonArgs& args) {
    ExperimentConfig cfg = load(args);
    const std::uint64_t seed = cfg.seeds.front();
    if (cfg.spatial) {
        SpatialConfig sc = *cfg.spatial;
        sc.seed = seed;
        Placement pl;
        std::vector<int> layer_of_relay;
        Topology t = spatial_network(sc, &pl, &layer_of_relay);
        save_json(t, cfg.output_dir + "/topology.json");
        write_placement_csv(cfg.output_dir + "/placement.csv", pl, layer_of_relay);
    } else {
        save_json(cfg.build_topology(seed), cfg.output_dir + "/topology.json");
    }
    std::printf("wrote %s/topology.json\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_optimize_linear(const CommonArgs& args) {
    ExperimentConfig cfg = load(args);
    if (cfg.snr_grid_db.empty())
        throw config_error("optimize-linear: snr_grid_db must have at least one point");
    const std::uint64_t seed = cfg.seeds.front();
    const Topology t = cfg.build_topology(seed);
    const double sigma = std::sqrt(cfg.sigma2_of_db(cfg.snr_grid_db.front()));
    LinOptConfig lc;
    lc.P_max = cfg.P_max;
    lc.seed = seed;
    lc.max_sweeps = cfg.lin_max_sweeps;
    lc.max_zeta_rounds = cfg.lin_zeta_rounds;
    const LinOptResult res = optimize(t, sigma, cfg.modulation, lc);
    save_json(res.params, cfg.output_dir + "/params_linear.json");
    write_convergence_log_csv(cfg.output_dir + "/convergence_linear.csv", res);
    std::printf("eta=%g", res.eta);
    for (int m = 0; m < cfg.modulation.M; ++m)
        std::printf(" snr[%d]=%g ber[%d]=%g", m + 1, res.snr[m], m + 1, res.ber[m]);
    std::printf("%s\n", res.degraded ? " (degraded rank-one extraction)" : "");
    return 0;
}

int cmd_optimize_dr(const CommonArgs& args) {
    ExperimentConfig cfg = load(args);
    const std::uint64_t seed = cfg.seeds.front();
    const Topology t = cfg.build_topology(seed);
    if (t.total_relays() == 0)
        throw config_error("deep-relay optimization needs at least one relay");
    const TrainResult res = train_dr(t, cfg, seed);
    save_json(res.final_params, cfg.output_dir + "/params_dr.json");
    for (std::size_t s = 0; s < res.snapshots.size(); ++s) {
        char name[64];
        std::snprintf(name, sizeof(name), "/params_dr_stage%02zu.json", s);
        save_json(res.snapshots[s].params, cfg.output_dir + name);
    }
    write_training_log_csv(cfg.output_dir + "/training_dr.csv", res);
    std::printf("stages=%zu iterations=%zu%s\n", res.snapshots.size(), res.history.size(),
                res.hit_iteration_cap ? " (iteration cap hit)" : "");
    return 0;
}

int cmd_sweep(const CommonArgs& args) {
    ExperimentConfig cfg = load(args);
    for (const std::string& path : run_ber_sweep(cfg)) std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_median_study(const CommonArgs& args) {
    ExperimentConfig cfg = load(args);
    const auto cells = run_median_study(cfg);
    const std::string path = cfg.output_dir + "/median_study.csv";
    write_median_csv(path, cells, static_cast<int>(cfg.seeds.size()));
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_transfer(const CommonArgs& args, const std::string& params_path) {
    ExperimentConfig cfg = load(args);
    const Topology t = cfg.build_topology(cfg.seeds.front());
    const RelayParams params = load_params(params_path);
    const std::string path = cfg.output_dir + "/transfer.csv";
    write_transfer_csv(path, t, params);
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cascade relay network optimization experiments"};
    app.require_subcommand(1);

    CommonArgs gen_args, lin_args, dr_args, sweep_args, med_args, tf_args;
    std::string params_path;

    add_common(app.add_subcommand("generate", "build a network and dump topology/placement"),
               gen_args);
    add_common(app.add_subcommand("optimize-linear",
                                  "max-min SNR optimization of linear relay gains"),
               lin_args);
    add_common(app.add_subcommand("optimize-dr", "deep-relay training with noise curriculum"),
               dr_args);
    add_common(app.add_subcommand("sweep", "BER vs 1/sigma^2 sweep for the configured optimizers"),
               sweep_args);
    add_common(app.add_subcommand("median-study",
                                  "median BER over seeds as a function of relay count"),
               med_args);
    CLI::App* tf = app.add_subcommand("transfer", "noiseless transfer function dump");
    add_common(tf, tf_args);
    tf->add_option("--params", params_path, "RelayParams JSON to evaluate")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("generate")) return cmd_generate(gen_args);
        if (app.got_subcommand("optimize-linear")) return cmd_optimize_linear(lin_args);
        if (app.got_subcommand("optimize-dr")) return cmd_optimize_dr(dr_args);
        if (app.got_subcommand("sweep")) return cmd_sweep(sweep_args);
        if (app.got_subcommand("median-study")) return cmd_median_study(med_args);
        if (app.got_subcommand("transfer")) return cmd_transfer(tf_args, params_path);
    } catch (const relaynet::infeasible_error& e) {
        std::fprintf(stderr, "infeasible: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
