// Command-line harness: scenario runs, gain sweeps, reference-path
// generation, and the loopback plant server.

#include "cmotion/runner.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

cmotion::RunConfig load_run_config(const std::string& config_file, const std::string& scenario,
                                   const std::string& output, const std::string& transport,
                                   const std::string& host, int port) {
    cmotion::RunConfig cfg;
    if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) throw cmotion::config_error("cannot open config file: " + config_file);
        cfg = cmotion::parse_config(in);
    }
    if (!scenario.empty()) {
        std::stringstream patch;
        patch << "scenario=" << scenario;
        // Re-apply scenario defaults only when no config file set gains.
        if (config_file.empty()) {
            cfg = cmotion::parse_config(patch);
        } else {
            cfg.scenario = cmotion::detail::parse_scenario(scenario);
        }
    }
    if (!output.empty()) cfg.output = output;
    if (!transport.empty()) {
        cfg.transport = (transport == "tcp") ? cmotion::TransportKind::Tcp
                                             : cmotion::TransportKind::InProcess;
    }
    if (!host.empty()) cfg.host = host;
    if (port > 0) cfg.port = port;
    return cfg;
}

std::vector<double> parse_real_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty()) out.push_back(std::stod(cell));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cmotion: constrained-motion controller and simulator"};
    app.require_subcommand(1);

    std::string config_file, scenario, output, transport, host;
    int port = 0;

    auto* run = app.add_subcommand("run", "run one scenario and write a CSV log");
    run->add_option("--config", config_file, "flat key=value config file");
    run->add_option("--scenario", scenario, "pf-only | rcm-drill | ucm-mastoid");
    run->add_option("--output", output, "CSV log path (CMOTION_OUT_DIR applies)");
    run->add_option("--transport", transport, "in-process | tcp");
    run->add_option("--host", host, "plant server host (tcp transport)");
    run->add_option("--port", port, "plant server port (tcp transport)");

    std::string beta_list = "-4,-8,-12,-16", gamma_list = "-10", sweep_out;
    auto* sweep = app.add_subcommand("sweep", "gain sweep on the pf-only scenario");
    sweep->add_option("--config", config_file, "flat key=value config file");
    sweep->add_option("--beta-prime", beta_list, "comma-separated beta' values");
    sweep->add_option("--gamma-c", gamma_list, "comma-separated gamma_c values");
    sweep->add_option("--output", sweep_out, "sweep table path (CMOTION_OUT_DIR applies)");

    std::string kind = "spiral", gen_out;
    std::vector<std::string> param_kv;
    auto* genpath = app.add_subcommand("genpath", "generate a reference curve file");
    genpath->add_option("--kind", kind, "line | circle | spiral | drill | mastoid");
    genpath->add_option("--out", gen_out, "output curve file (CMOTION_OUT_DIR applies)");
    genpath->add_option("--param", param_kv, "generator parameter key=value (repeatable)");

    int serve_port = 0, sessions = 0;
    auto* serve = app.add_subcommand("serve", "start the loopback plant server");
    serve->add_option("--config", config_file, "flat key=value config file");
    serve->add_option("--scenario", scenario, "scenario providing plant start pose");
    serve->add_option("--port", serve_port, "listen port (0: ephemeral, printed)");
    serve->add_option("--sessions", sessions, "stop after N sessions (0: run forever)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto cfg = load_run_config(config_file, scenario, output, transport, host, port);
            const auto rs = cmotion::run_scenario(cfg);
            cmotion::print_summary(std::cout, rs);
            return 0;
        }
        if (*sweep) {
            auto cfg = load_run_config(config_file, "pf-only", "", "", "", 0);
            if (!config_file.empty()) cfg.scenario = cmotion::ScenarioKind::PfOnly;
            const auto cells =
                cmotion::gain_sweep(cfg, parse_real_list(beta_list), parse_real_list(gamma_list));
            if (sweep_out.empty()) {
                cmotion::write_sweep_table(std::cout, cells);
            } else {
                std::ofstream out(cmotion::resolve_output_path(sweep_out));
                if (!out) throw cmotion::config_error("cannot open output: " + sweep_out);
                cmotion::write_sweep_table(out, cells);
            }
            return 0;
        }
        if (*genpath) {
            std::map<std::string, double> params;
            for (const auto& kvs : param_kv) {
                const auto eq = kvs.find('=');
                if (eq == std::string::npos) {
                    throw cmotion::config_error("--param expects key=value, got '" + kvs + "'");
                }
                params[kvs.substr(0, eq)] = std::stod(kvs.substr(eq + 1));
            }
            if (gen_out.empty()) {
                cmotion::gen_reference_path(kind, params, std::cout);
            } else {
                std::ofstream out(cmotion::resolve_output_path(gen_out));
                if (!out) throw cmotion::config_error("cannot open output: " + gen_out);
                cmotion::gen_reference_path(kind, params, out);
            }
            return 0;
        }
        if (*serve) {
            auto cfg = load_run_config(config_file, scenario, "", "", "", 0);
            const auto setup = cmotion::make_scenario(cfg);
            cmotion::PlantServer server(cmotion::PlantState{setup.initial_w_T_e, 0.0, 0},
                                        setup.scene.w_T_r, cfg.gains.T_e);
            const int bound = server.bind(serve_port);
            std::cout << "listening on 127.0.0.1:" << bound << std::endl;
            server.serve(sessions);
            return 0;
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << std::endl;
        return 1;
    }
    return 0;
}
