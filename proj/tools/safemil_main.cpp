#include "safemil/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

safemil::ExperimentConfig load_config(const std::string& config_path, const std::string& out) {
    safemil::ExperimentConfig cfg = safemil::ExperimentConfig::from_toml_file(config_path);
    if (!out.empty()) cfg.out_dir = out;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SafeMIL offline safe imitation learning experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string method_arg;
    std::optional<std::uint64_t> seed_arg;

    auto add_common = [&](CLI::App* sub, bool with_method) {
        sub->add_option("--config", config_path, "experiment config (TOML)")->required();
        sub->add_option("--out", out_dir, "output directory override");
        if (with_method)
            sub->add_option("--method", method_arg,
                            "policy method (default: every configured method)");
        sub->add_option("--seed", seed_arg, "single training seed (default: all)");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate datasets and manifest");
    add_common(gen, false);
    CLI::App* solve = app.add_subcommand("solve", "exact constrained/unconstrained reference");
    add_common(solve, false);
    CLI::App* train = app.add_subcommand("train", "train cost model and policy");
    add_common(train, true);
    CLI::App* eval = app.add_subcommand("eval", "evaluate trained checkpoints");
    add_common(eval, true);
    CLI::App* sweep = app.add_subcommand("sweep", "bag-size / segment-length sweep");
    add_common(sweep, false);
    CLI::App* report = app.add_subcommand("report", "aggregate tables and plot data");
    add_common(report, false);

    CLI11_PARSE(app, argc, argv);

    try {
        const safemil::ExperimentConfig cfg = load_config(config_path, out_dir);
        std::vector<safemil::PolicyMethod> methods = cfg.methods;
        if (!method_arg.empty()) methods = {safemil::method_from_name(method_arg)};

        if (gen->parsed()) {
            safemil::cmd_gen_data(cfg);
            std::cout << "datasets written to " << cfg.out_dir << "/data\n";
        } else if (solve->parsed()) {
            safemil::cmd_solve(cfg);
            std::cout << "reference policies written to " << cfg.out_dir << "/solve\n";
        } else if (train->parsed()) {
            for (safemil::PolicyMethod m : methods) {
                safemil::cmd_train(cfg, m, seed_arg);
                std::cout << "trained " << safemil::method_name(m) << "\n";
            }
        } else if (eval->parsed()) {
            for (safemil::PolicyMethod m : methods) {
                const safemil::EvalReport rep = safemil::cmd_eval(cfg, m, seed_arg);
                std::cout << safemil::method_name(m)
                          << ": normalized return " << rep.normalized.normalized_return
                          << ", normalized cost " << rep.normalized.normalized_cost << "\n";
            }
        } else if (sweep->parsed()) {
            safemil::cmd_sweep(cfg);
            std::cout << "sweep table written to " << cfg.out_dir << "/sweep/sweep.csv\n";
        } else if (report->parsed()) {
            safemil::cmd_report(cfg);
            std::cout << "report written to " << cfg.out_dir << "/report\n";
        }
    } catch (const safemil::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const safemil::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const safemil::GenerationError& e) {
        std::cerr << "generation error: " << e.what() << "\n";
        return 2;
    } catch (const safemil::InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 2;
    } catch (const safemil::TrainingError& e) {
        std::cerr << "training failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
