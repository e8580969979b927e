#include <CLI11.hpp>
#include <iostream>

#include "pagoda/checkpoint.hpp"
#include "pagoda/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"pagoda: three-stage distillation pipeline, theory labs and editing tools"};
    app.require_subcommand(0);

    std::string command, config_path, out_dir, omega_prior;
    long long seed = -1;
    std::vector<std::string> overrides;

    app.add_option("command", command, "one of: dsm-train build-pairs distill grow sample eval edit interpolate cfg-train lab");
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out_dir, "output directory (also PGDA_OUT env)");
    app.add_option("--omega-prior", omega_prior,
                   "guidance-weight prior: uniform:a,b | truncnorm:c,s,a,b | point:v");
    app.add_option("overrides", overrides, "key=value config overrides (dotted paths)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (command.empty()) {
        std::cerr << pagoda::cli::usage_text();
        return 2;
    }

    nlohmann::json config = nlohmann::json::object();
    try {
        if (!config_path.empty()) config = nlohmann::json::parse(pagoda::read_file(config_path));
        for (const auto& kv : overrides) pagoda::cli::apply_override(config, kv);
        if (!omega_prior.empty()) config["cfg"]["omega_prior"] = omega_prior;
        if (seed >= 0) config["seed"] = static_cast<std::uint64_t>(seed);
        config["__out"] = pagoda::cli::resolve_out_dir(config, out_dir);
        nlohmann::json summary = pagoda::cli::run_command(command, config);
        std::cout << summary.dump(2) << "\n";
        return summary.value("ok", false) ? 0 : 4;
    } catch (const std::exception& e) {
        std::cerr << "pagoda " << command << ": " << e.what() << "\n";
        return pagoda::cli::exit_code_for_exception(e);
    }
}
