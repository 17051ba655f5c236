#include <CLI11.hpp>

#include "structmix/cli.hpp"

int main(int argc, char** argv) {
    structmix::cli::Options opts;
    CLI::App app{"Mixed effects model for geometric and functional PC projections"};
    app.add_option("command", opts.command, "simulate, fit, verify or pca")
        ->required()
        ->check(CLI::IsMember({"simulate", "fit", "verify", "pca"}));
    app.add_option("--config", opts.config, "JSON configuration file")->required();
    app.add_option("--out", opts.out, "output directory");
    app.add_option("--threads", opts.threads, "worker threads (0 = all cores)");
    app.add_option("--seed", opts.seed, "override the configured seed");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : structmix::cli::kExitValidation;
    }
    return structmix::cli::run(opts);
}
