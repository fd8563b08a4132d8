#include <CLI11.hpp>

#include "fairspec/cli.hpp"
#include "fairspec/log.hpp"

int main(int argc, char** argv) {
    using namespace fairspec::cli;
    fairspec::init_logging_from_env();

    CLI::App app{"fairspec: confusion-matrix fairness experiments"};
    app.require_subcommand(1);

    std::string config;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string out;

    for (const char* name : {"synth", "train", "finetune", "eval", "bound", "sharpness", "nu-study"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "JSON experiment config")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "global seed (overrides config)");
        sub->add_option("--threads", threads, "worker cap (overrides config)")->check(CLI::PositiveNumber);
        sub->add_option("--out", out, "output directory (overrides config)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    auto* sub = app.get_subcommands().front();
    Overrides ov;
    if (sub->count("--seed")) ov.seed = seed;
    if (sub->count("--threads")) ov.threads = threads;
    if (sub->count("--out")) ov.out = out;
    return run(command_from_string(sub->get_name()), config, ov);
}
