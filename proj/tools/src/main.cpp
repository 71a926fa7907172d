#include "commands.hpp"
#include "config.hpp"

#include <CLI11.hpp>

#include <cartolab/util.hpp>

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

namespace {

using cartolab::Error;
using namespace cartolab::cli;

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    long long seed = 0;
    int threads = 1;
    std::string strata;
    std::string modes;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "TOML or JSON configuration file");
    cmd->add_option("--out", args.out_dir, "output directory")->capture_default_str();
    cmd->add_option("--seed", args.seed, "random seed (non-negative)");
    cmd->add_option("--threads", args.threads, "worker threads");
    cmd->add_option("--strata", args.strata, "stratification variable")
        ->check(CLI::IsMember({"year", "scale", "country", "city", "creator"}));
    cmd->add_option("--modes", args.modes, "semantic mode handling")
        ->check(CLI::IsMember({"on", "off"}));
}

int run(const std::string& name, CLI::App* cmd, const CommonArgs& args,
        void (*fn)(CmdContext&)) {
    Json cfg = args.config_path.empty() ? resolved_defaults() : load_config(args.config_path);
    if (cmd->count("--seed") > 0) {
        if (args.seed < 0) throw Error("BadValue", "seed must be non-negative");
        cfg["seed"] = args.seed;
    }
    if (cmd->count("--threads") > 0) cfg["threads"] = args.threads;
    if (!args.strata.empty()) cfg["rupture"]["strata"] = args.strata;
    if (!args.modes.empty()) cfg["modes"] = (args.modes == "on");
    check_config(cfg);

    std::filesystem::create_directories(args.out_dir);
    CmdContext ctx;
    ctx.cfg = std::move(cfg);
    ctx.out_dir = args.out_dir;
    log_info("running " + name);
    fn(ctx);
    if (ctx.skipped > 0) {
        log_warn(name + ": " + std::to_string(ctx.skipped) + " record(s) skipped");
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"batch analytics for digitized map corpora"};
    app.require_subcommand(1);

    struct Entry {
        const char* name;
        const char* help;
        void (*fn)(CmdContext&);
    };
    const Entry entries[] = {
        {"ingest", "validate and normalize the catalog", cmd_ingest},
        {"mapels", "extract map elements from the images", cmd_mapels},
        {"cluster", "cluster map element features into sign types", cmd_cluster},
        {"rupture", "semiotic rupture across a stratification", cmd_rupture},
        {"complexes", "co-occurrence sign complexes", cmd_complexes},
        {"univocity", "single-meaning share of the sign system", cmd_univocity},
        {"composition", "page layout and composition analysis", cmd_composition},
        {"network", "creator collaboration network", cmd_network},
        {"diffusion", "dyadic models of sign diffusion", cmd_diffusion},
        {"chrono", "production chronology and attention", cmd_chrono},
        {"mosaic", "exemplar mosaic of the sign clusters", cmd_mosaic},
        {"report", "bundle analysis outputs into one report", cmd_report},
    };

    std::map<std::string, CommonArgs> common;
    std::map<std::string, CLI::App*> subcmds;
    std::map<std::string, const Entry*> by_name;
    for (const Entry& e : entries) {
        CLI::App* cmd = app.add_subcommand(e.name, e.help);
        add_common(cmd, common[e.name]);
        subcmds[e.name] = cmd;
        by_name[e.name] = &e;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Exit contract: 0 ok, 2 partial, 1 fatal. Usage errors are fatal.
        return app.exit(e) == 0 ? 0 : 1;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        return run(name, subcmds[name], common[name], by_name[name]->fn);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
