#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "depsynth/Errors.h"
#include "depsynth/Pipeline.h"

namespace {

struct FlagValues {
    std::string config;
    std::uint64_t seed = 0;
    std::string method;
    std::size_t n = 0;
    std::string out;
};

void addCommonOptions(CLI::App* sub, FlagValues* flags) {
    sub->add_option("--config", flags->config, "Path to the json config document");
    sub->add_option("--seed", flags->seed, "Random seed (overrides config)");
    sub->add_option("--method", flags->method, "Synthesis method: kde or nf (overrides config)");
    sub->add_option("--n", flags->n, "Number of rows to sample (overrides config)");
    sub->add_option("--out", flags->out, "Output directory (overrides config)");
}

depsynth::RunConfig resolveConfig(const CLI::App* sub, const FlagValues& flags) {
    depsynth::RunConfig config;
    if (!flags.config.empty()) config = depsynth::loadRunConfig(flags.config);
    if (sub->count("--seed") > 0) config.seed = flags.seed;
    if (sub->count("--method") > 0) config.method = flags.method;
    if (sub->count("--n") > 0) config.sampleCount = flags.n;
    if (sub->count("--out") > 0) config.outDir = flags.out;
    if (config.method != "kde" && config.method != "nf") {
        depsynth::raise(depsynth::ErrorCategory::Config,
                        "method must be 'kde' or 'nf', got: " + config.method);
    }
    return config;
}

void printErrorJson(const std::string& category, const std::string& message) {
    nlohmann::ordered_json log;
    log["error"] = {{"category", category}, {"message", message}};
    std::cerr << log.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"depsynth: dependency-graph tabular data synthesizer"};
    app.require_subcommand(1);

    FlagValues flags;
    CLI::App* annotate = app.add_subcommand("annotate", "Request a dependency annotation over HTTP");
    CLI::App* graph = app.add_subcommand("graph", "Parse, break cycles, and finalize a dependency graph");
    CLI::App* fit = app.add_subcommand("fit", "Fit a synthesis model to the dataset");
    CLI::App* sample = app.add_subcommand("sample", "Sample synthetic rows from a fitted model");
    CLI::App* eval = app.add_subcommand("eval", "Evaluate synthetic data against the real dataset");
    for (CLI::App* sub : {annotate, graph, fit, sample, eval}) {
        addCommonOptions(sub, &flags);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (annotate->parsed()) {
            depsynth::cmdAnnotate(resolveConfig(annotate, flags));
        } else if (graph->parsed()) {
            depsynth::cmdGraph(resolveConfig(graph, flags));
        } else if (fit->parsed()) {
            depsynth::cmdFit(resolveConfig(fit, flags));
        } else if (sample->parsed()) {
            depsynth::cmdSample(resolveConfig(sample, flags));
        } else if (eval->parsed()) {
            depsynth::cmdEval(resolveConfig(eval, flags));
        }
    } catch (const depsynth::DepsynthError& e) {
        printErrorJson(depsynth::errorCategoryName(e.category()), e.what());
        return 1;
    } catch (const std::exception& e) {
        printErrorJson("internal", e.what());
        return 1;
    }
    return 0;
}
