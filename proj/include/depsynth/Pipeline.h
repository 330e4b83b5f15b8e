#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "depsynth/Flow.h"
#include "depsynth/Kde.h"

namespace depsynth {

// Everything a pipeline command needs, loaded from a JSON config document and
// optionally overridden by command-line flags. Unknown keys are rejected so
// typos fail loudly.
struct RunConfig {
    std::string dataset;
    std::map<std::string, FeatureKind> schemaHints;
    std::string graphPath;  // annotation-format dependency text
    std::string method = "kde";
    std::string conditioning = "parents";  // "parents" | "ancestors" (full ancestor closure)
    BandwidthRule bandwidthRule = BandwidthRule::Scott;
    double fixedBandwidth = 1.0;  // used only when bandwidthRule == Fixed
    FuzzyPolicy fuzzyPolicy;
    TrainConfig trainConfig;
    std::size_t sampleCount = 1000;
    std::uint64_t seed = 42;
    std::string rulesPath;
    std::string syntheticPath;  // eval input; defaults to <out>/synthetic.csv
    std::string utilityTarget;
    std::string utilityTask;  // "classify" | "regress"
    std::string outDir = "out";
    std::string annotateEndpoint;
    std::string annotateModel;
    std::string annotateDescription;
    int annotateTimeoutSeconds = 60;
    double annotateBackoffSeconds = 1.0;
    std::string configText = "{}";  // raw document, echoed into reports for provenance
};

RunConfig parseRunConfig(const std::string& jsonText);
RunConfig loadRunConfig(const std::string& path);

// Pipeline commands. Each throws DepsynthError on failure; outputs under
// config.outDir are byte-identical across reruns with the same config and
// seed, except for the timing section of the reports.
void cmdAnnotate(const RunConfig& config);
void cmdGraph(const RunConfig& config);
void cmdFit(const RunConfig& config);
void cmdSample(const RunConfig& config);
void cmdEval(const RunConfig& config);

}  // namespace depsynth
