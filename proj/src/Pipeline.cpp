#include "depsynth/Pipeline.h"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "depsynth/Annotate.h"
#include "depsynth/Errors.h"
#include "depsynth/Metrics.h"

namespace depsynth {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string hexFingerprint(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string readTextFile(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCategory::Io, "cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void writeTextFile(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCategory::Io, "cannot write file: " + path);
    out << text;
    if (!out) raise(ErrorCategory::Io, "failed while writing file: " + path);
}

void requireKnownKeys(const json& obj, std::initializer_list<const char*> allowed,
                      const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        bool known = false;
        for (const char* name : allowed) {
            if (key == name) {
                known = true;
                break;
            }
        }
        if (!known) raise(ErrorCategory::Config, "unknown config key '" + key + "' in " + where);
    }
}

std::string ensureOutDir(const RunConfig& config) {
    if (config.outDir.empty()) raise(ErrorCategory::Config, "output directory is empty");
    std::error_code ec;
    std::filesystem::create_directories(config.outDir, ec);
    if (ec) raise(ErrorCategory::Io, "cannot create output directory: " + config.outDir);
    return config.outDir;
}

std::string outPath(const RunConfig& config, const char* name) {
    return (std::filesystem::path(config.outDir) / name).string();
}

Table loadDataset(const RunConfig& config) {
    if (config.dataset.empty()) raise(ErrorCategory::Config, "config is missing the dataset path");
    CsvLoadReport report;
    Table table = loadCsvInferred(config.dataset, config.schemaHints, &report);
    if (report.rejectedRows > 0) {
        std::cout << "[depsynth] dropped " << report.rejectedRows
                  << " rows with missing cells from " << config.dataset << "\n";
    }
    return table;
}

std::string graphInputPath(const RunConfig& config) {
    if (!config.graphPath.empty()) return config.graphPath;
    return outPath(config, "annotation.txt");
}

ordered_json configEcho(const RunConfig& config) {
    try {
        return ordered_json::parse(config.configText);
    } catch (const json::exception&) {
        return ordered_json::object();
    }
}

ordered_json intervalJson(const Interval& interval) {
    return ordered_json::array({interval.lo, interval.hi});
}

}  // namespace

RunConfig parseRunConfig(const std::string& jsonText) {
    json doc;
    try {
        doc = json::parse(jsonText);
    } catch (const json::exception& e) {
        raise(ErrorCategory::Config, std::string("config is not valid json: ") + e.what());
    }
    if (!doc.is_object()) raise(ErrorCategory::Config, "config root must be a json object");
    requireKnownKeys(doc,
                     {"dataset", "schema_hints", "graph", "method", "conditioning", "kde", "nf",
                      "n", "seed", "rules", "synthetic", "utility", "out", "annotate"},
                     "config root");
    RunConfig config;
    config.configText = jsonText;
    try {
        if (doc.contains("dataset")) config.dataset = doc["dataset"].get<std::string>();
        if (doc.contains("graph")) config.graphPath = doc["graph"].get<std::string>();
        if (doc.contains("out")) config.outDir = doc["out"].get<std::string>();
        if (doc.contains("rules")) config.rulesPath = doc["rules"].get<std::string>();
        if (doc.contains("synthetic")) config.syntheticPath = doc["synthetic"].get<std::string>();
        if (doc.contains("n")) config.sampleCount = doc["n"].get<std::size_t>();
        if (doc.contains("seed")) config.seed = doc["seed"].get<std::uint64_t>();
        if (doc.contains("method")) config.method = doc["method"].get<std::string>();
        if (doc.contains("conditioning")) config.conditioning = doc["conditioning"].get<std::string>();
        if (doc.contains("schema_hints")) {
            for (const auto& [name, kind] : doc["schema_hints"].items()) {
                const std::string value = kind.get<std::string>();
                if (value == "numerical") {
                    config.schemaHints[name] = FeatureKind::Numerical;
                } else if (value == "categorical") {
                    config.schemaHints[name] = FeatureKind::Categorical;
                } else {
                    raise(ErrorCategory::Config,
                          "schema hint for '" + name + "' must be numerical or categorical");
                }
            }
        }
        if (doc.contains("kde")) {
            const json& k = doc["kde"];
            requireKnownKeys(k, {"bandwidth_rule", "fixed_bandwidth", "k_min", "eps0_per_dim", "growth"},
                             "kde");
            if (k.contains("bandwidth_rule")) {
                config.bandwidthRule = bandwidthRuleFromName(k["bandwidth_rule"].get<std::string>());
            }
            if (k.contains("fixed_bandwidth")) config.fixedBandwidth = k["fixed_bandwidth"].get<double>();
            if (k.contains("k_min")) config.fuzzyPolicy.kMin = k["k_min"].get<int>();
            if (k.contains("eps0_per_dim")) config.fuzzyPolicy.eps0PerDim = k["eps0_per_dim"].get<double>();
            if (k.contains("growth")) config.fuzzyPolicy.growth = k["growth"].get<double>();
        }
        if (doc.contains("nf")) {
            const json& f = doc["nf"];
            requireKnownKeys(f,
                             {"epochs", "batch_size", "learning_rate", "weight_decay",
                              "dropout_rate", "hidden_units", "patience", "affine_only"},
                             "nf");
            if (f.contains("epochs")) config.trainConfig.epochs = f["epochs"].get<int>();
            if (f.contains("batch_size")) config.trainConfig.batchSize = f["batch_size"].get<int>();
            if (f.contains("learning_rate")) config.trainConfig.learningRate = f["learning_rate"].get<double>();
            if (f.contains("weight_decay")) config.trainConfig.weightDecay = f["weight_decay"].get<double>();
            if (f.contains("dropout_rate")) config.trainConfig.dropoutRate = f["dropout_rate"].get<double>();
            if (f.contains("hidden_units")) config.trainConfig.hiddenUnits = f["hidden_units"].get<int>();
            if (f.contains("patience")) config.trainConfig.patience = f["patience"].get<int>();
            if (f.contains("affine_only")) config.trainConfig.affineOnly = f["affine_only"].get<bool>();
        }
        if (doc.contains("utility")) {
            const json& u = doc["utility"];
            requireKnownKeys(u, {"target", "task"}, "utility");
            if (u.contains("target")) config.utilityTarget = u["target"].get<std::string>();
            if (u.contains("task")) config.utilityTask = u["task"].get<std::string>();
        }
        if (doc.contains("annotate")) {
            const json& a = doc["annotate"];
            requireKnownKeys(a, {"endpoint", "model", "description", "timeout_seconds", "backoff_seconds"},
                             "annotate");
            if (a.contains("endpoint")) config.annotateEndpoint = a["endpoint"].get<std::string>();
            if (a.contains("model")) config.annotateModel = a["model"].get<std::string>();
            if (a.contains("description")) config.annotateDescription = a["description"].get<std::string>();
            if (a.contains("timeout_seconds")) config.annotateTimeoutSeconds = a["timeout_seconds"].get<int>();
            if (a.contains("backoff_seconds")) config.annotateBackoffSeconds = a["backoff_seconds"].get<double>();
        }
    } catch (const json::exception& e) {
        raise(ErrorCategory::Config, std::string("config field has the wrong type: ") + e.what());
    }
    if (config.method != "kde" && config.method != "nf") {
        raise(ErrorCategory::Config, "method must be 'kde' or 'nf', got: " + config.method);
    }
    if (config.conditioning != "parents" && config.conditioning != "ancestors") {
        raise(ErrorCategory::Config,
              "conditioning must be 'parents' or 'ancestors', got: " + config.conditioning);
    }
    return config;
}

RunConfig loadRunConfig(const std::string& path) { return parseRunConfig(readTextFile(path)); }

void cmdAnnotate(const RunConfig& config) {
    if (config.annotateEndpoint.empty()) {
        raise(ErrorCategory::Config, "annotate needs annotate.endpoint in the config");
    }
    if (config.dataset.empty()) raise(ErrorCategory::Config, "config is missing the dataset path");
    const Schema schema = inferSchemaFromCsv(config.dataset, config.schemaHints);
    ensureOutDir(config);
    AnnotationRequest request;
    request.datasetDescription = config.annotateDescription;
    request.featureNames = annotationFeatureOrder(schema);
    request.endpoint = config.annotateEndpoint;
    request.modelName = config.annotateModel;
    request.authToken = authTokenFromEnvironment();
    request.timeoutSeconds = config.annotateTimeoutSeconds;
    request.backoffSeconds = config.annotateBackoffSeconds;
    request.archivePath = outPath(config, "annotation_response.json");
    const std::string text = requestAnnotation(request);
    writeTextFile(outPath(config, "annotation.txt"), text);
    std::cout << "[depsynth] annotation written to " << outPath(config, "annotation.txt") << "\n";
}

void cmdGraph(const RunConfig& config) {
    const Table table = loadDataset(config);
    const std::string inputPath = graphInputPath(config);
    DependencyGraph graph = parseDependencyText(readTextFile(inputPath), table.schema());
    const std::vector<DependencyGraph::Edge> removed = graph.minFeedbackArcSet();
    graph.finalize();
    const std::vector<std::string> order = graph.topoOrder();

    ensureOutDir(config);
    writeTextFile(outPath(config, "graph.txt"), graph.dependencyText());

    ordered_json report;
    report["input"] = inputPath;
    ordered_json edges = ordered_json::array();
    for (const auto& e : removed) {
        edges.push_back({{"parent", e.parent}, {"child", e.child}});
    }
    report["removed_edges"] = std::move(edges);
    report["topo_order"] = order;
    report["graph_fingerprint"] = hexFingerprint(graph.fingerprint());
    report["config"] = configEcho(config);
    writeTextFile(outPath(config, "graph_report.json"), report.dump(1) + "\n");

    std::cout << "[depsynth] removed " << removed.size() << " edges to break cycles\n";
    std::cout << "[depsynth] finalized graph written to " << outPath(config, "graph.txt") << "\n";
}

void cmdFit(const RunConfig& config) {
    const Table table = loadDataset(config);
    DependencyGraph graph = parseDependencyText(readTextFile(graphInputPath(config)), table.schema());
    graph.finalize();
    if (config.conditioning == "ancestors") {
        graph = graph.ancestorClosure();
    }
    ensureOutDir(config);

    ordered_json report;
    report["method"] = config.method;
    if (config.method == "kde") {
        const KdeModel model(table, graph, config.fuzzyPolicy, config.bandwidthRule,
                             config.fixedBandwidth);
        ordered_json descriptor;
        descriptor["format"] = "depsynth-kde-v1";
        descriptor["bandwidth_rule"] = bandwidthRuleName(config.bandwidthRule);
        descriptor["fixed_bandwidth"] = config.fixedBandwidth;
        descriptor["k_min"] = config.fuzzyPolicy.kMin;
        descriptor["eps0_per_dim"] = config.fuzzyPolicy.eps0PerDim;
        descriptor["growth"] = config.fuzzyPolicy.growth;
        descriptor["schema_fingerprint"] = hexFingerprint(table.schema().fingerprint());
        descriptor["graph_fingerprint"] = hexFingerprint(graph.fingerprint());
        descriptor["graph_text"] = graph.dependencyText();
        writeTextFile(outPath(config, "model.json"), descriptor.dump(1) + "\n");
        report["timing"] = {{"training_seconds", 0.0}};  // retrieval index only, no training
        std::cout << "[depsynth] kde descriptor written; training time 0 s\n";
    } else {
        TrainConfig train = config.trainConfig;
        train.seed = config.seed;
        const auto t0 = std::chrono::steady_clock::now();
        const FlowModel model = FlowModel::fit(table, graph, train);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        model.save(outPath(config, "model.json"));
        ordered_json nll = ordered_json::object();
        for (const FeatureSpec& f : table.schema().features()) {
            const std::vector<double>& history = model.trainingHistory(f.name);
            if (!history.empty()) {
                nll[f.name] = {{"final_nll", history.back()},
                               {"epochs_run", static_cast<int>(history.size())}};
            }
            std::cout << "[depsynth] fit " << f.name << ": nll "
                      << (history.empty() ? 0.0 : history.back()) << " after " << history.size()
                      << " epochs\n";
        }
        report["features"] = std::move(nll);
        report["timing"] = {{"training_seconds", seconds}};
    }
    report["config"] = configEcho(config);
    writeTextFile(outPath(config, "fit_report.json"), report.dump(1) + "\n");
    std::cout << "[depsynth] model written to " << outPath(config, "model.json") << "\n";
}

void cmdSample(const RunConfig& config) {
    const std::string modelPath = outPath(config, "model.json");
    const std::string archive = readTextFile(modelPath);
    std::string format;
    try {
        format = json::parse(archive).at("format").get<std::string>();
    } catch (const json::exception& e) {
        raise(ErrorCategory::Model, std::string("model archive is not readable: ") + e.what());
    }
    if (config.sampleCount < 1) raise(ErrorCategory::Config, "sample count must be >= 1");

    Table synth{};
    double seconds = 0.0;
    if (format == "depsynth-kde-v1") {
        const json descriptor = json::parse(archive);
        const Table table = loadDataset(config);
        if (hexFingerprint(table.schema().fingerprint()) !=
            descriptor.at("schema_fingerprint").get<std::string>()) {
            raise(ErrorCategory::Model, "model archive schema fingerprint mismatch");
        }
        DependencyGraph graph =
            parseDependencyText(descriptor.at("graph_text").get<std::string>(), table.schema());
        graph.finalize();
        if (hexFingerprint(graph.fingerprint()) !=
            descriptor.at("graph_fingerprint").get<std::string>()) {
            raise(ErrorCategory::Model, "model archive graph fingerprint mismatch");
        }
        FuzzyPolicy policy;
        policy.kMin = descriptor.at("k_min").get<int>();
        policy.eps0PerDim = descriptor.at("eps0_per_dim").get<double>();
        policy.growth = descriptor.at("growth").get<double>();
        const KdeModel model(table, graph, policy,
                             bandwidthRuleFromName(descriptor.at("bandwidth_rule").get<std::string>()),
                             descriptor.at("fixed_bandwidth").get<double>());
        const auto t0 = std::chrono::steady_clock::now();
        synth = model.sampleTable(config.sampleCount, config.seed);
        seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else if (format == "depsynth-flow-v1") {
        const FlowModel model = FlowModel::load(modelPath);
        const auto t0 = std::chrono::steady_clock::now();
        synth = model.sampleTable(config.sampleCount, config.seed);
        seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } else {
        raise(ErrorCategory::Model, "unsupported model archive format: " + format);
    }

    writeCsv(synth, outPath(config, "synthetic.csv"));
    const double msPerRow = seconds * 1000.0 / static_cast<double>(config.sampleCount);
    ordered_json report;
    report["method"] = format == "depsynth-kde-v1" ? "kde" : "nf";
    report["rows"] = config.sampleCount;
    report["timing"] = {{"seconds", seconds}, {"ms_per_row", msPerRow}};
    report["config"] = configEcho(config);
    writeTextFile(outPath(config, "sample_report.json"), report.dump(1) + "\n");
    std::cout << "[depsynth] sampled " << config.sampleCount << " rows, " << msPerRow
              << " ms/row mean\n";
    std::cout << "[depsynth] synthetic data written to " << outPath(config, "synthetic.csv") << "\n";
}

void cmdEval(const RunConfig& config) {
    const Table real = loadDataset(config);
    const std::string synthPath =
        config.syntheticPath.empty() ? outPath(config, "synthetic.csv") : config.syntheticPath;
    CsvLoadReport synthReport;
    const Table synth = loadCsv(synthPath, real.schema(), &synthReport);
    const NormStats stats = fitNormStats(real);
    ensureOutDir(config);

    ordered_json report;
    std::ostringstream text;
    text << "evaluation report\n";
    text << "real: " << config.dataset << " (" << real.rowCount() << " rows)\n";
    text << "synthetic: " << synthPath << " (" << synth.rowCount() << " rows)\n\n";

    const DcrResult dcrResult = dcr(real, synth, stats);
    report["dcr"] = {{"mean", dcrResult.mean}, {"per_row", dcrResult.perRow}};
    text << "dcr mean: " << dcrResult.mean << "\n";

    const DiscriminatorResult disc = discriminatorMeasure(real, synth, 5, config.seed);
    report["discriminator"] = {{"mean_accuracy", disc.meanAccuracy},
                               {"interval", intervalJson(disc.interval)},
                               {"fold_accuracies", disc.foldAccuracies}};
    text << "discriminator accuracy: " << disc.meanAccuracy << " [" << disc.interval.lo << ", "
         << disc.interval.hi << "]\n";

    if (!config.rulesPath.empty()) {
        const std::vector<ViolationRule> rules = loadRules(config.rulesPath, real);
        ordered_json violations = ordered_json::array();
        for (const ViolationRule& rule : rules) {
            const ViolationReport vr = violationRate(synth, rule);
            violations.push_back({{"rule", vr.rule},
                                  {"violations", vr.violations},
                                  {"rows", vr.rows},
                                  {"rate", vr.rate},
                                  {"interval", intervalJson(vr.interval)}});
            text << "rule '" << vr.rule << "': rate " << vr.rate << " [" << vr.interval.lo << ", "
                 << vr.interval.hi << "]\n";
        }
        report["violations"] = std::move(violations);
    }

    if (!config.utilityTarget.empty()) {
        TaskKind task;
        if (config.utilityTask == "classify") {
            task = TaskKind::Classify;
        } else if (config.utilityTask == "regress") {
            task = TaskKind::Regress;
        } else {
            raise(ErrorCategory::Config, "utility.task must be 'classify' or 'regress', got: '" +
                                             config.utilityTask + "'");
        }
        const UtilityResult utility = downstreamUtility(synth, real, config.utilityTarget, task);
        ordered_json models = ordered_json::array();
        for (const UtilityModelMetrics& m : utility.models) {
            if (task == TaskKind::Classify) {
                models.push_back(
                    {{"model", m.model}, {"accuracy", m.accuracy}, {"macro_f1", m.macroF1}});
                text << "utility " << m.model << ": accuracy " << m.accuracy << ", macro-f1 "
                     << m.macroF1 << "\n";
            } else {
                models.push_back({{"model", m.model}, {"mse", m.mse}});
                text << "utility " << m.model << ": mse " << m.mse << "\n";
            }
        }
        report["utility"] = {{"task", config.utilityTask},
                             {"target", config.utilityTarget},
                             {"absent_class_rows", utility.absentClassRows},
                             {"models", std::move(models)}};
        if (utility.absentClassRows > 0) {
            text << "test rows with labels absent from training: " << utility.absentClassRows
                 << " (scored as errors)\n";
        }
    }

    report["config"] = configEcho(config);
    text << "\nconfig echo:\n" << configEcho(config).dump(1) << "\n";
    writeTextFile(outPath(config, "eval_report.json"), report.dump(1) + "\n");
    writeTextFile(outPath(config, "eval_report.txt"), text.str());
    std::cout << "[depsynth] evaluation report written to " << outPath(config, "eval_report.json")
              << "\n";
}

}  // namespace depsynth
