#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "depsynth/Graph.h"
#include "depsynth/Table.h"

namespace depsynth {

struct TrainConfig {
    int epochs = 200;
    int batchSize = 256;
    double learningRate = 5e-4;
    double weightDecay = 0.01;
    double dropoutRate = 0.1;
    int hiddenUnits = 128;
    int patience = 20;        // stop after this many epochs without a new best train NLL
    bool affineOnly = false;  // ablation: drop the spline stage, conditional affine only
    std::uint64_t seed = 42;
};

// Encodes one feature's parent values into a conditioner context vector:
// numerical parents min-max normalized, categorical parents code/(K-1)
// (0 when K == 1), and the constant [1] for parentless features.
std::vector<double> encodeParents(const NormStats& stats, const std::vector<int>& parentColumns,
                                  const std::vector<Value>& values);

// One feature's conditional flow. Latent z ~ N(0,1) maps through a
// context-conditioned affine transform, then a monotone rational-quadratic
// spline on [-4, 4] with identity tails, then target unstandardization. All
// transform parameters come from a SwiGLU conditioner network; a freshly
// constructed flow is exactly the identity (zero output head).
class ConditionalFlow {
public:
    ConditionalFlow() = default;
    ConditionalFlow(int contextWidth, FeatureKind targetKind, int hiddenUnits = 128);

    struct Transform {
        double value = 0.0;   // continuous target-space value
        double logDet = 0.0;  // log |d value / d z|
    };

    Transform forward(double z, const std::vector<double>& context) const;
    double inverse(double v, const std::vector<double>& context) const;
    double logDensity(double v, const std::vector<double>& context) const;

    // Mean negative log-likelihood of continuous targets; `gradients`, when
    // given, receives d(mean NLL)/d(parameter) via reverse-mode accumulation.
    // Dropout is inactive here; FlowModel::fit applies it during training.
    double batchLoss(const std::vector<std::vector<double>>& contexts,
                     const std::vector<double>& targets,
                     std::vector<std::vector<double>>* gradients = nullptr) const;

    // Parameter groups, in the fixed order reported by parameterGroupNames():
    // gate/value linear layers, layer norm, output head.
    static const std::vector<std::string>& parameterGroupNames();
    const std::vector<double>& parameterGroup(int group) const;
    std::vector<double>& mutableParameterGroup(int group);

    void setStandardization(double mean, double std);
    double targetMean() const { return mean_; }
    double targetStd() const { return std_; }
    FeatureKind targetKind() const { return targetKind_; }
    int contextWidth() const { return contextWidth_; }
    int hiddenUnits() const { return hidden_; }

    // Ablation switch: when set, the spline stage is bypassed and the flow is
    // a pure conditional affine map (representing conditional Gaussians only).
    void setAffineOnly(bool affineOnly) { affineOnly_ = affineOnly; }
    bool affineOnly() const { return affineOnly_; }

    // Scatters small random values into every group (tests exercise the
    // transform away from the identity without a full training run).
    void randomizeParameters(std::mt19937_64& rng, double scale);

private:
    friend class FlowModel;
    friend struct FlowTrainer;

    std::vector<double> conditionerOut(const std::vector<double>& context) const;

    int contextWidth_ = 1;
    int hidden_ = 128;
    FeatureKind targetKind_ = FeatureKind::Numerical;
    bool affineOnly_ = false;
    double mean_ = 0.0;
    double std_ = 1.0;
    std::vector<std::vector<double>> params_;  // aligned with parameterGroupNames()
};

// All per-feature flows plus everything needed to sample: schema, finalized
// dependency graph, normalization stats, per-feature clamp ranges/supports.
class FlowModel {
public:
    FlowModel() = default;

    static FlowModel fit(const Table& real, const DependencyGraph& finalizedGraph,
                         const TrainConfig& config);

    Table sampleTable(std::size_t n, std::uint64_t seed) const;

    const ConditionalFlow& flow(const std::string& feature) const;
    const Schema& schema() const { return schema_; }
    const DependencyGraph& graph() const { return graph_; }
    const NormStats& stats() const { return stats_; }
    const TrainConfig& trainConfig() const { return config_; }

    // Per-epoch mean train NLL recorded during fit (empty after load()).
    const std::vector<double>& trainingHistory(const std::string& feature) const;

    // Mean NLL of one feature's conditional density over the rows of `data`
    // (categorical targets are dequantized with a fixed-seed draw).
    double featureMeanNll(const std::string& feature, const Table& data) const;

    // Self-describing JSON archive with schema/graph fingerprints; load
    // verifies both fingerprints against the embedded definitions.
    void save(const std::string& path) const;
    std::string archiveText() const;
    static FlowModel load(const std::string& path);
    static FlowModel fromArchiveText(const std::string& text);

private:
    std::vector<int> parentColumnsOf(const std::string& feature) const;

    Schema schema_;
    DependencyGraph graph_;
    NormStats stats_;
    TrainConfig config_;
    std::map<std::string, ConditionalFlow> flows_;
    std::map<std::string, std::vector<double>> history_;
};

}  // namespace depsynth
