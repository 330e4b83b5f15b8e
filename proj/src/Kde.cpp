#include "depsynth/Kde.h"

#include <algorithm>
#include <cmath>

#include "depsynth/Rng.h"

namespace depsynth {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

}  // namespace

const char* bandwidthRuleName(BandwidthRule rule) {
    switch (rule) {
        case BandwidthRule::Scott: return "scott";
        case BandwidthRule::Silverman: return "silverman";
        case BandwidthRule::Fixed: return "fixed";
    }
    raise(ErrorCategory::Config, "unknown bandwidth rule value");
}

BandwidthRule bandwidthRuleFromName(const std::string& name) {
    if (name == "scott") return BandwidthRule::Scott;
    if (name == "silverman") return BandwidthRule::Silverman;
    if (name == "fixed") return BandwidthRule::Fixed;
    raise(ErrorCategory::Config,
          "unknown bandwidth rule: " + name + " (expected scott, silverman, or fixed)");
}

double bandwidth(BandwidthRule rule, std::size_t n, int d, double fixedH) {
    if (n == 0) raise(ErrorCategory::Config, "bandwidth needs at least one sample");
    if (d < 1) raise(ErrorCategory::Config, "bandwidth dimension must be >= 1");
    if (rule == BandwidthRule::Fixed) {
        if (fixedH <= 0.0) raise(ErrorCategory::Config, "fixed bandwidth must be > 0");
        return fixedH;
    }
    const double exponent = -1.0 / (d + 4);
    const double base = std::pow(static_cast<double>(n), exponent);
    if (rule == BandwidthRule::Scott) return base;
    return std::pow(4.0 / (d + 2), 1.0 / (d + 4)) * base;
}

double kdeDensity(const std::vector<double>& values, double h, double x) {
    if (values.empty()) raise(ErrorCategory::Config, "kde density needs at least one value");
    if (h <= 0.0) raise(ErrorCategory::Config, "kde bandwidth must be > 0");
    double sum = 0.0;
    for (double v : values) {
        const double u = (x - v) / h;
        sum += std::exp(-0.5 * u * u);
    }
    return sum / (static_cast<double>(values.size()) * h * std::sqrt(2.0 * kPi));
}

double kdeSample(const std::vector<double>& values, double h, double lo, double hi,
                 std::mt19937_64& rng) {
    if (values.empty()) raise(ErrorCategory::Config, "kde sampling needs at least one candidate");
    if (h < 0.0) raise(ErrorCategory::Config, "kde bandwidth must be >= 0");
    const double v = values[boundedUint(rng, values.size())];
    const double drawn = v + h * standardNormal(rng);
    return std::min(hi, std::max(lo, drawn));
}

std::string categoricalSample(const std::vector<std::string>& values, std::mt19937_64& rng) {
    if (values.empty()) raise(ErrorCategory::Config, "categorical sampling needs at least one candidate");
    return values[boundedUint(rng, values.size())];
}

// --- KdeModel -------------------------------------------------------------------

KdeModel::KdeModel(Table real, DependencyGraph finalizedGraph, FuzzyPolicy policy, BandwidthRule rule,
                   double fixedBandwidth)
    : real_(std::move(real)),
      graph_(std::move(finalizedGraph)),
      policy_(policy),
      rule_(rule),
      fixedBandwidth_(fixedBandwidth) {
    if (real_.rowCount() == 0) raise(ErrorCategory::Config, "kde model needs a non-empty real table");
    if (rule_ == BandwidthRule::Fixed && fixedBandwidth_ <= 0.0) {
        raise(ErrorCategory::Config, "fixed bandwidth must be > 0");
    }
    if (policy_.kMin < 1) raise(ErrorCategory::Config, "fuzzy match kMin must be >= 1");
    if (policy_.eps0PerDim <= 0.0) raise(ErrorCategory::Config, "fuzzy match eps0 must be > 0");
    if (policy_.growth <= 1.0) raise(ErrorCategory::Config, "fuzzy match growth must be > 1");
    if (!graph_.hasRoot()) raise(ErrorCategory::Graph, "kde model needs a finalized dependency graph");
    if (graph_.findCycle()) raise(ErrorCategory::Graph, "kde model needs an acyclic dependency graph");
    stats_ = fitNormStats(real_);

    const Schema& schema = real_.schema();
    allRows_.resize(real_.rowCount());
    for (std::size_t i = 0; i < real_.rowCount(); ++i) allRows_[i] = static_cast<int>(i);

    for (const FeatureSpec& f : schema.features()) {
        FeatureIndex index;
        index.column = schema.indexOf(f.name);
        for (const std::string& parent : graph_.parentsOf(f.name)) {
            const int pc = schema.indexOf(parent);
            if (schema.at(pc).kind == FeatureKind::Categorical) {
                index.catParents.push_back(pc);
            } else {
                index.numParents.push_back(pc);
            }
        }
        if (!index.catParents.empty() || !index.numParents.empty()) {
            // Group rows by the categorical-parent tuple, then index the
            // normalized numerical-parent vectors of each group.
            std::map<std::vector<int>, std::vector<int>> groups;
            std::vector<int> key(index.catParents.size());
            for (std::size_t r = 0; r < real_.rowCount(); ++r) {
                for (std::size_t k = 0; k < index.catParents.size(); ++k) {
                    const int pc = index.catParents[k];
                    key[k] = stats_.code(pc, real_.categorical(pc)[r]);
                }
                groups[key].push_back(static_cast<int>(r));
            }
            for (auto& [tuple, rows] : groups) {
                Partition part;
                part.rows = std::move(rows);
                if (!index.numParents.empty()) {
                    std::vector<std::vector<double>> points;
                    points.reserve(part.rows.size());
                    for (int r : part.rows) {
                        std::vector<double> p(index.numParents.size());
                        for (std::size_t k = 0; k < index.numParents.size(); ++k) {
                            const int pc = index.numParents[k];
                            p[k] = stats_.normalize(pc, real_.numeric(pc)[static_cast<std::size_t>(r)]);
                        }
                        points.push_back(std::move(p));
                    }
                    part.tree = BallTree(std::move(points));
                }
                index.partitions.emplace(tuple, std::move(part));
            }
        } else {
            // Root-only feature: the whole table is its single partition.
            Partition part;
            part.rows = allRows_;
            index.partitions.emplace(std::vector<int>{}, std::move(part));
        }
        indexes_.emplace(f.name, std::move(index));
    }
}

const KdeModel::FeatureIndex& KdeModel::indexFor(const std::string& feature) const {
    auto it = indexes_.find(feature);
    if (it == indexes_.end()) raise(ErrorCategory::Schema, "unknown feature: " + feature);
    return it->second;
}

std::size_t KdeModel::partitionCount(const std::string& feature) const {
    return indexFor(feature).partitions.size();
}

CandidateSet KdeModel::fuzzyMatch(const std::string& feature,
                                  const std::vector<Value>& parentValues) const {
    const FeatureIndex& index = indexFor(feature);
    const std::size_t parentCount = index.catParents.size() + index.numParents.size();
    if (parentValues.size() != parentCount) {
        raise(ErrorCategory::Schema, "fuzzy match for " + feature + " expects " +
                                         std::to_string(parentCount) + " parent values");
    }
    if (parentCount == 0) {
        // No conditioning: the whole-table marginal.
        return CandidateSet{allRows_, 0, 0.0, true};
    }

    // Split query values into categorical codes and a normalized numeric
    // vector, following the schema-ordered parent list.
    std::vector<int> queryCodes;
    std::vector<double> queryNum;
    {
        std::size_t ci = 0;
        std::size_t ni = 0;
        std::vector<int> parentColumns;
        for (int pc : index.catParents) parentColumns.push_back(pc);
        for (int pc : index.numParents) parentColumns.push_back(pc);
        std::sort(parentColumns.begin(), parentColumns.end());
        for (std::size_t i = 0; i < parentColumns.size(); ++i) {
            const int pc = parentColumns[i];
            const Value& v = parentValues[i];
            if (real_.schema().at(pc).kind == FeatureKind::Categorical) {
                if (v.kind != FeatureKind::Categorical) {
                    raise(ErrorCategory::Schema, "parent value kind mismatch for " +
                                                     real_.schema().at(pc).name);
                }
                int code = -1;  // category unseen in the real table: mismatches every partition
                try {
                    code = stats_.code(pc, v.cat);
                } catch (const DepsynthError&) {
                }
                queryCodes.push_back(code);
                ++ci;
            } else {
                if (v.kind != FeatureKind::Numerical) {
                    raise(ErrorCategory::Schema, "parent value kind mismatch for " +
                                                     real_.schema().at(pc).name);
                }
                queryNum.push_back(stats_.normalize(pc, v.num));
                ++ni;
            }
        }
        (void)ci;
        (void)ni;
    }

    const int dNum = static_cast<int>(index.numParents.size());
    const int maxHamming = static_cast<int>(index.catParents.size());

    // Partition keys grouped by Hamming distance from the query tuple.
    std::vector<std::vector<const Partition*>> byDistance(static_cast<std::size_t>(maxHamming) + 1);
    for (const auto& [tuple, part] : index.partitions) {
        int dist = 0;
        for (std::size_t k = 0; k < tuple.size(); ++k) {
            if (tuple[k] != queryCodes[k]) ++dist;
        }
        byDistance[static_cast<std::size_t>(dist)].push_back(&part);
    }

    std::vector<double> epsSchedule{0.0};
    if (dNum > 0) {
        const double eps0 = policy_.eps0PerDim * dNum;
        double eps = eps0;
        while (true) {
            epsSchedule.push_back(eps);
            if (eps >= static_cast<double>(dNum)) break;  // covers the whole normalized cube
            eps *= policy_.growth;
        }
    }

    CandidateSet result;
    for (int r = 0; r <= maxHamming; ++r) {
        for (double eps : epsSchedule) {
            std::vector<int> rows;
            for (int d = 0; d <= r; ++d) {
                for (const Partition* part : byDistance[static_cast<std::size_t>(d)]) {
                    if (dNum == 0) {
                        rows.insert(rows.end(), part->rows.begin(), part->rows.end());
                    } else {
                        for (int local : part->tree.rangeQuery(queryNum, eps)) {
                            rows.push_back(part->rows[static_cast<std::size_t>(local)]);
                        }
                    }
                }
            }
            const bool lastStage = (r == maxHamming) && (eps == epsSchedule.back());
            if (static_cast<int>(rows.size()) >= policy_.kMin || lastStage) {
                std::sort(rows.begin(), rows.end());
                result.rows = std::move(rows);
                result.hammingRadius = r;
                result.numericRadius = eps;
                result.exact = (r == 0 && eps == 0.0);
                return result;
            }
        }
    }
    raise(ErrorCategory::Schema, "fuzzy match fell through its stage schedule");  // unreachable
}

Table KdeModel::sampleTable(std::size_t n, std::uint64_t seed) const {
    if (n < 1) raise(ErrorCategory::Config, "requested row count must be >= 1");
    const Schema& schema = real_.schema();
    const std::vector<std::string> order = graph_.topoOrder();

    struct FeaturePlan {
        int column = -1;
        std::vector<int> parentColumns;  // schema order
    };
    std::vector<FeaturePlan> plans;
    plans.reserve(order.size());
    for (const std::string& name : order) {
        FeaturePlan plan;
        plan.column = schema.indexOf(name);
        for (const std::string& parent : graph_.parentsOf(name)) {
            plan.parentColumns.push_back(schema.indexOf(parent));
        }
        plans.push_back(std::move(plan));
    }

    Table out(schema);
    out.reserve(n);
    std::vector<Value> row(static_cast<std::size_t>(schema.size()));
    std::vector<Value> parentValues;
    std::vector<double> targets;
    std::vector<std::string> categories;
    for (std::size_t r = 0; r < n; ++r) {
        std::mt19937_64 rng = makeStreamRng(seed, r);
        for (const FeaturePlan& plan : plans) {
            parentValues.clear();
            for (int pc : plan.parentColumns) parentValues.push_back(row[static_cast<std::size_t>(pc)]);
            const CandidateSet candidates =
                fuzzyMatch(schema.at(plan.column).name, parentValues);
            if (schema.at(plan.column).kind == FeatureKind::Numerical) {
                const std::vector<double>& column = real_.numeric(plan.column);
                targets.clear();
                for (int id : candidates.rows) targets.push_back(column[static_cast<std::size_t>(id)]);
                const double h = bandwidth(rule_, targets.size(), 1, fixedBandwidth_);
                row[static_cast<std::size_t>(plan.column)] = Value::numerical(
                    kdeSample(targets, h, stats_.minOf(plan.column), stats_.maxOf(plan.column), rng));
            } else {
                const std::vector<std::string>& column = real_.categorical(plan.column);
                categories.clear();
                for (int id : candidates.rows) categories.push_back(column[static_cast<std::size_t>(id)]);
                row[static_cast<std::size_t>(plan.column)] =
                    Value::categorical(categoricalSample(categories, rng));
            }
        }
        out.appendRow(row);
    }
    return out;
}

}  // namespace depsynth
