#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "depsynth/Table.h"

namespace depsynth {

// Sparse feature dependency graph. Nodes are the schema's features plus, after
// addRoot(), one artificial ROOT node that feeds every otherwise parentless
// feature so that sampling always has a conditioning anchor.
class DependencyGraph {
public:
    struct Edge {
        std::string parent;
        std::string child;
        bool operator==(const Edge& o) const { return parent == o.parent && child == o.child; }
        bool operator<(const Edge& o) const {
            return parent != o.parent ? parent < o.parent : child < o.child;
        }
    };

    static const std::string& rootName();

    DependencyGraph() = default;
    explicit DependencyGraph(std::vector<std::string> featureNames);

    int featureCount() const { return featureCount_; }
    const std::vector<std::string>& featureNames() const { return names_; }
    bool hasRoot() const { return hasRoot_; }

    void addEdge(const std::string& parent, const std::string& child);
    bool hasEdge(const std::string& parent, const std::string& child) const;
    std::size_t edgeCount() const { return edges_.size(); }

    // Parents of a feature in schema order; ROOT is reported only when
    // includeRoot is set. Conditioning code relies on this order being stable.
    std::vector<std::string> parentsOf(const std::string& feature, bool includeRoot = false) const;

    // Adds ROOT and an edge ROOT -> f for every feature with in-degree 0.
    void addRoot();

    // Deterministic DFS; returns the node names of one directed cycle
    // (first node repeated implicitly), or nullopt when the graph is acyclic.
    std::optional<std::vector<std::string>> findCycle() const;

    // Exact minimum set of edges whose removal makes the graph acyclic, found
    // by lazily collecting cycles and solving the growing hitting-set problem
    // by branch and bound. ROOT edges are never candidates. Ties are broken by
    // (a) covering the most currently unresolved cycles, then (b) keeping the
    // lexicographically smaller (parent, child) edge.
    std::vector<Edge> minFeedbackArcSet() const;

    // Kahn's algorithm, smallest node name first among ready nodes. ROOT is
    // consumed but excluded from the returned order. Throws when cyclic.
    std::vector<std::string> topoOrder() const;

    // addRoot + cycle breaking + re-rooting of features orphaned by edge
    // removal. After this call the graph is a DAG and every feature has at
    // least one parent (possibly ROOT).
    void finalize();
    const std::vector<Edge>& removedEdges() const { return removed_; }

    // Conditioning variant: a finalized copy in which every feature's parent
    // set is widened to its full non-ROOT ancestor set. Requires an acyclic
    // graph.
    DependencyGraph ancestorClosure() const;

    // Free-text origin of the annotation (file path, annotator identity).
    void setProvenance(std::string text) { provenance_ = std::move(text); }
    const std::string& provenance() const { return provenance_; }

    // Annotation text round-trip: parse(dependencyText(g)) has g's edge set.
    std::string dependencyText() const;
    std::uint64_t fingerprint() const;

private:
    int indexOf(const std::string& name) const;
    bool edgeExists(int parent, int child) const { return edges_.count({parent, child}) > 0; }
    std::optional<std::vector<int>> findCycleIndices(const std::set<std::pair<int, int>>& skip) const;

    std::vector<std::string> names_;  // features in schema order; ROOT appended last when present
    int featureCount_ = 0;
    bool hasRoot_ = false;
    std::set<std::pair<int, int>> edges_;
    std::vector<Edge> removed_;
    std::string provenance_;
};

// Parses the annotation text format, one feature per line:
//   Name: [Parent1->Name, Parent2->Name]
// Blank bracket, blank right-hand side, or an absent line all mean "no
// parents". Full-line '#' comments and blank lines are skipped. Every name
// must exist in `schema`; the right-hand side of each '->' must be the line's
// head feature.
DependencyGraph parseDependencyText(const std::string& text, const Schema& schema);

DependencyGraph loadDependencyFile(const std::string& path, const Schema& schema);
void writeDependencyFile(const DependencyGraph& graph, const std::string& path);

}  // namespace depsynth
