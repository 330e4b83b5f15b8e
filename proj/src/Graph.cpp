#include "depsynth/Graph.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>

#include "depsynth/Rng.h"

namespace depsynth {

namespace {

std::string trimmed(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

const std::string& DependencyGraph::rootName() {
    static const std::string kName = "__root__";
    return kName;
}

DependencyGraph::DependencyGraph(std::vector<std::string> featureNames)
    : names_(std::move(featureNames)), featureCount_(static_cast<int>(names_.size())) {
    if (names_.empty()) raise(ErrorCategory::Graph, "dependency graph needs at least one feature");
    std::set<std::string> seen;
    for (const std::string& name : names_) {
        if (name.empty()) raise(ErrorCategory::Graph, "feature name must not be empty");
        if (name == rootName()) {
            raise(ErrorCategory::Graph, "feature name collides with the reserved root node: " + name);
        }
        if (!seen.insert(name).second) raise(ErrorCategory::Graph, "duplicate feature name: " + name);
    }
}

int DependencyGraph::indexOf(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(names_.size()); ++i) {
        if (names_[static_cast<std::size_t>(i)] == name) return i;
    }
    raise(ErrorCategory::Graph, "unknown node: " + name);
}

void DependencyGraph::addEdge(const std::string& parent, const std::string& child) {
    const int p = indexOf(parent);
    const int c = indexOf(child);
    if (p == c) raise(ErrorCategory::Graph, "self-dependency is not allowed: " + parent);
    if (c >= featureCount_) raise(ErrorCategory::Graph, "the root node cannot have parents");
    edges_.insert({p, c});
}

bool DependencyGraph::hasEdge(const std::string& parent, const std::string& child) const {
    for (int i = 0; i < static_cast<int>(names_.size()); ++i) {
        if (names_[static_cast<std::size_t>(i)] != parent) continue;
        for (int j = 0; j < static_cast<int>(names_.size()); ++j) {
            if (names_[static_cast<std::size_t>(j)] == child) return edgeExists(i, j);
        }
    }
    return false;
}

std::vector<std::string> DependencyGraph::parentsOf(const std::string& feature, bool includeRoot) const {
    const int c = indexOf(feature);
    std::vector<int> parents;
    for (const auto& e : edges_) {
        if (e.second == c) parents.push_back(e.first);
    }
    std::sort(parents.begin(), parents.end());
    std::vector<std::string> out;
    for (int p : parents) {
        if (p >= featureCount_ && !includeRoot) continue;
        out.push_back(names_[static_cast<std::size_t>(p)]);
    }
    return out;
}

void DependencyGraph::addRoot() {
    if (hasRoot_) raise(ErrorCategory::Graph, "root node already present");
    std::vector<int> indegree(static_cast<std::size_t>(featureCount_), 0);
    for (const auto& e : edges_) ++indegree[static_cast<std::size_t>(e.second)];
    names_.push_back(rootName());
    hasRoot_ = true;
    const int rootIndex = static_cast<int>(names_.size()) - 1;
    for (int i = 0; i < featureCount_; ++i) {
        if (indegree[static_cast<std::size_t>(i)] == 0) edges_.insert({rootIndex, i});
    }
}

std::optional<std::vector<int>> DependencyGraph::findCycleIndices(
    const std::set<std::pair<int, int>>& skip) const {
    const int n = static_cast<int>(names_.size());
    std::vector<int> color(static_cast<std::size_t>(n), 0);  // 0 white, 1 gray, 2 black
    std::vector<int> parent(static_cast<std::size_t>(n), -1);

    // Iterative DFS in node index order; children in index order via the
    // ordered edge set. Deterministic for a given edge set.
    for (int start = 0; start < n; ++start) {
        if (color[static_cast<std::size_t>(start)] != 0) continue;
        std::vector<std::pair<int, std::set<std::pair<int, int>>::const_iterator>> stack;
        color[static_cast<std::size_t>(start)] = 1;
        stack.push_back({start, edges_.lower_bound({start, -1})});
        while (!stack.empty()) {
            auto& [v, it] = stack.back();
            bool advanced = false;
            while (it != edges_.end() && it->first == v) {
                const int w = it->second;
                const bool skipped = skip.count(*it) > 0;
                ++it;
                if (skipped) continue;
                if (color[static_cast<std::size_t>(w)] == 1) {
                    // Back edge v -> w closes a cycle w ... v.
                    std::vector<int> cycle;
                    int cur = v;
                    while (cur != w) {
                        cycle.push_back(cur);
                        cur = parent[static_cast<std::size_t>(cur)];
                    }
                    cycle.push_back(w);
                    std::reverse(cycle.begin(), cycle.end());
                    return cycle;
                }
                if (color[static_cast<std::size_t>(w)] == 0) {
                    color[static_cast<std::size_t>(w)] = 1;
                    parent[static_cast<std::size_t>(w)] = v;
                    stack.push_back({w, edges_.lower_bound({w, -1})});
                    advanced = true;
                    break;
                }
            }
            if (!advanced) {
                color[static_cast<std::size_t>(v)] = 2;
                stack.pop_back();
            }
        }
    }
    return std::nullopt;
}

std::optional<std::vector<std::string>> DependencyGraph::findCycle() const {
    auto cycle = findCycleIndices({});
    if (!cycle) return std::nullopt;
    std::vector<std::string> out;
    out.reserve(cycle->size());
    for (int i : *cycle) out.push_back(names_[static_cast<std::size_t>(i)]);
    return out;
}

namespace {

struct HittingSetSolver {
    // cycles as lists of edge ids; edgeNames aligned with edge ids
    std::vector<std::vector<int>> cycles;
    std::vector<std::pair<std::string, std::string>> edgeNames;
    std::vector<char> chosen;
    std::vector<int> solution;

    bool hit(const std::vector<int>& cycle) const {
        for (int e : cycle) {
            if (chosen[static_cast<std::size_t>(e)] != 0) return true;
        }
        return false;
    }

    int disjointLowerBound() const {
        std::set<int> used;
        int bound = 0;
        for (const auto& cycle : cycles) {
            if (hit(cycle)) continue;
            bool overlaps = false;
            for (int e : cycle) {
                if (used.count(e) > 0) {
                    overlaps = true;
                    break;
                }
            }
            if (overlaps) continue;
            ++bound;
            for (int e : cycle) used.insert(e);
        }
        return bound;
    }

    // Removal preference: hit the most unresolved cycles first; among equals
    // remove the lexicographically greater (parent, child) edge so that the
    // lexicographically smaller edge survives.
    std::vector<int> orderedCandidates(const std::vector<int>& cycle) const {
        std::vector<std::pair<int, int>> scored;  // (coverage, edge)
        for (int e : cycle) {
            int coverage = 0;
            for (const auto& other : cycles) {
                if (hit(other)) continue;
                if (std::find(other.begin(), other.end(), e) != other.end()) ++coverage;
            }
            scored.push_back({coverage, e});
        }
        std::sort(scored.begin(), scored.end(), [this](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return edgeNames[static_cast<std::size_t>(a.second)] >
                   edgeNames[static_cast<std::size_t>(b.second)];
        });
        std::vector<int> out;
        out.reserve(scored.size());
        for (const auto& s : scored) out.push_back(s.second);
        return out;
    }

    bool search(int budget, std::vector<int>& picked) {
        const std::vector<int>* firstUnhit = nullptr;
        for (const auto& cycle : cycles) {
            if (!hit(cycle)) {
                firstUnhit = &cycle;
                break;
            }
        }
        if (firstUnhit == nullptr) {
            solution = picked;
            return true;
        }
        if (budget <= 0) return false;
        if (disjointLowerBound() > budget) return false;
        for (int e : orderedCandidates(*firstUnhit)) {
            chosen[static_cast<std::size_t>(e)] = 1;
            picked.push_back(e);
            if (search(budget - 1, picked)) return true;
            picked.pop_back();
            chosen[static_cast<std::size_t>(e)] = 0;
        }
        return false;
    }

    std::vector<int> solve() {
        chosen.assign(edgeNames.size(), 0);
        for (int k = 0;; ++k) {
            std::vector<int> picked;
            if (search(k, picked)) return solution;
        }
    }
};

}  // namespace

std::vector<DependencyGraph::Edge> DependencyGraph::minFeedbackArcSet() const {
    constexpr std::size_t kMaxSolverEdges = 10000;
    if (edges_.size() > kMaxSolverEdges) {
        raise(ErrorCategory::Graph, "feedback arc set solver is capped at " +
                                        std::to_string(kMaxSolverEdges) + " edges, got " +
                                        std::to_string(edges_.size()));
    }
    HittingSetSolver solver;
    std::map<std::pair<int, int>, int> edgeId;
    std::vector<std::pair<int, int>> edgeByIndex;

    std::set<std::pair<int, int>> removed;
    while (true) {
        auto cycle = findCycleIndices(removed);
        if (!cycle) break;
        std::vector<int> cycleEdges;
        for (std::size_t i = 0; i < cycle->size(); ++i) {
            const int a = (*cycle)[i];
            const int b = (*cycle)[(i + 1) % cycle->size()];
            auto [it, inserted] = edgeId.emplace(std::make_pair(a, b), static_cast<int>(edgeByIndex.size()));
            if (inserted) {
                edgeByIndex.push_back({a, b});
                solver.edgeNames.push_back({names_[static_cast<std::size_t>(a)],
                                            names_[static_cast<std::size_t>(b)]});
            }
            cycleEdges.push_back(it->second);
        }
        solver.cycles.push_back(std::move(cycleEdges));

        removed.clear();
        for (int e : solver.solve()) removed.insert(edgeByIndex[static_cast<std::size_t>(e)]);
    }

    std::vector<Edge> out;
    for (const auto& e : removed) {
        out.push_back({names_[static_cast<std::size_t>(e.first)], names_[static_cast<std::size_t>(e.second)]});
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> DependencyGraph::topoOrder() const {
    const int n = static_cast<int>(names_.size());
    std::vector<int> indegree(static_cast<std::size_t>(n), 0);
    for (const auto& e : edges_) ++indegree[static_cast<std::size_t>(e.second)];

    auto byName = [this](int a, int b) {
        return names_[static_cast<std::size_t>(a)] > names_[static_cast<std::size_t>(b)];
    };
    std::priority_queue<int, std::vector<int>, decltype(byName)> ready(byName);
    for (int i = 0; i < n; ++i) {
        if (indegree[static_cast<std::size_t>(i)] == 0) ready.push(i);
    }

    std::vector<std::string> order;
    int processed = 0;
    while (!ready.empty()) {
        const int v = ready.top();
        ready.pop();
        ++processed;
        if (v < featureCount_) order.push_back(names_[static_cast<std::size_t>(v)]);
        for (auto it = edges_.lower_bound({v, -1}); it != edges_.end() && it->first == v; ++it) {
            if (--indegree[static_cast<std::size_t>(it->second)] == 0) ready.push(it->second);
        }
    }
    if (processed != n) {
        raise(ErrorCategory::Graph, "dependency graph contains a cycle; run cycle breaking first");
    }
    return order;
}

void DependencyGraph::finalize() {
    addRoot();
    removed_ = minFeedbackArcSet();
    const int rootIndex = static_cast<int>(names_.size()) - 1;
    for (const Edge& e : removed_) {
        edges_.erase({indexOf(e.parent), indexOf(e.child)});
    }
    // Cycle breaking can strip a feature of its last parent; re-anchor it.
    std::vector<int> indegree(static_cast<std::size_t>(featureCount_), 0);
    for (const auto& e : edges_) {
        if (e.second < featureCount_) ++indegree[static_cast<std::size_t>(e.second)];
    }
    for (int i = 0; i < featureCount_; ++i) {
        if (indegree[static_cast<std::size_t>(i)] == 0) edges_.insert({rootIndex, i});
    }
    if (findCycleIndices({})) {
        raise(ErrorCategory::Graph, "internal error: graph still cyclic after edge removal");
    }
}

DependencyGraph DependencyGraph::ancestorClosure() const {
    if (findCycle()) {
        raise(ErrorCategory::Graph, "ancestor closure needs an acyclic graph; break cycles first");
    }
    // Memoized walk up the parent edges; ROOT never enters an ancestor set.
    std::vector<std::set<int>> ancestors(static_cast<std::size_t>(featureCount_));
    std::vector<bool> done(static_cast<std::size_t>(featureCount_), false);
    std::vector<int> stack;
    for (int start = 0; start < featureCount_; ++start) {
        if (done[static_cast<std::size_t>(start)]) continue;
        stack.push_back(start);
        while (!stack.empty()) {
            const int f = stack.back();
            bool ready = true;
            for (const auto& e : edges_) {
                if (e.second != f || e.first >= featureCount_) continue;
                if (!done[static_cast<std::size_t>(e.first)]) {
                    stack.push_back(e.first);
                    ready = false;
                }
            }
            if (!ready) continue;
            stack.pop_back();
            if (done[static_cast<std::size_t>(f)]) continue;
            for (const auto& e : edges_) {
                if (e.second != f || e.first >= featureCount_) continue;
                ancestors[static_cast<std::size_t>(f)].insert(e.first);
                const auto& up = ancestors[static_cast<std::size_t>(e.first)];
                ancestors[static_cast<std::size_t>(f)].insert(up.begin(), up.end());
            }
            done[static_cast<std::size_t>(f)] = true;
        }
    }
    DependencyGraph out(std::vector<std::string>(names_.begin(), names_.begin() + featureCount_));
    for (int f = 0; f < featureCount_; ++f) {
        for (int a : ancestors[static_cast<std::size_t>(f)]) {
            out.addEdge(names_[static_cast<std::size_t>(a)], names_[static_cast<std::size_t>(f)]);
        }
    }
    out.finalize();
    out.provenance_ = provenance_;
    return out;
}

std::string DependencyGraph::dependencyText() const {
    std::string out;
    for (int i = 0; i < featureCount_; ++i) {
        const std::string& name = names_[static_cast<std::size_t>(i)];
        out += name;
        out += ": [";
        bool first = true;
        for (const std::string& parent : parentsOf(name, false)) {
            if (!first) out += ", ";
            out += parent;
            out += "->";
            out += name;
            first = false;
        }
        out += "]\n";
    }
    return out;
}

std::uint64_t DependencyGraph::fingerprint() const { return fnv1a64(dependencyText()); }

DependencyGraph parseDependencyText(const std::string& text, const Schema& schema) {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(schema.size()));
    for (const FeatureSpec& f : schema.features()) names.push_back(f.name);
    DependencyGraph graph(std::move(names));

    std::set<std::string> seenHeads;
    std::istringstream lines(text);
    std::string rawLine;
    int lineNo = 0;
    while (std::getline(lines, rawLine)) {
        ++lineNo;
        const std::string line = trimmed(rawLine);
        if (line.empty() || line[0] == '#') continue;
        const std::string where = "annotation line " + std::to_string(lineNo);

        const std::size_t colon = line.find(':');
        if (colon == std::string::npos) {
            raise(ErrorCategory::Parse, where + ": missing ':' separator");
        }
        const std::string head = trimmed(line.substr(0, colon));
        if (head.empty()) raise(ErrorCategory::Parse, where + ": empty feature name");
        if (!schema.contains(head)) raise(ErrorCategory::Parse, where + ": unknown feature: " + head);
        if (!seenHeads.insert(head).second) {
            raise(ErrorCategory::Parse, where + ": duplicate line for feature: " + head);
        }

        const std::string rest = trimmed(line.substr(colon + 1));
        if (rest.empty()) continue;  // blank right-hand side: no parents
        if (rest.front() != '[' || rest.back() != ']') {
            raise(ErrorCategory::Parse, where + ": expected a bracketed constraint list");
        }
        const std::string body = trimmed(rest.substr(1, rest.size() - 2));
        if (body.empty()) continue;  // empty bracket: no parents
        if (body.find('[') != std::string::npos || body.find(']') != std::string::npos) {
            raise(ErrorCategory::Parse, where + ": unbalanced brackets");
        }

        std::size_t pos = 0;
        while (pos <= body.size()) {
            const std::size_t comma = body.find(',', pos);
            const std::string entry =
                trimmed(comma == std::string::npos ? body.substr(pos) : body.substr(pos, comma - pos));
            if (entry.empty()) raise(ErrorCategory::Parse, where + ": empty constraint entry");
            const std::size_t arrow = entry.find("->");
            if (arrow == std::string::npos) {
                raise(ErrorCategory::Parse, where + ": constraint '" + entry + "' lacks '->'");
            }
            const std::string parent = trimmed(entry.substr(0, arrow));
            const std::string target = trimmed(entry.substr(arrow + 2));
            if (parent.empty() || target.empty()) {
                raise(ErrorCategory::Parse, where + ": malformed constraint '" + entry + "'");
            }
            if (!schema.contains(parent)) {
                raise(ErrorCategory::Parse, where + ": unknown feature: " + parent);
            }
            if (target != head) {
                raise(ErrorCategory::Parse, where + ": constraint target '" + target +
                                                "' does not match line head '" + head + "'");
            }
            if (parent == head) {
                raise(ErrorCategory::Parse, where + ": feature cannot depend on itself: " + head);
            }
            graph.addEdge(parent, target);
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
    }
    return graph;
}

DependencyGraph loadDependencyFile(const std::string& path, const Schema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCategory::Io, "cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    DependencyGraph graph = parseDependencyText(buf.str(), schema);
    graph.setProvenance(path);
    return graph;
}

void writeDependencyFile(const DependencyGraph& graph, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(ErrorCategory::Io, "cannot write file: " + path);
    out << graph.dependencyText();
    if (!out) raise(ErrorCategory::Io, "failed while writing file: " + path);
}

}  // namespace depsynth
