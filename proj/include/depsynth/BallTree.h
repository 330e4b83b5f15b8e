#pragma once

#include <vector>

namespace depsynth {

// Static ball tree over fixed-dimension points with L1 (sum of absolute
// differences) geometry: node radii are max L1 distances from the node
// centroid, and range queries prune with the triangle inequality
// |q - centroid| - radius > query radius.
class BallTree {
public:
    BallTree() = default;
    explicit BallTree(std::vector<std::vector<double>> points, int leafCapacity = 16);

    // Exactly the ids (indices into the constructor's point list, ascending)
    // whose L1 distance to `center` is <= radius.
    std::vector<int> rangeQuery(const std::vector<double>& center, double radius) const;

    std::size_t size() const { return points_.size(); }
    int dim() const { return dim_; }

private:
    struct Node {
        std::vector<double> centroid;
        double radius = 0.0;
        int left = -1;
        int right = -1;
        int begin = 0;
        int end = 0;  // leaf covers ids_[begin, end)
    };

    int build(int begin, int end, int leafCapacity);
    void query(int node, const std::vector<double>& center, double radius,
               std::vector<int>& hits) const;

    std::vector<std::vector<double>> points_;
    std::vector<int> ids_;
    std::vector<Node> nodes_;
    int root_ = -1;
    int dim_ = 0;
};

double l1Distance(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace depsynth
