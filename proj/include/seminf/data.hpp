#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "seminf/errors.hpp"
#include "seminf/tensor.hpp"

namespace seminf {

/// Labelled image batch. `images` is [N,C,H,W].
struct Dataset {
  Tensor images;
  std::vector<std::size_t> labels;
  std::string split = "train";

  std::size_t size() const noexcept { return labels.size(); }

  void validate(std::size_t num_classes) const {
    require(images.rank() == 4, "dataset images must be [N,C,H,W], got " + shape_str(images.shape()));
    require(images.dim(0) == labels.size(), "dataset has " + std::to_string(images.dim(0)) +
                                                " images but " + std::to_string(labels.size()) +
                                                " labels");
    for (auto l : labels)
      require(l < num_classes, "dataset label " + std::to_string(l) + " >= num_classes " +
                                   std::to_string(num_classes));
  }

  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

  Dataset select(const std::vector<std::size_t>& rows) const {
    Dataset out{gather_rows(images, rows), {}, split};
    out.labels.reserve(rows.size());
    for (auto r : rows) out.labels.push_back(labels.at(r));
    return out;
  }

  /// Samples whose label is in `classes`, original order preserved.
  Dataset filter_classes(const std::vector<std::size_t>& classes) const {
    const std::set<std::size_t> keep(classes.begin(), classes.end());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (keep.count(labels[i])) rows.push_back(i);
    return select(rows);
  }

  Dataset slice(std::size_t begin, std::size_t end) const {
    Dataset out{images.slice(begin, end), {}, split};
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      labels.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
  }
};

struct SemanticCluster {
  std::size_t id = 0;
  std::string name;
  std::vector<std::size_t> classes;
};

/// Partition of the label set into semantic clusters.
struct ClusterMap {
  std::vector<SemanticCluster> clusters;

  std::size_t size() const noexcept { return clusters.size(); }

  /// Checks that clusters partition {0..num_classes-1}: disjoint and covering.
  void validate(std::size_t num_classes) const {
    require(!clusters.empty(), "cluster map is empty");
    std::vector<int> owner(num_classes, -1);
    for (std::size_t k = 0; k < clusters.size(); ++k) {
      require(clusters[k].id == k, "cluster ids must be 0..K-1 in order; found id " +
                                       std::to_string(clusters[k].id) + " at position " +
                                       std::to_string(k));
      require(!clusters[k].classes.empty(), "cluster " + std::to_string(k) + " has no classes");
      for (auto c : clusters[k].classes) {
        require(c < num_classes, "cluster " + std::to_string(k) + " references class " +
                                     std::to_string(c) + " >= " + std::to_string(num_classes));
        require(owner[c] < 0, "class " + std::to_string(c) + " appears in clusters " +
                                  std::to_string(owner[c]) + " and " + std::to_string(k));
        owner[c] = static_cast<int>(k);
      }
    }
    for (std::size_t c = 0; c < num_classes; ++c)
      require(owner[c] >= 0, "class " + std::to_string(c) + " is not assigned to any cluster");
  }

  std::size_t num_classes() const {
    std::size_t n = 0;
    for (const auto& c : clusters) n += c.classes.size();
    return n;
  }

  /// class -> cluster lookup table.
  std::vector<std::size_t> class_to_cluster() const {
    std::vector<std::size_t> table(num_classes(), 0);
    for (const auto& c : clusters)
      for (auto cls : c.classes) {
        require(cls < table.size(), "cluster map is not a partition of 0..n-1");
        table[cls] = c.id;
      }
    return table;
  }

  const SemanticCluster& at(std::size_t id) const {
    require(id < clusters.size(), "cluster id " + std::to_string(id) + " out of range");
    return clusters[id];
  }
};

}  // namespace seminf
