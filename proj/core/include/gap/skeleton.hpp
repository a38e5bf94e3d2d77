// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gap {

using Edge = std::pair<int, int>;

/// Ordered joint groups for one partition strategy, with a name per group.
struct PartTable {
  std::vector<std::string> part_names;
  std::vector<std::vector<int>> groups;
};

/// Undirected skeleton graph with a parent map (for bones) and the
/// symmetric-normalized adjacency used by graph convolution.
///
/// Graphs are immutable after construction. The parent map is stored as
/// given; `validate_parent_map` reports whether it is a tree consistent with
/// the edges.
class SkeletonGraph {
 public:
  SkeletonGraph(std::string name, std::size_t num_joints, std::vector<Edge> edges, std::vector<int> parent,
                std::map<std::string, PartTable> partitions = {});

  const std::string& name() const { return name_; }
  std::size_t num_joints() const { return num_joints_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<int>& parent() const { return parent_; }
  /// Row-major N x N matrix D^-1/2 (A + I) D^-1/2.
  const std::vector<double>& adjacency_norm() const { return adjacency_norm_; }
  const std::map<std::string, PartTable>& partitions() const { return partitions_; }

 private:
  std::string name_;
  std::size_t num_joints_;
  std::vector<Edge> edges_;
  std::vector<int> parent_;
  std::map<std::string, PartTable> partitions_;
  std::vector<double> adjacency_norm_;
};

/// D^-1/2 (A + I) D^-1/2 for the binary symmetric adjacency A of `edges`,
/// where D is the degree matrix of A + I. Row-major N x N.
std::vector<double> normalize_adjacency(const std::vector<Edge>& edges, std::size_t num_joints);

bool is_connected(const std::vector<Edge>& edges, std::size_t num_joints);

struct ParentMapReport {
  bool valid = false;
  std::vector<std::string> problems;
};

ParentMapReport validate_parent_map(const SkeletonGraph& graph);

/// Parent map of the BFS tree rooted at `root`.
std::vector<int> bfs_parent_map(const std::vector<Edge>& edges, std::size_t num_joints, int root);

/// Shipped skeletons: "toy10", "ucla20", "ntu25".
const SkeletonGraph& shipped_skeleton(std::string_view name);
std::vector<std::string> shipped_skeleton_names();

/// Rest pose of a shipped skeleton as N rows of (x, y, z).
const std::vector<std::array<double, 3>>& rest_pose(std::string_view skeleton_name);

struct PartPartition {
  std::string name;
  std::vector<std::string> part_names;
  std::vector<std::vector<int>> groups;
  bool include_global = false;

  std::size_t num_parts() const { return groups.size(); }
  /// Contrast slots: one per part plus the global slot when enabled.
  std::size_t num_slots() const { return groups.size() + (include_global ? 1 : 0); }
};

/// Partition strategies understood by build_partition.
inline constexpr std::string_view kPartitionNames[] = {"global", "two_part", "four_part", "six_part"};

/// Looks up the partition table for `name` on `graph`. "global" is always
/// available and covers every joint; the global contrast slot is enabled by
/// default for every multi-part strategy.
PartPartition build_partition(std::string_view name, const SkeletonGraph& graph);

/// Throws PartitionError on empty groups, overlap, or out-of-range joints.
void check_partition(const PartPartition& partition, std::size_t num_joints);

/// Loads {"name", "num_joints", "edges", "parent", "partitions"} JSON.
SkeletonGraph load_skeleton_json(const std::filesystem::path& path);
void save_skeleton_json(const SkeletonGraph& graph, const std::filesystem::path& path);

}  // namespace gap
