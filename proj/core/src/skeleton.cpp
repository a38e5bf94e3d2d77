// SPDX-License-Identifier: Apache-2.0
#include "gap/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>

#include "gap/errors.hpp"
#include "json.hpp"

namespace gap {
namespace {

void check_edges(const std::vector<Edge>& edges, std::size_t num_joints) {
  if (num_joints == 0) throw InvalidGraphError("skeleton graph needs at least one joint");
  const int n = static_cast<int>(num_joints);
  for (const auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) {
      throw InvalidGraphError("edge (" + std::to_string(a) + "," + std::to_string(b) + ") out of range for " +
                              std::to_string(num_joints) + " joints");
    }
    if (a == b) throw InvalidGraphError("self edge on joint " + std::to_string(a));
  }
}

std::vector<std::vector<int>> neighbours(const std::vector<Edge>& edges, std::size_t num_joints) {
  std::vector<std::vector<int>> adj(num_joints);
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto& row : adj) std::sort(row.begin(), row.end());
  return adj;
}

std::vector<std::vector<int>> range_group(int first, int last) {
  std::vector<int> g;
  for (int j = first; j <= last; ++j) g.push_back(j);
  return {g};
}

std::vector<int> concat(std::initializer_list<std::vector<int>> parts) {
  std::vector<int> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<int> iota_group(int first, int last) { return range_group(first, last).front(); }

const std::vector<std::string> kTwoNames = {"upper", "lower"};
const std::vector<std::string> kFourNames = {"head", "hands", "hip", "legs"};
const std::vector<std::string> kSixNames = {"head", "arm", "hand", "hip", "leg", "foot"};

// Joint layout (toy10): 0 head, 1 neck, 2 left hand, 3 right hand, 4 spine,
// 5 pelvis (root), 6 left knee, 7 right knee, 8 left foot, 9 right foot.
SkeletonGraph make_toy10() {
  std::vector<Edge> edges = {{0, 1}, {1, 2}, {1, 3}, {1, 4}, {4, 5}, {5, 6}, {5, 7}, {6, 8}, {7, 9}};
  std::map<std::string, PartTable> parts;
  parts["two_part"] = {kTwoNames, {iota_group(0, 4), iota_group(5, 9)}};
  parts["four_part"] = {kFourNames, {{0, 1}, {2, 3}, {4, 5}, {6, 7, 8, 9}}};
  parts["six_part"] = {kSixNames, {{0}, {1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}}};
  return SkeletonGraph("toy10", 10, edges, bfs_parent_map(edges, 10, 5), parts);
}

// Kinect v1 layout used by NW-UCLA (0-based): 0 hip center, 1 spine,
// 2 shoulder center, 3 head, 4-7 left arm, 8-11 right arm, 12-15 left leg,
// 16-19 right leg.
SkeletonGraph make_ucla20() {
  std::vector<Edge> edges = {{0, 1},  {1, 2},   {2, 3},   {2, 4},   {4, 5},   {5, 6},   {6, 7},
                             {2, 8},  {8, 9},   {9, 10},  {10, 11}, {0, 12},  {12, 13}, {13, 14},
                             {14, 15}, {0, 16}, {16, 17}, {17, 18}, {18, 19}};
  std::map<std::string, PartTable> parts;
  parts["two_part"] = {kTwoNames, {iota_group(1, 11), concat({{0}, iota_group(12, 19)})}};
  parts["four_part"] = {kFourNames, {{2, 3}, iota_group(4, 11), {0, 1, 12, 16}, {13, 14, 15, 17, 18, 19}}};
  parts["six_part"] = {kSixNames, {{2, 3}, {4, 5, 8, 9}, {6, 7, 10, 11}, {0, 1, 12, 16}, {13, 17}, {14, 15, 18, 19}}};
  return SkeletonGraph("ucla20", 20, edges, bfs_parent_map(edges, 20, 0), parts);
}

// Kinect v2 layout used by NTU RGB+D (0-based): 0 spine base, 1 spine mid,
// 2 neck, 3 head, 4-7 left arm, 8-11 right arm, 12-15 left leg, 16-19 right
// leg, 20 spine shoulder, 21/22 left hand tip/thumb, 23/24 right.
SkeletonGraph make_ntu25() {
  std::vector<Edge> edges = {{0, 1},  {1, 20},  {2, 20},  {3, 2},   {4, 20},  {5, 4},   {6, 5},   {7, 6},
                             {8, 20}, {9, 8},   {10, 9},  {11, 10}, {12, 0},  {13, 12}, {14, 13}, {15, 14},
                             {16, 0}, {17, 16}, {18, 17}, {19, 18}, {21, 22}, {22, 7},  {23, 24}, {24, 11}};
  std::map<std::string, PartTable> parts;
  parts["two_part"] = {kTwoNames, {concat({iota_group(1, 11), iota_group(20, 24)}), concat({{0}, iota_group(12, 19)})}};
  parts["four_part"] = {kFourNames,
                        {{2, 3, 20}, concat({iota_group(4, 11), iota_group(21, 24)}), {0, 1, 12, 16}, {13, 14, 15, 17, 18, 19}}};
  parts["six_part"] = {kSixNames,
                       {{2, 3, 20}, {4, 5, 8, 9}, {6, 7, 10, 11, 21, 22, 23, 24}, {0, 1, 12, 16}, {13, 17}, {14, 15, 18, 19}}};
  return SkeletonGraph("ntu25", 25, edges, bfs_parent_map(edges, 25, 0), parts);
}

std::vector<std::array<double, 3>> mirror_arm_leg(std::vector<std::array<double, 3>> pose, int left_first, int right_first,
                                                  int count) {
  for (int i = 0; i < count; ++i) {
    auto p = pose[left_first + i];
    p[0] = -p[0];
    pose[right_first + i] = p;
  }
  return pose;
}

}  // namespace

SkeletonGraph::SkeletonGraph(std::string name, std::size_t num_joints, std::vector<Edge> edges, std::vector<int> parent,
                             std::map<std::string, PartTable> partitions)
    : name_(std::move(name)),
      num_joints_(num_joints),
      edges_(std::move(edges)),
      parent_(std::move(parent)),
      partitions_(std::move(partitions)) {
  check_edges(edges_, num_joints_);
  if (!is_connected(edges_, num_joints_)) throw InvalidGraphError("skeleton graph '" + name_ + "' is not connected");
  if (parent_.size() != num_joints_) {
    throw InvalidGraphError("parent map has " + std::to_string(parent_.size()) + " entries, expected " +
                            std::to_string(num_joints_));
  }
  for (int p : parent_) {
    if (p < 0 || p >= static_cast<int>(num_joints_)) throw InvalidGraphError("parent index out of range");
  }
  for (const auto& [pname, table] : partitions_) {
    if (table.part_names.size() != table.groups.size()) {
      throw InvalidGraphError("partition '" + pname + "' has mismatched part names and groups");
    }
    check_partition(PartPartition{pname, table.part_names, table.groups, false}, num_joints_);
  }
  adjacency_norm_ = normalize_adjacency(edges_, num_joints_);
}

std::vector<double> normalize_adjacency(const std::vector<Edge>& edges, std::size_t num_joints) {
  check_edges(edges, num_joints);
  const std::size_t n = num_joints;
  std::vector<double> a(n * n, 0.0);
  for (const auto& [i, j] : edges) {
    a[i * n + j] = 1.0;
    a[j * n + i] = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a[i * n + j];
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  return a;
}

bool is_connected(const std::vector<Edge>& edges, std::size_t num_joints) {
  if (num_joints == 0) return false;
  const auto adj = neighbours(edges, num_joints);
  std::vector<char> seen(num_joints, 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  std::size_t count = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
    }
  }
  return count == num_joints;
}

std::vector<int> bfs_parent_map(const std::vector<Edge>& edges, std::size_t num_joints, int root) {
  check_edges(edges, num_joints);
  const auto adj = neighbours(edges, num_joints);
  std::vector<int> parent(num_joints, -1);
  std::queue<int> q;
  parent[root] = root;
  q.push(root);
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u]) {
      if (parent[v] < 0) {
        parent[v] = u;
        q.push(v);
      }
    }
  }
  if (std::find(parent.begin(), parent.end(), -1) != parent.end()) {
    throw InvalidGraphError("graph is not connected; no spanning tree from root");
  }
  return parent;
}

ParentMapReport validate_parent_map(const SkeletonGraph& graph) {
  ParentMapReport report;
  const auto n = static_cast<int>(graph.num_joints());
  const auto& parent = graph.parent();
  std::set<Edge> edge_set;
  for (auto [a, b] : graph.edges()) {
    edge_set.insert({std::min(a, b), std::max(a, b)});
  }
  std::vector<int> roots;
  for (int j = 0; j < n; ++j) {
    const int p = parent[j];
    if (p == j) {
      roots.push_back(j);
      continue;
    }
    if (!edge_set.count({std::min(j, p), std::max(j, p)})) {
      report.problems.push_back("pair (" + std::to_string(j) + "," + std::to_string(p) + ") is not an edge");
    }
  }
  if (roots.size() != 1) {
    report.problems.push_back("expected exactly one self-parented root, found " + std::to_string(roots.size()));
  }
  // Every chain of parents must reach a root in fewer than n steps.
  for (int j = 0; j < n; ++j) {
    int cur = j;
    int steps = 0;
    while (parent[cur] != cur && steps <= n) {
      cur = parent[cur];
      ++steps;
    }
    if (parent[cur] != cur) {
      report.problems.push_back("parent chain from joint " + std::to_string(j) + " contains a cycle");
      break;
    }
  }
  report.valid = report.problems.empty();
  return report;
}

const SkeletonGraph& shipped_skeleton(std::string_view name) {
  static const SkeletonGraph toy = make_toy10();
  static const SkeletonGraph ucla = make_ucla20();
  static const SkeletonGraph ntu = make_ntu25();
  if (name == "toy10") return toy;
  if (name == "ucla20") return ucla;
  if (name == "ntu25") return ntu;
  throw UnsupportedPartitionError("unknown skeleton '" + std::string(name) + "'");
}

std::vector<std::string> shipped_skeleton_names() { return {"toy10", "ucla20", "ntu25"}; }

const std::vector<std::array<double, 3>>& rest_pose(std::string_view skeleton_name) {
  static const std::vector<std::array<double, 3>> toy = {
      {0.0, 1.70, 0.0},   {0.0, 1.50, 0.0},  {-0.60, 1.20, 0.0}, {0.60, 1.20, 0.0},  {0.0, 1.20, 0.0},
      {0.0, 0.90, 0.0},   {-0.15, 0.50, 0.0}, {0.15, 0.50, 0.0},  {-0.15, 0.05, 0.0}, {0.15, 0.05, 0.0}};
  static const std::vector<std::array<double, 3>> ucla = [] {
    std::vector<std::array<double, 3>> p(20);
    p[0] = {0.0, 0.95, 0.0};
    p[1] = {0.0, 1.20, 0.0};
    p[2] = {0.0, 1.45, 0.0};
    p[3] = {0.0, 1.65, 0.0};
    p[4] = {-0.20, 1.42, 0.0};
    p[5] = {-0.45, 1.42, 0.0};
    p[6] = {-0.70, 1.42, 0.0};
    p[7] = {-0.78, 1.42, 0.0};
    p[12] = {-0.12, 0.92, 0.0};
    p[13] = {-0.12, 0.50, 0.0};
    p[14] = {-0.12, 0.10, 0.0};
    p[15] = {-0.12, 0.05, 0.10};
    p = mirror_arm_leg(p, 4, 8, 4);
    return mirror_arm_leg(p, 12, 16, 4);
  }();
  static const std::vector<std::array<double, 3>> ntu = [] {
    std::vector<std::array<double, 3>> p(25);
    p[0] = {0.0, 0.95, 0.0};
    p[1] = {0.0, 1.20, 0.0};
    p[2] = {0.0, 1.50, 0.0};
    p[3] = {0.0, 1.65, 0.0};
    p[4] = {-0.20, 1.42, 0.0};
    p[5] = {-0.45, 1.42, 0.0};
    p[6] = {-0.70, 1.42, 0.0};
    p[7] = {-0.78, 1.42, 0.0};
    p[12] = {-0.12, 0.92, 0.0};
    p[13] = {-0.12, 0.50, 0.0};
    p[14] = {-0.12, 0.10, 0.0};
    p[15] = {-0.12, 0.05, 0.10};
    p[20] = {0.0, 1.42, 0.0};
    p[21] = {-0.86, 1.42, 0.0};
    p[22] = {-0.80, 1.45, 0.03};
    p = mirror_arm_leg(p, 4, 8, 4);
    p = mirror_arm_leg(p, 12, 16, 4);
    return mirror_arm_leg(p, 21, 23, 2);
  }();
  if (skeleton_name == "toy10") return toy;
  if (skeleton_name == "ucla20") return ucla;
  if (skeleton_name == "ntu25") return ntu;
  throw UnsupportedPartitionError("no rest pose for skeleton '" + std::string(skeleton_name) + "'");
}

void check_partition(const PartPartition& partition, std::size_t num_joints) {
  if (partition.groups.empty()) throw PartitionError("partition '" + partition.name + "' has no groups");
  std::vector<char> used(num_joints, 0);
  for (std::size_t k = 0; k < partition.groups.size(); ++k) {
    const auto& group = partition.groups[k];
    if (group.empty()) {
      throw PartitionError("partition '" + partition.name + "' group " + std::to_string(k) + " is empty");
    }
    for (int j : group) {
      if (j < 0 || j >= static_cast<int>(num_joints)) {
        throw PartitionError("partition '" + partition.name + "' references joint " + std::to_string(j) +
                             " outside [0," + std::to_string(num_joints) + ")");
      }
      if (used[j]) {
        throw PartitionError("partition '" + partition.name + "' assigns joint " + std::to_string(j) + " twice");
      }
      used[j] = 1;
    }
  }
}

PartPartition build_partition(std::string_view name, const SkeletonGraph& graph) {
  PartPartition out;
  out.name = std::string(name);
  if (name == "global") {
    std::vector<int> all(graph.num_joints());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = static_cast<int>(j);
    out.part_names = {"body"};
    out.groups = {all};
    out.include_global = false;
    return out;
  }
  const bool known = std::find(std::begin(kPartitionNames), std::end(kPartitionNames), name) != std::end(kPartitionNames);
  auto it = graph.partitions().find(std::string(name));
  if (!known && it == graph.partitions().end()) {
    throw UnsupportedPartitionError("unknown partition '" + std::string(name) + "'");
  }
  if (it == graph.partitions().end()) {
    throw UnsupportedPartitionError("skeleton '" + graph.name() + "' has no '" + std::string(name) + "' table");
  }
  out.part_names = it->second.part_names;
  out.groups = it->second.groups;
  out.include_global = true;
  check_partition(out, graph.num_joints());
  return out;
}

SkeletonGraph load_skeleton_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open skeleton file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    const auto n = j.at("num_joints").get<std::size_t>();
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
    std::vector<int> parent = j.contains("parent") ? j.at("parent").get<std::vector<int>>()
                                                   : bfs_parent_map(edges, n, 0);
    std::map<std::string, PartTable> partitions;
    if (j.contains("partitions")) {
      for (const auto& [pname, value] : j.at("partitions").items()) {
        PartTable table;
        if (value.is_object()) {
          table.part_names = value.at("parts").get<std::vector<std::string>>();
          table.groups = value.at("groups").get<std::vector<std::vector<int>>>();
        } else {
          table.groups = value.get<std::vector<std::vector<int>>>();
          const std::size_t k = table.groups.size();
          if (pname == "two_part" && k == 2) {
            table.part_names = kTwoNames;
          } else if (pname == "four_part" && k == 4) {
            table.part_names = kFourNames;
          } else if (pname == "six_part" && k == 6) {
            table.part_names = kSixNames;
          } else {
            for (std::size_t g = 0; g < k; ++g) table.part_names.push_back("part" + std::to_string(g));
          }
        }
        partitions[pname] = std::move(table);
      }
    }
    return SkeletonGraph(j.value("name", path.stem().string()), n, std::move(edges), std::move(parent),
                         std::move(partitions));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed skeleton file " + path.string() + ": " + e.what());
  }
}

void save_skeleton_json(const SkeletonGraph& graph, const std::filesystem::path& path) {
  nlohmann::json j;
  j["name"] = graph.name();
  j["num_joints"] = graph.num_joints();
  j["edges"] = nlohmann::json::array();
  for (auto [a, b] : graph.edges()) j["edges"].push_back({a, b});
  j["parent"] = graph.parent();
  j["partitions"] = nlohmann::json::object();
  for (const auto& [pname, table] : graph.partitions()) {
    j["partitions"][pname] = {{"parts", table.part_names}, {"groups", table.groups}};
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write skeleton file " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace gap
