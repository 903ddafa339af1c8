#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace camp::data {

using Rng = std::mt19937_64;

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::size_t bond_type = 0;
  auto operator<=>(const Edge&) const = default;
};

// A molecule: per-atom feature rows (row-major, feature_dim wide) and typed
// directed edges. Every bond is stored in both directions.
struct AtomGraph {
  std::size_t feature_dim = 0;
  std::vector<double> features;
  std::vector<Edge> edges;

  std::size_t n_atoms() const { return feature_dim ? features.size() / feature_dim : 0; }
  std::span<const double> atom(std::size_t i) const {
    return std::span<const double>(features).subspan(i * feature_dim, feature_dim);
  }
  bool operator==(const AtomGraph&) const = default;
};

// Builds a graph from possibly one-directional bonds, adding the missing
// reverse edges. Throws on conflicting bond types for the same atom pair.
AtomGraph make_graph(std::size_t feature_dim, std::vector<double> features, std::span<const Edge> bonds);

// Throws InvalidArgument describing the first violated invariant: endpoint
// range, self-loop, bond type range, missing reverse edge, connectivity.
void validate_graph(const AtomGraph& graph, std::size_t n_bond_types);
bool is_connected(const AtomGraph& graph);

// Per-feature mean over atoms.
std::vector<double> mean_atom_features(const AtomGraph& graph);

enum class Label : int { kNegative = 0, kPositive = 1 };

struct LabeledMolecule {
  AtomGraph graph;
  int label = 0;
  bool operator==(const LabeledMolecule&) const = default;
};

// Molecules are shared immutably; episode membership is decided by identity.
using MoleculePtr = std::shared_ptr<const LabeledMolecule>;

struct PropertyTask {
  std::string task_id;
  std::vector<MoleculePtr> molecules;

  std::size_t size() const { return molecules.size(); }
  std::size_t n_positive() const;
  std::size_t n_negative() const { return size() - n_positive(); }
};

struct Episode {
  std::vector<MoleculePtr> support;
  MoleculePtr query;

  std::size_t support_size() const { return support.size(); }
};

// Throws unless the support is non-empty and the query is not a support member.
void validate_episode(const Episode& episode);

enum class Split { kTrain, kValid, kTest };
std::string to_string(Split split);

struct TaskSet {
  std::vector<PropertyTask> tasks;
  Split split = Split::kTrain;
  std::size_t atom_feature_dim = 0;
  std::size_t n_bond_types = 0;

  std::size_t size() const { return tasks.size(); }
  bool empty() const { return tasks.empty(); }
};

// Value equality of task ids, graphs and labels.
bool same_content(const TaskSet& a, const TaskSet& b);

inline constexpr int kDatasetFormatVersion = 1;

TaskSet read_tasks(std::istream& in, const std::string& source = "<stream>");
TaskSet load_tasks(const std::filesystem::path& path);
void write_tasks(const TaskSet& tasks, std::ostream& out);
void save_tasks(const TaskSet& tasks, const std::filesystem::path& path);

// A stratified support of size k and the remaining molecules (task order).
struct SupportSample {
  std::vector<MoleculePtr> support;
  std::vector<MoleculePtr> remainder;
};

// Both classes are guaranteed in the support when the task has at least one of
// each and k >= 2. Requires at least k+1 molecules.
SupportSample sample_support(const PropertyTask& task, std::size_t k, Rng& rng);
Episode sample_episode(const PropertyTask& task, std::size_t k, Rng& rng);

// For a pool of k+1 molecules, emits k+1 episodes; episode i queries pool[i]
// against the remaining molecules in their original order.
std::vector<Episode> expand_leave_one_out(std::span<const MoleculePtr> pool);

struct SyntheticConfig {
  std::size_t n_tasks = 14;
  std::size_t molecules_per_task = 64;
  std::size_t atom_feature_dim = 16;
  std::size_t n_bond_types = 3;
  std::size_t min_atoms = 3;
  std::size_t max_atoms = 12;
  double noise_std = 0.5;
  double motif_separation = 2.0;
};

// Tasks with two class motifs each; atom features are noisy motif copies.
TaskSet make_synthetic_tasks(const SyntheticConfig& config, Rng& rng);

struct TaskSplit {
  TaskSet train;
  TaskSet valid;
  TaskSet test;
};

// Task-level partition. Fractions must be non-negative and sum to 1.
TaskSplit split_tasks(const TaskSet& tasks, std::array<double, 3> fractions, Rng& rng);

}  // namespace camp::data
