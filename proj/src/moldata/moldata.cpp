#include "camp/moldata/moldata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "camp/error.hpp"
#include "json.hpp"

namespace camp::data {

using nlohmann::json;

AtomGraph make_graph(std::size_t feature_dim, std::vector<double> features, std::span<const Edge> bonds) {
  if (feature_dim == 0 || features.empty() || features.size() % feature_dim != 0) {
    throw InvalidArgument("atom features must be a non-empty multiple of the feature width");
  }
  AtomGraph g;
  g.feature_dim = feature_dim;
  g.features = std::move(features);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;
  auto add = [&](std::size_t s, std::size_t d, std::size_t t) {
    const auto [it, inserted] = seen.emplace(std::pair{s, d}, t);
    if (!inserted) {
      if (it->second != t) {
        throw InvalidArgument("conflicting bond types for atoms " + std::to_string(s) + " and " + std::to_string(d));
      }
      return;
    }
    g.edges.push_back(Edge{s, d, t});
  };
  for (const auto& e : bonds) {
    add(e.src, e.dst, e.bond_type);
    add(e.dst, e.src, e.bond_type);
  }
  return g;
}

bool is_connected(const AtomGraph& graph) {
  const auto n = graph.n_atoms();
  if (n == 0) return false;
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& e : graph.edges) {
    if (e.src < n && e.dst < n) adj[e.src].push_back(e.dst);
  }
  std::vector<bool> visited(n, false);
  std::vector<std::size_t> stack{0};
  visited[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    for (auto v : adj[u]) {
      if (!visited[v]) {
        visited[v] = true;
        ++count;
        stack.push_back(v);
      }
    }
  }
  return count == n;
}

void validate_graph(const AtomGraph& graph, std::size_t n_bond_types) {
  const auto n = graph.n_atoms();
  if (n == 0) throw InvalidArgument("molecule has no atoms");
  if (graph.features.size() != n * graph.feature_dim) throw InvalidArgument("ragged atom feature matrix");
  std::set<std::pair<std::size_t, std::size_t>> directed;
  for (const auto& e : graph.edges) {
    if (e.src >= n || e.dst >= n) {
      throw InvalidArgument("edge index " + std::to_string(std::max(e.src, e.dst)) + " out of range for " +
                            std::to_string(n) + " atoms");
    }
    if (e.src == e.dst) throw InvalidArgument("self-loop on atom " + std::to_string(e.src));
    if (e.bond_type >= n_bond_types) {
      throw InvalidArgument("bond type " + std::to_string(e.bond_type) + " outside [0, " +
                            std::to_string(n_bond_types) + ")");
    }
    directed.emplace(e.src, e.dst);
  }
  for (const auto& e : graph.edges) {
    if (!directed.contains({e.dst, e.src})) {
      throw InvalidArgument("edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) + " has no reverse");
    }
  }
  for (double v : graph.features) {
    if (!std::isfinite(v)) throw InvalidArgument("non-finite atom feature");
  }
  if (!is_connected(graph)) throw InvalidArgument("molecule graph is disconnected");
}

std::vector<double> mean_atom_features(const AtomGraph& graph) {
  std::vector<double> mean(graph.feature_dim, 0.0);
  const auto n = graph.n_atoms();
  for (std::size_t a = 0; a < n; ++a) {
    const auto row = graph.atom(a);
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += row[c];
  }
  for (auto& v : mean) v /= static_cast<double>(n);
  return mean;
}

std::size_t PropertyTask::n_positive() const {
  return static_cast<std::size_t>(
      std::count_if(molecules.begin(), molecules.end(), [](const MoleculePtr& m) { return m->label == 1; }));
}

void validate_episode(const Episode& episode) {
  if (episode.support.empty()) throw InvalidArgument("episode support is empty");
  if (!episode.query) throw InvalidArgument("episode has no query");
  for (const auto& m : episode.support) {
    if (!m) throw InvalidArgument("episode support holds a null molecule");
    if (m == episode.query) throw InvalidArgument("episode query is also a support element");
  }
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kValid:
      return "valid";
    case Split::kTest:
      return "test";
  }
  return "unknown";
}

bool same_content(const TaskSet& a, const TaskSet& b) {
  if (a.atom_feature_dim != b.atom_feature_dim || a.n_bond_types != b.n_bond_types || a.size() != b.size()) {
    return false;
  }
  for (std::size_t t = 0; t < a.size(); ++t) {
    const auto& ta = a.tasks[t];
    const auto& tb = b.tasks[t];
    if (ta.task_id != tb.task_id || ta.size() != tb.size()) return false;
    for (std::size_t m = 0; m < ta.size(); ++m) {
      if (!(*ta.molecules[m] == *tb.molecules[m])) return false;
    }
  }
  return true;
}

namespace {

[[noreturn]] void line_error(const std::string& source, std::size_t line, const std::string& what) {
  throw InvalidArgument(source + ":" + std::to_string(line) + ": " + what);
}

std::size_t as_index(const json& v, const std::string& source, std::size_t line, const char* what) {
  if (!v.is_number_integer() || v.get<long long>() < 0) line_error(source, line, std::string(what) + " must be a non-negative integer");
  return v.get<std::size_t>();
}

LabeledMolecule parse_molecule(const json& mol, std::size_t index, const TaskSet& header, const std::string& source,
                               std::size_t line) {
  const std::string where = "molecule " + std::to_string(index) + ": ";
  if (!mol.is_object() || !mol.contains("atoms") || !mol.contains("edges") || !mol.contains("label")) {
    line_error(source, line, where + "expected an object with atoms, edges and label");
  }
  const auto& atoms = mol.at("atoms");
  if (!atoms.is_array() || atoms.empty()) line_error(source, line, where + "atoms must be a non-empty array");
  std::vector<double> features;
  for (const auto& row : atoms) {
    if (!row.is_array() || row.size() != header.atom_feature_dim) {
      line_error(source, line, where + "atom feature rows must have width " + std::to_string(header.atom_feature_dim));
    }
    for (const auto& v : row) {
      if (!v.is_number()) line_error(source, line, where + "atom features must be numbers");
      features.push_back(v.get<double>());
    }
  }
  const std::size_t n_atoms = atoms.size();
  const auto& edges = mol.at("edges");
  if (!edges.is_array()) line_error(source, line, where + "edges must be an array");
  std::vector<Edge> bonds;
  for (const auto& e : edges) {
    if (!e.is_array() || e.size() != 3) line_error(source, line, where + "each edge must be [src, dst, type]");
    Edge edge{as_index(e[0], source, line, "edge src"), as_index(e[1], source, line, "edge dst"),
              as_index(e[2], source, line, "bond type")};
    for (auto idx : {edge.src, edge.dst}) {
      if (idx >= n_atoms) {
        line_error(source, line,
                   where + "edge index " + std::to_string(idx) + " out of range (" + std::to_string(n_atoms) + " atoms)");
      }
    }
    bonds.push_back(edge);
  }
  const auto& label = mol.at("label");
  if (!label.is_number_integer() || (label.get<int>() != 0 && label.get<int>() != 1)) {
    line_error(source, line, where + "label must be 0 or 1");
  }
  LabeledMolecule out;
  try {
    out.graph = make_graph(header.atom_feature_dim, std::move(features), bonds);
    validate_graph(out.graph, header.n_bond_types);
  } catch (const InvalidArgument& e) {
    line_error(source, line, where + e.what());
  }
  out.label = label.get<int>();
  return out;
}

}  // namespace

TaskSet read_tasks(std::istream& in, const std::string& source) {
  TaskSet set;
  std::string text;
  std::size_t line_no = 0;
  bool have_header = false;
  std::set<std::string> ids;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      line_error(source, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!record.is_object()) line_error(source, line_no, "expected a JSON object");
    if (!have_header) {
      if (!record.contains("format_version") || !record.contains("atom_feature_dim") ||
          !record.contains("n_bond_types")) {
        line_error(source, line_no, "header must declare format_version, atom_feature_dim and n_bond_types");
      }
      if (record["format_version"] != kDatasetFormatVersion) {
        line_error(source, line_no, "unsupported format_version " + record["format_version"].dump());
      }
      set.atom_feature_dim = as_index(record["atom_feature_dim"], source, line_no, "atom_feature_dim");
      set.n_bond_types = as_index(record["n_bond_types"], source, line_no, "n_bond_types");
      if (set.atom_feature_dim == 0 || set.n_bond_types == 0) {
        line_error(source, line_no, "atom_feature_dim and n_bond_types must be positive");
      }
      have_header = true;
      continue;
    }
    if (!record.contains("task_id") || !record["task_id"].is_string() || !record.contains("molecules") ||
        !record["molecules"].is_array()) {
      line_error(source, line_no, "task record must have a string task_id and a molecules array");
    }
    PropertyTask task;
    task.task_id = record["task_id"].get<std::string>();
    if (!ids.insert(task.task_id).second) line_error(source, line_no, "duplicate task_id '" + task.task_id + "'");
    std::size_t index = 0;
    for (const auto& mol : record["molecules"]) {
      task.molecules.push_back(std::make_shared<const LabeledMolecule>(parse_molecule(mol, index++, set, source, line_no)));
    }
    if (task.size() < 2) line_error(source, line_no, "task '" + task.task_id + "' needs at least 2 molecules");
    set.tasks.push_back(std::move(task));
  }
  if (set.tasks.empty()) throw InvalidArgument(source + ": no tasks");
  return set;
}

TaskSet load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read dataset " + path.string());
  return read_tasks(in, path.string());
}

void write_tasks(const TaskSet& tasks, std::ostream& out) {
  out << json{{"format_version", kDatasetFormatVersion},
              {"atom_feature_dim", tasks.atom_feature_dim},
              {"n_bond_types", tasks.n_bond_types}}
             .dump()
      << '\n';
  for (const auto& task : tasks.tasks) {
    json mols = json::array();
    for (const auto& m : task.molecules) {
      json atoms = json::array();
      for (std::size_t a = 0; a < m->graph.n_atoms(); ++a) {
        const auto row = m->graph.atom(a);
        atoms.push_back(std::vector<double>(row.begin(), row.end()));
      }
      json edges = json::array();
      for (const auto& e : m->graph.edges) {
        if (e.src < e.dst) edges.push_back({e.src, e.dst, e.bond_type});
      }
      mols.push_back({{"atoms", std::move(atoms)}, {"edges", std::move(edges)}, {"label", m->label}});
    }
    out << json{{"task_id", task.task_id}, {"molecules", std::move(mols)}}.dump() << '\n';
  }
}

void save_tasks(const TaskSet& tasks, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write dataset " + path.string());
  write_tasks(tasks, out);
}

SupportSample sample_support(const PropertyTask& task, std::size_t k, Rng& rng) {
  if (k == 0) throw InvalidArgument("support size must be positive");
  if (task.size() < k + 1) {
    throw InvalidArgument("task '" + task.task_id + "' has " + std::to_string(task.size()) +
                          " molecules, support size " + std::to_string(k) + " needs at least " + std::to_string(k + 1));
  }
  std::vector<std::size_t> order(task.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> chosen;
  if (k >= 2 && task.n_positive() > 0 && task.n_negative() > 0) {
    // Seed one molecule of each class, then fill from the shuffled order.
    for (int label : {1, 0}) {
      const auto it = std::find_if(order.begin(), order.end(),
                                   [&](std::size_t i) { return task.molecules[i]->label == label; });
      chosen.push_back(*it);
      order.erase(it);
    }
  }
  for (std::size_t i = 0; chosen.size() < k; ++i) chosen.push_back(order[i]);
  std::shuffle(chosen.begin(), chosen.end(), rng);

  std::vector<bool> in_support(task.size(), false);
  SupportSample out;
  for (auto i : chosen) {
    in_support[i] = true;
    out.support.push_back(task.molecules[i]);
  }
  for (std::size_t i = 0; i < task.size(); ++i) {
    if (!in_support[i]) out.remainder.push_back(task.molecules[i]);
  }
  return out;
}

Episode sample_episode(const PropertyTask& task, std::size_t k, Rng& rng) {
  auto sample = sample_support(task, k, rng);
  std::uniform_int_distribution<std::size_t> pick(0, sample.remainder.size() - 1);
  return Episode{std::move(sample.support), sample.remainder[pick(rng)]};
}

std::vector<Episode> expand_leave_one_out(std::span<const MoleculePtr> pool) {
  if (pool.size() < 2) throw InvalidArgument("leave-one-out expansion needs a pool of at least 2 molecules");
  std::vector<Episode> out;
  out.reserve(pool.size());
  for (std::size_t q = 0; q < pool.size(); ++q) {
    Episode e;
    e.query = pool[q];
    e.support.reserve(pool.size() - 1);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (i != q) e.support.push_back(pool[i]);
    }
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

AtomGraph random_graph(std::size_t n_atoms, std::span<const double> motif, const SyntheticConfig& cfg, Rng& rng) {
  std::normal_distribution<double> noise(0.0, cfg.noise_std);
  std::uniform_int_distribution<std::size_t> bond(0, cfg.n_bond_types - 1);
  std::vector<double> features(n_atoms * cfg.atom_feature_dim);
  for (std::size_t a = 0; a < n_atoms; ++a)
    for (std::size_t c = 0; c < cfg.atom_feature_dim; ++c) features[a * cfg.atom_feature_dim + c] = motif[c] + noise(rng);

  std::vector<Edge> bonds;
  std::set<std::pair<std::size_t, std::size_t>> present;
  for (std::size_t a = 1; a < n_atoms; ++a) {
    const auto parent = std::uniform_int_distribution<std::size_t>(0, a - 1)(rng);
    bonds.push_back(Edge{parent, a, bond(rng)});
    present.emplace(parent, a);
  }
  const auto extra = std::uniform_int_distribution<std::size_t>(0, n_atoms / 3)(rng);
  std::uniform_int_distribution<std::size_t> atom(0, n_atoms - 1);
  for (std::size_t attempt = 0, added = 0; added < extra && attempt < 10 * (extra + 1); ++attempt) {
    auto u = atom(rng), v = atom(rng);
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    if (!present.emplace(u, v).second) continue;
    bonds.push_back(Edge{u, v, bond(rng)});
    ++added;
  }
  return make_graph(cfg.atom_feature_dim, std::move(features), bonds);
}

}  // namespace

TaskSet make_synthetic_tasks(const SyntheticConfig& cfg, Rng& rng) {
  if (cfg.n_tasks == 0 || cfg.molecules_per_task < 2 || cfg.atom_feature_dim == 0 || cfg.n_bond_types == 0 ||
      cfg.min_atoms == 0 || cfg.max_atoms < cfg.min_atoms) {
    throw InvalidArgument("synthetic task configuration must use positive counts");
  }
  TaskSet set;
  set.atom_feature_dim = cfg.atom_feature_dim;
  set.n_bond_types = cfg.n_bond_types;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> atoms(cfg.min_atoms, cfg.max_atoms);
  const auto dim = cfg.atom_feature_dim;
  for (std::size_t t = 0; t < cfg.n_tasks; ++t) {
    std::vector<double> center(dim), direction(dim);
    double norm = 0.0;
    for (std::size_t c = 0; c < dim; ++c) {
      center[c] = normal(rng);
      direction[c] = normal(rng);
      norm += direction[c] * direction[c];
    }
    norm = std::sqrt(norm);
    // motifs[label] = center -/+ (separation / 2) * unit direction
    std::array<std::vector<double>, 2> motifs{center, center};
    for (std::size_t c = 0; c < dim; ++c) {
      const double offset = 0.5 * cfg.motif_separation * direction[c] / norm;
      motifs[0][c] -= offset;
      motifs[1][c] += offset;
    }
    std::vector<int> labels(cfg.molecules_per_task, 0);
    const auto n_pos = cfg.molecules_per_task / 2 +
                       (cfg.molecules_per_task % 2 ? std::bernoulli_distribution(0.5)(rng) : 0);
    std::fill_n(labels.begin(), n_pos, 1);
    std::shuffle(labels.begin(), labels.end(), rng);

    PropertyTask task;
    char id[32];
    std::snprintf(id, sizeof id, "synth-%04zu", t);
    task.task_id = id;
    for (int label : labels) {
      auto graph = random_graph(atoms(rng), motifs[static_cast<std::size_t>(label)], cfg, rng);
      task.molecules.push_back(std::make_shared<const LabeledMolecule>(LabeledMolecule{std::move(graph), label}));
    }
    set.tasks.push_back(std::move(task));
  }
  return set;
}

TaskSplit split_tasks(const TaskSet& tasks, std::array<double, 3> fractions, Rng& rng) {
  double total = 0.0;
  std::size_t nonzero = 0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw InvalidArgument("split fractions must be non-negative");
    total += f;
    nonzero += f > 0.0;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("split fractions must sum to 1");
  const auto n = tasks.size();
  if (n < nonzero) {
    throw InvalidArgument("cannot split " + std::to_string(n) + " tasks into " + std::to_string(nonzero) +
                          " non-empty parts");
  }
  // Largest-remainder apportionment, at least one task per non-zero fraction.
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = fractions[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainders[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < n) {
    const auto i = static_cast<std::size_t>(std::max_element(remainders.begin(), remainders.end()) - remainders.begin());
    ++counts[i];
    remainders[i] = -1.0;
    ++assigned;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (fractions[i] > 0.0 && counts[i] == 0) {
      const auto donor = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[donor];
      ++counts[i];
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  TaskSplit out;
  std::array<TaskSet*, 3> parts{&out.train, &out.valid, &out.test};
  const std::array<Split, 3> tags{Split::kTrain, Split::kValid, Split::kTest};
  std::size_t pos = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    auto& part = *parts[i];
    part.split = tags[i];
    part.atom_feature_dim = tasks.atom_feature_dim;
    part.n_bond_types = tasks.n_bond_types;
    for (std::size_t j = 0; j < counts[i]; ++j) part.tasks.push_back(tasks.tasks[order[pos++]]);
  }
  return out;
}

}  // namespace camp::data
