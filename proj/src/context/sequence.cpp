#include "camp/context/sequence.hpp"

#include <algorithm>
#include <string>

#include "camp/error.hpp"

namespace camp::context {
namespace {

bool row_ends_with(const tensor::Tensor& rows, std::size_t r, std::span<const double> tail) {
  const auto row = rows.row_view(r);
  if (tail.size() > row.size()) return false;
  return std::equal(tail.begin(), tail.end(), row.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

bool row_equals(const tensor::Tensor& rows, std::size_t r, std::span<const double> v) {
  const auto row = rows.row_view(r);
  return row.size() == v.size() && std::equal(v.begin(), v.end(), row.begin());
}

}  // namespace

JointSequence assemble_camp(std::span<const Vector> mol_embs, std::span<const Vector> label_embs) {
  if (mol_embs.size() < 2) throw InvalidArgument("CAMP sequence needs a query and at least one demonstration");
  if (label_embs.size() != mol_embs.size()) throw InvalidArgument("one label embedding per molecule required");
  const auto d_mol = mol_embs[0].size();
  const auto d_label = label_embs[0].size();
  if (d_mol == 0 || d_label == 0) throw InvalidArgument("embedding widths must be positive");
  const auto L = mol_embs.size();
  tensor::Tensor rows = tensor::Tensor::zeros(L, d_mol + d_label);
  for (std::size_t i = 0; i < L; ++i) {
    if (mol_embs[i].size() != d_mol || label_embs[i].size() != d_label) {
      throw InvalidArgument("embedding width mismatch in row " + std::to_string(i));
    }
    auto row = rows.row_view(i);
    std::copy(mol_embs[i].begin(), mol_embs[i].end(), row.begin());
    std::copy(label_embs[i].begin(), label_embs[i].end(), row.begin() + static_cast<std::ptrdiff_t>(d_mol));
  }
  return JointSequence{std::move(rows), 0, Layout::kCamp};
}

JointSequence assemble_naive_icl(std::span<const Vector> mol_embs, std::span<const Vector> label_embs) {
  if (mol_embs.size() < 2) throw InvalidArgument("naive ICL sequence needs a query and at least one demonstration");
  const auto k = mol_embs.size() - 1;
  if (label_embs.size() != k) throw InvalidArgument("one label token per demonstration required");
  const auto d = mol_embs[0].size();
  if (d == 0) throw InvalidArgument("embedding width must be positive");
  tensor::Tensor rows = tensor::Tensor::zeros(2 * k + 1, d);
  auto put = [&](std::size_t r, const Vector& v) {
    if (v.size() != d) throw InvalidArgument("token width mismatch in row " + std::to_string(r));
    std::copy(v.begin(), v.end(), rows.row_view(r).begin());
  };
  for (std::size_t i = 0; i < k; ++i) {
    put(2 * i, mol_embs[i]);
    put(2 * i + 1, label_embs[i]);
  }
  put(2 * k, mol_embs[k]);
  return JointSequence{std::move(rows), 2 * k, Layout::kNaiveIcl};
}

std::pair<Vector, Vector> split_camp_row(const JointSequence& seq, std::size_t row, std::size_t d_label) {
  if (row >= seq.length()) throw InvalidArgument("row index out of range");
  if (d_label >= seq.width()) throw InvalidArgument("label width exceeds row width");
  const auto r = seq.rows.row_view(row);
  const auto cut = r.begin() + static_cast<std::ptrdiff_t>(seq.width() - d_label);
  return {Vector(r.begin(), cut), Vector(cut, r.end())};
}

bool is_valid_camp(const JointSequence& seq, std::span<const Vector> label_rows) {
  if (seq.layout != Layout::kCamp || label_rows.size() != 3 || seq.length() < 2) return false;
  if (seq.query_index >= seq.length()) return false;
  for (std::size_t r = 0; r < seq.length(); ++r) {
    const bool unknown = row_ends_with(seq.rows, r, label_rows[2]);
    if (r == seq.query_index) {
      if (!unknown) return false;
    } else if (unknown || !(row_ends_with(seq.rows, r, label_rows[0]) || row_ends_with(seq.rows, r, label_rows[1]))) {
      return false;
    }
  }
  return true;
}

bool is_valid_naive_icl(const JointSequence& seq, std::span<const Vector> label_rows) {
  if (seq.layout != Layout::kNaiveIcl || label_rows.size() < 2) return false;
  const auto L = seq.length();
  if (L < 3 || L % 2 == 0 || seq.query_index != L - 1) return false;
  auto is_label = [&](std::size_t r, std::size_t n_tokens) {
    for (std::size_t t = 0; t < n_tokens; ++t)
      if (row_equals(seq.rows, r, label_rows[t])) return true;
    return false;
  };
  for (std::size_t r = 0; r < L; ++r) {
    if (r % 2 == 1) {
      if (!is_label(r, 2)) return false;
    } else if (is_label(r, label_rows.size())) {
      return false;
    }
  }
  return true;
}

JointSequence move_row(const JointSequence& seq, std::size_t from, std::size_t to) {
  const auto L = seq.length();
  if (from >= L || to >= L) throw InvalidArgument("row index out of range");
  std::vector<std::size_t> order(L);
  for (std::size_t i = 0; i < L; ++i) order[i] = i;
  order.erase(order.begin() + static_cast<std::ptrdiff_t>(from));
  order.insert(order.begin() + static_cast<std::ptrdiff_t>(to), from);
  return permute_rows(seq, order);
}

JointSequence permute_rows(const JointSequence& seq, std::span<const std::size_t> perm) {
  const auto L = seq.length();
  if (perm.size() != L) throw InvalidArgument("permutation length mismatch");
  std::vector<bool> seen(L, false);
  JointSequence out{tensor::Tensor::zeros(L, seq.width()), 0, seq.layout};
  for (std::size_t i = 0; i < L; ++i) {
    if (perm[i] >= L || seen[perm[i]]) throw InvalidArgument("not a permutation");
    seen[perm[i]] = true;
    const auto src = seq.rows.row_view(perm[i]);
    std::copy(src.begin(), src.end(), out.rows.row_view(i).begin());
    if (perm[i] == seq.query_index) out.query_index = i;
  }
  return out;
}

}  // namespace camp::context
