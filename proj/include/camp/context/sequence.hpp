#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "camp/tensorcore/tensor.hpp"

namespace camp::context {

enum class Layout { kCamp, kNaiveIcl };

// The transformer input for one episode.
//
// CAMP: L = k+1 rows, each [molecule embedding | label embedding]; the query
// row carries the UNKNOWN label embedding.
// Naive ICL: L = 2k+1 rows alternating molecule and label tokens, ending with
// the query molecule token.
struct JointSequence {
  tensor::Tensor rows;
  std::size_t query_index = 0;
  Layout layout = Layout::kCamp;

  std::size_t length() const { return rows.rows(); }
  std::size_t width() const { return rows.cols(); }
};

using Vector = std::vector<double>;

// Rows in order [query, support_1, ..., support_k]; query_index 0.
// mol_embs[0] is the query molecule, label_embs[0] the UNKNOWN embedding.
JointSequence assemble_camp(std::span<const Vector> mol_embs, std::span<const Vector> label_embs);

// [mol_1, lab_1, ..., mol_k, lab_k, mol_query]; query_index 2k. mol_embs holds
// the k support molecules followed by the query; every vector has width d_model.
JointSequence assemble_naive_icl(std::span<const Vector> mol_embs, std::span<const Vector> label_embs);

// Splits a CAMP row into (molecule part, label part).
std::pair<Vector, Vector> split_camp_row(const JointSequence& seq, std::size_t row, std::size_t d_label);

// Layout checks against the label embeddings [negative, positive, unknown].
// CAMP: the query row, and only it, ends in the unknown embedding; every other
// row ends in the negative or positive one. Naive ICL: odd rows are negative
// or positive label tokens, even rows are not label tokens, the query is last.
bool is_valid_camp(const JointSequence& seq, std::span<const Vector> label_rows);
bool is_valid_naive_icl(const JointSequence& seq, std::span<const Vector> label_rows);

// Moves row `from` to position `to`, shifting the rows in between, and keeps
// query_index pointing at the same logical row.
JointSequence move_row(const JointSequence& seq, std::size_t from, std::size_t to);

// Applies a row permutation: output row i is input row perm[i].
JointSequence permute_rows(const JointSequence& seq, std::span<const std::size_t> perm);

}  // namespace camp::context
