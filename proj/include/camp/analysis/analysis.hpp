#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "camp/camphead/model.hpp"
#include "camp/context/sequence.hpp"
#include "camp/transformer/transformer.hpp"

namespace camp::analysis {

using Point = std::array<double, 2>;

struct PcaProjection {
  std::vector<double> mean;
  std::array<std::vector<double>, 2> axes;  // unit, orthogonal, largest |entry| positive
  std::array<double, 2> eigenvalues{};      // of the sample covariance
  std::array<double, 2> explained{};        // eigenvalue / total variance
  std::vector<Point> coords;
};

inline constexpr std::size_t kPowerIterations = 200;
inline constexpr double kPowerTolerance = 1e-10;

// Top-2 principal components by power iteration with deflation.
PcaProjection pca_2d(const tensor::Tensor& rows);
// Coordinates of `rows` on an existing projection's axes.
std::vector<Point> project(const PcaProjection& pca, const tensor::Tensor& rows);

enum class Role { kQuery, kPositive, kNegative, kLabelToken };
std::string to_string(Role role);

struct Snapshot {
  context::JointSequence pre;
  tensor::Tensor post;
  std::vector<transformer::AttentionRecord> attention;
  std::vector<Role> roles;
  head::Prediction prediction;
};

// Eval-mode pre/post-encoder rows, every head's attention and the prediction.
Snapshot snapshot_embeddings(const head::CampModel& model, const data::Episode& episode);

// Sequence row that carries support element `i`'s label.
std::size_t label_row(context::Layout layout, std::size_t support_index, std::size_t support_size);

struct LabelFlipReport {
  std::size_t flip_index = 0;  // sequence row
  std::size_t support_index = 0;
  Snapshot before;
  Snapshot after;
};

// Re-runs the snapshot with one support label inverted. `flip_index` is a
// sequence row belonging to a support element.
LabelFlipReport label_flip(const head::CampModel& model, const data::Episode& episode, std::size_t flip_index);

struct Displacement {
  double flipped = 0.0;
  std::vector<double> others;  // every other row, sequence order
  double median_other = 0.0;
  bool exceeds_median() const { return flipped > median_other; }
};

// Post-encoder movement of each row under the flip, in full width (L2) or in
// the 2-D PCA plane fitted to the pre-flip rows.
Displacement post_displacement(const LabelFlipReport& report);
Displacement pca_displacement(const LabelFlipReport& report);

// 1 - within-group / total variance of attention rows grouped by the
// attender's class id. 0 when every row is the same.
double striation_score(const transformer::AttentionRecord& record, std::span<const int> row_classes);
// Class ids per row: query 2, label tokens 3, support rows their label.
std::vector<int> row_classes(std::span<const Role> roles);

// row,role,pc1,pc2
void write_pca_csv(const PcaProjection& pca, std::span<const Role> roles, std::ostream& out);
// Flip summary: indices, predictions, displacements, striation per head.
void write_flip_json(const LabelFlipReport& report, std::ostream& out);

// Three panels: pre-encoder, post-encoder, post-encoder after the flip (on
// the pre-flip axes). Markers by role.
std::string embedding_panels_svg(const LabelFlipReport& report);
std::string attention_heatmap_svg(const transformer::AttentionRecord& record, std::span<const Role> roles);

}  // namespace camp::analysis
