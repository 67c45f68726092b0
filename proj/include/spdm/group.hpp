#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "spdm/types.hpp"

namespace spdm {

enum class FlipAxis {
  vertical,    // reverses rows (upside down)
  horizontal,  // reverses columns (mirror)
};

/// A linear isometry. Point elements carry a dense orthogonal matrix; grid
/// elements carry an index permutation of pixel positions that is applied to
/// every channel alike, so their action is exact.
class GroupElement {
 public:
  static GroupElement point(std::size_t id, std::string name, Matrix matrix);
  static GroupElement grid(std::size_t id, std::string name, GridShape shape,
                           std::vector<std::size_t> pixel_source);

  std::size_t id() const { return id_; }
  const std::string& name() const { return name_; }
  bool is_grid() const { return std::holds_alternative<GridAction>(action_); }

  /// Length of the vectors this element acts on.
  std::size_t dimension() const;

  /// Returns κx. Throws ShapeMismatch when x.size() != dimension().
  Vector apply(const Vector& x) const;
  /// Applies the element to every column of xs.
  Matrix apply_columns(const Matrix& xs) const;

  /// Dense matrix A_κ (a permutation matrix for grid elements).
  Matrix matrix() const;

  /// Grid elements only.
  const GridShape& grid_shape() const;
  /// out_pixel[i] = in_pixel[pixel_source()[i]]. Grid elements only.
  std::span<const std::size_t> pixel_source() const;
  /// Pixel index that pixel p is moved to. Grid elements only.
  std::size_t pixel_destination(std::size_t p) const;

  bool is_identity() const;
  /// True when both elements act identically (exactly for grids, within tol for matrices).
  bool same_action(const GroupElement& other, double tol = 1e-9) const;

  /// Returns this ∘ other as an element with the given id and name.
  GroupElement compose(const GroupElement& other, std::size_t id, std::string name) const;

 private:
  struct GridAction {
    GridShape shape;
    std::vector<std::size_t> source;
    std::vector<std::size_t> destination;
  };

  GroupElement(std::size_t id, std::string name, std::variant<Matrix, GridAction> action)
      : id_(id), name_(std::move(name)), action_(std::move(action)) {}

  std::size_t id_;
  std::string name_;
  std::variant<Matrix, GridAction> action_;
};

/// A finite group of isometries with its Cayley table. compose(a, b) is the
/// id of a∘b (b acts first).
class IsometryGroup {
 public:
  /// Derives the composition and inverse tables from the element actions.
  /// Throws InvalidParams if the set is not closed or lacks inverses.
  IsometryGroup(std::string tag, std::vector<GroupElement> elements);

  /// Builds a group from explicit tables without validating them.
  IsometryGroup(std::string tag, std::vector<GroupElement> elements,
                std::vector<std::vector<std::size_t>> compose_table,
                std::vector<std::size_t> inverse_table);

  const std::string& tag() const { return tag_; }
  std::size_t size() const { return elements_.size(); }
  std::size_t dimension() const { return elements_.front().dimension(); }
  const GroupElement& element(std::size_t id) const { return elements_.at(id); }
  const std::vector<GroupElement>& elements() const { return elements_; }

  std::size_t compose(std::size_t a, std::size_t b) const { return compose_table_[a][b]; }
  std::size_t inverse(std::size_t a) const { return inverse_table_[a]; }
  std::size_t identity() const { return identity_; }

  const std::vector<std::vector<std::size_t>>& compose_table() const { return compose_table_; }
  const std::vector<std::size_t>& inverse_table() const { return inverse_table_; }

  /// Copy with one Cayley-table entry overwritten (fault injection for verification).
  IsometryGroup with_compose_entry(std::size_t a, std::size_t b, std::size_t value) const;

  /// True if every element acts on grids.
  bool is_grid() const;

 private:
  std::string tag_;
  std::vector<GroupElement> elements_;
  std::vector<std::vector<std::size_t>> compose_table_;
  std::vector<std::size_t> inverse_table_;
  std::size_t identity_ = 0;
};

IsometryGroup make_flip_group(FlipAxis axis, GridShape shape);
/// Quarter turns r_k = r₁ᵏ. r₁ is counter-clockwise in (x = column, y = row)
/// pixel coordinates, i.e. the matrix [[0,-1],[1,0]] acting on (col, row);
/// it maps [[1,2],[3,4]] to [[3,1],[4,2]].
IsometryGroup make_c4_group(GridShape shape);
/// {e, r1, r2, r3, f, f∘r1, f∘r2, f∘r3} with f the vertical flip.
IsometryGroup make_d4_group(GridShape shape);
/// Rotations by 2πk/n on ℝ², followed (if requested) by f∘r_k with f = diag(1, -1).
IsometryGroup make_point_group_2d(std::size_t n_rotations, bool with_reflection);
/// The trivial group on vectors of the given dimension.
IsometryGroup make_trivial_group(std::size_t dimension);

struct AxiomCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct GroupAxiomReport {
  std::vector<AxiomCheck> checks;

  bool all_passed() const;
  const AxiomCheck* find(const std::string& name) const;
};

/// Exhaustive table checks: closure, identity, inverses, associativity, plus
/// agreement of the table with the actual actions and orthogonality of A_κ.
GroupAxiomReport verify_group_axioms(const IsometryGroup& group);

/// Pairs (κ₁, κ₂) acting on (x, y) ∈ ℝᵐ × ℝⁿ.
class PairedGroup {
 public:
  PairedGroup(IsometryGroup first, IsometryGroup second,
              std::vector<std::pair<std::size_t, std::size_t>> pairs);

  std::size_t size() const { return pairs_.size(); }
  const IsometryGroup& first() const { return first_; }
  const IsometryGroup& second() const { return second_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const { return pairs_; }

  /// Componentwise closure, identity and inverse checks.
  GroupAxiomReport verify() const;

 private:
  IsometryGroup first_;
  IsometryGroup second_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
};

PairedGroup diagonal_pair_group(const IsometryGroup& group);

/// s(x, y, t). Unconditional fields ignore y (callers pass an empty vector).
using ScoreField = std::function<Vector(const Vector& x, const Vector& y, double t)>;

/// Sums the vectors by recursive halving in the given order.
Vector pairwise_sum(std::span<const Vector> terms);

/// s̃(x, y, t) = (1/|G|) Σ_κ κ⁻¹ s(κx, y, t), summed in ascending element id.
ScoreField frame_average(ScoreField field, const IsometryGroup& group);
/// s̃(x, y, t) = (1/|G|) Σ_(κ₁,κ₂) κ₁⁻¹ s(κ₁x, κ₂y, t).
ScoreField frame_average(ScoreField field, const PairedGroup& paired);

}  // namespace spdm
