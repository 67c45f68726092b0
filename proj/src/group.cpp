#include "spdm/group.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>

#include "spdm/errors.hpp"

namespace spdm {

namespace {

std::vector<std::size_t> invert_permutation(const std::vector<std::size_t>& source) {
  std::vector<std::size_t> destination(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) destination[source[i]] = i;
  return destination;
}

// Composition of pixel permutations: (a∘b)x = a(b(x)).
std::vector<std::size_t> compose_sources(std::span<const std::size_t> a,
                                         std::span<const std::size_t> b) {
  std::vector<std::size_t> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = b[a[i]];
  return out;
}

std::vector<std::size_t> identity_source(const GridShape& shape) {
  std::vector<std::size_t> src(shape.pixels());
  for (std::size_t i = 0; i < src.size(); ++i) src[i] = i;
  return src;
}

std::vector<std::size_t> rot90_source(const GridShape& shape) {
  // new[i][j] = old[n-1-j][i]
  const std::size_t n = shape.height;
  std::vector<std::size_t> src(shape.pixels());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) src[i * n + j] = (n - 1 - j) * n + i;
  return src;
}

std::vector<std::size_t> flip_source(const GridShape& shape, FlipAxis axis) {
  const std::size_t h = shape.height, w = shape.width;
  std::vector<std::size_t> src(shape.pixels());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      src[i * w + j] = axis == FlipAxis::vertical ? (h - 1 - i) * w + j : i * w + (w - 1 - j);
  return src;
}

void require_positive(const GridShape& shape) {
  if (shape.height == 0 || shape.width == 0 || shape.channels == 0)
    throw InvalidParams("grid shape must have positive dimensions");
}

void require_square(const GridShape& shape) {
  require_positive(shape);
  if (shape.height != shape.width) throw NonSquareGrid("rotation groups need H == W");
}

double snap(double v) {
  for (double target : {-1.0, 0.0, 1.0})
    if (std::abs(v - target) < 1e-15) return target;
  return v;
}

}  // namespace

GroupElement GroupElement::point(std::size_t id, std::string name, Matrix matrix) {
  if (matrix.rows() != matrix.cols()) throw ShapeMismatch("point action must be square");
  return GroupElement(id, std::move(name), std::move(matrix));
}

GroupElement GroupElement::grid(std::size_t id, std::string name, GridShape shape,
                                std::vector<std::size_t> pixel_source) {
  require_positive(shape);
  if (pixel_source.size() != shape.pixels())
    throw ShapeMismatch("pixel permutation length does not match grid");
  std::vector<bool> seen(pixel_source.size(), false);
  for (auto s : pixel_source) {
    if (s >= seen.size() || seen[s]) throw InvalidParams("pixel map is not a bijection");
    seen[s] = true;
  }
  auto destination = invert_permutation(pixel_source);
  return GroupElement(id, std::move(name),
                      GridAction{shape, std::move(pixel_source), std::move(destination)});
}

std::size_t GroupElement::dimension() const {
  if (const auto* m = std::get_if<Matrix>(&action_)) return static_cast<std::size_t>(m->rows());
  return std::get<GridAction>(action_).shape.size();
}

Vector GroupElement::apply(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != dimension())
    throw ShapeMismatch("element " + name_ + " acts on dimension " + std::to_string(dimension()) +
                        ", got " + std::to_string(x.size()));
  if (const auto* m = std::get_if<Matrix>(&action_)) return (*m) * x;
  const auto& g = std::get<GridAction>(action_);
  const std::size_t c = g.shape.channels;
  Vector out(x.size());
  for (std::size_t i = 0; i < g.source.size(); ++i)
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = x[g.source[i] * c + k];
  return out;
}

Matrix GroupElement::apply_columns(const Matrix& xs) const {
  if (static_cast<std::size_t>(xs.rows()) != dimension())
    throw ShapeMismatch("element " + name_ + ": column dimension mismatch");
  if (const auto* m = std::get_if<Matrix>(&action_)) return (*m) * xs;
  const auto& g = std::get<GridAction>(action_);
  const std::size_t c = g.shape.channels;
  Matrix out(xs.rows(), xs.cols());
  for (std::size_t i = 0; i < g.source.size(); ++i)
    for (std::size_t k = 0; k < c; ++k) out.row(i * c + k) = xs.row(g.source[i] * c + k);
  return out;
}

Matrix GroupElement::matrix() const {
  if (const auto* m = std::get_if<Matrix>(&action_)) return *m;
  const auto& g = std::get<GridAction>(action_);
  const std::size_t c = g.shape.channels;
  Matrix a = Matrix::Zero(dimension(), dimension());
  for (std::size_t i = 0; i < g.source.size(); ++i)
    for (std::size_t k = 0; k < c; ++k) a(i * c + k, g.source[i] * c + k) = 1.0;
  return a;
}

const GridShape& GroupElement::grid_shape() const {
  if (!is_grid()) throw ShapeMismatch("element " + name_ + " is not a grid action");
  return std::get<GridAction>(action_).shape;
}

std::span<const std::size_t> GroupElement::pixel_source() const {
  if (!is_grid()) throw ShapeMismatch("element " + name_ + " is not a grid action");
  return std::get<GridAction>(action_).source;
}

std::size_t GroupElement::pixel_destination(std::size_t p) const {
  if (!is_grid()) throw ShapeMismatch("element " + name_ + " is not a grid action");
  return std::get<GridAction>(action_).destination.at(p);
}

bool GroupElement::is_identity() const {
  if (const auto* m = std::get_if<Matrix>(&action_))
    return (*m - Matrix::Identity(m->rows(), m->cols())).cwiseAbs().maxCoeff() == 0.0;
  const auto& src = std::get<GridAction>(action_).source;
  for (std::size_t i = 0; i < src.size(); ++i)
    if (src[i] != i) return false;
  return true;
}

bool GroupElement::same_action(const GroupElement& other, double tol) const {
  if (dimension() != other.dimension()) return false;
  if (is_grid() && other.is_grid()) {
    const auto& a = std::get<GridAction>(action_);
    const auto& b = std::get<GridAction>(other.action_);
    return a.shape == b.shape && a.source == b.source;
  }
  return (matrix() - other.matrix()).cwiseAbs().maxCoeff() <= tol;
}

GroupElement GroupElement::compose(const GroupElement& other, std::size_t id,
                                   std::string name) const {
  if (is_grid() && other.is_grid()) {
    if (grid_shape() != other.grid_shape()) throw ShapeMismatch("grid shapes differ");
    return grid(id, std::move(name), grid_shape(), compose_sources(pixel_source(), other.pixel_source()));
  }
  if (dimension() != other.dimension()) throw ShapeMismatch("dimensions differ");
  Matrix product = matrix() * other.matrix();
  return point(id, std::move(name), product.unaryExpr(&snap));
}

IsometryGroup::IsometryGroup(std::string tag, std::vector<GroupElement> elements)
    : tag_(std::move(tag)), elements_(std::move(elements)) {
  const std::size_t n = elements_.size();
  if (n == 0) throw InvalidParams("group needs at least one element");
  for (std::size_t i = 0; i < n; ++i) {
    if (elements_[i].id() != i) throw InvalidParams("element ids must be 0..n-1 in order");
    if (elements_[i].dimension() != elements_[0].dimension())
      throw ShapeMismatch("all elements must act on the same space");
  }
  compose_table_.assign(n, std::vector<std::size_t>(n, 0));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const GroupElement ab = elements_[a].compose(elements_[b], 0, "");
      std::optional<std::size_t> match;
      for (std::size_t k = 0; k < n && !match; ++k)
        if (elements_[k].same_action(ab)) match = k;
      if (!match)
        throw InvalidParams("set is not closed: " + elements_[a].name() + "∘" + elements_[b].name());
      compose_table_[a][b] = *match;
    }
  }
  std::optional<std::size_t> e;
  for (std::size_t k = 0; k < n && !e; ++k) {
    bool ok = true;
    for (std::size_t j = 0; j < n && ok; ++j)
      ok = compose_table_[k][j] == j && compose_table_[j][k] == j;
    if (ok) e = k;
  }
  if (!e) throw InvalidParams("no identity element");
  identity_ = *e;
  inverse_table_.assign(n, 0);
  for (std::size_t a = 0; a < n; ++a) {
    std::optional<std::size_t> inv;
    for (std::size_t b = 0; b < n && !inv; ++b)
      if (compose_table_[a][b] == identity_ && compose_table_[b][a] == identity_) inv = b;
    if (!inv) throw InvalidParams("element " + elements_[a].name() + " has no inverse");
    inverse_table_[a] = *inv;
  }
}

IsometryGroup::IsometryGroup(std::string tag, std::vector<GroupElement> elements,
                             std::vector<std::vector<std::size_t>> compose_table,
                             std::vector<std::size_t> inverse_table)
    : tag_(std::move(tag)),
      elements_(std::move(elements)),
      compose_table_(std::move(compose_table)),
      inverse_table_(std::move(inverse_table)) {
  if (elements_.empty()) throw InvalidParams("group needs at least one element");
  if (compose_table_.size() != elements_.size() || inverse_table_.size() != elements_.size())
    throw ShapeMismatch("table sizes must match element count");
  for (std::size_t k = 0; k < elements_.size(); ++k) {
    if (compose_table_[k].size() != elements_.size()) throw ShapeMismatch("ragged compose table");
    if (elements_[k].is_identity()) identity_ = k;
  }
}

IsometryGroup IsometryGroup::with_compose_entry(std::size_t a, std::size_t b,
                                                std::size_t value) const {
  auto table = compose_table_;
  table.at(a).at(b) = value;
  IsometryGroup out(tag_, elements_, std::move(table), inverse_table_);
  out.identity_ = identity_;
  return out;
}

bool IsometryGroup::is_grid() const {
  for (const auto& e : elements_)
    if (!e.is_grid()) return false;
  return true;
}

IsometryGroup make_flip_group(FlipAxis axis, GridShape shape) {
  require_positive(shape);
  const bool vertical = axis == FlipAxis::vertical;
  std::vector<GroupElement> elements;
  elements.push_back(GroupElement::grid(0, "e", shape, identity_source(shape)));
  elements.push_back(GroupElement::grid(1, vertical ? "flip_v" : "flip_h", shape, flip_source(shape, axis)));
  return IsometryGroup(vertical ? "flip_v" : "flip_h", std::move(elements));
}

namespace {

std::vector<GroupElement> quarter_turns(const GridShape& shape) {
  std::vector<GroupElement> elements;
  elements.push_back(GroupElement::grid(0, "e", shape, identity_source(shape)));
  const auto r1 = GroupElement::grid(1, "r1", shape, rot90_source(shape));
  elements.push_back(r1);
  elements.push_back(r1.compose(elements[1], 2, "r2"));
  elements.push_back(r1.compose(elements[2], 3, "r3"));
  return elements;
}

}  // namespace

IsometryGroup make_c4_group(GridShape shape) {
  require_square(shape);
  return IsometryGroup("C4", quarter_turns(shape));
}

IsometryGroup make_d4_group(GridShape shape) {
  require_square(shape);
  auto elements = quarter_turns(shape);
  const auto f = GroupElement::grid(4, "f", shape, flip_source(shape, FlipAxis::vertical));
  elements.push_back(f);
  for (std::size_t k = 1; k < 4; ++k)
    elements.push_back(f.compose(elements[k], 4 + k, "f∘r" + std::to_string(k)));
  return IsometryGroup("D4", std::move(elements));
}

IsometryGroup make_point_group_2d(std::size_t n_rotations, bool with_reflection) {
  if (n_rotations < 1) throw InvalidParams("n_rotations must be >= 1");
  std::vector<GroupElement> elements;
  for (std::size_t k = 0; k < n_rotations; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_rotations);
    Matrix r(2, 2);
    r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    elements.push_back(GroupElement::point(k, k == 0 ? "e" : "r" + std::to_string(k), r.unaryExpr(&snap)));
  }
  if (with_reflection) {
    Matrix f(2, 2);
    f << 1.0, 0.0, 0.0, -1.0;
    const auto flip = GroupElement::point(n_rotations, "f", f);
    elements.push_back(flip);
    for (std::size_t k = 1; k < n_rotations; ++k)
      elements.push_back(flip.compose(elements[k], n_rotations + k, "f∘r" + std::to_string(k)));
  }
  std::string tag = (with_reflection ? "D" : "C") + std::to_string(n_rotations) + "_point";
  return IsometryGroup(std::move(tag), std::move(elements));
}

IsometryGroup make_trivial_group(std::size_t dimension) {
  std::vector<GroupElement> elements;
  elements.push_back(GroupElement::point(0, "e", Matrix::Identity(dimension, dimension)));
  IsometryGroup g("trivial", std::move(elements), {{0}}, {0});
  return g;
}

bool GroupAxiomReport::all_passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

const AxiomCheck* GroupAxiomReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

GroupAxiomReport verify_group_axioms(const IsometryGroup& group) {
  GroupAxiomReport report;
  const std::size_t n = group.size();
  const auto& table = group.compose_table();
  const auto& inv = group.inverse_table();

  {
    AxiomCheck c{"closure", true, ""};
    for (std::size_t a = 0; a < n && c.passed; ++a)
      for (std::size_t b = 0; b < n && c.passed; ++b)
        if (table[a][b] >= n) {
          c.passed = false;
          c.detail = "entry (" + std::to_string(a) + "," + std::to_string(b) + ") out of range";
        }
    report.checks.push_back(c);
  }
  const bool closed = report.checks.back().passed;

  std::optional<std::size_t> e;
  {
    AxiomCheck c{"identity", false, "no element acts as identity in the table"};
    for (std::size_t k = 0; k < n && !e && closed; ++k) {
      bool ok = true;
      for (std::size_t j = 0; j < n && ok; ++j) ok = table[k][j] == j && table[j][k] == j;
      if (ok) e = k;
    }
    if (e) c = {"identity", true, "e = " + group.element(*e).name()};
    report.checks.push_back(c);
  }

  {
    AxiomCheck c{"inverses", e.has_value(), e ? "" : "no identity"};
    for (std::size_t a = 0; a < n && c.passed; ++a) {
      const std::size_t b = inv[a];
      if (b >= n || table[a][b] != *e || table[b][a] != *e) {
        c.passed = false;
        c.detail = "inverse of " + group.element(a).name() + " fails";
      }
    }
    report.checks.push_back(c);
  }

  {
    AxiomCheck c{"associativity", closed, closed ? "" : "table not closed"};
    for (std::size_t a = 0; a < n && c.passed; ++a)
      for (std::size_t b = 0; b < n && c.passed; ++b)
        for (std::size_t d = 0; d < n && c.passed; ++d)
          if (table[table[a][b]][d] != table[a][table[b][d]]) {
            c.passed = false;
            c.detail = "(" + std::to_string(a) + "," + std::to_string(b) + "," + std::to_string(d) + ")";
          }
    report.checks.push_back(c);
  }

  {
    AxiomCheck c{"action_consistency", closed, closed ? "" : "table not closed"};
    for (std::size_t a = 0; a < n && c.passed; ++a)
      for (std::size_t b = 0; b < n && c.passed; ++b) {
        const auto ab = group.element(a).compose(group.element(b), 0, "");
        if (!group.element(table[a][b]).same_action(ab)) {
          c.passed = false;
          c.detail = group.element(a).name() + "∘" + group.element(b).name() + " disagrees with table";
        }
      }
    report.checks.push_back(c);
  }

  {
    double worst = 0.0;
    for (const auto& el : group.elements()) {
      const Matrix a = el.matrix();
      const Matrix gram = a.transpose() * a - Matrix::Identity(a.rows(), a.cols());
      worst = std::max(worst, gram.cwiseAbs().maxCoeff());
    }
    std::ostringstream os;
    os << "max |AᵀA - I| = " << worst;
    report.checks.push_back({"orthogonality", worst <= 1e-12, os.str()});
  }
  return report;
}

PairedGroup::PairedGroup(IsometryGroup first, IsometryGroup second,
                         std::vector<std::pair<std::size_t, std::size_t>> pairs)
    : first_(std::move(first)), second_(std::move(second)), pairs_(std::move(pairs)) {
  for (const auto& [a, b] : pairs_)
    if (a >= first_.size() || b >= second_.size()) throw InvalidParams("pair index out of range");
}

GroupAxiomReport PairedGroup::verify() const {
  GroupAxiomReport report;
  auto contains = [&](std::size_t a, std::size_t b) {
    for (const auto& p : pairs_)
      if (p.first == a && p.second == b) return true;
    return false;
  };
  AxiomCheck closure{"closure", true, ""};
  for (const auto& p : pairs_)
    for (const auto& q : pairs_)
      if (!contains(first_.compose(p.first, q.first), second_.compose(p.second, q.second))) {
        closure.passed = false;
        closure.detail = "pair product missing";
      }
  report.checks.push_back(closure);
  report.checks.push_back(
      {"identity", contains(first_.identity(), second_.identity()), "identity pair"});
  AxiomCheck inverses{"inverses", true, ""};
  for (const auto& p : pairs_)
    if (!contains(first_.inverse(p.first), second_.inverse(p.second))) {
      inverses.passed = false;
      inverses.detail = "componentwise inverse missing";
    }
  report.checks.push_back(inverses);
  return report;
}

PairedGroup diagonal_pair_group(const IsometryGroup& group) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t k = 0; k < group.size(); ++k) pairs.emplace_back(k, k);
  return PairedGroup(group, group, std::move(pairs));
}

Vector pairwise_sum(std::span<const Vector> terms) {
  if (terms.empty()) throw InvalidParams("pairwise_sum of nothing");
  if (terms.size() == 1) return terms[0];
  const std::size_t half = terms.size() / 2;
  return pairwise_sum(terms.first(half)) + pairwise_sum(terms.subspan(half));
}

ScoreField frame_average(ScoreField field, const IsometryGroup& group) {
  if (group.size() == 1) return field;
  auto g = std::make_shared<const IsometryGroup>(group);
  return [field = std::move(field), g](const Vector& x, const Vector& y, double t) {
    std::vector<Vector> terms;
    terms.reserve(g->size());
    for (std::size_t k = 0; k < g->size(); ++k) {
      const auto& kappa = g->element(k);
      const auto& kappa_inv = g->element(g->inverse(k));
      terms.push_back(kappa_inv.apply(field(kappa.apply(x), y, t)));
    }
    return Vector(pairwise_sum(terms) / static_cast<double>(g->size()));
  };
}

ScoreField frame_average(ScoreField field, const PairedGroup& paired) {
  if (paired.size() == 1) return field;
  auto p = std::make_shared<const PairedGroup>(paired);
  return [field = std::move(field), p](const Vector& x, const Vector& y, double t) {
    std::vector<Vector> terms;
    terms.reserve(p->size());
    for (const auto& [a, b] : p->pairs()) {
      const auto& k1 = p->first().element(a);
      const auto& k1_inv = p->first().element(p->first().inverse(a));
      const Vector ky = y.size() == 0 ? y : p->second().element(b).apply(y);
      terms.push_back(k1_inv.apply(field(k1.apply(x), ky, t)));
    }
    return Vector(pairwise_sum(terms) / static_cast<double>(p->size()));
  };
}

}  // namespace spdm
