#include "metaxt/params.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace metaxt {

std::string_view group_name(Group g) {
  switch (g) {
    case Group::Theta: return "theta";
    case Group::V: return "v";
    case Group::W: return "w";
    case Group::Phi: return "phi";
    case Group::Alpha: return "alpha";
  }
  return "unknown";
}

Group parse_group(std::string_view name) {
  for (Group g : kAllGroups) {
    if (group_name(g) == name) return g;
  }
  throw std::invalid_argument("unknown parameter group '" + std::string(name) + "'");
}

std::vector<Group> GroupSet::members() const {
  std::vector<Group> out;
  for (Group g : kAllGroups) {
    if (contains(g)) out.push_back(g);
  }
  return out;
}

std::size_t FlatParams::add_tensor(Group group, std::string name, const Matrix& init) {
  auto& specs = layout_[group];
  for (const auto& s : specs) {
    if (s.name == name) throw std::invalid_argument("duplicate tensor name '" + name + "'");
  }
  Vector& values = values_[group];
  const Index old = values.size();
  values.conservativeResize(old + init.size());
  // Matrix is row-major, so its storage order is the flat order.
  values.segment(old, init.size()) = Eigen::Map<const Vector>(init.data(), init.size());
  specs.push_back(TensorSpec{std::move(name), init.rows(), init.cols()});
  return specs.size() - 1;
}

GroupSet FlatParams::groups() const {
  GroupSet out;
  for (const auto& [g, v] : values_) out.insert(g);
  return out;
}

Index FlatParams::size() const {
  Index n = 0;
  for (const auto& [g, v] : values_) n += v.size();
  return n;
}

Index FlatParams::size(Group g) const { return has_group(g) ? values_.at(g).size() : 0; }

const Vector& FlatParams::group(Group g) const {
  auto it = values_.find(g);
  if (it == values_.end()) {
    throw std::invalid_argument("parameter group '" + std::string(group_name(g)) + "' absent");
  }
  return it->second;
}

Vector& FlatParams::group(Group g) {
  auto it = values_.find(g);
  if (it == values_.end()) {
    throw std::invalid_argument("parameter group '" + std::string(group_name(g)) + "' absent");
  }
  return it->second;
}

void FlatParams::set_group(Group g, const Vector& values) {
  Vector& dst = group(g);
  if (dst.size() != values.size()) {
    throw std::invalid_argument("set_group: length mismatch for '" + std::string(group_name(g)) +
                                "'");
  }
  dst = values;
}

const std::vector<TensorSpec>& FlatParams::tensors(Group g) const {
  auto it = layout_.find(g);
  if (it == layout_.end()) {
    throw std::invalid_argument("parameter group '" + std::string(group_name(g)) + "' absent");
  }
  return it->second;
}

std::size_t FlatParams::tensor_index(Group g, std::string_view name) const {
  const auto& specs = tensors(g);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name == name) return i;
  }
  throw std::invalid_argument("no tensor '" + std::string(name) + "' in group '" +
                              std::string(group_name(g)) + "'");
}

Index FlatParams::offset(Group g, std::size_t index) const {
  const auto& specs = tensors(g);
  Index off = 0;
  for (std::size_t i = 0; i < index; ++i) off += specs[i].size();
  return off;
}

Matrix FlatParams::tensor(Group g, std::size_t index) const {
  const auto& spec = tensors(g).at(index);
  const Vector& v = group(g);
  return Eigen::Map<const Matrix>(v.data() + offset(g, index), spec.rows, spec.cols);
}

Matrix FlatParams::tensor(Group g, std::string_view name) const {
  return tensor(g, tensor_index(g, name));
}

Vector FlatParams::flatten() const {
  Vector out(size());
  Index off = 0;
  for (const auto& [g, v] : values_) {
    out.segment(off, v.size()) = v;
    off += v.size();
  }
  return out;
}

void FlatParams::unflatten(const Vector& flat) {
  if (flat.size() != size()) throw std::invalid_argument("unflatten: length mismatch");
  Index off = 0;
  for (auto& [g, v] : values_) {
    v = flat.segment(off, v.size());
    off += v.size();
  }
}

GroupVectors FlatParams::select(GroupSet subset) const {
  GroupVectors out;
  for (const auto& [g, v] : values_) {
    if (subset.contains(g)) out[g] = v;
  }
  return out;
}

bool bit_identical(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

bool operator==(const FlatParams& a, const FlatParams& b) {
  if (a.values_.size() != b.values_.size()) return false;
  for (const auto& [g, v] : a.values_) {
    auto it = b.values_.find(g);
    if (it == b.values_.end() || !bit_identical(v, it->second)) return false;
  }
  return true;
}

double norm(const GroupVectors& v) {
  double sq = 0.0;
  for (const auto& [g, x] : v) sq += x.squaredNorm();
  return std::sqrt(sq);
}

void axpy(GroupVectors& a, double factor, const GroupVectors& b) {
  for (const auto& [g, x] : b) {
    auto it = a.find(g);
    if (it == a.end()) throw std::invalid_argument("axpy: group missing from destination");
    if (it->second.size() != x.size()) throw std::invalid_argument("axpy: length mismatch");
    it->second += factor * x;
  }
}

ad::Var BoundParams::at(Group g, std::size_t index) const { return vars(g).at(index); }

ad::Var BoundParams::at(Group g, std::string_view name) const {
  return at(g, source_->tensor_index(g, name));
}

const std::vector<ad::Var>& BoundParams::vars(Group g) const {
  auto it = vars_.find(g);
  if (it == vars_.end()) {
    throw std::invalid_argument("parameter group '" + std::string(group_name(g)) +
                                "' is not bound");
  }
  return it->second;
}

BoundParams bind(ad::Tape& tape, const FlatParams& params, GroupSet groups,
                 GroupSet differentiable) {
  BoundParams out;
  out.source_ = &params;
  for (Group g : groups.members()) {
    if (!params.has_group(g)) continue;
    auto& vars = out.vars_[g];
    const auto& specs = params.tensors(g);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      Matrix m = params.tensor(g, i);
      vars.push_back(differentiable.contains(g) ? tape.leaf(std::move(m))
                                                : tape.constant(std::move(m)));
    }
  }
  return out;
}

}  // namespace metaxt
