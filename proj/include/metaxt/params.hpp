#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "metaxt/autodiff.hpp"

namespace metaxt {

using ad::Index;
using ad::Matrix;
using Vector = Eigen::VectorXd;

/// Trainable parameter groups: encoder (theta), source head (v), target
/// head (w), representation transfer network (phi) and label transfer
/// network (alpha).
enum class Group : std::uint8_t { Theta = 0, V = 1, W = 2, Phi = 3, Alpha = 4 };

inline constexpr std::array<Group, 5> kAllGroups = {Group::Theta, Group::V, Group::W, Group::Phi,
                                                    Group::Alpha};

std::string_view group_name(Group g);
Group parse_group(std::string_view name);

class GroupSet {
 public:
  constexpr GroupSet() = default;
  constexpr GroupSet(std::initializer_list<Group> groups) {
    for (Group g : groups) insert(g);
  }

  constexpr void insert(Group g) { bits_ |= bit(g); }
  constexpr void erase(Group g) { bits_ &= static_cast<std::uint8_t>(~bit(g)); }
  [[nodiscard]] constexpr bool contains(Group g) const { return (bits_ & bit(g)) != 0; }
  [[nodiscard]] constexpr bool empty() const { return bits_ == 0; }
  [[nodiscard]] std::vector<Group> members() const;

  friend constexpr bool operator==(GroupSet, GroupSet) = default;

 private:
  static constexpr std::uint8_t bit(Group g) {
    return static_cast<std::uint8_t>(1U << static_cast<unsigned>(g));
  }
  std::uint8_t bits_ = 0;
};

/// The main-model groups updated by the inner step. phi is included when present.
inline constexpr GroupSet kMainGroups{Group::Theta, Group::V, Group::W, Group::Phi};

struct TensorSpec {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  [[nodiscard]] Index size() const { return rows * cols; }
};

using GroupVectors = std::map<Group, Vector>;

/// Named, ordered parameter tensors stored as one contiguous vector per group.
class FlatParams {
 public:
  /// Appends a tensor to `group`; returns its index within the group.
  std::size_t add_tensor(Group group, std::string name, const Matrix& init);

  [[nodiscard]] bool has_group(Group g) const { return values_.count(g) != 0; }
  [[nodiscard]] GroupSet groups() const;
  [[nodiscard]] Index size() const;
  [[nodiscard]] Index size(Group g) const;

  [[nodiscard]] const Vector& group(Group g) const;
  Vector& group(Group g);
  void set_group(Group g, const Vector& values);

  [[nodiscard]] const std::vector<TensorSpec>& tensors(Group g) const;
  [[nodiscard]] std::size_t tensor_index(Group g, std::string_view name) const;
  [[nodiscard]] Matrix tensor(Group g, std::size_t index) const;
  [[nodiscard]] Matrix tensor(Group g, std::string_view name) const;

  /// Groups concatenated in enum order, tensors in insertion order.
  [[nodiscard]] Vector flatten() const;
  void unflatten(const Vector& flat);

  /// Groups restricted to `subset` (absent groups skipped).
  [[nodiscard]] GroupVectors select(GroupSet subset) const;

  friend bool operator==(const FlatParams& a, const FlatParams& b);

 private:
  [[nodiscard]] Index offset(Group g, std::size_t index) const;

  std::map<Group, std::vector<TensorSpec>> layout_;
  std::map<Group, Vector> values_;
};

/// Bitwise equality of every value in every group.
bool bit_identical(const Vector& a, const Vector& b);

double norm(const GroupVectors& v);
/// a + factor * b over the groups of b.
void axpy(GroupVectors& a, double factor, const GroupVectors& b);

/// Parameter tensors bound as tape nodes.
class BoundParams {
 public:
  [[nodiscard]] bool has(Group g) const { return vars_.count(g) != 0; }
  [[nodiscard]] ad::Var at(Group g, std::size_t index) const;
  [[nodiscard]] ad::Var at(Group g, std::string_view name) const;
  [[nodiscard]] const std::vector<ad::Var>& vars(Group g) const;
  [[nodiscard]] const FlatParams& source() const { return *source_; }

 private:
  friend BoundParams bind(ad::Tape&, const FlatParams&, GroupSet, GroupSet);
  const FlatParams* source_ = nullptr;
  std::map<Group, std::vector<ad::Var>> vars_;
};

/// Binds `groups` of `params` onto `tape`. Groups in `differentiable` become
/// leaves, the rest constants. Groups outside `groups` are not bound at all.
BoundParams bind(ad::Tape& tape, const FlatParams& params, GroupSet groups,
                 GroupSet differentiable);

}  // namespace metaxt
