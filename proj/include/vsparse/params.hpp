#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "vsparse/autodiff.hpp"

namespace vsparse {

/// Ordered collection of named parameter tensors. Each tensor keeps its
/// logical shape (e.g. K x Cin x Cout for a conv kernel) and is stored as a
/// matrix whose last logical dim is the column count.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::vector<std::uint32_t> shape;
    Mat<T> value;
  };

  /// Adds a tensor; throws on duplicate names.
  Mat<T>& add(std::string name, std::vector<std::uint32_t> shape, Mat<T> value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  const Mat<T>& get(const std::string& name) const { return entries_[index_of(name)].value; }
  Mat<T>& get(const std::string& name) { return entries_[index_of(name)].value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.shape, e.value.template cast<U>());
    return out;
  }

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Matrix shape (rows, cols) for a logical tensor shape.
std::pair<Eigen::Index, Eigen::Index> storage_shape(const std::vector<std::uint32_t>& shape);

/// Exposes parameters as leaves of one tape, created lazily on first use.
template <typename T>
class BoundParams {
 public:
  BoundParams(ad::Tape<T>& tape, const ParamStore<T>& store, bool requires_grad = true);

  ad::Var operator()(const std::string& name);
  ad::Tape<T>& tape() { return tape_; }
  const ParamStore<T>& store() const { return store_; }

  /// Gradients aligned with store entries (zeros for unused parameters).
  /// Valid after tape().backward().
  std::vector<Mat<T>> gradients() const;

 private:
  ad::Tape<T>& tape_;
  const ParamStore<T>& store_;
  bool requires_grad_;
  std::vector<ad::Var> leaves_;
};

/// Uniform(-bound, bound) from a 64-bit Mersenne Twister, bit-reproducible
/// across standard libraries.
template <typename T>
Mat<T> uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng);

}  // namespace vsparse
