#include "vsparse/params.hpp"

#include <cstring>

#include "vsparse/rng.hpp"

namespace vsparse {

std::pair<Eigen::Index, Eigen::Index> storage_shape(const std::vector<std::uint32_t>& shape) {
  if (shape.empty()) return {1, 1};
  Eigen::Index rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {rows, static_cast<Eigen::Index>(shape.back())};
}

template <typename T>
Mat<T>& ParamStore<T>::add(std::string name, std::vector<std::uint32_t> shape, Mat<T> value) {
  if (index_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
  const auto [rows, cols] = storage_shape(shape);
  if (value.rows() != rows || value.cols() != cols) {
    throw std::invalid_argument("param store: value shape does not match declared shape for " +
                                name);
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(shape), std::move(value)});
  return entries_.back().value;
}

template <typename T>
std::size_t ParamStore<T>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("param store: unknown parameter " + name);
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

template <typename T>
bool ParamStore<T>::operator==(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.shape != b.shape) return false;
    if (a.value.size() != b.value.size()) return false;
    // Bitwise comparison: NaN payloads and signed zeros must match too.
    if (std::memcmp(a.value.data(), b.value.data(), sizeof(T) * a.value.size()) != 0) return false;
  }
  return true;
}

template <typename T>
BoundParams<T>::BoundParams(ad::Tape<T>& tape, const ParamStore<T>& store, bool requires_grad)
    : tape_(tape), store_(store), requires_grad_(requires_grad), leaves_(store.size()) {}

template <typename T>
ad::Var BoundParams<T>::operator()(const std::string& name) {
  const std::size_t i = store_.index_of(name);
  if (!leaves_[i].valid()) leaves_[i] = tape_.leaf(store_.entries()[i].value, requires_grad_);
  return leaves_[i];
}

template <typename T>
std::vector<Mat<T>> BoundParams<T>::gradients() const {
  std::vector<Mat<T>> out;
  out.reserve(leaves_.size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const Mat<T>& v = store_.entries()[i].value;
    if (leaves_[i].valid()) {
      out.push_back(tape_.grad(leaves_[i]));
    } else {
      out.push_back(Mat<T>::Zero(v.rows(), v.cols()));
    }
  }
  return out;
}

template <typename T>
Mat<T> uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>(uniform(rng, -bound, bound));
  }
  return m;
}

template class ParamStore<float>;
template class ParamStore<double>;
template class BoundParams<float>;
template class BoundParams<double>;
template Mat<float> uniform_matrix<float>(Eigen::Index, Eigen::Index, double, std::mt19937_64&);
template Mat<double> uniform_matrix<double>(Eigen::Index, Eigen::Index, double, std::mt19937_64&);

}  // namespace vsparse
