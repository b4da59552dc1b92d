#include "b3s/parameter.hpp"

#include <sstream>
#include <stdexcept>

namespace b3s {

std::string shape_to_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

ParameterStore::ParameterStore(const ParameterStore& other) : index_(other.index_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this != &other) {
    ParameterStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ParameterStore::add(const std::string& name, Shape dims) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(name, std::move(dims)));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
  return *params_[it->second];
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

void ParameterStore::reset_optimizer() {
  for (auto& p : params_) p->reset_optimizer();
}

bool ParameterStore::values_equal(const ParameterStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = *params_[i];
    const auto& b = *other.params_[i];
    if (a.name != b.name || !(a.value == b.value)) return false;
  }
  return true;
}

void init_uniform(Parameter& p, std::mt19937_64& rng, float scale) {
  std::uniform_real_distribution<float> dist(-scale, scale);
  for (auto& v : p.value.data()) v = dist(rng);
}

}  // namespace b3s
