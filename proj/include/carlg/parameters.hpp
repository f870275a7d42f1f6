// Parameter manifests and storage.
//
// A manifest lists every tensor a model needs (name, shape, owning module,
// learning-rate group, initializer) without allocating it, so parameter
// accounting works for configurations too large to instantiate.

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "carlg/autodiff.hpp"

namespace carlg {

enum class Init { kZeros, kOnes, kTruncatedNormal };

struct ParamSpec {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::string module;
  std::string group;
  Init init = Init::kTruncatedNormal;

  std::int64_t count() const { return static_cast<std::int64_t>(rows) * cols; }
};

using Manifest = std::vector<ParamSpec>;

inline std::int64_t total_count(const Manifest& m) {
  std::int64_t n = 0;
  for (const ParamSpec& p : m) n += p.count();
  return n;
}

inline std::int64_t module_count(const Manifest& m, const std::string& module) {
  std::int64_t n = 0;
  for (const ParamSpec& p : m) {
    if (p.module == module) n += p.count();
  }
  return n;
}

// Normal(0, std) truncated to two standard deviations by rejection.
inline double truncated_normal(std::mt19937_64& rng, double std_dev) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    const double z = normal(rng);
    if (z >= -2.0 && z <= 2.0) return z * std_dev;
  }
}

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& add(const ParamSpec& spec, std::mt19937_64& rng, double init_std = 0.02) {
    if (index_.count(spec.name) != 0) throw std::logic_error("duplicate parameter " + spec.name);
    Parameter p;
    p.name = spec.name;
    p.module = spec.module;
    p.group = spec.group;
    switch (spec.init) {
      case Init::kZeros:
        p.value = Matrix::Zero(spec.rows, spec.cols);
        break;
      case Init::kOnes:
        p.value = Matrix::Ones(spec.rows, spec.cols);
        break;
      case Init::kTruncatedNormal:
        p.value.resize(spec.rows, spec.cols);
        for (Eigen::Index c = 0; c < spec.cols; ++c) {
          for (Eigen::Index r = 0; r < spec.rows; ++r) p.value(r, c) = truncated_normal(rng, init_std);
        }
        break;
    }
    p.zero_grad();
    index_[p.name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back();
  }

  void allocate(const Manifest& manifest, std::mt19937_64& rng, double init_std = 0.02) {
    for (const ParamSpec& spec : manifest) add(spec, rng, init_std);
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return params_[it->second];
  }

  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  // Insertion order; stable across runs.
  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }

  void zero_grad() {
    for (Parameter& p : params_) p.zero_grad();
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const Parameter& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace carlg
