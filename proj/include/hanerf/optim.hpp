#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "hanerf/autodiff.hpp"
#include "hanerf/tensor.hpp"

namespace hanerf {

// Flat, insertion-ordered collection of named trainable tensors plus their
// Adam state. Models register parameters here under a prefix; the trainer
// steps the whole set at once and the checkpoint writer serializes it in
// registration order.
template <class T>
class ParameterSet {
 public:
  struct Record {
    std::string name;
    Tensor<T> value;
    Tensor<T> m;  // Adam first moment
    Tensor<T> v;  // Adam second moment
  };

  // Registers a tensor; the returned pointer stays valid for the set's
  // lifetime. Duplicate names are a configuration error.
  Tensor<T>* add(const std::string& name, Tensor<T> init);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Record& record(const std::string& name);
  const Record& record(const std::string& name) const;
  Tensor<T>& value(const std::string& name) { return record(name).value; }

  size_t size() const { return records_.size(); }
  Record& at(size_t i) { return *records_[i]; }
  const Record& at(size_t i) const { return *records_[i]; }
  std::vector<std::string> names() const;
  int64_t total_scalars() const;

  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }

  // Bias-corrected Adam update applied to every parameter that received a
  // gradient. Gradients are matched to parameters by name.
  void adam_step(const std::vector<typename Tape<T>::ParamGrad>& grads,
                 double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);

  bool all_finite() const;

 private:
  std::vector<std::unique_ptr<Record>> records_;
  std::unordered_map<std::string, size_t> index_;
  int64_t step_ = 0;
};

using ParamsF = ParameterSet<float>;
using ParamsD = ParameterSet<double>;

}  // namespace hanerf
