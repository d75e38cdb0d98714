#include "hanerf/optim.hpp"

#include <cmath>

#include "hanerf/errors.hpp"

namespace hanerf {

template <class T>
Tensor<T>* ParameterSet<T>::add(const std::string& name, Tensor<T> init) {
  if (index_.count(name))
    throw ConfigError("duplicate parameter name: " + name);
  auto rec = std::make_unique<Record>();
  rec->name = name;
  rec->value = std::move(init);
  rec->m = Tensor<T>::zeros(rec->value.shape);
  rec->v = Tensor<T>::zeros(rec->value.shape);
  records_.push_back(std::move(rec));
  index_[name] = records_.size() - 1;
  return &records_.back()->value;
}

template <class T>
typename ParameterSet<T>::Record& ParameterSet<T>::record(
    const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return *records_[it->second];
}

template <class T>
const typename ParameterSet<T>::Record& ParameterSet<T>::record(
    const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return *records_[it->second];
}

template <class T>
std::vector<std::string> ParameterSet<T>::names() const {
  std::vector<std::string> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r->name);
  return out;
}

template <class T>
int64_t ParameterSet<T>::total_scalars() const {
  int64_t n = 0;
  for (const auto& r : records_) n += r->value.numel();
  return n;
}

template <class T>
void ParameterSet<T>::adam_step(
    const std::vector<typename Tape<T>::ParamGrad>& grads, double lr,
    double beta1, double beta2, double eps) {
  ++step_;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (const auto& g : grads) {
    if (!g.grad) continue;
    Record& rec = record(g.name);
    if (rec.value.shape != g.grad->shape)
      throw ConfigError("gradient shape mismatch for " + g.name + ": " +
                        shape_str(rec.value.shape) + " vs " +
                        shape_str(g.grad->shape));
    T* val = rec.value.ptr();
    T* m = rec.m.ptr();
    T* v = rec.v.ptr();
    const T* gr = g.grad->ptr();
    for (int64_t i = 0, n = rec.value.numel(); i < n; ++i) {
      double gi = static_cast<double>(gr[i]);
      double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
      double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      val[i] = static_cast<T>(static_cast<double>(val[i]) -
                              lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

template <class T>
bool ParameterSet<T>::all_finite() const {
  for (const auto& r : records_)
    if (!r->value.all_finite()) return false;
  return true;
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace hanerf
