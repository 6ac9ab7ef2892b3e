#include <cmath>

#include "dricl/trainer.hpp"

namespace dricl {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::adam;
  if (text == "sgd") return OptimizerKind::sgd;
  throw Error("unknown optimizer '" + std::string(text) + "'");
}

std::string_view to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view text) {
  if (text == "f32" || text == "float32") return Precision::f32;
  if (text == "f64" || text == "float64") return Precision::f64;
  throw Error("unknown precision '" + std::string(text) + "'");
}

template <typename Scalar>
Optimizer<Scalar>::Optimizer(const OptimizerConfig& cfg, const ModelParams<Scalar>& like)
    : cfg_(cfg), m_(zero_params<Scalar>(like.dims)), v_(zero_params<Scalar>(like.dims)) {
  if (!(cfg.learning_rate >= 0.0)) throw Error("learning rate must be >= 0");
}

template <typename Scalar>
void Optimizer<Scalar>::step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads) {
  ++t_;
  std::vector<Mat<Scalar>*> p, m, v;
  std::vector<const Mat<Scalar>*> g;
  params.for_each_tensor([&](const std::string&, Mat<Scalar>& x) { p.push_back(&x); });
  m_.for_each_tensor([&](const std::string&, Mat<Scalar>& x) { m.push_back(&x); });
  v_.for_each_tensor([&](const std::string&, Mat<Scalar>& x) { v.push_back(&x); });
  grads.for_each_tensor([&](const std::string&, const Mat<Scalar>& x) { g.push_back(&x); });

  const auto lr = static_cast<Scalar>(cfg_.learning_rate);
  const auto wd = static_cast<Scalar>(cfg_.weight_decay);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (wd != Scalar(0)) *p[i] *= Scalar(1) - lr * wd;
    if (cfg_.kind == OptimizerKind::sgd) {
      if (cfg_.momentum != 0.0) {
        *m[i] = static_cast<Scalar>(cfg_.momentum) * *m[i] + *g[i];
        *p[i] -= lr * *m[i];
      } else {
        *p[i] -= lr * *g[i];
      }
      continue;
    }
    const auto b1 = static_cast<Scalar>(cfg_.beta1);
    const auto b2 = static_cast<Scalar>(cfg_.beta2);
    *m[i] = b1 * *m[i] + (Scalar(1) - b1) * *g[i];
    *v[i] = b2 * *v[i] + (Scalar(1) - b2) * g[i]->cwiseProduct(*g[i]);
    const auto c1 = static_cast<Scalar>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const auto c2 = static_cast<Scalar>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const auto eps = static_cast<Scalar>(cfg_.epsilon);
    p[i]->array() -= lr * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + eps);
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace dricl
