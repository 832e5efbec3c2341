#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "emconsist/core/config_reader.hpp"

namespace emc {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool clip = false;  // global-norm clipping
  double clip_norm = 5.0;

  void validate() const {
    require(lr >= 0.0 && std::isfinite(lr), ErrorKind::validation, "learning rate must be >= 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::validation,
            "Adam betas must lie in [0, 1)");
    require(eps > 0.0, ErrorKind::validation, "Adam eps must be > 0");
    require(clip_norm > 0.0, ErrorKind::validation, "clip_norm must be > 0");
  }

  nlohmann::json to_json() const {
    return {{"lr", lr}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps}, {"clip", clip}, {"clip_norm", clip_norm}};
  }
  void read(ConfigReader& r) {
    r.get("lr", lr);
    r.get("beta1", beta1);
    r.get("beta2", beta2);
    r.get("eps", eps);
    r.get("clip", clip);
    r.get("clip_norm", clip_norm);
    r.check(lr >= 0.0, "lr", "must be >= 0");
    r.check(beta1 >= 0.0 && beta1 < 1.0, "beta1", "must lie in [0, 1)");
    r.check(beta2 >= 0.0 && beta2 < 1.0, "beta2", "must lie in [0, 1)");
    r.check(eps > 0.0, "eps", "must be > 0");
    r.check(clip_norm > 0.0, "clip_norm", "must be > 0");
    r.finish();
  }
  bool operator==(const AdamConfig&) const = default;
};

template <class T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<T> m, v;

  explicit AdamState(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
  bool operator==(const AdamState&) const = default;
};

template <class T>
double global_norm(const std::vector<T>& g) {
  double s = 0.0;
  for (T x : g) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

/// One bias-corrected Adam update. Returns the gradient norm before clipping.
template <class T>
double adam_step(std::vector<T>& params, std::vector<T> grad, AdamState<T>& st, const AdamConfig& cfg) {
  require(params.size() == grad.size() && st.m.size() == params.size() && st.v.size() == params.size(),
          ErrorKind::validation, "Adam state does not match the parameter count");
  const double norm = global_norm(grad);
  if (!std::isfinite(norm)) fail(ErrorKind::training, "non-finite gradient");
  if (cfg.clip && norm > cfg.clip_norm) {
    const T f = static_cast<T>(cfg.clip_norm / norm);
    for (T& g : grad) g *= f;
  }
  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grad[i];
    st.m[i] = b1 * st.m[i] + (T(1) - b1) * g;
    st.v[i] = b2 * st.v[i] + (T(1) - b2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
  return norm;
}

}  // namespace emc
