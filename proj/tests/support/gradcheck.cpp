#include "gradcheck.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace ifer::testing {

GradCheckResult grad_check(const std::function<torch::Tensor()>& f, const NamedTensors& inputs, int64_t samples,
                           double h, uint64_t seed, double floor) {
  std::vector<torch::Tensor> tensors;
  for (const auto& [name, t] : inputs) {
    TORCH_CHECK(t.scalar_type() == torch::kFloat64, "grad_check: ", name, " is not float64");
    TORCH_CHECK(t.requires_grad(), "grad_check: ", name, " does not require grad");
    tensors.push_back(t);
  }
  auto grads = torch::autograd::grad({f()}, tensors, {}, false, false, true);

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& t = tensors[i];
    auto flat = t.view({-1});
    auto g = grads[i].defined() ? grads[i].reshape({-1}) : torch::zeros_like(flat);
    const auto n = flat.numel();
    std::vector<int64_t> idx(n);
    for (int64_t k = 0; k < n; ++k) idx[k] = k;
    if (n > samples) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(samples);
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    for (auto k : idx) {
      const double original = flat[k].item<double>();
      flat[k] = original + h;
      const double fp = f().item<double>();
      flat[k] = original - h;
      const double fm = f().item<double>();
      flat[k] = original;
      result.probes += 2;
      const double numeric = (fp - fm) / (2 * h);
      const double analytic = g[k].item<double>();
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    const double err = denom < floor ? std::sqrt(diff2) : std::sqrt(diff2) / denom;
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst = inputs[i].first;
    }
  }
  return result;
}

NamedTensors module_inputs(torch::nn::Module& module, const std::string& prefix) {
  NamedTensors out;
  for (auto& item : module.named_parameters(true))
    if (item.key().rfind(prefix, 0) == 0 && item.value().requires_grad()) out.emplace_back(item.key(), item.value());
  return out;
}

torch::Tensor probe_weights(const torch::Tensor& like, uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return torch::randn(like.sizes(), gen, torch::TensorOptions().dtype(torch::kFloat64));
}

}  // namespace ifer::testing
