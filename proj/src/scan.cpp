#include "smamba/scan.hpp"

#include <cmath>

#include "smamba/ops.hpp"

namespace smamba {

namespace {

Tensor effective_a(const SsmParams& p) { return ops::scale(ops::exp(p.a_log), -1.0); }

Tensor run_scan(const Tensor& u, const SsmParams& p, std::size_t chunk) {
  if (u.rank() != 2) throw ShapeError("ssm scan: input must be L x E");
  if (u.dim(1) != p.d.numel()) throw ShapeError("ssm scan: channel count mismatch");
  const Tensor b = ops::matmul(u, p.w_b);
  const Tensor c = ops::matmul(u, p.w_c);
  const Tensor delta = ops::softplus(ops::linear(u, p.w_delta, p.b_delta));
  return ops::selective_scan(u, delta, effective_a(p), b, c, p.d, chunk);
}

}  // namespace

SsmParams init_ssm(std::size_t channels, const MambaLayerConfig& cfg, CounterRng& rng) {
  const std::size_t n = cfg.d_state;
  SsmParams p;
  p.a_log = Tensor({channels, n});
  auto a = p.a_log.mutable_data();
  for (std::size_t e = 0; e < channels; ++e)
    for (std::size_t s = 0; s < n; ++s) a[e * n + s] = std::log(static_cast<double>(s + 1));
  p.w_b = fan_in_init({channels, n}, rng);
  p.w_c = fan_in_init({channels, n}, rng);
  p.w_delta = fan_in_init({channels, channels}, rng);
  // Bias chosen so softplus(bias) is log-uniform in [dt_min, dt_max].
  p.b_delta = Tensor({channels});
  for (auto& v : p.b_delta.mutable_data()) {
    const double dt = std::exp(rng.uniform(std::log(cfg.dt_min), std::log(cfg.dt_max)));
    v = dt + std::log(-std::expm1(-dt));
  }
  p.d = Tensor({channels}, 1.0);
  return p;
}

MambaLayerParams init_mamba_layer(const MambaLayerConfig& cfg, CounterRng& rng) {
  if (cfg.d_model == 0 || cfg.expand == 0 || cfg.d_state == 0 || cfg.conv_width == 0)
    throw std::invalid_argument("mamba layer dims must be positive");
  const std::size_t e = cfg.inner();
  MambaLayerParams p;
  p.in_w = fan_in_init({cfg.d_model, e}, rng);
  p.in_b = zeros_init({e});
  p.conv_w = uniform_init({e, cfg.conv_width}, 1.0 / std::sqrt(static_cast<double>(cfg.conv_width)), rng);
  p.conv_b = zeros_init({e});
  p.ssm = init_ssm(e, cfg, rng);
  p.out_w = fan_in_init({e, cfg.d_model}, rng);
  p.out_b = zeros_init({cfg.d_model});
  return p;
}

void register_mamba_layer(ParamSet& set, const std::string& prefix, const MambaLayerParams& p,
                          ParamGroup group) {
  set.add(prefix + ".in_w", p.in_w, group);
  set.add(prefix + ".in_b", p.in_b, group);
  set.add(prefix + ".conv_w", p.conv_w, group);
  set.add(prefix + ".conv_b", p.conv_b, group);
  set.add(prefix + ".ssm.a_log", p.ssm.a_log, group);
  set.add(prefix + ".ssm.w_b", p.ssm.w_b, group);
  set.add(prefix + ".ssm.w_c", p.ssm.w_c, group);
  set.add(prefix + ".ssm.w_delta", p.ssm.w_delta, group);
  set.add(prefix + ".ssm.b_delta", p.ssm.b_delta, group);
  set.add(prefix + ".ssm.d", p.ssm.d, group);
  set.add(prefix + ".out_w", p.out_w, group);
  set.add(prefix + ".out_b", p.out_b, group);
}

Tensor ssm_scan_seq(const Tensor& u, const SsmParams& p) { return run_scan(u, p, 0); }

Tensor ssm_scan_chunked(const Tensor& u, const SsmParams& p, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("ssm scan: chunk must be >= 1");
  return run_scan(u, p, chunk);
}

Tensor mamba_layer(const Tensor& x, const MambaLayerParams& p) {
  if (x.rank() != 2 || x.dim(1) != p.in_w.dim(0))
    throw ShapeError("mamba_layer: expected L x " + std::to_string(p.in_w.dim(0)) + ", got " +
                     shape_str(x.shape()));
  const Tensor inner = ops::linear(x, p.in_w, p.in_b);
  const Tensor conv = ops::silu(ops::depthwise_causal_conv1d(inner, p.conv_w, p.conv_b));
  const Tensor scanned = ssm_scan_seq(conv, p.ssm);
  const Tensor gate = ops::silu(inner);
  return ops::linear(ops::mul(scanned, gate), p.out_w, p.out_b);
}

}  // namespace smamba
