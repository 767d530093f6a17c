#pragma once

// Selective state-space scan and the gated Mamba layer built on it.
//
// Per channel e and state n, with u_t the layer input:
//   B_t = u_t W_B,  C_t = u_t W_C,  delta_t = softplus(u_t W_delta + b_delta)
//   decay = exp(delta_t[e] * A[e,n]),  A = -exp(A_log)
//   h_t[e,n] = decay * h_{t-1}[e,n] + delta_t[e] * B_t[n] * u_t[e]
//   y_t[e]   = sum_n C_t[n] h_t[e,n] + D[e] u_t[e]
// The input matrix uses the first-order form delta * B rather than the exact
// zero-order-hold integral.

#include <cstddef>
#include <string>

#include "smamba/params.hpp"
#include "smamba/tensor.hpp"

namespace smamba {

struct MambaLayerConfig {
  std::size_t d_model = 1;
  std::size_t expand = 2;  // E = expand * d_model
  std::size_t d_state = 16;
  std::size_t conv_width = 4;
  double dt_min = 0.01;
  double dt_max = 0.1;

  std::size_t inner() const { return expand * d_model; }
};

struct SsmParams {
  Tensor a_log;    // E x N
  Tensor w_b;      // E x N
  Tensor w_c;      // E x N
  Tensor w_delta;  // E x E
  Tensor b_delta;  // E
  Tensor d;        // E
};

struct MambaLayerParams {
  Tensor in_w, in_b;      // d_model -> E, shared by both branches
  Tensor conv_w, conv_b;  // E x conv_width, E
  SsmParams ssm;
  Tensor out_w, out_b;    // E -> d_model
};

SsmParams init_ssm(std::size_t channels, const MambaLayerConfig& cfg, CounterRng& rng);
MambaLayerParams init_mamba_layer(const MambaLayerConfig& cfg, CounterRng& rng);
void register_mamba_layer(ParamSet& set, const std::string& prefix, const MambaLayerParams& p,
                          ParamGroup group);

// u: L x E -> L x E.
Tensor ssm_scan_seq(const Tensor& u, const SsmParams& p);
Tensor ssm_scan_chunked(const Tensor& u, const SsmParams& p, std::size_t chunk);

// x: L x d_model -> L x d_model.
//   out = phi_out( SSM(silu(conv(phi_in x))) * silu(phi_in x) )
Tensor mamba_layer(const Tensor& x, const MambaLayerParams& p);

}  // namespace smamba
