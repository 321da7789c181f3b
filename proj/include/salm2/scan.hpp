#pragma once

// Selective state-space scan primitives.
//
// The recurrence is h_t = decay_t (.) h_{t-1} + drive_t over a [L, D, S] gate
// volume, with y_{t,d} = sum_s readout_{t,d,s} * h_{t,d,s} (+ passthrough_d *
// x_{t,d} when a raw input is supplied). sequential_scan evaluates it step by
// step; parallel_scan computes the same values through an associative prefix
// combination of (decay, drive) pairs.

#include <cmath>
#include <optional>
#include <vector>

#include "salm2/tensor.hpp"

namespace salm2 {

template <typename T>
struct ScanInputs {
  int64_t len = 0;       // L
  int64_t width = 0;     // D
  int64_t states = 0;    // S
  std::vector<T> decay;    // [L, D, S]
  std::vector<T> drive;    // [L, D, S]
  std::vector<T> readout;  // [L, D, S]
  std::vector<T> passthrough;    // [D], optional (empty = zeros)
  std::vector<T> initial_state;  // [D, S], optional (empty = zeros)
  std::vector<T> raw_input;      // [L, D], optional; enables the passthrough term

  void validate() const {
    if (len < 1 || width < 1 || states < 1)
      throw ContractViolation("scan: L, D, S must all be >= 1");
    const size_t lds = static_cast<size_t>(len * width * states);
    if (decay.size() != lds || drive.size() != lds || readout.size() != lds)
      throw ContractViolation("scan: decay/drive/readout must all be [L, D, S]");
    if (!passthrough.empty() && passthrough.size() != static_cast<size_t>(width))
      throw ContractViolation("scan: passthrough must be [D]");
    if (!initial_state.empty() && initial_state.size() != static_cast<size_t>(width * states))
      throw ContractViolation("scan: initial_state must be [D, S]");
    if (!raw_input.empty() && raw_input.size() != static_cast<size_t>(len * width))
      throw ContractViolation("scan: raw_input must be [L, D]");
    if (!passthrough.empty() && raw_input.empty() &&
        std::any_of(passthrough.begin(), passthrough.end(), [](T v) { return v != T(0); }))
      throw ContractViolation("scan: nonzero passthrough requires raw_input");
    auto finite = [](const std::vector<T>& v) { return all_finite(v); };
    if (!finite(decay) || !finite(drive) || !finite(readout) || !finite(passthrough) ||
        !finite(initial_state) || !finite(raw_input))
      throw NonFiniteError("scan inputs");
  }
};

namespace detail {

template <typename T>
std::vector<T> scan_readout(const ScanInputs<T>& in, const std::vector<T>& h_all) {
  const int64_t L = in.len, D = in.width, S = in.states;
  std::vector<T> y(static_cast<size_t>(L * D), T(0));
  for (int64_t t = 0; t < L; ++t)
    for (int64_t d = 0; d < D; ++d) {
      T acc = 0;
      const int64_t base = (t * D + d) * S;
      for (int64_t s = 0; s < S; ++s) acc += in.readout[base + s] * h_all[base + s];
      if (!in.passthrough.empty() && !in.raw_input.empty())
        acc += in.passthrough[d] * in.raw_input[t * D + d];
      y[t * D + d] = acc;
    }
  return y;
}

}  // namespace detail

// Exact left-to-right recurrence. Returns y of shape [L, D].
template <typename T>
std::vector<T> sequential_scan(const ScanInputs<T>& in) {
  in.validate();
  const int64_t L = in.len, D = in.width, S = in.states;
  std::vector<T> h(static_cast<size_t>(D * S), T(0));
  if (!in.initial_state.empty()) h = in.initial_state;
  std::vector<T> h_all(static_cast<size_t>(L * D * S));
  for (int64_t t = 0; t < L; ++t) {
    const int64_t tb = t * D * S;
    for (int64_t i = 0; i < D * S; ++i) {
      h[i] = in.decay[tb + i] * h[i] + in.drive[tb + i];
      h_all[tb + i] = h[i];
    }
  }
  return detail::scan_readout(in, h_all);
}

// Same recurrence via Hillis-Steele prefix combination:
//   (a_l, u_l) o (a_r, u_r) = (a_r * a_l, a_r * u_l + u_r)
// After the inclusive scan, h_t = a_t * h_0 + u_t.
template <typename T>
std::vector<T> parallel_scan(const ScanInputs<T>& in) {
  in.validate();
  const int64_t L = in.len, D = in.width, S = in.states;
  const int64_t DS = D * S;
  std::vector<T> a(in.decay), u(in.drive);
  for (int64_t off = 1; off < L; off *= 2) {
    for (int64_t t = L - 1; t >= off; --t) {
      const int64_t tb = t * DS, sb = (t - off) * DS;
      for (int64_t i = 0; i < DS; ++i) {
        u[tb + i] = a[tb + i] * u[sb + i] + u[tb + i];
        a[tb + i] = a[tb + i] * a[sb + i];
      }
    }
  }
  std::vector<T> h_all(static_cast<size_t>(L * DS));
  const bool has_h0 = !in.initial_state.empty();
  for (int64_t t = 0; t < L; ++t)
    for (int64_t i = 0; i < DS; ++i)
      h_all[t * DS + i] = u[t * DS + i] + (has_h0 ? a[t * DS + i] * in.initial_state[i] : T(0));
  return detail::scan_readout(in, h_all);
}

// ---------------------------------------------------------------------------
// Differentiable selective scan used by the Mamba block.
//
// delta: [B, L, D]   per-step timescale (positive)
// a:     [D, S]      continuous-time decay rates (negative)
// b_in:  [B, L, S]   input gate
// c_out: [B, L, S]   output gate
// u:     [B, L, D]   driven sequence
// d_skip:[D]         passthrough
//
// Zero-order hold: decay = exp(delta * a), drive = delta * b * u,
// y_{t,d} = sum_s c_{t,s} h_{t,d,s} + d_skip_d * u_{t,d}.

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b_in,
                         const Tensor<T>& c_out, const Tensor<T>& u, const Tensor<T>& d_skip) {
  if (delta.ndim() != 3 || u.ndim() != 3 || b_in.ndim() != 3 || c_out.ndim() != 3 || a.ndim() != 2)
    throw ContractViolation("selective_scan: bad ranks");
  const int64_t B = delta.dim(0), L = delta.dim(1), D = delta.dim(2), S = a.dim(1);
  if (a.dim(0) != D || d_skip.numel() != D) throw ContractViolation("selective_scan: width mismatch");
  if (b_in.dim(0) != B || b_in.dim(1) != L || b_in.dim(2) != S || !same_shape(c_out.shape(), b_in.shape()))
    throw ContractViolation("selective_scan: gate shape mismatch");
  if (!same_shape(u.shape(), delta.shape())) throw ContractViolation("selective_scan: u shape mismatch");

  const auto& dv = delta.values();
  const auto& av = a.values();
  const auto& bv = b_in.values();
  const auto& cv = c_out.values();
  const auto& uv = u.values();
  const auto& dsv = d_skip.values();

  std::vector<T> y(static_cast<size_t>(B * L * D), T(0));
  auto h_all = std::make_shared<std::vector<T>>(static_cast<size_t>(B * L * D * S));
  std::vector<T> h(static_cast<size_t>(D * S));
  for (int64_t b = 0; b < B; ++b) {
    std::fill(h.begin(), h.end(), T(0));
    for (int64_t t = 0; t < L; ++t) {
      const T* brow = bv.data() + (b * L + t) * S;
      const T* crow = cv.data() + (b * L + t) * S;
      for (int64_t d = 0; d < D; ++d) {
        const T dt = dv[(b * L + t) * D + d];
        const T ux = uv[(b * L + t) * D + d];
        T acc = 0;
        T* hd = h.data() + d * S;
        T* hsave = h_all->data() + ((b * L + t) * D + d) * S;
        const T* ad = av.data() + d * S;
        for (int64_t s = 0; s < S; ++s) {
          const T decay = detail::exp_impl(dt * ad[s]);
          hd[s] = decay * hd[s] + dt * brow[s] * ux;
          hsave[s] = hd[s];
          acc += crow[s] * hd[s];
        }
        y[(b * L + t) * D + d] = acc + dsv[d] * ux;
      }
    }
  }

  auto pd = delta.node(), pa = a.node(), pb = b_in.node(), pc = c_out.node(), pu = u.node(),
       ps = d_skip.node();
  return make_op_result<T>(
      {B, L, D}, std::move(y), {pd, pa, pb, pc, pu, ps},
      [pd, pa, pb, pc, pu, ps, h_all, B, L, D, S](Node<T>& self) {
        std::vector<T> dh(static_cast<size_t>(D * S));
        auto& gd = pd->ensure_grad();
        auto& ga = pa->ensure_grad();
        auto& gb = pb->ensure_grad();
        auto& gc = pc->ensure_grad();
        auto& gu = pu->ensure_grad();
        auto& gs = ps->ensure_grad();
        for (int64_t b = 0; b < B; ++b) {
          std::fill(dh.begin(), dh.end(), T(0));
          for (int64_t t = L - 1; t >= 0; --t) {
            const T* brow = pb->value.data() + (b * L + t) * S;
            const T* crow = pc->value.data() + (b * L + t) * S;
            for (int64_t d = 0; d < D; ++d) {
              const int64_t td = (b * L + t) * D + d;
              const T gy = self.grad[td];
              const T dt = pd->value[td];
              const T ux = pu->value[td];
              const T* hrow = h_all->data() + td * S;
              const T* hprev =
                  t > 0 ? h_all->data() + ((b * L + t - 1) * D + d) * S : nullptr;
              const T* ad = pa->value.data() + d * S;
              T* dhd = dh.data() + d * S;
              T ddt = 0;
              T du = gy * ps->value[d];
              gs[d] += gy * ux;
              for (int64_t s = 0; s < S; ++s) {
                // output contribution
                dhd[s] += gy * crow[s];
                gc[(b * L + t) * S + s] += gy * hrow[s];
                // step through h_t = decay * h_{t-1} + dt * b * u
                const T decay = detail::exp_impl(dt * ad[s]);
                const T hp = hprev ? hprev[s] : T(0);
                const T ddecay = dhd[s] * hp;
                const T ddrive = dhd[s];
                ddt += ddecay * decay * ad[s] + ddrive * brow[s] * ux;
                ga[d * S + s] += ddecay * decay * dt;
                gb[(b * L + t) * S + s] += ddrive * dt * ux;
                du += ddrive * dt * brow[s];
                dhd[s] *= decay;  // flows to h_{t-1}
              }
              gd[td] += ddt;
              gu[td] += du;
            }
          }
        }
      });
}

}  // namespace salm2
