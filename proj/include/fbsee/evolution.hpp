#pragma once

#include "fbsee/problem.hpp"

namespace fbsee {

/// Inputs of the backward solve: an optional control and an optional
/// extra drift forcing (both on levels 0..N-1 of the problem's lattice).
struct BseeInput {
    const ControlProblem* problem = nullptr;
    const AdaptedProcess* u = nullptr;   // may be null (no control term)
    const AdaptedProcess* f0 = nullptr;  // may be null (zero forcing)
};

struct BseeResult {
    AdaptedProcess y; // levels 0..N
    AdaptedProcess z; // levels 0..N-1
    double residual = 0.0;
};

/// Backward induction for
///   dy = [A y + B z + D u + G + f0] dt + z dW,  y(T) = xi.
/// Per node: z_i extracts the martingale part of y_{i+1}, then
///   (I + dt A_i) y_i = E_i[y_{i+1}] - dt (B_i z_i + D_i u_i + G_i + f0_i).
/// The reported residual re-evaluates both recursions independently and
/// must come out below 1e-10.
BseeResult solve_bsee(const BseeInput& input);

/// Independent re-evaluation of the backward recursions at (y, z):
/// sup-node max-abs residual of the implicit step and of the martingale
/// extraction.
double bsee_residual(const BseeInput& input, const AdaptedProcess& y, const AdaptedProcess& z);

/// Inputs of the forward solve for
///   dk = -[A* k + driftLoad] dt - [B* k + diffusionLoad] dW,
///   k(0) = initial_map(y(0)).
/// Loads live on levels 0..N-1.
struct SeeInput {
    const ControlProblem* problem = nullptr;
    std::function<Vec(const Vec&)> initial_map; // y(0) -> k(0)
    const AdaptedProcess* drift_load = nullptr;
    const AdaptedProcess* diffusion_load = nullptr;
};

/// Forward stepping, drift-implicit in A*, explicit in the diffusion:
///   (I + dt A*_i) k_{i+1} = k_i - dt driftLoad_i
///                           - (B*_i k_i + diffusionLoad_i)(+-sqrt(dt)).
/// On the chain lattice the Brownian increment is zero and the diffusion
/// term drops out.
AdaptedProcess solve_see(const SeeInput& input, const Vec& y0);

/// Independent re-evaluation of the forward recursion at k.
double see_residual(const SeeInput& input, const AdaptedProcess& k, const Vec& y0);

/// Decoupled solve along a given control: (y, z) from the backward
/// equation under u, then k from the forward equation with loads
/// l_y(t, y, z, u), l_z(t, y, z, u) and k(0) = -h_y(y(0)).
TripleProcess solve_decoupled(const ControlProblem& problem, const AdaptedProcess& u);

} // namespace fbsee
