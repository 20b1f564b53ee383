#include "fbsee/evolution.hpp"

#include <cmath>

namespace fbsee {

namespace {

// Drift load of the backward step at a node, without the A y part:
// B z + D u + G + f0.
Vec bsee_drift(const BseeInput& in, int i, int j, const Vec& z) {
    const auto& cache = *in.problem->cache;
    Vec drift = cache.b(i, j) * z + cache.g(i, j);
    if (in.u) drift += cache.d(i, j) * in.u->at(i, j);
    if (in.f0) drift += in.f0->at(i, j);
    return drift;
}

} // namespace

BseeResult solve_bsee(const BseeInput& input) {
    const ControlProblem& p = *input.problem;
    const auto& lat = *p.lattice;
    const int N = p.steps();
    const double dt = p.dt();

    if (input.u) {
        require(input.u->same_lattice_as(lat), "solve_bsee: control on a different lattice");
        require(input.u->dim() == p.control_dim, "solve_bsee: control dimension mismatch");
    }
    if (input.f0) require(input.f0->dim() == p.dim(), "solve_bsee: forcing dimension mismatch");

    BseeResult out;
    out.y = AdaptedProcess(p.lattice, p.dim(), N);
    out.z = AdaptedProcess(p.lattice, p.dim(), N - 1);

    for (int j = 0; j < lat.node_count(N); ++j) out.y.at(N, j) = p.coeffs.xi(p.w(N, j));

    for (int i = N - 1; i >= 0; --i) {
        for (int j = 0; j < lat.node_count(i); ++j) {
            const Vec z = extract_martingale(out.y, i, j, dt);
            out.z.at(i, j) = z;
            const Vec rhs = expect_next(out.y, i, j) - dt * bsee_drift(input, i, j, z);
            out.y.at(i, j) = p.cache->solve_forward_step(i, j, rhs);
        }
    }

    out.residual = bsee_residual(input, out.y, out.z);
    // The gate is relative to the solution magnitude so that large-valued
    // solves are judged by their round-off, not by an absolute yardstick.
    double scale = 1.0;
    for (int i = 0; i <= N; ++i) scale = std::max(scale, out.y.level(i).cwiseAbs().maxCoeff());
    if (!(out.residual < 1e-10 * scale)) {
        char msg[128];
        std::snprintf(msg, sizeof(msg),
                      "solve_bsee: re-evaluated recursion residual %.3e exceeds 1e-10 (scale %.3e)",
                      out.residual, scale);
        throw SolverError(msg);
    }
    return out;
}

double bsee_residual(const BseeInput& input, const AdaptedProcess& y, const AdaptedProcess& z) {
    const ControlProblem& p = *input.problem;
    const auto& lat = *p.lattice;
    const int N = p.steps();
    const double dt = p.dt();
    const double sdt = std::sqrt(dt);

    double sup = 0.0;
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < lat.node_count(i); ++j) {
            // Implicit step: (I + dt A) y_i - E[y_{i+1}] + dt (B z + D u + G + f0) = 0.
            Vec r = y.at(i, j) + dt * (p.cache->a(i, j) * y.at(i, j)) - expect_next(y, i, j) +
                    dt * bsee_drift(input, i, j, z.at(i, j));
            sup = std::max(sup, r.cwiseAbs().maxCoeff());
            // Martingale extraction: z_i - (up - down) / (2 sqrt(dt)) = 0.
            if (!lat.is_chain()) {
                Vec up = y.at(i + 1, lat.child(i, j, 0));
                Vec down = y.at(i + 1, lat.child(i, j, 1));
                Vec rz = z.at(i, j) - (up - down) / (2.0 * sdt);
                sup = std::max(sup, rz.cwiseAbs().maxCoeff());
            } else {
                sup = std::max(sup, z.at(i, j).cwiseAbs().maxCoeff());
            }
        }
    }
    return sup;
}

AdaptedProcess solve_see(const SeeInput& input, const Vec& y0) {
    const ControlProblem& p = *input.problem;
    const auto& lat = *p.lattice;
    const int N = p.steps();
    const double dt = p.dt();
    const double sdt = lat.sqrt_dt();

    require(static_cast<bool>(input.initial_map), "solve_see: missing initial map");
    require(input.drift_load && input.diffusion_load, "solve_see: missing loads");
    require(input.drift_load->dim() == p.dim() && input.diffusion_load->dim() == p.dim(),
            "solve_see: load dimension mismatch");

    AdaptedProcess k(p.lattice, p.dim(), N);
    k.at(0, 0) = input.initial_map(y0);

    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < lat.node_count(i); ++j) {
            const Vec base = k.at(i, j) - dt * input.drift_load->at(i, j);
            if (lat.is_chain()) {
                // Single path, zero increment: diffusion term drops out.
                k.at(i + 1, 0) = p.cache->solve_adjoint_step(i, j, base);
            } else {
                const Vec diff = p.cache->adjoint_b(i, j) * k.at(i, j) +
                                 input.diffusion_load->at(i, j);
                k.at(i + 1, lat.child(i, j, 0)) =
                    p.cache->solve_adjoint_step(i, j, base - sdt * diff);
                k.at(i + 1, lat.child(i, j, 1)) =
                    p.cache->solve_adjoint_step(i, j, base + sdt * diff);
            }
        }
    }
    return k;
}

double see_residual(const SeeInput& input, const AdaptedProcess& k, const Vec& y0) {
    const ControlProblem& p = *input.problem;
    const auto& lat = *p.lattice;
    const int N = p.steps();
    const double dt = p.dt();
    const double sdt = lat.sqrt_dt();

    double sup = (k.at(0, 0) - input.initial_map(y0)).cwiseAbs().maxCoeff();
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < lat.node_count(i); ++j) {
            const Vec base = k.at(i, j) - dt * input.drift_load->at(i, j);
            const int branches = lat.is_chain() ? 1 : 2;
            for (int br = 0; br < branches; ++br) {
                const double dw = lat.is_chain() ? 0.0 : (br == 0 ? sdt : -sdt);
                const Vec kc = k.at(i + 1, lat.child(i, j, br));
                Vec r = kc + dt * (p.cache->adjoint_a(i, j) * kc) - base +
                        dw * (p.cache->adjoint_b(i, j) * k.at(i, j) +
                              input.diffusion_load->at(i, j));
                sup = std::max(sup, r.cwiseAbs().maxCoeff());
            }
        }
    }
    return sup;
}

TripleProcess solve_decoupled(const ControlProblem& problem, const AdaptedProcess& u) {
    const int N = problem.steps();

    BseeInput bin{&problem, &u, nullptr};
    BseeResult state = solve_bsee(bin);

    // Integrand gradients along (y, z, u) feed the forward equation.
    AdaptedProcess drift(problem.lattice, problem.dim(), N - 1);
    AdaptedProcess diffusion(problem.lattice, problem.dim(), N - 1);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < problem.lattice->node_count(i); ++j) {
            const double w = problem.w(i, j);
            drift.at(i, j) =
                problem.integrand.grad_l_y(i, w, state.y.at(i, j), state.z.at(i, j), u.at(i, j));
            diffusion.at(i, j) =
                problem.integrand.grad_l_z(i, w, state.y.at(i, j), state.z.at(i, j), u.at(i, j));
        }
    }

    SeeInput sin_{&problem,
                  [&problem](const Vec& y0) -> Vec { return -problem.integrand.grad_h(y0); },
                  &drift, &diffusion};
    AdaptedProcess k = solve_see(sin_, state.y.at(0, 0));
    return TripleProcess(std::move(k), std::move(state.y), std::move(state.z));
}

} // namespace fbsee
