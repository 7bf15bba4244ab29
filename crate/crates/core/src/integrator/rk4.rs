use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::model::acceleration;
use crate::state::ParticleState;

/// Classical fixed-step RK4. Reference oracle only: there is no step control,
/// and a stage that closes a gap aborts with the domain error from the model.
pub fn integrate_fixed_rk4(
    k: &KernelSpec,
    st0: &ParticleState,
    dt: f64,
    n_steps: usize,
) -> Result<ParticleState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    st0.check_admissible(k)?;
    let n = st0.n();
    let d = st0.d();
    let m = n * d;
    let mut x = st0.x().to_vec();
    let mut v = st0.v().to_vec();
    let mut xs = vec![0.0; m];
    let mut vs = vec![0.0; m];

    for _ in 0..n_steps {
        let a1 = acceleration(k, n, d, &x, &v)?;
        let v1 = v.clone();
        stage(&x, &v, &v1, &a1, 0.5 * dt, &mut xs, &mut vs);
        let a2 = acceleration(k, n, d, &xs, &vs)?;
        let v2 = vs.clone();
        stage(&x, &v, &v2, &a2, 0.5 * dt, &mut xs, &mut vs);
        let a3 = acceleration(k, n, d, &xs, &vs)?;
        let v3 = vs.clone();
        stage(&x, &v, &v3, &a3, dt, &mut xs, &mut vs);
        let a4 = acceleration(k, n, d, &xs, &vs)?;
        let v4 = &vs;
        for c in 0..m {
            x[c] += dt / 6.0 * (v1[c] + 2.0 * v2[c] + 2.0 * v3[c] + v4[c]);
            v[c] += dt / 6.0 * (a1[c] + 2.0 * a2[c] + 2.0 * a3[c] + a4[c]);
        }
    }
    let t = st0.t + dt * n_steps as f64;
    ParticleState::new(t, d, x, v)
}

fn stage(x: &[f64], v: &[f64], kx: &[f64], kv: &[f64], h: f64, xs: &mut [f64], vs: &mut [f64]) {
    for c in 0..x.len() {
        xs[c] = x[c] + h * kx[c];
        vs[c] = v[c] + h * kv[c];
    }
}
